"""Builders for the concrete ensembles: GUE, continuously weighted Gaussian
Wigner matrices from a kernel on [0,1]^2, Gaussian band matrices, and the
interpolated free-group-factor kernel families.

Every model here is a diagonal-base covariance: the level-n map has
``eta_ij(a)[s,s] = (1/n) sum_t H_ij[s,t] a[t,t]`` with
``H_ij[s,t] = n^2 * integral of h_ij over the (s,t) grid cell``.  Cell
integrals use a fixed order-4 tensor Gauss-Legendre rule (exact for the
constant and bilinear primitives); because the rule has positive interior
weights, every table entry is bounded by ``sup|h|``, so norm inequalities
stated for the continuum kernel hold exactly at the discrete level.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .covariance import DEFAULT_CHOI_CAP, DiscreteCovariance, HermitianTuple

GL_ORDER = 4
PROBE_POINTS = 32
SYMMETRY_TOL = 1e-12
POINTWISE_PSD_TOL = 1e-10


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# piecewise-linear functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PiecewiseLinear:
    """A continuous piecewise-linear function given by breakpoint tables.

    Outside the node range the edge value is extended constantly (tables
    intended to vanish at infinity should end with explicit zero nodes).
    """

    xs: tuple
    ys: tuple

    def __post_init__(self):
        xs = tuple(float(x) for x in self.xs)
        ys = tuple(float(y) for y in self.ys)
        if len(xs) != len(ys) or len(xs) < 2:
            raise ModelError("need at least two (x, y) breakpoints")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ModelError("breakpoints must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @classmethod
    def from_table(cls, table) -> "PiecewiseLinear":
        pts = [(float(x), float(y)) for x, y in table]
        return cls(tuple(x for x, _ in pts), tuple(y for _, y in pts))

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.xs, self.ys)

    def integral(self, a: float, b: float) -> float:
        """Exact integral over [a, b] (trapezoid on the breakpoint refinement)."""
        if b < a:
            return -self.integral(b, a)
        pts = sorted({a, b} | {x for x in self.xs if a < x < b})
        vals = self(np.array(pts))
        trapezoid = getattr(np, "trapezoid", None) or np.trapz
        return float(trapezoid(vals, pts))

    def cell_averages(self, n: int) -> np.ndarray:
        """Exact averages over the n cells of [0, 1]."""
        return np.array(
            [self.integral(s / n, (s + 1) / n) * n for s in range(n)]
        )

    def sup_abs(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """max |f| on [lo, hi]; attained at a breakpoint or an endpoint."""
        cands = [lo, hi] + [x for x in self.xs if lo < x < hi]
        return float(np.abs(self(np.array(cands))).max())

    def vanishes_on(self, lo: float, hi: float) -> bool:
        """True iff f is identically zero on [lo, hi]."""
        if hi < lo:
            lo, hi = hi, lo
        cands = [lo, hi] + [x for x in self.xs if lo < x < hi]
        return bool(np.abs(self(np.array(cands))).max() == 0.0)


# ---------------------------------------------------------------------------
# kernel primitives on [0,1]^2
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantKernel:
    value: float = 1.0

    def evaluate(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        return np.full(s.shape, float(self.value))

    def sup_abs(self) -> float:
        return abs(float(self.value))


@dataclass(frozen=True)
class BandProfileKernel:
    """h(s, t) = f(s - t) for a piecewise-linear profile f on [-1, 1]."""

    profile: PiecewiseLinear

    def evaluate(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        return self.profile(s - t)

    def sup_abs(self) -> float:
        return self.profile.sup_abs(-1.0, 1.0)


@dataclass(frozen=True)
class SeparableKernel:
    """h(s, t) = u(s) * v(t)."""

    u: PiecewiseLinear
    v: PiecewiseLinear

    def evaluate(self, s, t):
        return self.u(s) * self.v(t)

    def sup_abs(self) -> float:
        return self.u.sup_abs() * self.v.sup_abs()


@dataclass(frozen=True)
class SquaredSeparableKernel:
    """h(s, t) = (u(s) * v(t))^2 — the shape of the free-group-factor kernels."""

    u: PiecewiseLinear
    v: PiecewiseLinear

    def evaluate(self, s, t):
        return (self.u(s) * self.v(t)) ** 2

    def sup_abs(self) -> float:
        return (self.u.sup_abs() * self.v.sup_abs()) ** 2


@dataclass(frozen=True)
class SumKernel:
    parts: tuple

    def evaluate(self, s, t):
        out = self.parts[0].evaluate(s, t)
        for p in self.parts[1:]:
            out = out + p.evaluate(s, t)
        return out

    def sup_abs(self) -> float:
        # upper bound; exact when the parts have disjoint supports
        return float(sum(p.sup_abs() for p in self.parts))


@dataclass(frozen=True)
class TransposeKernel:
    inner: object

    def evaluate(self, s, t):
        return self.inner.evaluate(t, s)

    def sup_abs(self) -> float:
        return self.inner.sup_abs()


class GridKernel:
    """Bilinear interpolation of tabulated values on a rectangular grid."""

    def __init__(self, s_nodes, t_nodes, values):
        self.s_nodes = np.asarray(s_nodes, dtype=float)
        self.t_nodes = np.asarray(t_nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.s_nodes.size, self.t_nodes.size):
            raise ModelError("grid values shape does not match the node axes")
        if self.s_nodes.size < 2 or self.t_nodes.size < 2:
            raise ModelError("grid needs at least 2 nodes per axis")
        if not np.isfinite(self.values).all():
            raise ModelError("grid values must be finite")

    @staticmethod
    def _weights(nodes, x):
        idx = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, nodes.size - 2)
        lo, hi = nodes[idx], nodes[idx + 1]
        frac = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        return idx, frac

    def evaluate(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        i, fs = self._weights(self.s_nodes, s)
        j, ft = self._weights(self.t_nodes, t)
        v = self.values
        return (
            v[i, j] * (1 - fs) * (1 - ft)
            + v[i + 1, j] * fs * (1 - ft)
            + v[i, j + 1] * (1 - fs) * ft
            + v[i + 1, j + 1] * fs * ft
        )

    def sup_abs(self) -> float:
        return float(np.abs(self.values).max())


# ---------------------------------------------------------------------------
# kernel families and discretization
# ---------------------------------------------------------------------------


class KernelSpec:
    """A family (h_ij)_{i,j in F} of kernels on [0,1]^2.

    Missing pairs default to zero; a missing (j, i) is filled with the
    transpose of a supplied (i, j).  On construction the family is probed on
    a 32x32 grid for the symmetry hypothesis h_ij(s,t) = h_ji(t,s) and for
    pointwise positivity of the |F| x |F| matrices (h_ij(s,t))_{i,j}.
    """

    def __init__(self, F, kernels):
        self.F = tuple(F)
        if not self.F:
            raise ModelError("empty index set F")
        self.kernels = {}
        for (i, j), k in dict(kernels).items():
            if i not in self.F or j not in self.F:
                raise ModelError(f"kernel pair {(i, j)!r} outside F={self.F!r}")
            self.kernels[(i, j)] = k
        for (i, j), k in list(self.kernels.items()):
            if (j, i) not in self.kernels:
                self.kernels[(j, i)] = TransposeKernel(k)
        self._probe_check()

    def kernel(self, i, j):
        return self.kernels.get((i, j), ConstantKernel(0.0))

    def _probe_check(self):
        pts = np.linspace(0.0, 1.0, PROBE_POINTS)
        S, T = np.meshgrid(pts, pts, indexing="ij")
        f = len(self.F)
        arr = np.zeros((f, f, PROBE_POINTS, PROBE_POINTS))
        for a, i in enumerate(self.F):
            for b, j in enumerate(self.F):
                arr[a, b] = self.kernel(i, j).evaluate(S, T)
        scale = max(1.0, float(np.abs(arr).max()))
        sym_res = float(np.abs(arr - arr.transpose(1, 0, 3, 2)).max())
        if sym_res > SYMMETRY_TOL * scale:
            raise ModelError(
                f"kernel family violates h_ij(s,t) = h_ji(t,s) (residual {sym_res:.3e})"
            )
        mats = np.moveaxis(arr, (0, 1), (2, 3))
        mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
        lam_min = float(mats.min()) if f == 1 else float(np.linalg.eigvalsh(mats)[..., 0].min())
        if lam_min < -POINTWISE_PSD_TOL * scale:
            raise ModelError(
                f"kernel family is not pointwise positive (min eigenvalue {lam_min:.3e})"
            )

    def sup_sum(self) -> float:
        """sum over (i,j) of sup |h_ij| — the norm budget of the family."""
        return float(
            sum(self.kernel(i, j).sup_abs() for i in self.F for j in self.F)
        )


def _gl_rule(order: int = GL_ORDER):
    g, w = np.polynomial.legendre.leggauss(order)
    return (g + 1.0) / 2.0, w / 2.0


def cell_table(kernel, n: int, order: int = GL_ORDER) -> np.ndarray:
    """H[s,t] = n^2 * integral of the kernel over cell (s,t), by the tensor
    Gauss-Legendre rule; computed in row blocks to stay memory-bounded."""
    x, w = _gl_rule(order)
    pts = (np.arange(n)[:, None] + x[None, :]).reshape(-1) / n  # (n*order,)
    out = np.empty((n, n))
    chunk = max(1, (1 << 18) // (order * n) or 1)
    for s0 in range(0, n, chunk):
        s1 = min(n, s0 + chunk)
        block = kernel.evaluate(
            pts[order * s0 : order * s1][:, None], pts[None, :]
        ).reshape(s1 - s0, order, n, order)
        out[s0:s1] = np.einsum("patb,a,b->pt", block, w, w)
    return out


def discretize(spec: KernelSpec, n: int, choi_cap: int = DEFAULT_CHOI_CAP) -> DiscreteCovariance:
    """Level-n diagonal-base covariance of a kernel family."""
    f = len(spec.F)
    table = np.empty((f, f, n, n))
    for a, i in enumerate(spec.F):
        for b, j in enumerate(spec.F):
            table[a, b] = cell_table(spec.kernel(i, j), n)
    return DiscreteCovariance.from_kernel_table(n, spec.F, table, choi_cap=choi_cap)


def gue(n: int, choi_cap: int = DEFAULT_CHOI_CAP) -> DiscreteCovariance:
    """eta(a) = tr_n(a) * 1 — a single independent GUE matrix."""
    table = np.ones((1, 1, n, n))
    return DiscreteCovariance.from_kernel_table(n, ("1",), table, choi_cap=choi_cap)


# ---------------------------------------------------------------------------
# band matrices
# ---------------------------------------------------------------------------


def band_kernel(profile: PiecewiseLinear, epsilon: float) -> KernelSpec:
    """Validated band kernel family h(s,t) = f(s-t), single index."""
    if any(y < 0 for y in profile.ys):
        raise ModelError("band profile must be nonnegative")
    if epsilon <= 0:
        raise ModelError("bandwidth must be positive")
    if epsilon < np.sqrt(2.0):
        if not (profile.vanishes_on(-1.0, -min(epsilon, 1.0))
                and profile.vanishes_on(min(epsilon, 1.0), 1.0)):
            raise ModelError(
                f"band profile must vanish beyond bandwidth {epsilon}"
            )
    return KernelSpec(("1",), {("1", "1"): BandProfileKernel(profile)})


def band(profile: PiecewiseLinear, epsilon: float, n: int,
         choi_cap: int = DEFAULT_CHOI_CAP) -> DiscreteCovariance:
    """Level-n Gaussian band-matrix covariance with entry variances
    n * integral of f(s-t) over the (s,t) cell."""
    return discretize(band_kernel(profile, epsilon), n, choi_cap=choi_cap)


def band_zero_cells(profile: PiecewiseLinear, n: int) -> np.ndarray:
    """Boolean (n,n) mask of cells whose closure misses the support of
    f(s-t); sampled band matrices are exactly zero there."""
    diffs = np.arange(-(n - 1), n)  # possible s - t values
    dead = np.array(
        [profile.vanishes_on((d - 1) / n, (d + 1) / n) for d in diffs]
    )
    s = np.arange(n)
    return dead[(s[:, None] - s[None, :]) + (n - 1)]


# ---------------------------------------------------------------------------
# interpolated free-group-factor kernels
# ---------------------------------------------------------------------------


def _normalize_intervals(intervals):
    ivs = sorted((float(a), float(b)) for a, b in intervals)
    for a, b in ivs:
        if not (0.0 <= a < b <= 1.0):
            raise ModelError(f"support interval {(a, b)!r} not inside [0, 1]")
    for (_, b1), (a2, _) in zip(ivs, ivs[1:]):
        if a2 < b1:
            raise ModelError("support intervals overlap")
    return tuple(ivs)


def _measure(intervals) -> float:
    return float(sum(b - a for a, b in intervals))


def _disjoint(iv1, iv2) -> bool:
    return all(b1 <= a2 or b2 <= a1 for a1, b1 in iv1 for a2, b2 in iv2)


def smoothed_indicator(intervals, ramp: float) -> PiecewiseLinear:
    """Continuous approximation of an indicator: 1 on the interval interiors
    (up to an inward linear ramp of width ``ramp``), 0 outside, so the
    support is exactly the given intervals."""
    if ramp <= 0:
        raise ModelError("ramp width must be positive")
    pts = [(0.0, 0.0)]
    for a, b in _normalize_intervals(intervals):
        d = min(ramp, (b - a) / 2.0)
        pts.extend([(a, 0.0), (a + d, 1.0), (b - d, 1.0), (b, 0.0)])
    pts.append((1.0, 0.0))
    xs, ys = [], []
    for x, y in pts:
        if xs and x == xs[-1]:
            if y != ys[-1]:
                raise ModelError("degenerate ramp (interval too short for the ramp)")
            continue
        xs.append(x)
        ys.append(y)
    return PiecewiseLinear(tuple(xs), tuple(ys))


@dataclass(frozen=True)
class FgfSpec:
    """Support data for the interpolated free-group-factor ensembles.

    ``j1`` indices use a single amplitude (f and g share their support);
    ``j2`` indices use two amplitudes with disjoint supports.  Supports are
    finite unions of subintervals of [0, 1], as (low, high) pairs.
    """

    j1: tuple
    j2: tuple
    f_supports: dict
    g_supports: dict
    ramp: float = 1e-2

    def validate(self):
        j1, j2 = tuple(self.j1), tuple(self.j2)
        if set(j1) & set(j2):
            raise ModelError("j1 and j2 must be disjoint")
        if not j1 and not j2:
            raise ModelError("at least one index required in j1 or j2")
        supports = {}
        for i in j1:
            fs = _normalize_intervals(self.f_supports[i])
            gs = _normalize_intervals(self.g_supports.get(i, fs))
            if fs != gs:
                raise ModelError(f"j1 index {i!r} needs equal f/g supports")
            supports[i] = (fs, gs)
        witness = False
        for i in j2:
            fs = _normalize_intervals(self.f_supports[i])
            gs = _normalize_intervals(self.g_supports[i])
            if not _disjoint(fs, gs):
                raise ModelError(f"j2 index {i!r} needs disjoint f/g supports")
            mf, mg = _measure(fs), _measure(gs)
            if abs(mf + mg - 1.0) <= 1e-12 and 0.0 < mf < 1.0:
                witness = True
            supports[i] = (fs, gs)
        if j2 and not witness:
            raise ModelError(
                "j2 needs a witness index with full total support measure "
                "and both parts of positive measure"
            )
        return supports


def fgf_kernels(spec: FgfSpec):
    """Kernel family of the spec plus the interpolation parameter
    t = 1 + sum_{j1} m(f)^2 + 2 sum_{j2} m(f) m(g) (support measures taken
    from the declared intervals, not the smoothed amplitudes)."""
    supports = spec.validate()
    kernels = {}
    t = 1.0
    for i in spec.j1:
        fs, _ = supports[i]
        f = smoothed_indicator(fs, spec.ramp)
        kernels[(i, i)] = SquaredSeparableKernel(f, f)
        t += _measure(fs) ** 2
    for i in spec.j2:
        fs, gs = supports[i]
        f = smoothed_indicator(fs, spec.ramp)
        g = smoothed_indicator(gs, spec.ramp)
        kernels[(i, i)] = SumKernel(
            (SquaredSeparableKernel(f, g), SquaredSeparableKernel(g, f))
        )
        t += 2.0 * _measure(fs) * _measure(gs)
    F = tuple(spec.j1) + tuple(spec.j2)
    return KernelSpec(F, kernels), t


# ---------------------------------------------------------------------------
# base functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BaseTuple:
    """Piecewise-linear coefficient functions b_w on [0, 1] and their level-n
    discretizations (diagonal matrices of exact cell averages)."""

    symbols: tuple
    functions: tuple

    def __post_init__(self):
        if len(self.symbols) != len(self.functions):
            raise ModelError("one function per symbol required")
        object.__setattr__(self, "symbols", tuple(str(s) for s in self.symbols))

    def discretize(self, n: int) -> HermitianTuple:
        mats = tuple(np.diag(fn.cell_averages(n)).astype(complex) for fn in self.functions)
        return HermitianTuple(self.symbols, mats)


# ---------------------------------------------------------------------------
# config / CSV interfaces
# ---------------------------------------------------------------------------


def load_grid_csv(path) -> KernelSpec:
    """Kernel family from a CSV with header s,t,i,j,value (row-major grids)."""
    per_pair: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"s", "t", "i", "j", "value"}
        if reader.fieldnames is None or not need.issubset(reader.fieldnames):
            raise ModelError(f"grid CSV must have header columns {sorted(need)}")
        for row in reader:
            key = (row["i"].strip(), row["j"].strip())
            val = float(row["value"])
            if not np.isfinite(val):
                raise ModelError("grid CSV values must be finite")
            per_pair.setdefault(key, {})[(float(row["s"]), float(row["t"]))] = val
    if not per_pair:
        raise ModelError("grid CSV contains no rows")
    labels = sorted({i for i, _ in per_pair} | {j for _, j in per_pair})
    kernels = {}
    for key, entries in per_pair.items():
        s_nodes = sorted({s for s, _ in entries})
        t_nodes = sorted({t for _, t in entries})
        values = np.empty((len(s_nodes), len(t_nodes)))
        for a, s in enumerate(s_nodes):
            for b, t in enumerate(t_nodes):
                if (s, t) not in entries:
                    raise ModelError(f"grid CSV missing node ({s}, {t}) for pair {key}")
                values[a, b] = entries[(s, t)]
        kernels[key] = GridKernel(s_nodes, t_nodes, values)
    return KernelSpec(tuple(labels), kernels)


@dataclass
class Model:
    """A named model: kernel family, optional base functions, extras."""

    kind: str
    kernel_spec: KernelSpec
    base: BaseTuple | None = None
    band_profile: PiecewiseLinear | None = None
    band_epsilon: float | None = None
    fgf_t: float | None = None

    @property
    def F(self) -> tuple:
        return self.kernel_spec.F

    def covariance(self, n: int, choi_cap: int = DEFAULT_CHOI_CAP) -> DiscreteCovariance:
        return discretize(self.kernel_spec, n, choi_cap=choi_cap)

    def base_matrices(self, n: int) -> HermitianTuple | None:
        return None if self.base is None else self.base.discretize(n)


def _kernel_from_entry(entry: dict):
    kind = entry.get("kind")
    if kind == "constant":
        return ConstantKernel(float(entry["value"]))
    if kind == "band":
        return BandProfileKernel(PiecewiseLinear.from_table(entry["profile"]))
    if kind == "separable":
        return SeparableKernel(
            PiecewiseLinear.from_table(entry["u"]),
            PiecewiseLinear.from_table(entry["v"]),
        )
    if kind == "squared-separable":
        return SquaredSeparableKernel(
            PiecewiseLinear.from_table(entry["u"]),
            PiecewiseLinear.from_table(entry["v"]),
        )
    raise ModelError(f"unknown kernel kind {kind!r}")


def build_model(cfg: dict) -> Model:
    """Model from a parsed config mapping (see the README schema)."""
    try:
        mcfg = dict(cfg["model"])
        kind = mcfg["kind"]
    except KeyError as exc:
        raise ModelError(f"config missing required key {exc}") from exc

    base = None
    if "base" in cfg:
        fns = cfg["base"].get("functions", [])
        base = BaseTuple(
            tuple(str(e["omega"]) for e in fns),
            tuple(PiecewiseLinear.from_table(e["values"]) for e in fns),
        )

    if kind == "gue":
        spec = KernelSpec(("1",), {("1", "1"): ConstantKernel(1.0)})
        return Model("gue", spec, base=base)

    if kind == "band":
        bc = mcfg.get("band", cfg.get("band", {}))
        profile = PiecewiseLinear.from_table(bc["profile"])
        eps = float(bc["epsilon"])
        return Model("band", band_kernel(profile, eps), base=base,
                     band_profile=profile, band_epsilon=eps)

    if kind == "weighted":
        wc = mcfg.get("weighted", cfg.get("weighted", {}))
        if "grid" in wc:
            spec = load_grid_csv(wc["grid"])
        else:
            entries = wc.get("kernels", [])
            if not entries:
                raise ModelError("weighted model needs 'grid' or 'kernels'")
            kernels = {
                (str(e["i"]), str(e["j"])): _kernel_from_entry(e) for e in entries
            }
            F = mcfg.get("F") or sorted({k for pair in kernels for k in pair})
            spec = KernelSpec(tuple(str(x) for x in F), kernels)
        return Model("weighted", spec, base=base)

    if kind == "fgf":
        fc = mcfg.get("fgf", cfg.get("fgf", {}))
        supports = fc.get("supports", {})
        fgf = FgfSpec(
            j1=tuple(str(x) for x in fc.get("j1", [])),
            j2=tuple(str(x) for x in fc.get("j2", [])),
            f_supports={str(k): v["f"] for k, v in supports.items() if "f" in v},
            g_supports={str(k): v["g"] for k, v in supports.items() if "g" in v},
            ramp=float(fc.get("ramp", 1e-2)),
        )
        spec, t = fgf_kernels(fgf)
        return Model("fgf", spec, base=base, fgf_t=t)

    raise ModelError(f"unknown model kind {kind!r}")
