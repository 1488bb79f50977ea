"""Exact combinatorial moment engines and quantitative bound calculators.

Three exact engines back every Monte Carlo estimate in the harness:

* ``semicircular_expectation`` — B-valued moments of the semicircular limit,
  by an interval dynamic program over non-crossing pairings (the explicit
  enumeration route, ``enumerate_noncrossing`` + ``eta_pi_eval``, is kept as
  an independent oracle in the test suite);
* ``gaussian_moment_exact`` — finite-n Gaussian moments by the Wick sum over
  all pair partitions, each term contracted exactly over Kraus indices;
* ``gue_trace_wick`` — products of normalized traces of powers of a single
  GUE matrix, by permutation cycle counting (no Kraus family needed, so it
  scales to n ~ 1000 where the Kraus route is budget-refused).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .covariance import DiscreteCovariance
from .covpoly import BASE, SEMI, CovPolynomial, reduce_pairing
from .partitions import (
    PairPartition,
    PartitionError,
    catalan,
    double_factorial_odd,
    enumerate_pair_partitions,
    is_noncrossing,
    nesting_forest,
)


class MomentError(ValueError):
    pass


class BudgetError(MomentError):
    """An exact computation was refused because its cost exceeds the budget."""


DEFAULT_WICK_BUDGET = 1e8


# ---------------------------------------------------------------------------
# eta_{pi, indices} evaluation
# ---------------------------------------------------------------------------


def eta_pi_eval(eta: DiscreteCovariance, pi: PairPartition, indices, args,
                prefer: str = "first") -> np.ndarray:
    """Value of the nested covariance application of a non-crossing pairing
    on 2k-1 interior matrices, by innermost-adjacent reduction.

    The result is independent of the reduction order; ``prefer`` exposes the
    tie-break ("first"/"last") for the order-independence tests.
    """
    indices = tuple(indices)
    if len(indices) != pi.length:
        raise MomentError(f"need {pi.length} indices, got {len(indices)}")
    if len(args) != max(pi.length - 1, 0):
        raise MomentError(
            f"need {pi.length - 1} interior matrices for length {pi.length}, "
            f"got {len(args)}"
        )
    if not is_noncrossing(pi):
        raise PartitionError("eta_pi_eval requires a non-crossing pairing")
    n = eta.n
    eye = np.eye(n, dtype=complex)
    segments = [eye] + [np.asarray(a, dtype=complex) for a in args] + [eye]
    if pi.length == 0:
        return eye
    return reduce_pairing(
        eta.apply, lambda a, c: a @ c, pi, indices, segments, prefer=prefer
    )


# ---------------------------------------------------------------------------
# semicircular moments
# ---------------------------------------------------------------------------


def _coerce_coeffs(coeffs, length, n):
    coeffs = [np.asarray(c, dtype=complex) for c in coeffs]
    if len(coeffs) != length + 1:
        raise MomentError(
            f"need {length + 1} coefficient matrices for length {length}, "
            f"got {len(coeffs)}"
        )
    for c in coeffs:
        if c.shape != (n, n):
            raise MomentError(f"coefficient has shape {c.shape}, expected {(n, n)}")
    return coeffs


def _is_diagonal(m) -> bool:
    return not np.any(m - np.diag(np.diagonal(m)))


def semicircular_expectation(eta: DiscreteCovariance, indices, coeffs) -> np.ndarray:
    """Exact B-valued moment E_B[b_0 x_{i_1} b_1 ... b_{l-1} x_{i_l} b_l] of
    a semicircular family with covariance eta; zero matrix for odd length.

    Computed by an interval dynamic program (pair the first point, recurse on
    the inside and outside), which sums exactly over the non-crossing
    pairings in O(l^3) covariance applications.  Kernel-table covariances
    with diagonal coefficients run on diagonal vectors.
    """
    indices = tuple(indices)
    ell = len(indices)
    n = eta.n
    coeffs = _coerce_coeffs(coeffs, ell, n)
    if ell % 2 == 1:
        return np.zeros((n, n), dtype=complex)
    if ell == 0:
        return coeffs[0].copy()

    vec_mode = eta.kernel_table is not None and all(_is_diagonal(c) for c in coeffs)
    if vec_mode:
        mid = [np.diagonal(c).astype(complex) for c in coeffs[1:-1]]
        eye = np.ones(n, dtype=complex)
        mul = lambda a, c: a * c
        app = eta.apply_diag
    else:
        mid = [c for c in coeffs[1:-1]]
        eye = np.eye(n, dtype=complex)
        mul = lambda a, c: a @ c
        app = eta.apply

    memo: dict = {}

    def dp(u: int, v: int):
        """E_B of positions u..v (1-based) with the interior coefficients."""
        if u > v:
            return eye
        key = (u, v)
        if key in memo:
            return memo[key]
        total = None
        for w in range(u + 1, v + 1, 2):
            if w == u + 1:
                bracket = mid[u - 1]
            else:
                bracket = mul(mul(mid[u - 1], dp(u + 1, w - 1)), mid[w - 2])
            term = app(indices[u - 1], indices[w - 1], bracket)
            if w < v:
                term = mul(mul(term, mid[w - 1]), dp(w + 1, v))
            total = term if total is None else total + term
        memo[key] = total
        return total

    core = dp(1, ell)
    if vec_mode:
        core = np.diag(core)
    return coeffs[0] @ core @ coeffs[-1]


def semicircular_trace(f: CovPolynomial, eta: DiscreteCovariance, b=None) -> complex:
    """tr_n of the covariance-law value of f on the semicircular family.

    Every nested application argument p(b, X) is replaced bottom-up by
    E_B[p(b, X)] via semicircular_expectation; E_B is the identity for the
    full base and diagonal compression for the diagonal base.
    """
    n = eta.n
    eye = np.eye(n, dtype=complex)
    diagonal_base = eta.kernel_table is not None or eta.base == "diagonal"

    def lookup_b(symbol):
        if b is None:
            raise MomentError(f"no base data supplied for symbol {symbol!r}")
        try:
            return np.asarray(b[symbol], dtype=complex)
        except (KeyError, IndexError):
            raise MomentError(f"base symbol {symbol!r} not covered") from None

    def compress(m):
        return np.diag(np.diagonal(m)) if diagonal_base else m

    # mixed element: (coeff matrices c_0..c_l, semicircular indices i_1..i_l)
    def word_to_mixed(word):
        coeffs, xs = [eye], []
        for letter in word.letters:
            if letter.kind == BASE:
                m = lookup_b(letter.symbol)
                if letter.star:
                    m = m.conj().T
                coeffs[-1] = coeffs[-1] @ m
            else:
                xs.append(letter.symbol)
                coeffs.append(eye)
        return (coeffs, xs)

    def mixed_mul(m1, m2):
        c1, x1 = m1
        c2, x2 = m2
        return (c1[:-1] + [c1[-1] @ c2[0]] + c2[1:], x1 + x2)

    def expect(mixed):
        coeffs, xs = mixed
        return compress(semicircular_expectation(eta, xs, coeffs))

    def apply_fn(i, j, mixed):
        return ([eta.apply(i, j, expect(mixed))], [])

    total = 0.0 + 0.0j
    for t in f.terms:
        segments = [word_to_mixed(w) for w in t.words]
        mixed = reduce_pairing(apply_fn, mixed_mul, t.pairing, t.indices, segments)
        total += t.coefficient * np.trace(expect(mixed)) / n
    return complex(total)


# ---------------------------------------------------------------------------
# exact Gaussian moments (Wick sum)
# ---------------------------------------------------------------------------


def _wick_term(kraus, positions, coeffs, pi: PairPartition) -> np.ndarray:
    """One pair partition's exact contribution to the Gaussian moment."""
    ell = pi.length
    block_of = {}
    for c, (r, s) in enumerate(pi.blocks):
        block_of[r] = c
        block_of[s] = c
    def block_axis(c):  # Kraus axes come after the 2l+2 chain axes
        return 2 * ell + 2 + c

    # chain axes 0..2l+1 around the 2l+1 matrices b_0 X_1 b_1 ... X_l b_l
    args = [coeffs[0], [0, 1]]
    for r in range(1, ell + 1):
        args.append(kraus[:, positions[r - 1]])
        args.append([block_axis(block_of[r]), 2 * r - 1, 2 * r])
        args.append(coeffs[r])
        args.append([2 * r, 2 * r + 1])
    args.append([0, 2 * ell + 1])
    return np.einsum(*args, optimize=True)


def gaussian_moment_exact(eta: DiscreteCovariance, indices, coeffs,
                          budget: float = DEFAULT_WICK_BUDGET,
                          partitions=None) -> np.ndarray:
    """Exact finite-n Gaussian moment E[b_0 X_{i_1} b_1 ... X_{i_l} b_l], as
    the Wick sum over all pair partitions with Kraus-contracted block terms.

    ``partitions`` restricts the sum to a given list (e.g. only the
    non-crossing or only the crossing ones) for decomposition checks.
    Refuses when m^(l/2) exceeds ``budget`` (m = Kraus count).
    """
    indices = tuple(indices)
    ell = len(indices)
    n = eta.n
    coeffs = _coerce_coeffs(coeffs, ell, n)
    if ell % 2 == 1:
        return np.zeros((n, n), dtype=complex)
    if ell == 0:
        return coeffs[0].copy()
    kraus = eta.kraus_array()
    m = kraus.shape[0]
    cost = float(m) ** (ell // 2)
    if cost > budget:
        raise BudgetError(
            f"exact Wick sum needs m^(l/2) = {m}^{ell // 2} = {cost:.3e} "
            f"Kraus contractions, over the budget {budget:.3e}"
        )
    positions = [eta._pos(i) for i in indices]
    if partitions is None:
        partitions = enumerate_pair_partitions(ell)
    total = np.zeros((n, n), dtype=complex)
    for pi in partitions:
        total += _wick_term(kraus, positions, coeffs, pi)
    return total


# ---------------------------------------------------------------------------
# GUE trace products (entry-level Wick, permutation cycle counting)
# ---------------------------------------------------------------------------


def gue_trace_wick(powers, n: int) -> float:
    """Exact E[ prod_m tr_n(X^{p_m}) ] for a single GUE matrix with
    tr_n E[X^2] = 1, via the genus expansion: each pair partition of the
    p = sum(p_m) letters contributes n^(c - p/2 - M), where c is the cycle
    count of the composed permutation and M the number of trace factors.
    """
    powers = tuple(int(p) for p in powers if int(p) != 0)
    if any(p < 0 for p in powers):
        raise MomentError("powers must be nonnegative")
    p = sum(powers)
    if p == 0:
        return 1.0
    if p % 2 == 1:
        return 0.0
    gamma = np.empty(p, dtype=int)
    start = 0
    for q in powers:
        for r in range(q):
            gamma[start + r] = start + (r + 1) % q
        start += q
    total = 0.0
    M = len(powers)
    for pi in enumerate_pair_partitions(p):
        perm = np.empty(p, dtype=int)
        for r, s in pi.blocks:
            perm[r - 1] = s - 1
            perm[s - 1] = r - 1
        comp = gamma[perm]  # gamma after pi
        seen = np.zeros(p, dtype=bool)
        c = 0
        for v in range(p):
            if not seen[v]:
                c += 1
                while not seen[v]:
                    seen[v] = True
                    v = comp[v]
        total += float(n) ** (c - p // 2 - M)
    return total


def gue_poly_trace_exact(f: CovPolynomial, n: int) -> complex:
    """Exact E[tr_n f(eta, X)] for the GUE covariance eta(a) = tr_n(a) 1.

    Works for polynomials whose letters are powers of a single semicircular
    symbol (no base letters): each nested application contributes an
    independent trace factor tr_n(X^q), and the product of traces is exact
    by ``gue_trace_wick``.
    """
    total = 0.0 + 0.0j
    for t in f.terms:
        counts = []
        for w in t.words:
            if any(l.kind == BASE for l in w.letters):
                raise MomentError("base letters are not supported by the GUE trace oracle")
            counts.append(sum(1 for l in w.letters if l.kind == SEMI))

        powers = []

        def span_total(r, s):  # x letters in words r..s-1
            return sum(counts[r : s])

        def visit(nodes):
            for (r, s), children in nodes:
                inner = span_total(r, s) - sum(
                    span_total(rc, sc) for (rc, sc), _ in children
                )
                powers.append(inner)
                visit(children)

        forest = nesting_forest(t.pairing)
        visit(forest)
        outer = sum(counts) - sum(span_total(r, s) for (r, s), _ in forest)
        powers.append(outer)
        total += t.coefficient * gue_trace_wick(powers, n)
    return complex(total)


# ---------------------------------------------------------------------------
# crossing gap and bounds
# ---------------------------------------------------------------------------


def _abs_power_trace(eta: DiscreteCovariance, index, q: int,
                     mc_samples: int = 10_000, seed: int = 1234):
    """E[tr_n |X_index|^q]: exact Wick value for even q, Monte Carlo estimate
    plus three standard errors for odd q (conservative for bound checks)."""
    n = eta.n
    if q == 0:
        return 1.0
    if q % 2 == 0:
        eye = np.eye(n, dtype=complex)
        val = gaussian_moment_exact(eta, (index,) * q, [eye] * (q + 1))
        return float(np.trace(val).real / n)
    from .sampler import SeedSpec, sample

    spec = SeedSpec(seed, ("abs-power", str(index), q))
    vals = np.empty(mc_samples)
    for t in range(mc_samples):
        x = sample(eta, spec.child(t))[index]
        vals[t] = float(np.abs(np.linalg.eigvalsh(x)) ** q @ np.ones(n)) / n
    stderr = float(vals.std(ddof=1) / np.sqrt(mc_samples))
    return float(vals.mean()) + 3.0 * stderr


def crossing_gap(eta: DiscreteCovariance, indices, coeffs,
                 budget: float = DEFAULT_WICK_BUDGET,
                 mc_samples: int = 10_000, seed: int = 1234):
    """(gap, bound): gap = |tr_n Gaussian moment - tr_n semicircular moment|
    (the total crossing contribution); bound = per-crossing-partition
    estimate 2 ||T|| ||eta(1)|| prod_t ||b_t|| max_i E tr_n |X_i|^(l-4),
    multiplied by the number of crossing partitions."""
    indices = tuple(indices)
    ell = len(indices)
    if ell % 2 == 1 or ell < 4:
        if ell < 4 and ell % 2 == 0 and ell >= 0:
            return 0.0, 0.0
        raise MomentError("crossing_gap needs even length >= 4 (length 2 has gap 0)")
    n = eta.n
    exact = gaussian_moment_exact(eta, indices, coeffs, budget=budget)
    limit = semicircular_expectation(eta, indices, coeffs)
    gap = float(abs(np.trace(exact - limit)) / n)
    count = double_factorial_odd(ell - 1) - catalan(ell // 2)
    coeff_norms = float(
        np.prod([np.linalg.norm(np.asarray(c, dtype=complex), 2) for c in coeffs])
    )
    tail = max(
        _abs_power_trace(eta, i, ell - 4, mc_samples=mc_samples, seed=seed)
        for i in set(indices)
    )
    bound = count * 2.0 * eta.choi_norm() * eta.eta_one_norm() * coeff_norms * tail
    return gap, float(bound)


@dataclass
class BoundReport:
    """The quantitative constants of a covariance: sigma = ||eta(1)||^(1/2),
    v = ||T||^(1/2), the fourth-moment bound 2 v^2 sigma^2, per-p moment-gap
    and moment-cap bounds, and the concentration exponent rate n / (2||T||)."""

    sigma: float
    v: float
    w4_bound: float
    bbvh_gap_bound: dict
    moment_cap: dict
    herbst_rate: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "sigma": self.sigma,
                "v": self.v,
                "w4_bound": self.w4_bound,
                "bbvh_gap_bound": {str(p): b for p, b in self.bbvh_gap_bound.items()},
                "moment_cap": {str(p): b for p, b in self.moment_cap.items()},
                "herbst_rate": self.herbst_rate,
            },
            sort_keys=True,
        )


def bounds(eta: DiscreteCovariance, ps=(1, 2, 3)) -> BoundReport:
    t_norm = eta.choi_norm()
    one_norm = eta.eta_one_norm()
    sigma = float(np.sqrt(one_norm))
    v = float(np.sqrt(t_norm))
    gap = {int(p): float(2.0 * p ** 0.75 * one_norm ** 0.25 * t_norm ** 0.25) for p in ps}
    cap = {p: 2.0 * sigma + g for p, g in gap.items()}
    herbst = float(eta.n / (2.0 * t_norm)) if t_norm > 0 else float("inf")
    return BoundReport(sigma, v, 2.0 * t_norm * one_norm, gap, cap, herbst)
