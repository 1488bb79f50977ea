"""Concrete operator-valued covariance matrices on M_n over a finite index
set F: Choi matrix, positivity/symmetry verification, Kraus decomposition,
and application.

Two storage backends:

* ``full`` base: a dense Choi tensor ``C[i,s,a,j,t,b] = eta_ij(E_st)[a,b]``
  over the multi-index ``(index, input row, output row)``.
* ``diagonal`` base with a kernel table ``H[i,j,s,t]``: eta_ij depends only
  on the diagonal of its argument and returns a diagonal matrix with
  ``eta_ij(a)[s,s] = (1/n) sum_t H[i,j,s,t] a[t,t]``.  No n^2-dimensional
  Choi matrix is ever materialized on this path, which is what makes
  n ~ 1000+ sampling and norm computations cheap.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

HERMITIAN_TOL = 1e-12
PSD_RTOL = 1e-10
TRACE_SYM_RTOL = 1e-10
KRAUS_RECON_TOL = 1e-8
KRAUS_EIG_DROP = 1e-12
DEFAULT_CHOI_CAP = 4096  # largest |F| * n^2 for dense Choi work


class CovarianceError(ValueError):
    pass


class ConstructionError(CovarianceError):
    """Invariant violation while building a covariance (carries detail)."""

    def __init__(self, message: str, value: float | None = None):
        super().__init__(message)
        self.value = value


@dataclass(frozen=True)
class HermitianTuple:
    """A family (X_i) of n x n Hermitian matrices addressed by label."""

    indices: tuple
    matrices: tuple

    def __post_init__(self):
        if len(self.indices) != len(self.matrices):
            raise ValueError("one matrix per index required")
        if not self.indices:
            raise ValueError("empty index set")
        mats = tuple(np.asarray(m, dtype=complex) for m in self.matrices)
        n = mats[0].shape[0]
        for m in mats:
            if m.shape != (n, n):
                raise ValueError("all matrices must be square of the same size")
            if np.abs(m - m.conj().T).max() > HERMITIAN_TOL * max(1.0, np.abs(m).max()):
                raise ValueError("matrix is not Hermitian within tolerance")
        object.__setattr__(self, "indices", tuple(self.indices))
        object.__setattr__(self, "matrices", mats)

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]

    def __getitem__(self, label):
        for cand in (label, str(label)):
            if cand in self.indices:
                return self.matrices[self.indices.index(cand)]
        try:
            cand = int(label)
        except (TypeError, ValueError):
            cand = None
        if cand is not None and cand in self.indices:
            return self.matrices[self.indices.index(cand)]
        raise KeyError(label)

    def __iter__(self):
        return iter(self.matrices)

    def __len__(self):
        return len(self.matrices)


def hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal basis of Herm(n) for the (unnormalized) trace inner
    product, as an array of shape (n^2, n, n)."""
    out = np.zeros((n * n, n, n), dtype=complex)
    k = 0
    for a in range(n):
        out[k, a, a] = 1.0
        k += 1
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for a in range(n):
        for b in range(a + 1, n):
            out[k, a, b] = inv_sqrt2
            out[k, b, a] = inv_sqrt2
            k += 1
            out[k, a, b] = 1j * inv_sqrt2
            out[k, b, a] = -1j * inv_sqrt2
            k += 1
    return out


class DiscreteCovariance:
    """An operator-valued covariance matrix eta = (eta_ij) on M_n, i,j in F.

    Immutable after construction; the Kraus family is memoized once under a
    lock, so instances are safe to share across threads.
    """

    def __init__(self, n, F, base, choi_tensor=None, table=None,
                 choi_cap=DEFAULT_CHOI_CAP, _checked=False):
        if len(F) == 0:
            raise CovarianceError("empty index set F is not supported")
        if n < 1:
            raise CovarianceError("n must be >= 1")
        if base not in ("full", "diagonal"):
            raise CovarianceError(f"unknown base {base!r}")
        if (choi_tensor is None) == (table is None):
            raise CovarianceError("exactly one of choi_tensor/table required")
        self.n = int(n)
        self.F = tuple(F)
        self.base = base
        self.choi_cap = int(choi_cap)
        self._ct = None if choi_tensor is None else np.asarray(choi_tensor, dtype=complex)
        self._table = None if table is None else np.asarray(table, dtype=float)
        self._kraus_lock = threading.Lock()
        self._kraus = None
        self._diag_sqrt = None
        if not _checked:
            self._check_invariants()

    # -- construction -------------------------------------------------------

    @classmethod
    def from_maps(cls, n, F, apply_fn, base="full", choi_cap=DEFAULT_CHOI_CAP):
        """Tabulate a user map on matrix units and verify the invariants."""
        F = tuple(F)
        if len(F) == 0:
            raise CovarianceError("empty index set F is not supported")
        f = len(F)
        tab = np.zeros((f, f, n, n, n, n), dtype=complex)
        unit = np.zeros((n, n), dtype=complex)
        for s in range(n):
            for t in range(n):
                unit[s, t] = 1.0
                for ii, i in enumerate(F):
                    for jj, j in enumerate(F):
                        tab[ii, jj, s, t] = np.asarray(apply_fn(i, j, unit), dtype=complex)
                unit[s, t] = 0.0
        ct = np.ascontiguousarray(tab.transpose(0, 2, 4, 1, 3, 5))
        scale = max(np.abs(ct).max(), 1e-300)

        # linearity spot check on random combinations
        rng = np.random.default_rng(2024)
        for _ in range(2):
            a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            expect = np.einsum("stab,st->ab", tab[0, 0].reshape(n, n, n, n), a)
            got = np.asarray(apply_fn(F[0], F[0], a), dtype=complex)
            if np.abs(expect - got).max() > 1e-8 * max(1.0, np.abs(expect).max()):
                raise ConstructionError(
                    "apply_fn is not linear in its matrix argument",
                    float(np.abs(expect - got).max()),
                )
        return cls(n, F, base, choi_tensor=ct, choi_cap=choi_cap)

    @classmethod
    def from_kernel_table(cls, n, F, table, choi_cap=DEFAULT_CHOI_CAP):
        """Diagonal-base covariance from a kernel table H[i,j,s,t]."""
        return cls(n, F, "diagonal", table=table, choi_cap=choi_cap)

    # -- invariants ---------------------------------------------------------

    def _check_invariants(self):
        if self._table is not None:
            H = self._table
            f = len(self.F)
            if H.shape != (f, f, self.n, self.n):
                raise CovarianceError(f"kernel table has shape {H.shape}")
            scale = max(np.abs(H).max(), 1e-300)
            # tau-symmetry at kernel level: H[i,j] = H[j,i]^T
            sym_res = np.abs(H - H.transpose(1, 0, 3, 2)).max()
            if sym_res > TRACE_SYM_RTOL * scale:
                raise ConstructionError(
                    f"kernel table violates trace symmetry (residual {sym_res:.3e})",
                    float(sym_res),
                )
            # CP at discrete level: (H[i,j,s,t])_{i,j} must be PSD per cell
            cells = np.moveaxis(H, (0, 1), (2, 3))  # (s,t,f,f)
            cells = 0.5 * (cells + np.swapaxes(cells, -1, -2))
            if f == 1:
                lam_min = float(cells.min())
            else:
                lam_min = float(np.linalg.eigvalsh(cells)[..., 0].min())
            if lam_min < -PSD_RTOL * scale:
                raise ConstructionError(
                    f"kernel table is not positive (min cell eigenvalue {lam_min:.3e})",
                    lam_min,
                )
            return

        ct = self._ct
        f = len(self.F)
        d = f * self.n * self.n
        if ct.shape != (f, self.n, self.n, f, self.n, self.n):
            raise CovarianceError(f"choi tensor has shape {ct.shape}")
        scale = max(np.abs(ct).max(), 1e-300)
        choi = ct.reshape(d, d)
        herm_res = np.abs(choi - choi.conj().T).max()
        if herm_res > PSD_RTOL * scale:
            raise ConstructionError(
                f"Choi matrix is not Hermitian (residual {herm_res:.3e})", float(herm_res)
            )
        sym = np.einsum("jbtias->isajtb", ct)
        sym_res = np.abs(ct - sym).max()
        if sym_res > TRACE_SYM_RTOL * scale:
            raise ConstructionError(
                f"map violates trace symmetry (worst basis-pair residual {sym_res:.3e})",
                float(sym_res),
            )
        choi = 0.5 * (choi + choi.conj().T)
        evals = np.linalg.eigvalsh(choi)
        lam_min, lam_max = float(evals[0]), float(evals[-1])
        if lam_min < -PSD_RTOL * max(lam_max, 1e-300):
            raise ConstructionError(
                f"map is not completely positive (lambda_min {lam_min:.3e})", lam_min
            )
        self._ct = choi.reshape(ct.shape)

    # -- basic accessors ----------------------------------------------------

    def _pos(self, label) -> int:
        for cand in (label, str(label)):
            if cand in self.F:
                return self.F.index(cand)
        try:
            cand = int(label)
        except (TypeError, ValueError):
            cand = None
        if cand is not None and cand in self.F:
            return self.F.index(cand)
        raise CovarianceError(f"index {label!r} not in F={self.F!r}")

    @property
    def choi_tensor(self) -> np.ndarray:
        """Choi data as a (|F|,n,n,|F|,n,n) tensor; materialized from the
        kernel table when within the configured cap."""
        if self._ct is not None:
            return self._ct
        f, n = len(self.F), self.n
        if f * n * n > self.choi_cap:
            raise CovarianceError(
                f"dense Choi of dimension {f * n * n} exceeds the cap {self.choi_cap}"
            )
        ct = np.zeros((f, n, n, f, n, n), dtype=complex)
        for s in range(n):
            for a in range(n):
                ct[:, s, a, :, s, a] = self._table[:, :, a, s] / n
        self._ct = ct
        return ct

    @property
    def choi(self) -> np.ndarray:
        d = len(self.F) * self.n * self.n
        return self.choi_tensor.reshape(d, d)

    @property
    def kernel_table(self):
        return self._table

    # -- application --------------------------------------------------------

    def apply(self, i, j, a) -> np.ndarray:
        """eta_ij(a) as a dense n x n matrix."""
        pi, pj = self._pos(i), self._pos(j)
        a = np.asarray(a, dtype=complex)
        if a.shape != (self.n, self.n):
            raise CovarianceError(f"argument has shape {a.shape}, expected {(self.n, self.n)}")
        if self._table is not None:
            vec = (self._table[pi, pj] @ np.diagonal(a)) / self.n
            return np.diag(vec)
        return np.einsum("satb,st->ab", self._ct[pi, :, :, pj], a)

    def apply_diag(self, i, j, vec) -> np.ndarray:
        """Diagonal-base fast path: eta_ij on a diagonal (given as a vector),
        returning the diagonal of the result."""
        pi, pj = self._pos(i), self._pos(j)
        vec = np.asarray(vec, dtype=complex)
        if self._table is not None:
            return (self._table[pi, pj] @ vec) / self.n
        out = np.einsum("satb,st->ab", self._ct[pi, :, :, pj], np.diag(vec))
        return np.diagonal(out).copy()

    # -- norms ----------------------------------------------------------------

    def choi_norm(self) -> float:
        """Largest eigenvalue of the (PSD) Choi matrix, = v(X)^2."""
        if self._table is not None:
            f = len(self.F)
            if f == 1:
                return max(float(self._table.max()), 0.0) / self.n
            cells = np.moveaxis(self._table, (0, 1), (2, 3))
            cells = 0.5 * (cells + np.swapaxes(cells, -1, -2))
            return max(float(np.linalg.eigvalsh(cells)[..., -1].max()), 0.0) / self.n
        evals = np.linalg.eigvalsh(self.choi)
        return max(float(evals[-1]), 0.0)

    def eta_one_block(self) -> np.ndarray:
        """The |F|n x |F|n block matrix (eta_ij(1))_{i,j in F}."""
        f, n = len(self.F), self.n
        if self._table is not None:
            g = self._table.sum(axis=3) / n  # (f, f, s)
            out = np.zeros((f, n, f, n), dtype=complex)
            for s in range(n):
                out[:, s, :, s] = g[:, :, s]
            return out.reshape(f * n, f * n)
        blk = np.einsum("itajtb->iajb", self._ct)
        return blk.reshape(f * n, f * n)

    def eta_one_norm(self) -> float:
        """Operator norm of (eta_ij(1))_{i,j}."""
        if self._table is not None:
            f = len(self.F)
            g = self._table.sum(axis=3) / self.n  # (f, f, s)
            if f == 1:
                return float(np.abs(g).max())
            per_s = np.moveaxis(g, 2, 0)  # (s, f, f)
            per_s = 0.5 * (per_s + np.swapaxes(per_s, -1, -2))
            return float(np.abs(np.linalg.eigvalsh(per_s)).max())
        blk = self.eta_one_block()
        blk = 0.5 * (blk + blk.conj().T)
        return float(np.abs(np.linalg.eigvalsh(blk)).max())

    # -- Kraus ----------------------------------------------------------------

    def kraus_decompose(self) -> list[HermitianTuple]:
        """Self-adjoint Kraus tuples (a_k,i)_{i in F} with
        eta_ij(a) = sum_k a_ki a a_kj, via the real-symmetric
        eigendecomposition of the covariance operator on (Herm(n))^F."""
        with self._kraus_lock:
            if self._kraus is None:
                self._kraus = self._compute_kraus()
        arr = self._kraus
        return [
            HermitianTuple(self.F, tuple(arr[r, i] for i in range(len(self.F))))
            for r in range(arr.shape[0])
        ] if arr.shape[0] else []

    def kraus_array(self) -> np.ndarray:
        """Kraus family as an array of shape (m, |F|, n, n)."""
        with self._kraus_lock:
            if self._kraus is None:
                self._kraus = self._compute_kraus()
        return self._kraus

    def _compute_kraus(self) -> np.ndarray:
        ct = self.choi_tensor
        f, n = len(self.F), self.n
        hb = hermitian_basis(n)
        m_op = np.einsum("isajtb,xsa,ybt->ixjy", ct, hb, hb, optimize=True)
        scale = max(np.abs(m_op).max(), 1e-300)
        imag_res = np.abs(m_op.imag).max()
        if imag_res > 1e-9 * scale:
            raise ConstructionError(
                f"covariance operator is not real on Hermitian tuples "
                f"(residual {imag_res:.3e})", float(imag_res)
            )
        d = f * n * n
        m_real = m_op.real.reshape(d, d)
        m_real = 0.5 * (m_real + m_real.T)
        evals, evecs = np.linalg.eigh(m_real)
        lam_max = max(float(evals[-1]), 0.0)
        if evals[0] < -PSD_RTOL * max(lam_max, 1e-300):
            raise ConstructionError(
                f"negative Kraus eigenvalue {float(evals[0]):.3e}", float(evals[0])
            )
        keep = evals > KRAUS_EIG_DROP * max(lam_max, 1e-300)
        lams = evals[keep]
        vecs = evecs[:, keep].T.reshape(-1, f, n * n)  # (m, f, n^2)
        kraus = np.einsum("rfx,xab->rfab", vecs, hb)
        kraus *= np.sqrt(lams)[:, None, None, None]
        # reconstruction residual on all matrix-unit pairs
        recon = np.einsum("rias,rjtb->isajtb", kraus, kraus, optimize=True)
        resid = np.abs(recon - ct).max()
        if resid > KRAUS_RECON_TOL * max(1.0, scale):
            raise ConstructionError(
                f"Kraus reconstruction residual {resid:.3e} exceeds tolerance",
                float(resid),
            )
        return kraus

    # -- sampling support ------------------------------------------------------

    def diag_sqrt_factors(self) -> np.ndarray:
        """For the diagonal backend: per-cell PSD square roots L[s,t] of the
        |F| x |F| matrices H[:,:,s,t]/n, shape (n, n, |F|, |F|)."""
        if self._table is None:
            raise CovarianceError("diag_sqrt_factors requires a kernel table backend")
        if self._diag_sqrt is None:
            cells = np.moveaxis(self._table, (0, 1), (2, 3)) / self.n  # (s,t,f,f)
            cells = 0.5 * (cells + np.swapaxes(cells, -1, -2))
            f = len(self.F)
            if f == 1:
                L = np.sqrt(np.clip(cells, 0.0, None))
            else:
                evals, evecs = np.linalg.eigh(cells)
                evals = np.clip(evals, 0.0, None)
                L = np.einsum("...ij,...j,...kj->...ik", evecs, np.sqrt(evals), evecs)
            self._diag_sqrt = L
        return self._diag_sqrt

    # -- serialization ----------------------------------------------------------

    def to_json(self) -> str:
        if self._table is not None:
            payload = {
                "n": self.n,
                "F": list(self.F),
                "base": self.base,
                "kind": "table",
                "table": self._table.tolist(),
            }
        else:
            flat = self.choi.reshape(-1)
            payload = {
                "n": self.n,
                "F": list(self.F),
                "base": self.base,
                "kind": "choi",
                "choi": [[float(z.real), float(z.imag)] for z in flat],
            }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DiscreteCovariance":
        payload = json.loads(text)
        n = int(payload["n"])
        F = tuple(payload["F"])
        base = payload["base"]
        if payload["kind"] == "table":
            return cls(n, F, "diagonal", table=np.asarray(payload["table"], dtype=float))
        f = len(F)
        d = f * n * n
        flat = np.asarray(payload["choi"], dtype=float)
        choi = (flat[:, 0] + 1j * flat[:, 1]).reshape(d, d)
        ct = choi.reshape(f, n, n, f, n, n)
        return cls(n, F, base, choi_tensor=ct)
