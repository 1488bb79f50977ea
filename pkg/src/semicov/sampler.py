"""Reproducible sampling of eta-Gaussian Hermitian families.

Randomness contract: every draw is addressed by a ``SeedSpec`` — a master
seed plus a tuple of stream labels (experiment id, n, sample index, copy
index, ...).  Distinct label tuples give independent streams, identical ones
give identical draws, regardless of scheduling; this is what makes the
parallel Monte Carlo harness deterministic.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .covariance import DiscreteCovariance, HermitianTuple
from .partitions import PairPartition


def _label_words(label) -> tuple:
    """Encode one stream label as uint32 words (type-tagged so that the
    integer 5 and the string "5" name different streams)."""
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        v = int(label)
        if v < 0:
            raise ValueError("stream labels must be nonnegative integers or strings")
        return (1, v & 0xFFFFFFFF, (v >> 32) & 0xFFFFFFFF)
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=16).digest()
    return (2,) + tuple(
        int.from_bytes(digest[k : k + 4], "little") for k in range(0, 16, 4)
    )


@dataclass(frozen=True)
class SeedSpec:
    """Master seed plus a label path addressing one random stream."""

    master_seed: int
    labels: tuple = ()

    def child(self, *labels) -> "SeedSpec":
        return SeedSpec(self.master_seed, self.labels + tuple(labels))

    def generator(self) -> np.random.Generator:
        spawn_key = tuple(
            w for label in self.labels for w in _label_words(label)
        )
        return np.random.default_rng(
            np.random.SeedSequence(self.master_seed, spawn_key=spawn_key)
        )


def _as_seed(seed) -> SeedSpec:
    return seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))


def sample(eta: DiscreteCovariance, seed) -> HermitianTuple:
    """One eta-Gaussian family (X_i)_{i in F}, exactly Hermitian.

    Kernel-table covariances use a structured fast path (independent entries
    with per-cell cross-index covariance, Hermitian mirroring); everything
    else goes through X_i = sum_k g_k a_{k,i} over the Kraus family.  The two
    paths agree in distribution, not bit-for-bit.
    """
    rng = _as_seed(seed).generator()
    n, f = eta.n, len(eta.F)
    if eta.kernel_table is not None:
        L = eta.diag_sqrt_factors()  # (n, n, f, f)
        g = (
            rng.standard_normal((n, n, f)) + 1j * rng.standard_normal((n, n, f))
        ) / np.sqrt(2.0)
        gd = rng.standard_normal((n, f))
        z = np.einsum("stij,stj->ist", L, g)
        x = np.zeros((f, n, n), dtype=complex)
        iu = np.triu_indices(n, 1)
        x[:, iu[0], iu[1]] = z[:, iu[0], iu[1]]
        x[:, iu[1], iu[0]] = z[:, iu[0], iu[1]].conj()
        d = np.arange(n)
        x[:, d, d] = np.einsum("sij,sj->is", L[d, d], gd).real
    else:
        kraus = eta.kraus_array()  # (m, f, n, n)
        g = rng.standard_normal(kraus.shape[0])
        x = np.einsum("r,rfab->fab", g, kraus)
    return HermitianTuple(eta.F, tuple(x))


def sample_copies(eta: DiscreteCovariance, count: int, seed) -> list:
    """``count`` independent eta-Gaussian families."""
    if count < 1:
        raise ValueError("count must be >= 1")
    seed = _as_seed(seed)
    return [sample(eta, seed.child("copy", t)) for t in range(count)]


def sample_partition_family(
    eta: DiscreteCovariance, pi: PairPartition, indices, seed
) -> HermitianTuple:
    """The family X_{pi, indices}: one independent copy of X per block of pi,
    with slots r, s of block {r, s} holding that copy's components i_r, i_s.
    Slots are labeled by position 1..length."""
    indices = tuple(indices)
    if len(indices) != pi.length:
        raise ValueError(
            f"need {pi.length} indices for a partition of length {pi.length}, "
            f"got {len(indices)}"
        )
    seed = _as_seed(seed)
    slots = [None] * pi.length
    for c, (r, s) in enumerate(pi.blocks):
        copy = sample(eta, seed.child("block", c))
        slots[r - 1] = copy[indices[r - 1]]
        slots[s - 1] = copy[indices[s - 1]]
    return HermitianTuple(tuple(range(1, pi.length + 1)), tuple(slots))
