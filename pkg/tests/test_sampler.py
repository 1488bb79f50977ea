import numpy as np
import pytest

from semicov.covariance import DiscreteCovariance
from semicov.models import gue
from semicov.moments import gaussian_moment_exact
from semicov.partitions import PairPartition, enumerate_pair_partitions
from semicov.sampler import SeedSpec, sample, sample_copies, sample_partition_family

from _util import rand_hermitian, random_kraus_covariance


def test_determinism_and_stream_separation():
    eta = gue(8)
    s = SeedSpec(42, ("exp", 8, 0))
    assert np.array_equal(sample(eta, s)["1"], sample(eta, s)["1"])
    other = sample(eta, SeedSpec(42, ("exp", 8, 1)))["1"]
    assert not np.array_equal(sample(eta, s)["1"], other)
    # type-tagged labels: int 5 and "5" are distinct streams
    a = sample(eta, SeedSpec(1, (5,)))["1"]
    b = sample(eta, SeedSpec(1, ("5",)))["1"]
    assert not np.array_equal(a, b)


def test_exact_hermiticity_both_paths():
    diag = gue(16)
    x = sample(diag, 3)["1"]
    assert np.abs(x - x.conj().T).max() == 0.0
    full, _, _ = random_kraus_covariance(5, f=2, m=3, seed=2)
    for m in sample(full, 3):
        assert np.abs(m - m.conj().T).max() == 0.0


def test_gue_entry_variance():
    n, N = 4, 10_000
    eta = gue(n)
    root = SeedSpec(11, ("var",))
    vals = np.empty(N)
    for t in range(N):
        vals[t] = np.abs(sample(eta, root.child(t))["1"][0, 1]) ** 2
    mean, stderr = vals.mean(), vals.std(ddof=1) / np.sqrt(N)
    assert abs(mean - 1 / n) <= 5 * stderr


def test_empirical_matrix_covariance_kraus_path():
    eta, _, _ = random_kraus_covariance(4, f=2, m=3, seed=8)
    unit = np.zeros((4, 4), dtype=complex)
    unit[1, 2] = 1.0
    want = eta.apply("1", "2", unit)
    N = 4000
    root = SeedSpec(5, ("cov",))
    acc = np.zeros((4, 4), dtype=complex)
    sq = np.zeros((4, 4))
    for t in range(N):
        fam = sample(eta, root.child(t))
        term = fam["1"] @ unit @ fam["2"]
        acc += term
        sq += np.abs(term) ** 2
    mean = acc / N
    stderr = np.sqrt(np.maximum(sq / N - np.abs(mean) ** 2, 0)) / np.sqrt(N) + 1e-12
    assert (np.abs(mean - want) <= 5 * stderr).all()


def test_fast_path_matches_kraus_path_in_distribution():
    # same kernel-table covariance, sampled both ways; compare E[X a X]
    n = 6
    rng = np.random.default_rng(4)
    h = rng.random((1, 1, n, n))
    table = h + h.transpose(1, 0, 3, 2)
    diag = DiscreteCovariance.from_kernel_table(n, ("1",), table)
    full = DiscreteCovariance(n, ("1",), "full", choi_tensor=diag.choi_tensor)
    a = rand_hermitian(rng, n)
    want = diag.apply("1", "1", a)
    assert np.abs(want - full.apply("1", "1", a)).max() < 1e-12
    N = 4000
    for eta, tag in ((diag, "fast"), (full, "kraus")):
        root = SeedSpec(9, (tag,))
        acc = np.zeros((n, n), dtype=complex)
        sq = np.zeros((n, n))
        for t in range(N):
            x = sample(eta, root.child(t))["1"]
            term = x @ a @ x
            acc += term
            sq += np.abs(term) ** 2
        mean = acc / N
        stderr = np.sqrt(np.maximum(sq / N - np.abs(mean) ** 2, 0)) / np.sqrt(N) + 1e-12
        assert (np.abs(mean - want) <= 5 * stderr).all()


def test_partition_family_block_structure():
    eta = gue(4)
    pi = PairPartition.from_blocks([(1, 2)])
    fam = sample_partition_family(eta, pi, ("1", "1"), 7)
    assert np.array_equal(fam[1], fam[2])  # one copy, same component

    pi2 = PairPartition.from_blocks([(1, 3), (2, 4)])
    fam2 = sample_partition_family(eta, pi2, ("1",) * 4, 7)
    assert np.array_equal(fam2[1], fam2[3])
    assert np.array_equal(fam2[2], fam2[4])
    assert not np.array_equal(fam2[1], fam2[2])
    with pytest.raises(ValueError):
        sample_partition_family(eta, pi2, ("1",) * 3, 7)


def test_cross_copy_independence():
    eta = gue(4)
    N = 3000
    root = SeedSpec(13, ("ind",))
    acc = 0.0
    sq = 0.0
    for t in range(N):
        c1, c2 = sample_copies(eta, 2, root.child(t))
        v = (c1["1"][0, 1] * c2["1"][1, 0]).real
        acc += v
        sq += v * v
    mean = acc / N
    stderr = np.sqrt(max(sq / N - mean ** 2, 0)) / np.sqrt(N)
    assert abs(mean) <= 5 * stderr


def test_blockwise_expectations_sum_to_wick_moment():
    """Summing exact E[X_{pi;1} ... X_{pi;4}] over all pairings reproduces
    the full Gaussian 4th moment (estimated per pairing by Monte Carlo)."""
    eta, _, _ = random_kraus_covariance(3, f=1, m=2, seed=6)
    n, ell, N = 3, 4, 4000
    exact = gaussian_moment_exact(eta, ("1",) * ell, [np.eye(n, dtype=complex)] * (ell + 1))
    total = np.zeros((n, n), dtype=complex)
    err2 = np.zeros((n, n))
    for pidx, pi in enumerate(enumerate_pair_partitions(ell)):
        acc = np.zeros((n, n), dtype=complex)
        sq = np.zeros((n, n))
        root = SeedSpec(17, ("wick", pidx))
        for t in range(N):
            fam = sample_partition_family(eta, pi, ("1",) * ell, root.child(t))
            term = fam[1] @ fam[2] @ fam[3] @ fam[4]
            acc += term
            sq += np.abs(term) ** 2
        mean = acc / N
        total += mean
        err2 += np.maximum(sq / N - np.abs(mean) ** 2, 0) / N
    stderr = np.sqrt(err2) + 1e-12
    assert (np.abs(total - exact) <= 5 * stderr).all()


def test_real_coordinate_covariance_matches_choi_operator():
    """Empirical covariance of real Hermitian coordinates equals the real
    symmetric covariance operator used for the Kraus decomposition."""
    from semicov.covariance import hermitian_basis

    n = 3
    eta, _, _ = random_kraus_covariance(n, f=1, m=3, seed=15)
    hb = hermitian_basis(n)
    m_op = np.einsum(
        "isajtb,xsa,ybt->ixjy", eta.choi_tensor, hb, hb, optimize=True
    ).real.reshape(n * n, n * n)
    N = 6000
    root = SeedSpec(19, ("coord",))
    coords = np.empty((N, n * n))
    for t in range(N):
        x = sample(eta, root.child(t))["1"]
        coords[t] = np.einsum("ab,xba->x", x, hb).real
    emp = coords.T @ coords / N
    rng = np.random.default_rng(2)
    pairs = [(rng.integers(n * n), rng.integers(n * n)) for _ in range(20)]
    for a, b in pairs:
        prod = coords[:, a] * coords[:, b]
        stderr = prod.std(ddof=1) / np.sqrt(N) + 1e-12
        assert abs(emp[a, b] - m_op[a, b]) <= 5 * stderr
