"""Acceptance gate: one test per criterion, each printing a PASS line.

Tolerances are pinned inline; Monte Carlo checks are gated statistically
(5 standard errors unless stated otherwise) with fixed seeds.
"""
import math

import numpy as np
import pytest

from semicov.cli import main
from semicov.covariance import DiscreteCovariance
from semicov.covpoly import evaluate, parse_poly
from semicov.harness import (
    RunConfig,
    eta_estimator_run,
    strong_convergence_run,
    tail_diagnostic_run,
)
from semicov.models import PiecewiseLinear, band, band_zero_cells, gue
from semicov.moments import (
    bounds,
    crossing_gap,
    gaussian_moment_exact,
    gue_trace_wick,
    semicircular_expectation,
    semicircular_trace,
)
from semicov.partitions import (
    catalan,
    double_factorial_odd,
    enumerate_noncrossing,
    enumerate_pair_partitions,
    is_noncrossing,
)
from semicov.sampler import SeedSpec, sample, sample_copies

from _util import rand_hermitian, random_kraus_covariance

PLATEAU = PiecewiseLinear.from_table(
    [[-0.5, 0.0], [-0.3, 1.0], [0.3, 1.0], [0.5, 0.0]]
)


def test_criterion_01_pairing_counts():
    for k in range(1, 7):
        assert len(enumerate_pair_partitions(2 * k)) == double_factorial_odd(2 * k - 1)
        assert len(enumerate_noncrossing(2 * k)) == catalan(k)
    for ell in range(0, 11, 2):
        direct = {p for p in enumerate_noncrossing(ell)}
        filtered = {p for p in enumerate_pair_partitions(ell) if is_noncrossing(p)}
        assert direct == filtered
    print("CRITERION 1: PASS")


def test_criterion_02_choi_kraus_round_trip():
    cases = []
    s = 0
    while len(cases) < 20:
        for n in (2, 3, 4, 5):
            for f in (1, 2, 3):
                cases.append((n, f, s))
                s += 1
    for n, f, seed in cases[:20]:
        eta, _, apply_fn = random_kraus_covariance(n, f=f, m=2 + seed % 3, seed=seed)
        kraus = eta.kraus_array()
        recon = np.einsum("rias,rjtb->isajtb", kraus, kraus, optimize=True)
        assert np.abs(recon - eta.choi_tensor).max() <= 1e-8
        unit = np.zeros((n, n), dtype=complex)
        for a in range(n):
            for b in range(n):
                unit[...] = 0.0
                unit[a, b] = 1.0
                for i in eta.F:
                    for j in eta.F:
                        got = eta.apply(i, j, unit)
                        want = apply_fn(i, j, unit)
                        assert np.abs(got - want).max() <= 1e-10
    print("CRITERION 2: PASS")


def test_criterion_03_wick_identity():
    eta, _, _ = random_kraus_covariance(3, f=2, m=2, seed=3)
    rng = np.random.default_rng(30)
    for ell in (4, 6):
        coeffs = [rand_hermitian(rng, 3) for _ in range(ell + 1)]
        idx = tuple(rng.choice(["1", "2"]) for _ in range(ell))
        every = list(enumerate_pair_partitions(ell))
        nc = [p for p in every if is_noncrossing(p)]
        cross = [p for p in every if not is_noncrossing(p)]
        full = gaussian_moment_exact(eta, idx, coeffs)
        sub = gaussian_moment_exact(eta, idx, coeffs, partitions=nc)
        rest = gaussian_moment_exact(eta, idx, coeffs, partitions=cross)
        limit = semicircular_expectation(eta, idx, coeffs)
        scale = max(1.0, np.abs(full).max())
        assert np.abs(full - sub - rest).max() <= 1e-10 * scale
        assert np.abs(sub - limit).max() <= 1e-10 * scale
    for n in (2, 3, 4, 8):
        g = gue(n)
        eye = np.eye(n, dtype=complex)
        val = gaussian_moment_exact(g, ("1",) * 4, [eye] * 5)
        assert abs(np.trace(val).real / n - (2.0 + 1.0 / n ** 2)) <= 1e-10
    print("CRITERION 3: PASS")


def test_criterion_04_crossing_bound():
    for n in (2, 4, 8):
        g = gue(n)
        eye = np.eye(n, dtype=complex)
        gap, bound = crossing_gap(g, ("1",) * 4, [eye] * 5)
        assert abs(gap - 1.0 / n ** 2) <= 1e-10
        assert abs(bound - 2.0 / n) <= 1e-10
        assert gap <= bound
    rng = np.random.default_rng(40)
    for seed in range(10):
        eta, _, _ = random_kraus_covariance(3, f=1, m=2, seed=seed + 100)
        for ell in (4, 6):
            coeffs = [rand_hermitian(rng, 3) for _ in range(ell + 1)]
            gap, bound = crossing_gap(eta, ("1",) * ell, coeffs)
            assert gap <= bound + 1e-10
    print("CRITERION 4: PASS")


def test_criterion_05_moment_gap_bound():
    for seed in range(5):
        for n in (4, 8):
            eta, _, _ = random_kraus_covariance(n, f=1, m=2, seed=seed + 200)
            rep = bounds(eta, ps=(1, 2, 3))
            eye = np.eye(n, dtype=complex)
            for p in (1, 2, 3):
                q = 2 * p
                exact = float(np.trace(
                    gaussian_moment_exact(eta, ("1",) * q, [eye] * (q + 1))
                ).real / n)
                limit = float(np.trace(
                    semicircular_expectation(eta, ("1",) * q, [eye] * (q + 1))
                ).real / n)
                gap = abs(exact ** (1.0 / q) - limit ** (1.0 / q))
                assert gap <= rep.bbvh_gap_bound[p] + 1e-12
    print("CRITERION 5: PASS")


def test_criterion_06_weak_convergence():
    polys = {
        "x2": parse_poly("x:1 x:1"),
        "x4": parse_poly("x:1 x:1 x:1 x:1"),
        "lam": parse_poly("L[1,1](x:1 x:1) x:1 x:1"),
    }
    lam_limit = float(semicircular_trace(polys["lam"], gue(8)).real)
    limits = {"x2": 1.0, "x4": 2.0, "lam": lam_limit}
    N = 50
    root = SeedSpec(7, ("acc-weak",))
    for n in (64, 256, 1024):
        eta = gue(n)
        oracles = {
            "x2": gue_trace_wick((2,), n),
            "x4": gue_trace_wick((4,), n),
            "lam": gue_trace_wick((2, 2), n),
        }
        vals = {k: np.empty(N) for k in polys}
        for t in range(N):
            x = sample(eta, root.child(n, t))  # one shared sample per (n, t)
            for k, f in polys.items():
                m = evaluate(f, x=x, eta=eta)
                vals[k][t] = float(np.trace(m).real / n)
        for k in polys:
            mean = vals[k].mean()
            stderr = vals[k].std(ddof=1) / math.sqrt(N)
            assert abs(mean - oracles[k]) <= 5 * stderr
            if n == 1024:
                assert abs(mean - limits[k]) <= 0.02 * abs(limits[k])
    print("CRITERION 6: PASS")


def _strong_cfg():
    return RunConfig.from_dict({
        "model": {"kind": "gue"},
        "run": {
            "ns": [1024], "samples": 20, "seed": 11, "n_ref": 512,
            "statistic": "opnorm", "poly": "x:1",
            "m_values": list(range(2, 13)),
        },
    })


def test_criterion_07_strong_convergence_edge():
    records, summary = strong_convergence_run(_strong_cfg())
    (rec,) = records
    assert 1.90 <= rec.mean <= 2.05
    proxies = {int(m): v for m, v in summary["moment_root_proxies"].items()}
    seq = [proxies[m] for m in sorted(proxies)]
    assert all(b >= a - 1e-12 for a, b in zip(seq, seq[1:]))
    print("CRITERION 7: PASS")


@pytest.mark.xfail(
    strict=True,
    reason="the moment-root proxy is a lower bound on the operator norm; for "
    "the GUE square it converges to Catalan(m)^(1/2m), which is 1.666 at "
    "m = 12 and stays below 1.85 for every finite m",
)
def test_criterion_07_proxy_threshold():
    _, summary = strong_convergence_run(_strong_cfg())
    assert summary["moment_root_proxies"]["12"] >= 1.85


def test_criterion_08_band_model_norms():
    prev = None
    for n in (16, 32, 64, 128, 256, 512, 1024):
        eta = band(PLATEAU, 0.5, n)
        assert eta.choi_norm() <= PLATEAU.sup_abs() / n  # exact inequality
        cur = math.log(n) ** 3 * eta.choi_norm()
        if prev is not None:
            assert cur < prev
        prev = cur
    n = 64
    eta = band(PLATEAU, 0.5, n)
    mask = band_zero_cells(PLATEAU, n)
    x = sample(eta, 21)["1"]
    assert np.abs(x[mask]).max() == 0.0
    assert np.abs(x[~mask]).min() > 0.0
    print("CRITERION 8: PASS")


def test_criterion_09_fgf_parameter():
    from semicov.models import FgfSpec, fgf_kernels

    _, t = fgf_kernels(FgfSpec(
        j1=(), j2=("1",),
        f_supports={"1": [(0.0, 0.5)]}, g_supports={"1": [(0.5, 1.0)]},
    ))
    assert t == 1.5
    _, t2 = fgf_kernels(FgfSpec(
        j1=("1",), j2=(), f_supports={"1": [(0.0, 1.0)]}, g_supports={},
    ))
    assert t2 == 2.0
    print("CRITERION 9: PASS")


def test_criterion_10_averaging_estimator():
    n = 32
    eta = gue(n)
    truth = np.eye(n, dtype=complex)
    schedule = [4, 16, 64, 256]
    reps = 6
    root = SeedSpec(13, ("acc-est",))
    for m in schedule:
        entries = np.empty((reps, 2), dtype=complex)
        for rep in range(reps):
            copies = sample_copies(eta, m, root.child(m, rep))
            acc = np.zeros((n, n), dtype=complex)
            for fam in copies:
                acc += fam["1"] @ fam["1"]
            est = acc / m
            entries[rep] = (est[0, 0], est[0, 1])
        for col, want in ((0, truth[0, 0]), (1, truth[0, 1])):
            vals = entries[:, col].real
            stderr = vals.std(ddof=1) / math.sqrt(reps) + 1e-12
            assert abs(vals.mean() - want.real) <= 5 * stderr

    cfg = RunConfig.from_dict({
        "model": {"kind": "gue"},
        "run": {"ns": [32], "samples": 1, "seed": 13},
        "estimator": {"n": 32, "i": "1", "j": "1",
                      "m_schedule": schedule, "repetitions": 5},
    })
    _, summary = eta_estimator_run(cfg)
    assert -0.65 <= summary["loglog_slope"] <= -0.35
    print("CRITERION 10: PASS")


def test_criterion_11_concentration_tail():
    cfg = RunConfig.from_dict({
        "model": {"kind": "gue"},
        "run": {"ns": [64], "samples": 2000, "seed": 17,
                "deltas": [0.05, 0.1, 0.125, 0.25, 0.5]},
    })
    records, summary = tail_diagnostic_run(cfg)
    for r in records:
        assert r.mean <= r.reference + 3.0 * r.stderr
    assert summary["pass"] is True
    print("CRITERION 11: PASS")


WEAK_TOML = """
[run]
ns = [8, 16]
samples = 5
seed = 3
poly = "x:1 x:1"
reference = "exact-gaussian"

[model]
kind = "gue"
"""

STRONG_TOML = """
[run]
ns = [8, 16]
samples = 3
seed = 3
n_ref = 16
poly = "x:1"
m_values = [2, 3]

[model]
kind = "gue"
"""

EST_TOML = """
[run]
ns = [8]
samples = 1
seed = 3

[estimator]
n = 8
i = "1"
j = "1"
m_schedule = [2, 4]
repetitions = 2

[model]
kind = "gue"
"""

TAIL_TOML = """
[run]
ns = [16]
samples = 100
seed = 3
deltas = [0.25, 0.5]

[model]
kind = "gue"
"""


def test_criterion_12_cli_determinism(tmp_path):
    configs = {
        "weak": WEAK_TOML, "strong": STRONG_TOML,
        "estimator": EST_TOML, "tail": TAIL_TOML,
    }
    paths = {}
    for name, text in configs.items():
        p = tmp_path / f"{name}.toml"
        p.write_text(text)
        paths[name] = str(p)
    commands = [
        [cmd, "--config", paths[cmd]] for cmd in configs
    ] + [
        ["bounds", "--config", paths["weak"], "--n", "8"],
        ["choi-dump", "--config", paths["weak"], "--n", "8"],
        ["poly-eval", "--poly", "x:1 x:1 + 2.0 b:w*"],
    ]
    for idx, argv in enumerate(commands):
        outs = []
        for run in (0, 1):
            out = tmp_path / f"out-{idx}-{run}"
            assert main(argv + ["--out", str(out)]) == 0
            blobs = [out.read_bytes()]
            side = out.with_name(out.name + ".json")
            if side.exists():
                blobs.append(side.read_bytes())
            outs.append(blobs)
        assert outs[0] == outs[1], f"non-deterministic rerun: {argv[0]}"
    print("CRITERION 12: PASS")
