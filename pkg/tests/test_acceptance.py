"""End-to-end acceptance checks, one test per criterion.

Each test carries an ``acceptance`` marker; the terminal summary prints one
PASS/FAIL line per criterion (see conftest.py).
"""

import csv
import io
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from dts import bench
from dts.cli import main
from dts.diffusion import LatentState, initial_noise
from dts.engine import DtsConfig, ddim_baseline, draft_chunk, dts_sample, target_refine, verify
from dts.gmm import GmmPredictor, ddim_multiplier, gmm_epsilon, oracle_epsilon, random_mixture
from dts.metrics import CostModel, CountingPredictor, modeled_speedup, trajectory_error
from dts.schedule import make_schedule

SCHED = make_schedule("linear-beta", 100)
PLANS = Path(__file__).resolve().parent.parent / "plans"

# regression values, frozen on the first run of the calibrated desk-scale config
TREND_CFG = DtsConfig(n1=10, n2=2, L=6, pi0=0.03, dpi=0.003)
TREND_LATENCY = 30.59375
TREND_ERROR = 0.027861469301739175
TREND_COARSE_ERROR = 0.1431900860151804
TREND_ACCEPTANCE = 0.597108558930105


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_task(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 9))
    spec = random_mixture(rng, d, int(rng.integers(2, 6)))
    return spec, GmmPredictor(spec, SCHED), initial_noise(d, seed, SCHED.T)


@pytest.mark.acceptance("1: chunk length 1 reproduces fine DDIM")
def test_c1_chunk_of_one_equivalence():
    start = time.perf_counter()
    configs = [DtsConfig(n1=10, n2=2, L=1, pi0=0.5, dpi=0.1), DtsConfig(n1=20, n2=5, L=1, pi0=1e9, dpi=0.0)]
    for seed in range(24):
        _, eps, x_T = random_task(seed)
        cfg = configs[seed % 2]
        final, rep = dts_sample(x_T, cfg, eps, SCHED)
        ref, _ = ddim_baseline(x_T, cfg.n2, eps, SCHED)
        assert rel_err(final.x, ref.x) <= 1e-9, seed
        assert final.t == 0
    assert time.perf_counter() - start < 10.0


@pytest.mark.acceptance("2: strict mode reproduces fine DDIM with zero acceptances")
def test_c2_strict_mode_equivalence():
    cfg = DtsConfig(n1=10, n2=2, L=6, strict=True)
    for seed in range(10):
        spec, eps, x_T = random_task(100 + seed)
        assert spec.n_components > 1
        final, rep = dts_sample(x_T, cfg, eps, SCHED)
        ref, _ = ddim_baseline(x_T, 2, eps, SCHED)
        assert rel_err(final.x, ref.x) <= 1e-9
        assert rep.events and all(e["accepted"] == 0 for e in rep.events)


@pytest.mark.acceptance("3: equal strides in strict mode accept everything, bit-exact")
def test_c3_degenerate_accept():
    for n in (5, 10, 20):
        cfg = DtsConfig(n1=n, n2=n, L=6, strict=True)
        for seed in range(3):
            _, eps, x_T = random_task(200 + seed)
            final, rep = dts_sample(x_T, cfg, eps, SCHED)
            ref, _ = ddim_baseline(x_T, n, eps, SCHED)
            assert np.array_equal(final.x, ref.x)
            assert rep.acceptance_rate == 1.0
            assert rep.ledger.total_evals == 2 * SCHED.T // n


@pytest.mark.acceptance("4: unit-Gaussian trajectories match the multiplier product")
def test_c4_unit_gaussian_closed_form(unit_eps):
    x_T = initial_noise(8, 0, 100)
    for stride in (1, 2, 5, 10):
        final, _ = ddim_baseline(x_T, stride, unit_eps, SCHED)
        factor = math.prod(ddim_multiplier(SCHED, t, t - stride) for t in range(100, 0, -stride))
        assert rel_err(final.x, factor * x_T.x) <= 1e-12, stride


@pytest.mark.acceptance("5: GMM denoiser agrees with Monte-Carlo oracle")
def test_c5_denoiser_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    for case in range(10):
        d = int(rng.integers(1, 4))
        spec = random_mixture(rng, d, int(rng.integers(1, 5)))
        t = int(rng.integers(25, 101))
        # a typical point of the noised marginal at t
        k = rng.choice(spec.n_components, p=spec.weights)
        x0 = spec.means[k] + math.sqrt(spec.variances[k]) * rng.normal(size=d)
        x = math.sqrt(SCHED[t]) * x0 + math.sqrt(1.0 - SCHED[t]) * rng.normal(size=d)
        exact = gmm_epsilon(spec, x, t, SCHED)
        est, se, res = oracle_epsilon(spec, x, t, SCHED, samples=1_000_000, seed=case)
        assert res.reliable, case
        assert np.all(np.abs(exact - est) <= 3 * se), case
    assert time.perf_counter() - start < 60.0


@pytest.mark.acceptance("6: NFE ledger counts")
def test_c6_nfe_accounting(corners16):
    cfg = DtsConfig(n1=10, n2=2, L=6, pi0=1e9, dpi=0.0)
    counter = CountingPredictor(corners16)
    _, rep = dts_sample(initial_noise(16, 0, 100), cfg, counter, SCHED)
    assert rep.ledger.draft_evals == 10 and rep.ledger.target_evals == 50
    assert rep.ledger.total_evals == counter.calls == 60
    for cfg in (TREND_CFG, DtsConfig(), DtsConfig(n1=20, n2=5, L=3, strict=True)):
        counter = CountingPredictor(corners16)
        _, rep = dts_sample(initial_noise(16, 1, 100), cfg, counter, SCHED)
        assert rep.ledger.total_evals == counter.calls
        counter = CountingPredictor(corners16)
        _, rep = ddim_baseline(initial_noise(16, 1, 100), cfg.n2, counter, SCHED)
        assert rep.ledger.total_evals == counter.calls == 100 // cfg.n2


@pytest.mark.acceptance("7: modeled speedup 2.5 with batching, below 1 without")
def test_c7_modeled_speedup(corners16):
    cfg = DtsConfig(n1=10, n2=2, L=6, pi0=1e9, dpi=0.0)
    x_T = initial_noise(16, 0, 100)
    for B in (6, 16, 64):
        _, rep = dts_sample(x_T, cfg, corners16, SCHED, CostModel(B))
        _, fine = ddim_baseline(x_T, 2, corners16, SCHED, CostModel(B))
        assert rep.acceptance_rate == 1.0
        assert modeled_speedup(rep, fine) == 2.5
    _, rep = dts_sample(x_T, cfg, corners16, SCHED, CostModel(1))
    _, fine = ddim_baseline(x_T, 2, corners16, SCHED, CostModel(1))
    assert modeled_speedup(rep, fine) < 1.0


@pytest.mark.acceptance("8: desk-scale trend beats both baselines")
def test_c8_desk_scale_trend(corners16):
    lat, err, coarse_err, acc, fine_lat = [], [], [], [], []
    for seed in range(32):
        x_T = initial_noise(16, seed, 100)
        final, rep = dts_sample(x_T, TREND_CFG, corners16, SCHED)
        fine, fine_rep = ddim_baseline(x_T, 2, corners16, SCHED)
        coarse, _ = ddim_baseline(x_T, 10, corners16, SCHED)
        lat.append(rep.modeled_latency)
        fine_lat.append(fine_rep.modeled_latency)
        err.append(trajectory_error(final, fine))
        coarse_err.append(trajectory_error(coarse, fine))
        acc.append(rep.acceptance_rate)
    mean = lambda v: float(np.mean(v))
    assert 0.3 <= mean(acc) <= 0.9
    assert mean(lat) < mean(fine_lat) == 50.0
    assert mean(err) < mean(coarse_err)
    assert mean(lat) == pytest.approx(TREND_LATENCY, rel=1e-12)
    assert mean(err) == pytest.approx(TREND_ERROR, rel=1e-9)
    assert mean(coarse_err) == pytest.approx(TREND_COARSE_ERROR, rel=1e-9)
    assert mean(acc) == pytest.approx(TREND_ACCEPTANCE, rel=1e-12)


def check_ablation_csv(path, n_rows):
    text = Path(path).read_text()
    assert text.splitlines()[0] == ",".join(bench.ABLATE_COLUMNS)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == n_rows
    for r in rows:
        assert r["status"] == "ok"
        for col in ("n1", "n2", "L", "B"):
            assert int(r[col]) >= 1
        for col in ("pi0", "dpi", "nfe_total", "modeled_latency", "speedup_vs_fine", "final_error"):
            assert math.isfinite(float(r[col])) and float(r[col]) >= 0.0
        assert 0.0 <= float(r["acceptance_rate"]) <= 1.0
    return rows


@pytest.mark.acceptance("9: ablation grids run and acceptance is monotone in threshold")
def test_c9_ablation_grids(tmp_path):
    start = time.perf_counter()
    for name in ("chunk_grid", "threshold_grid"):
        out = tmp_path / name
        assert main(["ablate", "--plan", str(PLANS / f"{name}.json"), "--out", str(out)]) == 0
        rows = check_ablation_csv(out / "ablation.csv", 5)
        if name == "chunk_grid":
            assert [int(r["L"]) for r in rows] == [2, 4, 6, 8, 10]
        else:
            scale = json.loads((PLANS / f"{name}.json").read_text())["threshold_scale"]
            assert [float(r["pi0"]) for r in rows] == pytest.approx([p * scale for p in (4, 6, 8, 10, 12)])
    assert time.perf_counter() - start < 300.0

    # monotonicity on real draft/target pairs from random mixtures
    rng = np.random.default_rng(9)
    for i in range(1000):
        d = int(rng.integers(1, 5))
        eps = GmmPredictor(random_mixture(rng, d, int(rng.integers(1, 4))), SCHED)
        cfg = DtsConfig(n1=10, n2=2, L=int(rng.integers(1, 7)))
        t0 = 10 * int(rng.integers(1, 11))
        chunk = draft_chunk(LatentState(rng.normal(size=d), t0), cfg, eps, SCHED)
        batch = target_refine(chunk, cfg, eps, SCHED)
        rnd = int(rng.integers(0, 5))
        pis = np.sort(rng.uniform(0.0, 0.5, size=5))
        counts = [
            verify(chunk, batch, rnd, DtsConfig(n1=10, n2=2, L=cfg.L, pi0=float(p), dpi=0.01)).accepted_count
            for p in pis
        ]
        assert counts == sorted(counts), i


@pytest.mark.acceptance("10: reruns produce byte-identical artifacts")
def test_c10_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n1": 10, "n2": 2, "L": 6, "pi0": 0.03, "dpi": 0.003}))
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"mixture": "corners:8", "seeds": "0-3", "grid": {"L": [2, 6]}, "baselines": [2, 10]}))
    commands = {
        "sample": ["sample", "--config", str(cfg), "--seed", "4"],
        "ablate": ["ablate", "--plan", str(plan)],
        "compare": ["compare", "--config", str(cfg), "--baselines", "1,2,10", "--seeds", "0-3"],
    }
    for name, argv in commands.items():
        outs = [tmp_path / f"{name}-{k}" for k in range(2)]
        for out in outs:
            assert main([*argv, "--out", str(out)]) == 0
        files = sorted(p.name for p in outs[0].iterdir())
        assert files == sorted(p.name for p in outs[1].iterdir()) and files
        for f in files:
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), (name, f)
