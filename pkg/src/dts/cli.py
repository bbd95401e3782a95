"""Command-line front end: ``dts sample|ablate|compare|oracle-check``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import bench
from .diffusion import ddim_sample, initial_noise
from .engine import THRESHOLD_MODES, DtsConfig
from .errors import ConfigError, DtsError, NumericError
from .gmm import (
    UnitGaussianPredictor,
    ddim_multiplier,
    gmm_epsilon,
    oracle_epsilon,
    random_mixture,
)
from .metrics import CostModel
from .schedule import make_schedule

log = logging.getLogger("dts")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _setup_logging() -> None:
    level = os.environ.get("DTS_LOG_LEVEL", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")


def _read_json(path: str | None, what: str) -> dict[str, Any]:
    if path is None:
        raise ConfigError(f"--{what} is required")
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {what} {path!r}: {exc}") from exc


def _load_run_config(args: argparse.Namespace) -> tuple[DtsConfig, Any, Any, CostModel]:
    data = _read_json(args.config, "config")
    data = dict(data)
    sched = bench.load_schedule(data.pop("schedule", None))
    sat = data.pop("saturation_batch", None)
    mix_ref = data.pop("mixture", None)
    mixture = bench.load_mixture(args.mixture or mix_ref)
    cfg = bench.apply_overrides(DtsConfig.from_dict(data), args.threshold_mode, args.strict)
    cfg.check_schedule(sched)
    cost = CostModel(int(args.saturation_batch or sat or CostModel().saturation_batch))
    return cfg, mixture, sched, cost


def cmd_sample(args: argparse.Namespace) -> int:
    cfg, mixture, sched, cost = _load_run_config(args)
    out = Path(args.out)
    start = time.perf_counter()
    res = bench.run_sample(cfg, mixture, sched, args.seed, cost)
    elapsed = time.perf_counter() - start
    bench.write_sample_artifacts(out, res, args.seed, mixture, sched)
    r = res.report
    print(f"config {res.config_hash}: {r.rounds} rounds, acceptance {r.acceptance_rate:.3f}")
    print(f"  nfe draft={r.ledger.draft_evals} target={r.ledger.target_evals} total={r.nfe_total}")
    print(f"  modeled latency {r.modeled_latency:.2f} vs fine DDIM-{cfg.n2} {res.reference.modeled_latency:.2f}")
    print(f"  final error to reference {r.final_error_to_reference:.6g}")
    print(f"  wall clock {elapsed:.3f}s (not written to artifacts)")
    print(f"  artifacts in {out}")
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    data = _read_json(args.plan, "plan")
    if args.mixture:
        data["mixture"] = args.mixture
    if args.seeds:
        data["seeds"] = bench.parse_seeds(args.seeds)
    plan = bench.BenchPlan.from_dict(
        data,
        {"threshold_mode": args.threshold_mode, "strict": args.strict, "saturation_batch": args.saturation_batch},
    )
    out = Path(args.out)
    rows, base_rows = bench.run_ablation(plan)
    bench.write_atomic(out / "ablation.csv", bench.dump_csv(bench.ABLATE_COLUMNS, rows))
    if base_rows:
        bench.write_atomic(out / "baselines.csv", bench.dump_csv(bench.COMPARE_COLUMNS, base_rows))
    summary = bench.ranked_summary(rows, base_rows)
    bench.write_atomic(out / "summary.txt", summary)
    print(summary, end="")
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} cells failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    cfg, mixture, sched, cost = _load_run_config(args)
    try:
        strides = [int(s) for s in args.baselines.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --baselines {args.baselines!r}") from exc
    seeds = bench.parse_seeds(args.seeds)
    rows = bench.run_compare_rows(mixture, sched, seeds, strides, cfg, cost)
    text = bench.dump_csv(bench.COMPARE_COLUMNS, rows)
    if args.out:
        bench.write_atomic(Path(args.out) / "compare.csv", text)
    print(text, end="")
    return EXIT_OK


def cmd_oracle_check(args: argparse.Namespace) -> int:
    sched = make_schedule("linear-beta", 100)
    rng = np.random.default_rng(args.seed)
    ok = True
    for case in range(args.cases):
        d = int(rng.integers(1, 4))
        spec = random_mixture(rng, d, int(rng.integers(1, 5)))
        t = int(rng.integers(sched.T // 4, sched.T + 1))
        x = rng.normal(size=d) * 1.5
        exact = gmm_epsilon(spec, x, t, sched)
        est, se, res = oracle_epsilon(spec, x, t, sched, args.samples, seed=args.seed + case)
        z = np.abs(exact - est) / se
        passed = bool(np.all(z <= 3.0)) and res.reliable
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} denoiser case {case}: d={d} K={spec.n_components} t={t} "
              f"max|z|={z.max():.2f} ess={res.ess:.0f}")

    eps = UnitGaussianPredictor(sched)
    x_T = initial_noise(4, args.seed, sched.T)
    for step in (1, 2, 5, 10):
        traj = ddim_sample(x_T, step, eps, sched)
        factor, worst = 1.0, 0.0
        for prev, cur in zip(traj, traj[1:]):
            factor *= ddim_multiplier(sched, prev.t, cur.t)
            worst = max(worst, float(np.max(np.abs(cur.x - factor * x_T.x) / np.abs(factor * x_T.x))))
        passed = worst <= 1e-12
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} closed-form trajectory stride={step}: max rel err {worst:.2e}")
    return EXIT_OK if ok else EXIT_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dts", description="Draft-and-target sampling for deterministic DDIM.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--mixture", help="mixture JSON path or corners:D shorthand")
        sp.add_argument("--saturation-batch", type=int, help="batch size B at which a pass stops being free")
        sp.add_argument("--threshold-mode", choices=THRESHOLD_MODES)
        sp.add_argument("--strict", action="store_true", help="exact-match verification")

    sp = sub.add_parser("sample", help="one DTS run plus its fine-DDIM reference")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("ablate", help="run a benchmark plan grid")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--seeds", help="override plan seeds, e.g. 0-31 or 1,2,3")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("compare", help="DDIM baselines vs one DTS config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--baselines", default="1,2,10,100", help="comma-separated DDIM strides")
    sp.add_argument("--seeds", default="0-31")
    sp.add_argument("--out")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("oracle-check", help="Monte-Carlo and closed-form oracle checks")
    sp.add_argument("--samples", type=int, default=1_000_000)
    sp.add_argument("--cases", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_oracle_check)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"dts: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DtsError) as exc:
        print(f"dts: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
