"""Benchmark plans, ablation grids, baseline comparisons, and artifact I/O."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from .diffusion import initial_noise, trajectory_to_csv
from .engine import DtsConfig, ddim_baseline, dts_sample
from .errors import ConfigError, DtsError
from .gmm import GmmPredictor, GmmSpec, corner_mixture
from .metrics import CostModel, RunReport, trajectory_error
from .schedule import NoiseSchedule, make_schedule

log = logging.getLogger(__name__)

ABLATE_COLUMNS = [
    "config_id", "n1", "n2", "L", "pi0", "dpi", "B",
    "nfe_total", "modeled_latency", "speedup_vs_fine", "acceptance_rate", "final_error",
    "status",
]
COMPARE_COLUMNS = [
    "method", "stride", "nfe_total", "modeled_latency",
    "speedup_vs_finest", "final_error_vs_finest", "acceptance_rate",
]
GRID_AXES = ("n1", "n2", "L", "pi0", "dpi", "B")
DEFAULT_NUM_SEEDS = 32


# ---------------------------------------------------------------- file helpers

def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(*parts: Any) -> str:
    return hashlib.sha256(canonical_json(list(parts)).encode()).hexdigest()[:12]


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2) + "\n"


def dump_jsonl(records: Iterable[dict[str, Any]]) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


def dump_csv(columns: list[str], rows: Iterable[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k, "")) for k in columns})
    return buf.getvalue()


def _fmt(v: Any) -> Any:
    return repr(v) if isinstance(v, float) else v


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, chash: str, names: list[str]) -> None:
    files = {n: sha256_file(out / n) for n in names}
    write_atomic(out / "manifest.json", dump_json({"config_hash": chash, "files": files}))


def load_run(out: str | Path) -> dict[str, Any]:
    """Load a ``dts sample`` output directory and check the files against each other.

    Raises:
        ConfigError: a file is missing, its digest does not match the manifest,
            or the report and event log disagree.
    """
    out = Path(out)
    manifest = json.loads((out / "manifest.json").read_text())
    for name, digest in manifest["files"].items():
        if not (out / name).exists():
            raise ConfigError(f"{name} listed in manifest is missing")
        if sha256_file(out / name) != digest:
            raise ConfigError(f"{name} does not match its manifest digest")
    report = json.loads((out / "report.json").read_text())
    events = [json.loads(line) for line in (out / "events.jsonl").read_text().splitlines() if line]
    if report.get("config_hash") != manifest["config_hash"]:
        raise ConfigError("report config hash differs from manifest")
    if len(events) != report["rounds"]:
        raise ConfigError(f"report has {report['rounds']} rounds but event log has {len(events)}")
    if sum(e["draft_nfe"] for e in events) != report["ledger"]["draft_evals"]:
        raise ConfigError("event log draft NFEs do not add up to the ledger")
    if sum(e["target_nfe"] for e in events) != report["ledger"]["target_evals"]:
        raise ConfigError("event log target NFEs do not add up to the ledger")
    return {"manifest": manifest, "report": report, "events": events}


# ---------------------------------------------------------------- inputs

def load_mixture(ref: str | dict[str, Any] | None) -> GmmSpec:
    """Mixture from a JSON path, an inline dict, or the ``corners:D`` shorthand."""
    if ref is None:
        return corner_mixture(16)
    if isinstance(ref, dict):
        if "corners" in ref:
            c = ref["corners"]
            return corner_mixture(int(c["d"]), float(c.get("var", 0.05)), float(c.get("scale", 1.0)))
        return GmmSpec.from_dict(ref)
    if ref.startswith("corners:"):
        try:
            return corner_mixture(int(ref.split(":", 1)[1]))
        except ValueError as exc:
            raise ConfigError(f"bad mixture shorthand {ref!r}") from exc
    try:
        return GmmSpec.load(ref)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read mixture {ref!r}: {exc}") from exc


def load_schedule(data: dict[str, Any] | None) -> NoiseSchedule:
    return make_schedule() if data is None else NoiseSchedule.from_dict(data)


def parse_seeds(text: str | int | list[int] | None) -> list[int]:
    """``"0-31"``, ``"1,5,9"``, a list, or ``None`` for the default 0..31."""
    if text is None:
        return list(range(DEFAULT_NUM_SEEDS))
    if isinstance(text, int):
        return [text]
    if isinstance(text, list):
        return [int(s) for s in text]
    seeds: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ConfigError("seed list is empty")
    return seeds


# ---------------------------------------------------------------- plans

@dataclass(frozen=True)
class Cell:
    cfg: DtsConfig
    B: int

    @property
    def config_id(self) -> str:
        c = self.cfg
        return f"n1={c.n1}/n2={c.n2}/L={c.L}/pi0={c.pi0:g}/dpi={c.dpi:g}/B={self.B}"


@dataclass
class BenchPlan:
    mixture: GmmSpec
    schedule: NoiseSchedule
    seeds: list[int]
    cells: list[Cell]
    baselines: list[int] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict[str, Any], overrides: dict[str, Any] | None = None) -> BenchPlan:
        """Validate a plan and expand its grid.

        ``grid`` is a mapping from axis name to a list of values, or a list of
        such mappings whose expansions are concatenated. ``threshold_scale``
        multiplies every ``pi0``/``dpi`` value, since L2 thresholds grow with
        the latent dimension.
        """
        overrides = overrides or {}
        sched = load_schedule(data.get("schedule"))
        mixture = load_mixture(data.get("mixture"))
        if "seeds" in data:
            seeds = parse_seeds(data["seeds"])
        else:
            seeds = list(range(int(data.get("num_seeds", DEFAULT_NUM_SEEDS))))
        if not seeds:
            raise ConfigError("plan needs at least one seed")

        grids = data.get("grid")
        if isinstance(grids, dict):
            grids = [grids]
        if not grids or not all(isinstance(g, dict) and g for g in grids):
            raise ConfigError("plan grid is empty")
        scale = float(data.get("threshold_scale", 1.0))
        mode = overrides.get("threshold_mode") or data.get("threshold_mode", "per-round")
        strict = overrides.get("strict") or bool(data.get("strict", False))
        sat = overrides.get("saturation_batch")

        defaults = DtsConfig()
        cells: list[Cell] = []
        for grid in grids:
            unknown = set(grid) - set(GRID_AXES)
            if unknown:
                raise ConfigError(f"unknown grid axes: {sorted(unknown)}")
            axes = {}
            for ax in GRID_AXES:
                default = [getattr(defaults, ax)] if ax != "B" else [sat or CostModel().saturation_batch]
                vals = grid.get(ax, default)
                if not isinstance(vals, list) or not vals:
                    raise ConfigError(f"grid axis {ax!r} must be a non-empty list")
                axes[ax] = vals
            for combo in itertools.product(*(axes[ax] for ax in GRID_AXES)):
                v = dict(zip(GRID_AXES, combo))
                cfg = DtsConfig(
                    n1=v["n1"], n2=v["n2"], L=v["L"],
                    pi0=float(v["pi0"]) * scale, dpi=float(v["dpi"]) * scale,
                    threshold_mode=mode, strict=strict,
                )
                cfg.check_schedule(sched)
                B = int(sat or v["B"])
                CostModel(B)
                cells.append(Cell(cfg, B))

        baselines = [int(b) for b in data.get("baselines", [])]
        for b in baselines:
            if b < 1 or sched.T % b:
                raise ConfigError(f"baseline stride {b} does not divide T={sched.T}")
        return cls(mixture, sched, seeds, cells, baselines)


# ---------------------------------------------------------------- runners

@dataclass
class SampleResult:
    report: RunReport
    reference: RunReport
    config_hash: str


def run_sample(
    cfg: DtsConfig, mixture: GmmSpec, sched: NoiseSchedule, seed: int, cost: CostModel
) -> SampleResult:
    """One DTS run plus its fine-DDIM (stride ``n2``) reference on the same initial noise."""
    eps = GmmPredictor(mixture, sched)
    x_T = initial_noise(mixture.d, seed, sched.T)
    final, report = dts_sample(x_T, cfg, eps, sched, cost)
    ref_final, ref_report = ddim_baseline(x_T, cfg.n2, eps, sched, cost)
    report.final_error_to_reference = trajectory_error(final, ref_final)
    chash = config_hash(cfg.to_dict(), sched.to_dict(), mixture.to_dict(), seed, cost.saturation_batch)
    return SampleResult(report, ref_report, chash)


def write_sample_artifacts(out: Path, res: SampleResult, seed: int, mixture: GmmSpec, sched: NoiseSchedule) -> None:
    rep = res.report.to_dict()
    rep.update(
        config_hash=res.config_hash,
        seed=seed,
        schedule=sched.to_dict(),
        mixture=mixture.to_dict(),
        reference={"method": res.reference.method, "nfe_total": res.reference.nfe_total,
                   "modeled_latency": res.reference.modeled_latency},
    )
    write_atomic(out / "report.json", dump_json(rep))
    write_atomic(out / "events.jsonl", dump_jsonl(res.report.events))
    write_atomic(out / "trajectory.csv", trajectory_to_csv(res.report.trajectory))
    write_manifest(out, res.config_hash, ["report.json", "events.jsonl", "trajectory.csv"])


def _mean(xs: list[float]) -> float:
    return float(statistics.fmean(xs))


def run_cell(cell: Cell, plan: BenchPlan, eps: GmmPredictor, refs: dict) -> dict[str, Any]:
    cost = CostModel(cell.B)
    lat, fine_lat, err, acc, nfe = [], [], [], [], []
    for seed in plan.seeds:
        x_T = initial_noise(plan.mixture.d, seed, plan.schedule.T)
        key = (seed, cell.cfg.n2)
        if key not in refs:
            refs[key] = ddim_baseline(x_T, cell.cfg.n2, eps, plan.schedule, CostModel(1))
        ref_final, ref_report = refs[key]
        final, report = dts_sample(x_T, cell.cfg, eps, plan.schedule, cost)
        lat.append(report.modeled_latency)
        # baseline passes are all batch 1, so their latency does not depend on B
        fine_lat.append(ref_report.modeled_latency)
        err.append(trajectory_error(final, ref_final))
        acc.append(report.acceptance_rate)
        nfe.append(report.nfe_total)
    return {
        "nfe_total": _mean(nfe),
        "modeled_latency": _mean(lat),
        "speedup_vs_fine": _mean(fine_lat) / _mean(lat),
        "acceptance_rate": _mean(acc),
        "final_error": _mean(err),
        "status": "ok",
    }


def run_ablation(plan: BenchPlan) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
    """Run every grid cell over every seed; failures are recorded per cell, never raised."""
    eps = GmmPredictor(plan.mixture, plan.schedule)
    refs: dict = {}
    rows = []
    for cell in plan.cells:
        c = cell.cfg
        row: dict[str, Any] = {
            "config_id": cell.config_id, "n1": c.n1, "n2": c.n2, "L": c.L,
            "pi0": c.pi0, "dpi": c.dpi, "B": cell.B,
        }
        try:
            row.update(run_cell(cell, plan, eps, refs))
        except (DtsError, ArithmeticError, AssertionError) as exc:
            log.error("cell %s failed: %s", cell.config_id, exc)
            row["status"] = f"failed: {exc}"
        rows.append(row)
    base_rows = run_compare_rows(plan.mixture, plan.schedule, plan.seeds, plan.baselines, None, CostModel())
    return rows, base_rows


def run_compare_rows(
    mixture: GmmSpec,
    sched: NoiseSchedule,
    seeds: list[int],
    strides: list[int],
    cfg: DtsConfig | None,
    cost: CostModel,
) -> list[dict[str, Any]]:
    """DDIM baselines (and optionally one DTS config) on shared seeds, measured against the finest stride."""
    if not strides:
        return []
    strides = sorted(set(strides))
    for s in strides:
        if s < 1 or sched.T % s:
            raise ConfigError(f"stride {s} does not divide T={sched.T}")
    eps = GmmPredictor(mixture, sched)
    finest = strides[0]
    per_method: dict[str, dict[str, list[float]]] = {}
    order = [(f"ddim-{s}", s) for s in strides] + ([("dts", None)] if cfg else [])
    for seed in seeds:
        x_T = initial_noise(mixture.d, seed, sched.T)
        runs = {f"ddim-{s}": ddim_baseline(x_T, s, eps, sched, cost) for s in strides}
        if cfg is not None:
            runs["dts"] = dts_sample(x_T, cfg, eps, sched, cost)
        ref_final, ref_report = runs[f"ddim-{finest}"]
        for name, (final, report) in runs.items():
            acc = per_method.setdefault(name, {"nfe": [], "lat": [], "err": [], "acc": [], "ref_lat": []})
            acc["nfe"].append(report.nfe_total)
            acc["lat"].append(report.modeled_latency)
            acc["ref_lat"].append(ref_report.modeled_latency)
            acc["err"].append(trajectory_error(final, ref_final))
            acc["acc"].append(report.acceptance_rate if name == "dts" else 1.0)
    rows = []
    for name, stride in order:
        m = per_method[name]
        rows.append({
            "method": name,
            "stride": stride if stride is not None else "",
            "nfe_total": _mean(m["nfe"]),
            "modeled_latency": _mean(m["lat"]),
            "speedup_vs_finest": _mean(m["ref_lat"]) / _mean(m["lat"]),
            "final_error_vs_finest": _mean(m["err"]),
            "acceptance_rate": _mean(m["acc"]),
        })
    return rows


def ranked_summary(rows: list[dict[str, Any]], base_rows: list[dict[str, Any]]) -> str:
    ok = [r for r in rows if r["status"] == "ok"]
    failed = [r for r in rows if r["status"] != "ok"]
    lines = ["cells ranked by modeled speedup vs fine DDIM (stride n2):"]
    for i, r in enumerate(sorted(ok, key=lambda r: (-r["speedup_vs_fine"], r["final_error"], r["config_id"])), 1):
        lines.append(
            f"{i:3d}. {r['config_id']:<44} speedup={r['speedup_vs_fine']:.4f}x "
            f"accept={r['acceptance_rate']:.3f} nfe={r['nfe_total']:.2f} err={r['final_error']:.6g}"
        )
    for r in failed:
        lines.append(f"  -  {r['config_id']:<44} {r['status']}")
    if base_rows:
        lines.append("")
        lines.append("DDIM baselines (error vs finest stride):")
        for b in base_rows:
            lines.append(
                f"     {b['method']:<10} nfe={b['nfe_total']:.0f} latency={b['modeled_latency']:.2f} "
                f"err={b['final_error_vs_finest']:.6g}"
            )
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: DtsConfig, threshold_mode: str | None, strict: bool) -> DtsConfig:
    changes: dict[str, Any] = {}
    if threshold_mode:
        changes["threshold_mode"] = threshold_mode
    if strict:
        changes["strict"] = True
    return replace(cfg, **changes) if changes else cfg
