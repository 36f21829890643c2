"""Command-line orchestrator: visibility sweeps, certification, thresholds.

A sweep trains one model per (visibility, repeat) and appends one CSV row per
finished run.  Reruns with an identical config skip already-completed rows,
so an interrupted sweep resumes where it stopped.  The CSV header carries a
hash of the resolved config; appending under a different config is refused.

Subcommands::

    lhs-forge sweep --config sweep.toml [--out results.csv] [--jobs N]
    lhs-forge certify --state werner --v 0.5 --class povm [...]
    lhs-forge threshold --in results.csv --eps 1e-3

Exit codes: 0 success, 2 validation error, 3 no threshold bracket.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import NoBracketError, ValidationError
from .measurements import MeasurementClass
from .states import VisibilityState, isotropic3, load_state, werner
from .trainer import TrainConfig, train

CSV_HEADER = ["v", "train_loss", "test_loss", "steps", "seed", "verdict", "wall_time_s"]

CLASS_ALIASES = {
    "pauli": "pauli_triple", "pauli_triple": "pauli_triple",
    "pvm": "qubit_pvm", "qubit_pvm": "qubit_pvm", "qudit_pvm": "qudit_pvm",
    "povm": "povm",
}

DEFAULT_V_GRIDS = {
    "werner": [round(0.05 * k, 2) for k in range(0, 17)],      # 0.00 .. 0.80
    "isotropic3": [round(0.1 + 0.05 * k, 2) for k in range(0, 11)],  # 0.10 .. 0.60
}


@dataclass(frozen=True)
class SweepConfig:
    state_family: str  # "werner" | "isotropic3" | "custom"
    measurement_class: MeasurementClass
    v_grid: tuple[float, ...]
    train: TrainConfig
    out: str = "sweep.csv"
    repeats: int = 1
    state_path: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if len(self.v_grid) == 0:
            raise ValidationError("v_grid must be nonempty")
        if list(self.v_grid) != sorted(self.v_grid):
            raise ValidationError("v_grid must be sorted ascending")
        if any(not 0.0 <= v <= 1.0 for v in self.v_grid):
            raise ValidationError("v_grid values must lie in [0, 1]")
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        if self.state_family not in ("werner", "isotropic3", "custom"):
            raise ValidationError(f"unknown state family {self.state_family!r}")
        if self.state_family == "custom" and not self.state_path:
            raise ValidationError("custom state family requires state_path")


@dataclass(frozen=True)
class SweepRecord:
    v: float
    train_loss: float
    test_loss: float
    steps: int
    seed: int
    verdict: str
    wall_time_s: float

    def row(self) -> list[str]:
        return [f"{self.v:.6f}", f"{self.train_loss:.6e}", f"{self.test_loss:.6e}",
                str(self.steps), str(self.seed), self.verdict, f"{self.wall_time_s:.2f}"]

    @classmethod
    def from_row(cls, row: list[str]) -> "SweepRecord":
        return cls(v=float(row[0]), train_loss=float(row[1]), test_loss=float(row[2]),
                   steps=int(row[3]), seed=int(row[4]), verdict=row[5],
                   wall_time_s=float(row[6]))


@dataclass(frozen=True)
class ThresholdEstimate:
    v_star: float
    bracket: tuple[float, float]
    violations: tuple[str, ...] = ()


def make_state(family: str, v: float, state_path: str | None = None) -> VisibilityState:
    if family == "werner":
        return werner(v)
    if family == "isotropic3":
        return isotropic3(v)
    loaded = load_state(state_path)
    if abs(loaded.v - v) > 1e-12:
        raise ValidationError(
            f"custom state file carries v = {loaded.v}, sweep requested v = {v}"
        )
    return loaded


def config_hash(cfg: SweepConfig) -> str:
    """Short content hash over every sweep-relevant config field."""
    payload = {
        "state_family": cfg.state_family,
        "state_path": cfg.state_path,
        "class": (cfg.measurement_class.kind, cfg.measurement_class.d,
                  cfg.measurement_class.n_outcomes),
        "v_grid": [f"{v:.6f}" for v in cfg.v_grid],
        "repeats": cfg.repeats,
        "train": {k: v for k, v in cfg.train.__dict__.items()
                  if k not in ("measurement_class", "log_path", "checkpoint_path")},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def run_seed(base_seed: int, v_index: int, repeat: int) -> int:
    """Deterministic per-run seed, stable across restarts."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(v_index, repeat))
    return int(ss.generate_state(1, dtype=np.uint64)[0] % (2 ** 63))


def load_config(path: str | Path) -> SweepConfig:
    """Parse a TOML sweep config into a SweepConfig."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config {path}: {exc}") from None

    state = doc.get("state", {})
    family = state.get("family", "werner")
    meas = doc.get("measurements", {})
    kind = CLASS_ALIASES.get(meas.get("class", "pauli_triple"))
    if kind is None:
        raise ValidationError(f"unknown measurement class {meas.get('class')!r}")
    mclass = MeasurementClass(kind=kind, d=int(meas.get("d", 2)),
                              n_outcomes=int(meas.get("n_outcomes", 0)))

    train_doc = dict(doc.get("train", {}))
    train_cfg = TrainConfig(measurement_class=mclass,
                            **{k: v for k, v in train_doc.items()})

    sweep = doc.get("sweep", {})
    v_grid = sweep.get("v_grid") or DEFAULT_V_GRIDS.get(family)
    if v_grid is None:
        raise ValidationError("custom states need an explicit sweep.v_grid")
    return SweepConfig(
        state_family=family,
        measurement_class=mclass,
        v_grid=tuple(float(v) for v in v_grid),
        train=train_cfg,
        out=sweep.get("out", "sweep.csv"),
        repeats=int(sweep.get("repeats", 1)),
        state_path=state.get("path"),
        jobs=int(sweep.get("jobs", 1)),
    )


def read_records(path: str | Path) -> tuple[str | None, list[SweepRecord]]:
    """Read a sweep CSV; returns (config hash from the header, records)."""
    path = Path(path)
    if not path.exists():
        return None, []
    records: list[SweepRecord] = []
    found_hash: str | None = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if token.startswith("config_hash="):
                        found_hash = token.split("=", 1)[1]
                continue
            row = next(csv.reader([line]))
            if row == CSV_HEADER:
                continue
            try:
                records.append(SweepRecord.from_row(row))
            except (ValueError, IndexError) as exc:
                raise ValidationError(f"{path}:{lineno}: malformed record: {exc}") from None
    return found_hash, records


def _run_one(args) -> SweepRecord:
    family, state_path, train_cfg, v = args
    state = make_state(family, v, state_path)
    _, report = train(state, train_cfg)
    record = SweepRecord(
        v=v, train_loss=report.final_train_loss, test_loss=report.final_test_loss,
        steps=report.steps_run, seed=train_cfg.seed, verdict=report.verdict,
        wall_time_s=report.wall_time_s,
    )
    return SweepRecord.from_row(record.row())  # quantize to what the CSV stores


def _worker_init(threads: int) -> None:
    import torch

    torch.set_num_threads(max(1, threads))


def run_sweep(cfg: SweepConfig) -> list[SweepRecord]:
    """Train one model per (v, repeat) and append results to the CSV.

    Completed (v, repeat) pairs from a previous identical run are skipped.
    The output path is verified writable before any training starts.
    """
    chash = config_hash(cfg)
    out = Path(cfg.out)
    existing_hash, existing = read_records(out)
    if existing_hash is not None and existing_hash != chash:
        raise ValidationError(
            f"{out} was produced by config {existing_hash}, refusing to append "
            f"records for config {chash}"
        )
    if out.parent and not out.parent.exists():
        raise OSError(f"output directory {out.parent} does not exist")
    new_file = existing_hash is None
    fh = open(out, "a", newline="")  # writability gate before training
    try:
        writer = csv.writer(fh)
        if new_file:
            fh.write(f"# lhs-forge sweep config_hash={chash}\n")
            writer.writerow(CSV_HEADER)
            fh.flush()
        done_counts: dict[float, int] = {}
        for rec in existing:
            done_counts[rec.v] = done_counts.get(rec.v, 0) + 1

        pending = []
        for vi, v in enumerate(cfg.v_grid):
            for rep in range(cfg.repeats):
                if done_counts.get(round(v, 6), 0) > rep:
                    continue
                seed = run_seed(cfg.train.seed, vi, rep)
                tcfg = replace(cfg.train, seed=seed)
                pending.append((cfg.state_family, cfg.state_path, tcfg, round(v, 6)))

        records = list(existing)
        if not pending:
            return records
        if cfg.jobs > 1:
            threads = max(1, (os.cpu_count() or 1) // cfg.jobs)
            with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_worker_init,
                                     initargs=(threads,)) as pool:
                for rec in pool.map(_run_one, pending):
                    writer.writerow(rec.row())
                    fh.flush()
                    records.append(rec)
        else:
            for item in pending:
                rec = _run_one(item)
                writer.writerow(rec.row())
                fh.flush()
                records.append(rec)
    finally:
        fh.close()
    return records


def estimate_threshold(records: list[SweepRecord], eps: float) -> ThresholdEstimate:
    """Bracket the critical visibility from sweep records.

    Uses the minimum test loss across repeats at each v.  The bracket spans
    the largest v that stays at or below ``eps`` and the smallest v that
    exceeds it; non-monotonic test losses (drops beyond eps/2 as v grows) are
    reported, not hidden.
    """
    by_v: dict[float, float] = {}
    for rec in records:
        by_v[rec.v] = min(by_v.get(rec.v, np.inf), rec.test_loss)
    if len(by_v) < 3:
        raise NoBracketError(
            f"need records at >= 3 distinct visibilities, got {len(by_v)}"
        )
    vs = sorted(by_v)
    losses = [by_v[v] for v in vs]
    passing = [v for v, l in zip(vs, losses) if l <= eps]
    failing = [v for v, l in zip(vs, losses) if l > eps]
    if not passing or not failing:
        kind = "converged" if passing else "non-converged"
        raise NoBracketError(f"all records are {kind}; no threshold bracket exists")
    lo, hi = max(passing), min(failing)
    violations = []
    if hi < lo:
        violations.append(
            f"largest passing v = {lo} exceeds smallest failing v = {hi}"
        )
        lo, hi = hi, lo
    for (v1, l1), (v2, l2) in zip(zip(vs, losses), zip(vs[1:], losses[1:])):
        if l2 < l1 - eps / 2.0:
            violations.append(
                f"test loss drops from {l1:.3e} at v = {v1} to {l2:.3e} at v = {v2}"
            )
    return ThresholdEstimate(v_star=(lo + hi) / 2.0, bracket=(lo, hi),
                             violations=tuple(violations))


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lhs-forge",
                                     description="LHS-model steerability engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sweep = sub.add_parser("sweep", help="run a visibility sweep from a TOML config")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", default=None, help="override the CSV output path")
    p_sweep.add_argument("--jobs", type=int, default=None, help="parallel training runs")

    p_cert = sub.add_parser("certify", help="train one LHS model and print the verdict")
    p_cert.add_argument("--state", choices=["werner", "isotropic3"], default="werner")
    p_cert.add_argument("--v", type=float, required=True)
    p_cert.add_argument("--class", dest="mclass", default="pauli",
                        choices=sorted(CLASS_ALIASES))
    p_cert.add_argument("--d", type=int, default=0, help="measurement dimension")
    p_cert.add_argument("--n-outcomes", type=int, default=0)
    p_cert.add_argument("--steps", type=int, default=20_000)
    p_cert.add_argument("--batch", type=int, default=512)
    p_cert.add_argument("--hidden", type=int, default=8)
    p_cert.add_argument("--order", type=int, default=5)
    p_cert.add_argument("--lr", type=float, default=1e-3)
    p_cert.add_argument("--optimizer", choices=["adam", "gd"], default="adam")
    p_cert.add_argument("--eps", type=float, default=1e-3)
    p_cert.add_argument("--test-size", type=int, default=10_000)
    p_cert.add_argument("--seed", type=int, default=0)

    p_thr = sub.add_parser("threshold", help="estimate the critical visibility from a CSV")
    p_thr.add_argument("--in", dest="infile", required=True)
    p_thr.add_argument("--eps", type=float, default=1e-3)
    return parser


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, out=args.out)
    if args.jobs:
        cfg = replace(cfg, jobs=args.jobs)
    records = run_sweep(cfg)
    print(f"{len(records)} records in {cfg.out}")
    return 0


def _cmd_certify(args) -> int:
    d = args.d or (3 if args.state == "isotropic3" else 2)
    mclass = MeasurementClass(kind=CLASS_ALIASES[args.mclass], d=d,
                              n_outcomes=args.n_outcomes)
    state = make_state(args.state, args.v)
    cfg = TrainConfig(
        measurement_class=mclass, n_steps=args.steps, n_meas_per_step=args.batch,
        learning_rate=args.lr, optimizer=args.optimizer, loss_tolerance=args.eps,
        test_set_size=args.test_size, seed=args.seed, n_hidden=args.hidden,
        order=args.order,
    )
    _, report = train(state, cfg)
    print(f"verdict={report.verdict} v={args.v} "
          f"train_loss={report.final_train_loss:.6e} "
          f"test_loss={report.final_test_loss:.6e} "
          f"wall_time_s={report.wall_time_s:.1f}")
    return 0


def _cmd_threshold(args) -> int:
    _, records = read_records(args.infile)
    if not records:
        raise ValidationError(f"no records in {args.infile}")
    est = estimate_threshold(records, args.eps)
    print(f"v_star={est.v_star:.4f} bracket=[{est.bracket[0]:.4f}, {est.bracket[1]:.4f}]")
    for msg in est.violations:
        print(f"warning: {msg}", file=sys.stderr)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "certify":
            return _cmd_certify(args)
        return _cmd_threshold(args)
    except NoBracketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
