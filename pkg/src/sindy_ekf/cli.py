"""Command-line front end: ``sindy-ekf <command> ...``.

Commands write CSV files (header row, 17 significant digits) plus a
``manifest.json`` listing every emitted file with its SHA-256. Re-running a
command with ``--verify`` recomputes the outputs in a scratch directory and
compares them with the recorded manifest instead of overwriting anything.

Exit status: 0 success, 1 numerical failure (filter divergence, blow-up,
singular regression), 2 bad input (missing file, malformed config), 3 drift
detected by ``--verify``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, load_scenario_config, write_scenario_config
from .ekf import FilterDivergence, FilterRun, ObservationSet, assimilate
from .model import SindyModel
from .scenarios import (BUILTIN, FrcResult, FrcSpec, Scenario, SimulationBlowUp, builtin_scenario,
                        frc_sweep, observations_for, simulate_truth, train)
from .training import SingularRegressionError, read_snapshot_csv, write_snapshot_csv

log = logging.getLogger("sindy_ekf")

OUT_ENV = "SINDY_EKF_OUT"
DEFAULT_OUT_ROOT = "runs"
HALF_WIDTH_95 = 1.96


# --- manifest ----------------------------------------------------------------

def sha256_of(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    scenario: str
    output_dir: str
    seed: int | None
    files: list[dict] = field(default_factory=list)

    @classmethod
    def collect(cls, command, scenario, out: Path, seed, paths) -> "RunManifest":
        files = [{"path": str(Path(p).relative_to(out)), "sha256": sha256_of(p),
                  "bytes": Path(p).stat().st_size} for p in sorted(map(Path, paths))]
        return cls(command, scenario, str(out), seed, files)

    def write(self, out: Path) -> Path:
        path = Path(out) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, out: Path) -> "RunManifest":
        path = Path(out) / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"no manifest to verify against: {path}")
        return cls(**json.loads(path.read_text()))

    def checksums(self) -> dict[str, str]:
        return {f["path"]: f["sha256"] for f in self.files}


def manifest_drift(recorded: RunManifest, fresh: RunManifest) -> list[str]:
    old, new = recorded.checksums(), fresh.checksums()
    lines = [f"missing from new run: {p}" for p in sorted(set(old) - set(new))]
    lines += [f"not in manifest: {p}" for p in sorted(set(new) - set(old))]
    lines += [f"checksum differs: {p}" for p in sorted(set(old) & set(new)) if old[p] != new[p]]
    return lines


def disk_drift(recorded: RunManifest, out: Path) -> list[str]:
    """Recorded files that are gone or were edited since the manifest was written."""
    lines = []
    for rel, digest in sorted(recorded.checksums().items()):
        path = Path(out) / rel
        if not path.exists():
            lines.append(f"missing on disk: {rel}")
        elif sha256_of(path) != digest:
            lines.append(f"edited on disk: {rel}")
    return lines


# --- helpers -----------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def resolve_scenario(args) -> Scenario:
    if getattr(args, "config", None):
        scenario = load_scenario_config(args.config)
    elif getattr(args, "scenario", None):
        scenario = builtin_scenario(args.scenario)
    else:
        raise ValueError("give --scenario <name> or --config <path>")
    if getattr(args, "seed", None) is not None:
        scenario = scenario.with_seed(args.seed)
    return scenario


def default_out(label: str, command: str) -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT_ROOT)) / f"{label}-{command}"


def model_report(scenario: Scenario, model: SindyModel) -> str:
    """Reference-vs-identified table over the scenario's named parameters."""
    names = model.library.term_names()
    states = model.library.state_names
    rows = [("Coefficient", "Term", "Equation", "Reference", "SINDy")]
    named = set()
    for p in scenario.parameters:
        i, k = scenario.entry(p)
        named.add((i, k))
        rows.append((p.name, names[i], states[k], f"{p.sign * p.reference:#.4g}",
                     f"{model.xi[i, k]:#.4g}"))
    for i, k in zip(*np.nonzero(model.xi)):
        if (int(i), int(k)) not in named:
            rows.append(("-", names[i], states[k], "0", f"{model.xi[i, k]:#.4g}"))
    widths = [max(len(r[c]) for r in rows) for c in range(5)]
    lines = [f"scenario: {scenario.name}",
             f"library: {model.library.descriptor()}",
             f"stlsq: ridge_strength={scenario.stlsq.ridge_strength!r} "
             f"threshold={scenario.stlsq.threshold!r}",
             f"active terms: {int(np.count_nonzero(model.xi))} of {model.xi.size}",
             ""]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_parameter_trace(path: Path, scenario: Scenario, run: FilterRun) -> Path:
    """``t``, adaptive parameter means (parameter units), then their 95% half-widths."""
    ada = scenario.adaptive_parameters()
    signs = np.array([p.sign for p in ada])
    means = run.coefficient_means() / signs
    half = HALF_WIDTH_95 * run.coefficient_std()
    header = ["t", *(p.name for p in ada), *(f"{p.name}_halfwidth95" for p in ada)]
    return _write_rows(path, header, np.column_stack([run.times, means, half]))


def write_frc(path: Path, result: FrcResult, model: SindyModel, indices) -> Path:
    names = [f"{model.library.state_names[i]}_amplitude" for i in indices]
    return _write_rows(path, ["omega", *names], result.rows())


def _load_model(path) -> SindyModel:
    return SindyModel.from_csv(path)


# --- commands ----------------------------------------------------------------

def cmd_export(args, out: Path) -> list[Path]:
    scenario = resolve_scenario(args)
    path = out / f"{scenario.name}.ini"
    write_scenario_config(scenario, path)
    return [path]


def cmd_simulate(args, out: Path) -> list[Path]:
    scenario = resolve_scenario(args)
    truth = simulate_truth(scenario)
    obs = observations_for(scenario, truth)
    t_path, o_path = out / "truth.csv", out / "observations.csv"
    write_snapshot_csv(t_path, truth, scenario.state_names)
    obs.to_csv(o_path, list(scenario.observed))
    return [t_path, o_path]


def cmd_train(args, out: Path) -> list[Path]:
    scenario = resolve_scenario(args)
    data = None
    if args.data:
        data = [read_snapshot_csv(p, scenario.library.state_dim) for p in args.data]
    model = train(scenario, data)
    m_path = out / "model.csv"
    model.to_csv(m_path)
    r_path = out / "report.txt"
    r_path.write_text(model_report(scenario, model))
    sys.stdout.write(r_path.read_text())
    return [m_path, m_path.with_name("model_mask.csv"), r_path]


def _assimilate_one(scenario: Scenario, trained: SindyModel, obs_path, snapshot_every,
                    check_psd, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    truth = simulate_truth(scenario)
    if obs_path:
        obs = ObservationSet.from_csv(obs_path, scenario.observed_indices)
    else:
        obs = observations_for(scenario, truth)
    run = assimilate(scenario.initial_model(trained), scenario.filter_config, obs,
                     truth.states[0], t0=scenario.t0, check_psd=check_psd,
                     snapshot_every=snapshot_every)
    paths = [out / "filter.csv", out / "parameters.csv", out / "final_model.csv"]
    run.to_csv(paths[0])
    write_parameter_trace(paths[1], scenario, run)
    run.final_model.to_csv(paths[2])
    paths.append(paths[2].with_name("final_model_mask.csv"))
    if check_psd:
        paths.append(_write_rows(out / "min_eigenvalues.csv",
                                 ["t", "after_predict", "after_correct"],
                                 np.column_stack([run.times[1:], run.min_eigenvalues])))
    if snapshot_every:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        steps = [0, *range(snapshot_every, run.n_steps + 1, snapshot_every)]
        for step, (_, model) in zip(steps, run.snapshots):
            p = snap_dir / f"step_{step:07d}.csv"
            model.to_csv(p)
            paths += [p, p.with_name(p.stem + "_mask.csv")]
    final = scenario.parameter_values(run.final_model.xi)
    log.info("%s seed %d final: %s", scenario.name, scenario.seed,
             ", ".join(f"{p.name}={final[p.name]:.6g}" for p in scenario.adaptive_parameters()))
    return paths


def cmd_assimilate(args, out: Path) -> list[Path]:
    scenario = resolve_scenario(args)
    trained = _load_model(args.model) if args.model else train(scenario)
    if trained.library.term_names() != scenario.library.term_names():
        raise ValueError(f"model library {trained.library.descriptor()!r} does not match "
                         f"scenario library {scenario.library.descriptor()!r}")
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        return _assimilate_one(scenario, trained, args.observations, args.snapshot_every,
                               args.check_psd, out)
    if args.observations:
        raise ValueError("--seeds draws synthetic noise; it cannot be combined with --observations")
    jobs = [(scenario.with_seed(s), trained, None, args.snapshot_every, args.check_psd,
             out / f"seed_{s}") for s in seeds]
    return [p for paths in _run_parallel(_assimilate_one, jobs, args.jobs) for p in paths]


def _frc_one(model: SindyModel, grid, direction, spec: FrcSpec, path: Path) -> list[Path]:
    result = frc_sweep(model, grid if direction == "increasing" else grid[::-1], direction,
                       spec.settle_fraction, spec.duration, spec.dt,
                       displacement_indices=spec.displacement_indices)
    return [write_frc(path, result, model, spec.displacement_indices)]


def cmd_frc(args, out: Path) -> list[Path]:
    scenario = resolve_scenario(args) if (args.scenario or args.config) else None
    spec = (scenario.frc if scenario and scenario.frc else FrcSpec())
    overrides = {k: v for k, v in (("omega_min", args.omega_min), ("omega_max", args.omega_max),
                                   ("n_points", args.n_points), ("duration", args.duration),
                                   ("dt", args.dt), ("settle_fraction", args.settle_fraction))
                 if v is not None}
    spec = FrcSpec(**{**asdict(spec), **overrides})
    grid = spec.grid()
    directions = ["increasing", "decreasing"] if args.direction == "both" else [args.direction]

    models: list[tuple[str, SindyModel]] = []
    if args.snapshots:
        snap_dir = Path(args.snapshots)
        files = sorted(p for p in snap_dir.glob("*.csv") if not p.stem.endswith("_mask"))
        if not files:
            raise FileNotFoundError(f"no snapshot model CSVs in {snap_dir}")
        models = [(p.stem, _load_model(p)) for p in files]
    elif args.model:
        models = [("frc", _load_model(args.model))]
    elif scenario is not None:
        # the target: true coefficients at the end of the window
        models = [("frc_target", scenario.to_model(scenario.truth_xi(scenario.t_end)))]
    else:
        raise ValueError("give --model, --snapshots, or a scenario for its target FRC")

    jobs = [(m, grid, d, spec, out / f"{label}_{d}.csv") for label, m in models for d in directions]
    return [p for paths in _run_parallel(_frc_one, jobs, args.jobs) for p in paths]


def _parse_seeds(text):
    if not text:
        return []
    return [int(s) for s in str(text).split(",") if s.strip()]


def _run_parallel(fn, jobs, n_workers):
    if not n_workers or n_workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(n_workers, len(jobs))) as pool:
        return list(pool.map(fn, *zip(*jobs)))


COMMANDS = {
    "export-scenario": cmd_export,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "assimilate": cmd_assimilate,
    "frc": cmd_frc,
}


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sindy-ekf",
        description="Train sparse dynamical models, adapt them online with an EKF, "
                    "and sweep frequency responses.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        g = p.add_mutually_exclusive_group(required=scenario_required)
        g.add_argument("--scenario", choices=sorted(BUILTIN), help="built-in scenario")
        g.add_argument("--config", help="scenario INI file")
        p.add_argument("--seed", type=int, help="override the scenario's noise seed")
        p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or "
                                     f"./{DEFAULT_OUT_ROOT}, then <scenario>-<command>)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for batches")
        p.add_argument("--verify", action="store_true",
                       help="recompute outputs and compare with the recorded manifest")

    p = sub.add_parser("export-scenario", help="write a scenario as an editable INI file")
    common(p)
    p = sub.add_parser("simulate", help="write the true trajectory and observations")
    common(p)
    p = sub.add_parser("train", help="offline STLSQ fit and model report")
    common(p)
    p.add_argument("--data", nargs="+", help="snapshot CSVs (t, states[, derivatives]) "
                                             "instead of simulated training data")
    p = sub.add_parser("assimilate", help="run the filter over the observation window")
    common(p)
    p.add_argument("--model", help="trained model CSV (default: train first)")
    p.add_argument("--observations", help="observation CSV (default: simulate)")
    p.add_argument("--seeds", help="comma-separated seeds; one run per seed under seed_<k>/")
    p.add_argument("--snapshot-every", type=int, help="save the adapted model every N steps")
    p.add_argument("--check-psd", action="store_true",
                   help="record the smallest covariance eigenvalue at every step")
    p = sub.add_parser("frc", help="frequency response curve by time integration")
    common(p, scenario_required=False)
    p.add_argument("--model", help="model CSV to sweep")
    p.add_argument("--snapshots", help="directory of snapshot model CSVs; one FRC per model")
    p.add_argument("--omega-min", type=float)
    p.add_argument("--omega-max", type=float)
    p.add_argument("--n-points", type=int)
    p.add_argument("--duration", type=float, help="integration time per frequency")
    p.add_argument("--dt", type=float)
    p.add_argument("--settle-fraction", type=float)
    p.add_argument("--direction", choices=["increasing", "decreasing", "both"], default="both")
    return parser


def _label(args) -> str:
    if getattr(args, "config", None):
        return Path(args.config).stem
    if getattr(args, "scenario", None):
        return args.scenario
    return Path(args.model or args.snapshots or "frc").stem


def run(args) -> int:
    out = Path(args.out) if args.out else default_out(_label(args), args.command)
    seed = getattr(args, "seed", None)
    if args.verify:
        recorded = RunManifest.read(out)
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            paths = COMMANDS[args.command](args, tmp)
            fresh = RunManifest.collect(args.command, _label(args), tmp, seed, paths)
        drift = manifest_drift(recorded, fresh) + disk_drift(recorded, out)
        for line in drift:
            print(f"drift: {line}")
        if drift:
            return 3
        print(f"verified {len(fresh.files)} files against {out / 'manifest.json'}")
        return 0
    out.mkdir(parents=True, exist_ok=True)
    paths = COMMANDS[args.command](args, out)
    manifest = RunManifest.collect(args.command, _label(args), out, seed, paths)
    manifest.write(out)
    print(f"wrote {len(paths)} files to {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except FilterDivergence as exc:
        print(f"error: filter diverged at step {exc.step}: {exc}", file=sys.stderr)
        return 1
    except (SimulationBlowUp, SingularRegressionError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
