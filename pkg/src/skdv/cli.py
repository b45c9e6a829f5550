"""Command line front end.

    skdv <simulate|moments|aldous|validate-model|replay> --config PATH
         [--set key=value]... [--threads N] [--out DIR]

Exit status: 0 success, 1 a checked hypothesis or criterion failed,
2 invalid configuration, 3 numerical blow-up, 4 I/O failure,
5 replay mismatch.
"""
from __future__ import annotations

import argparse
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, backend
from . import io as skio
from .coefficients import state_sampler, validate_hypotheses
from .config import ConfigError, ExperimentConfig
from .estimators import EnsembleBlowUp, aldous_check, estimate_moments, halving_stability
from .noise import SEED_RULE, write_events
from .solver import BlowUpError, GalerkinSolver

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_IO = 4
EXIT_REPLAY_MISMATCH = 5

MANIFEST = "manifest.json"
MANIFEST_FORMAT = "skdv-manifest 1"
COMMANDS = ("simulate", "moments", "aldous", "validate-model", "replay")


def versions() -> dict:
    return {
        "skdv": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


class Run:
    """Output directory bookkeeping: every written file is hashed into the manifest."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig, backend_name: str):
        self.out = out
        self.command = command
        self.cfg = cfg
        self.backend = backend_name
        self.files: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def finish(self, status: int) -> int:
        manifest = {
            "format": MANIFEST_FORMAT,
            "command": self.command,
            "status": status,
            "config": self.cfg.tree,
            "seed": self.cfg["solver"]["seed"],
            "seed_rule": SEED_RULE,
            "backend": self.backend,
            "versions": versions(),
            "files": {p.name: skio.sha256_file(p) for p in sorted(set(self.files))},
        }
        skio.write_json(self.out / MANIFEST, manifest)
        return status


def _say(msg: str) -> None:
    print(msg, flush=True)


# -- subcommands --------------------------------------------------------------------


def cmd_simulate(run: Run, threads: int) -> int:
    cfg = run.cfg
    grid = cfg.grid()
    solver = GalerkinSolver(grid, cfg.solver_config(), *cfg.models(grid), backend_name=run.backend)
    u0 = grid.interpolate(cfg.initial_function(grid))
    fmts = cfg["output"]["formats"]
    summary = []
    for i in range(cfg["simulate"]["n_traj"]):
        try:
            tr = solver.simulate(u0, i)
        except BlowUpError as exc:
            skio.write_json(run.path("blowup.json"), {"error": "numerical blow-up", **exc.payload()})
            skio.write_json(run.path("simulate.json"), {"trajectories": summary, "blowup": exc.payload()})
            _say(f"blow-up: {exc}")
            return EXIT_BLOWUP
        tag = f"{i:05d}"
        if "text" in fmts:
            skio.write_trajectory_text(run.path(f"traj_{tag}.txt"), grid, tr.times, tr.states)
        if "binary" in fmts:
            skio.write_frames(run.path(f"traj_{tag}.bin"), grid, tr.times, tr.states)
        if len(solver.nu):
            # written even when empty so every trajectory has the same files
            run.path(f"jumps_{tag}.txt").write_text(write_events(tr.jump_log))
            rows = [[tr.times[k], *tr.left_limits[j]] for j, k in enumerate(tr.jump_index)]
            skio.write_table(run.path(f"left_limits_{tag}.txt"), ["t"] + [f"c{q}" for q in range(grid.dim)], rows)
        if solver.noise_on and tr.increments is not None and len(tr) > 1:
            rows = [[t, h, *dw] for t, h, dw in zip(tr.times[:-1], np.diff(tr.times), tr.increments)]
            skio.write_table(
                run.path(f"increments_{tag}.txt"),
                ["t", "dt"] + [f"dW{j}" for j in range(tr.increments.shape[1])],
                rows,
            )
        h = tr.norms("H")
        summary.append(
            {
                "trajectory": i,
                "n_times": len(tr),
                "n_jumps": len(tr.jump_log),
                "stopped_at": tr.stopped_at,
                "stop_radius": tr.meta["stop_radius"],
                "final_time": float(tr.times[-1]),
                "final_H": float(h[-1]),
                "final_V": float(grid.norm(tr.states[-1], "V")),
                "max_H": float(np.max(h)),
                "mass": float(grid.mass(tr.state(-1))),
            }
        )
    skio.write_json(run.path("simulate.json"), {"trajectories": summary})
    _say(f"simulated {len(summary)} trajectories into {run.out}")
    return EXIT_OK


def cmd_moments(run: Run, threads: int) -> int:
    cfg = run.cfg
    est = cfg["estimator"]
    ms = est["ms"]
    dt = float(cfg["solver"]["dt"])
    halving = est["dt_halving"]
    grid = cfg.grid()
    # the initial profile depends only on the domain, shared by every level
    u0 = cfg.initial_function(grid)
    domain = (grid.x1, grid.x2)

    def sweep(step, refine):
        configs = [cfg.solver_config(m, step, refine) for m in ms]
        try:
            return estimate_moments(
                configs,
                cfg.models,
                u0,
                est["n_traj"],
                est["p_values"],
                domain,
                threads,
                run.backend,
            )
        except EnsembleBlowUp as exc:
            skio.write_json(run.path("blowup.json"), {"error": str(exc), "n_blowups": exc.n_blowups, "n_traj": exc.n_traj, "first": exc.first})
            raise

    try:
        coarse = sweep(dt, 1 if halving else int(cfg["solver"]["noise_refine"]))
        fine = sweep(0.5 * dt, 0) if halving else None
    except EnsembleBlowUp as exc:
        _say(f"blow-up: {exc}")
        return EXIT_BLOWUP
    report = {"statistics": coarse.to_dict(), "bounded_uniformly": coarse.bounded_uniformly(2.0)}
    for name, (header, rows) in coarse.tables().items():
        skio.write_table(run.path(f"{name}.dat"), header, rows, {"dt": repr(dt)})
    if fine is not None:
        stab = halving_stability(coarse, fine)
        report["half_dt_statistics"] = fine.to_dict()
        report["dt_halving"] = stab
        report["stable_under_halving"] = all(v["ok"] for v in stab.values())
        for name, (header, rows) in fine.tables().items():
            skio.write_table(run.path(f"{name}_half_dt.dat"), header, rows, {"dt": repr(0.5 * dt)})
    skio.write_json(run.path("moments.json"), report)
    for k, v in coarse.uniform_ratio().items():
        _say(f"{k}: max/min across m = {v:.4g}")
    ok = report["bounded_uniformly"] and report.get("stable_under_halving", True)
    _say("moments: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_aldous(run: Run, threads: int) -> int:
    cfg = run.cfg
    thetas = cfg.thetas()
    if not thetas:
        raise ConfigError("estimator.thetas", "the Aldous check needs a non-empty list of lags (thetas or theta_fractions)")
    grid = cfg.grid()
    est = cfg["estimator"]
    try:
        rep = aldous_check(
            cfg.solver_config(),
            cfg.models,
            cfg.initial_function(grid),
            est["n_traj"],
            sorted(thetas),
            est["stopping_rule"],
            (grid.x1, grid.x2),
            est["dual_s"],
            threads,
            run.backend,
        )
    except EnsembleBlowUp as exc:
        skio.write_json(run.path("blowup.json"), {"error": str(exc), "first": exc.first})
        _say(f"blow-up: {exc}")
        return EXIT_BLOWUP
    except ValueError as exc:
        raise ConfigError("estimator.thetas", str(exc)) from None
    header, rows = rep.table()
    skio.write_table(run.path("aldous.dat"), header, rows, {"stopping_rule": rep.stopping_rule})
    skio.write_json(run.path("aldous.json"), rep.to_dict())
    if rep.degenerate:
        _say("aldous: degenerate fit (all increments zero)")
    else:
        _say(f"aldous: fitted b = {rep.fitted_b:.4f}, 95% CI [{rep.b_ci[0]:.4f}, {rep.b_ci[1]:.4f}]")
    return EXIT_OK


def cmd_validate(run: Run, threads: int) -> int:
    cfg = run.cfg
    grid = cfg.grid()
    F, Phi, nu = cfg.models(grid)
    n = cfg["estimator"]["validate_samples"]
    seed = cfg["solver"]["seed"]
    sampler = state_sampler(grid)
    reports = [
        validate_hypotheses(F, sampler, n, nu=nu, seed=seed),
        validate_hypotheses(Phi, sampler, n, grid=grid, seed=seed + 1),
    ]
    skio.write_json(run.path("validation.json"), {"reports": [r.to_dict() for r in reports]})
    for r in reports:
        _say(str(r))
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK_FAILED


HANDLERS = {
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "aldous": cmd_aldous,
    "validate-model": cmd_validate,
}


def execute(command: str, cfg: ExperimentConfig, out: Path, threads: int = 1, backend_name: str | None = None) -> int:
    run = Run(out, command, cfg, backend_name or backend.NAME)
    status = HANDLERS[command](run, threads)
    return run.finish(status)


def replay(manifest_path: Path, out: Path | None, threads: int) -> int:
    manifest = skio.read_json(manifest_path)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ConfigError("<manifest>", f"{manifest_path} is not an skdv manifest")
    cfg = ExperimentConfig(manifest["config"])
    if manifest["backend"] not in backend.available():
        raise ConfigError("<manifest>.backend", f"backend {manifest['backend']!r} is not available here")
    if manifest["versions"] != versions():
        _say(f"note: versions differ from the recording run: {manifest['versions']} vs {versions()}")
    out = out or manifest_path.parent / "replay"
    if out.resolve() == manifest_path.parent.resolve():
        raise ConfigError("--out", "replay must write into a different directory than the original run")
    status = execute(manifest["command"], cfg, out, threads, manifest["backend"])
    fresh = skio.read_json(out / MANIFEST)["files"]
    original = manifest["files"]
    mismatches = []
    for name in sorted(set(original) | set(fresh)):
        same = original.get(name) == fresh.get(name)
        _say(f"{'MATCH   ' if same else 'MISMATCH'} {name}")
        if not same:
            mismatches.append(name)
    if status != manifest["status"]:
        _say(f"MISMATCH exit status {status} vs recorded {manifest['status']}")
        mismatches.append("<status>")
    _say(f"replay: {len(original)} files, {len(mismatches)} mismatches")
    return EXIT_REPLAY_MISMATCH if mismatches else EXIT_OK


# -- entry point -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skdv", description="Stochastic KdV Galerkin simulator and Monte Carlo diagnostics.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML experiment file (for replay: the manifest.json)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key (repeatable)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    ap.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("config error: --threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "replay":
            if args.set:
                raise ConfigError("--set", "replay takes no overrides; it reruns the recorded configuration")
            return replay(Path(args.config), Path(args.out) if args.out else None, args.threads)
        cfg = ExperimentConfig.load(args.config, args.set)
        out = Path(args.out) if args.out else Path(cfg["output"]["directory"])
        return execute(args.command, cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
