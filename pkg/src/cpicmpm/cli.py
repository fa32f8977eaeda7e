"""Command-line entry points: rollout, identify, metrics, gradcheck.

Exit codes: 0 success, 1 gradient check failed, 2 configuration or usage error,
3 numerical divergence.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing as mp
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__, materials
from .errors import (
    BaselineUnsupportedError,
    BoundsError,
    ConfigurationError,
    DimensionError,
    DivergenceError,
    MalformedFileError,
    NumericalDegeneracyError,
    OutOfDomainError,
    UnsupportedGeometryError,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
CONFIG_ERRORS = (
    ConfigurationError,
    BaselineUnsupportedError,
    MalformedFileError,
    UnsupportedGeometryError,
    BoundsError,
    DimensionError,
    FileNotFoundError,
)
NUMERIC_ERRORS = (DivergenceError, NumericalDegeneracyError, OutOfDomainError)

log = logging.getLogger("cpicmpm")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _guarded(fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except CONFIG_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        click.echo(f"diverged: {exc}", err=True)
        return EXIT_DIVERGED
    return EXIT_OK


def _run_many(fn, jobs: int, items: list) -> int:
    """Run fn(item) for each item, in worker processes when jobs > 1; worst exit code wins."""
    if jobs <= 1 or len(items) <= 1:
        codes = [_guarded(fn, *it) for it in items]
    else:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            codes = list(pool.map(_guarded_star, [(fn, it) for it in items]))
    return max(codes) if codes else EXIT_OK


def _guarded_star(pair):
    fn, args = pair
    return _guarded(fn, *args)


def _out_dirs(configs, out: Path):
    if len(configs) == 1:
        return [out]
    return [out / Path(c).stem for c in configs]


# ---------------------------------------------------------------------------
# rollout


def run_rollout(config: str, out: str, mode=None, frames=None, seed=None) -> dict:
    from .engine import export_trajectory
    from .scenes import Scenario

    sc = Scenario.load(config).with_overrides(mode, frames, seed)
    sim = sc.simulator()
    state = sc.initial_state()
    started = _now()
    traj = sim.rollout(state, sc.frames)
    truth = materials.pack(sc.material())
    extra = {
        "tool_version": __version__,
        "geometry_hash": sc.geometry_hash(),
        "mode": sc.mode,
        "material": {"kind": truth.kind, "values": dict(zip(truth.labels, map(float, truth.values)))},
        "config_path": str(Path(config).resolve()),
        "output_dir": str(Path(out).resolve()),
        "timestamps": {"started": started, "finished": _now()},
    }
    manifest = export_trajectory(traj, out, extra, sc.config_hash())
    click.echo(f"wrote {traj.frames} frames of {traj.num_particles} particles to {out}")
    return manifest


# ---------------------------------------------------------------------------
# identify


def run_identify(config: str, ref: str, out: str, mode=None, seed=None, max_iters=None) -> dict:
    from .engine import load_trajectory
    from .scenes import Scenario
    from .sysid import OptimizerConfig, identify

    ref_dir = Path(ref)
    if not (ref_dir / "manifest.json").is_file():
        raise ConfigurationError(f"reference directory {ref_dir} has no manifest.json")
    ref_traj, manifest = load_trajectory(ref_dir)
    sc = Scenario.load(config).with_overrides(mode, ref_traj.frames, seed)
    if manifest.get("geometry_hash") != sc.geometry_hash():
        raise ConfigurationError("reference trajectory was generated on a different scene geometry or frame schedule")
    state = sc.initial_state()
    if len(state) != ref_traj.num_particles:
        raise ConfigurationError(f"reference has {ref_traj.num_particles} particles, config yields {len(state)}")
    sim = sc.simulator(sc.guess())
    opt_kw = sc.optimizer_settings()
    if max_iters is not None:
        opt_kw["max_iters"] = max_iters
    try:
        opt = OptimizerConfig(**opt_kw)
    except TypeError as exc:
        raise ConfigurationError(f"bad optimizer settings: {exc}") from exc
    report = identify(sc.guess(), ref_traj, sim, state, opt, truth=sc.material())
    report.write(out)
    d = report.to_dict()
    d_errors = d["errors_x100"] or {}
    click.echo(
        f"{d['kind']} [{d['mode']}] best loss {d['best_loss']:.3e} after {d['iterations']} iterations; "
        + ", ".join(f"{k}: {v:.3f}" for k, v in d_errors.items())
    )
    if report.stop_reason == "diverged" and not report.loss_curve:
        raise DivergenceError("simulation diverged at the initial guess")
    return d


# ---------------------------------------------------------------------------
# metrics


def run_metrics(a: str, b: str, out: str | None, seed: int = 0) -> np.ndarray:
    from .engine import load_trajectory
    from .sysid import trajectory_metrics

    ta, _ = load_trajectory(a)
    tb, _ = load_trajectory(b)
    if ta.frames != tb.frames:
        raise DimensionError(f"frame counts differ: {ta.frames} vs {tb.frames}")
    rows = trajectory_metrics(ta, tb, seed)
    stream = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(stream)
        w.writerow(["frame", "cd", "emd"])
        for f, (cd, e) in enumerate(rows):
            w.writerow([f, repr(float(cd)), repr(float(e))])
        w.writerow(["mean", repr(float(rows[:, 0].mean())), repr(float(rows[:, 1].mean()))])
        w.writerow(["std", repr(float(rows[:, 0].std())), repr(float(rows[:, 1].std()))])
    finally:
        if out:
            stream.close()
    return rows


# ---------------------------------------------------------------------------
# gradcheck


GRADCHECK_MODELS = {
    "newtonian": (materials.Newtonian(19.46, 56075.55), materials.Newtonian(10.0, 1e4)),
    "non_newtonian": (
        materials.NonNewtonian(13209.25, 201566.59, 1151.42, 6.68),
        materials.NonNewtonian(100.0, 1e5, 10.0, 1.0),
    ),
    "granular": (materials.Granular(30.6577), materials.Granular(10.0)),
    "elastic": (materials.Elastic(1e5, 0.3), materials.Elastic(3e4, 0.2)),
    "plasticine": (materials.Plasticine(2e5, 0.3, 2e3), materials.Plasticine(1e5, 0.25, 1e3)),
}


def gradcheck_scenario():
    """Small block dropped onto a box: 32^3 grid, about 700 particles."""
    from .scenes import Scenario

    return Scenario.from_dict(
        {"shape": {"kind": "box", "center": [0.5, 0.5, 0.355], "size": [0.16, 0.16, 0.08]}, "frames": 4}
    )


def gradcheck(frames: int = 4, h: float = 1e-3, kinds=None) -> list[dict]:
    """Adjoint vs central-difference gradients of the MSE loss, one row per material."""
    from .autodiff import finite_diff_gradient, grad_rollout, gradient_agreement
    from .sysid import mse_loss

    sc = gradcheck_scenario()
    state = sc.initial_state()
    rows = []
    for kind in kinds or GRADCHECK_MODELS:
        truth, guess = GRADCHECK_MODELS[kind]
        ref = sc.simulator(truth).rollout(state, frames)
        loss = mse_loss(ref)
        sim = sc.simulator(guess)
        _, adj = grad_rollout(sim, state, frames, loss)
        fd = finite_diff_gradient(sim, state, frames, loss, h=h)
        ok, rel = gradient_agreement(adj, fd)
        labels = materials.pack(guess).labels
        for i, lab in enumerate(labels):
            rows.append(
                {"material": kind, "parameter": lab, "adjoint": float(adj[i]), "finite_difference": float(fd[i]),
                 "rel_error": float(rel[i]), "pass": bool(ok[i])}
            )
    return rows


# ---------------------------------------------------------------------------
# click wiring


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Differentiable MPM with CPIC rigid-body coupling."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


MODE = click.Choice(["cpic", "gop_sdf", "rigid_particles", "planar_analytic"])


@main.command()
@click.option("--config", "configs", multiple=True, required=True, help="Scenario YAML (repeatable).")
@click.option("--out", required=True, type=click.Path(path_type=Path), help="Output directory.")
@click.option("--mode", type=MODE, default=None, help="Override the collision mode.")
@click.option("--frames", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel processes for several configs.")
def rollout(configs, out, mode, frames, seed, jobs):
    """Simulate a scenario and write per-frame PLY files plus manifest.json."""
    items = [(c, str(o), mode, frames, seed) for c, o in zip(configs, _out_dirs(configs, out))]
    sys.exit(_run_many(run_rollout, jobs, items))


@main.command()
@click.option("--config", "configs", multiple=True, required=True, help="Scenario YAML (repeatable).")
@click.option("--ref", required=True, type=click.Path(path_type=Path), help="Reference trajectory directory.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--mode", type=MODE, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--max-iters", type=int, default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
def identify(configs, ref, out, mode, seed, max_iters, jobs):
    """Recover material parameters from a reference trajectory."""
    items = [(c, str(ref), str(o), mode, seed, max_iters) for c, o in zip(configs, _out_dirs(configs, out))]
    sys.exit(_run_many(run_identify, jobs, items))


@main.command()
@click.argument("traj_a", type=click.Path(path_type=Path))
@click.argument("traj_b", type=click.Path(path_type=Path))
@click.option("--out", type=click.Path(path_type=Path), default=None, help="CSV path (default stdout).")
@click.option("--seed", type=int, default=0, help="Subsampling seed for EMD.")
def metrics(traj_a, traj_b, out, seed):
    """Per-frame Chamfer distance and EMD between two trajectories."""
    sys.exit(_guarded(run_metrics, str(traj_a), str(traj_b), str(out) if out else None, seed))


@main.command(name="gradcheck")
@click.option("--frames", type=int, default=4, show_default=True)
@click.option("--h", "step", type=float, default=1e-3, show_default=True)
@click.option("--material", "kinds", multiple=True, type=click.Choice(list(GRADCHECK_MODELS)))
@click.option("--out", type=click.Path(path_type=Path), default=None, help="Write results as JSON.")
def gradcheck_cmd(frames, step, kinds, out):
    """Compare adjoint gradients against central finite differences."""
    result = {}

    def run():
        result["rows"] = gradcheck(frames, step, kinds or None)

    code = _guarded(run)
    if code:
        sys.exit(code)
    rows = result["rows"]
    for r in rows:
        click.echo(
            f"{'PASS' if r['pass'] else 'FAIL'} {r['material']:<14} {r['parameter']:<18} "
            f"adjoint={r['adjoint']:+.6e} fd={r['finite_difference']:+.6e} rel={r['rel_error']:.2e}"
        )
    if out:
        Path(out).write_text(json.dumps(rows, indent=2))
    sys.exit(EXIT_OK if all(r["pass"] for r in rows) else EXIT_FAIL)


if __name__ == "__main__":
    main()
