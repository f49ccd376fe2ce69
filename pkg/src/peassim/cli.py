"""Batch experiment driver.

Usage::

    peassim {simulate,assimilate,defect,squeeze} [--config PATH] [--out DIR] [--seed N] [--quiet]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .assimilation import (
    ObservationSchedule, ScheduleError, TwinConfig, run_twin_experiment, squeezing_from_evolved,
)
from .config import (
    ConfigError, ExperimentConfig, load_config, parse_float_list, parse_forcing_entries, parse_int_list,
)
from .functionals import (
    ConvergenceError, InterpolationOperator, MultiplierK, build_mode_set, completeness_defect,
    defect_closed_form, estimate_defect, mode_table, modes_for_shells, modes_below, operator_norm,
)
from .integrate import IntegrationError, IntegratorConfig, evolve, spin_up
from .io import CheckpointError, read_checkpoint, write_checkpoint, write_csv, write_trajectory
from .model import ForcingSpec, PhysicalParams
from .spectral import Domain, Grid, SpectralSpace, norm, project_state_symmetries, random_state

log = logging.getLogger("peassim")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
OUT_ENV = "PEASSIM_OUT"


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.1.0"


# --- building objects from a config --------------------------------------------

def build_space(cfg: ExperimentConfig) -> SpectralSpace:
    d, g = cfg.domain, cfg.grid
    return SpectralSpace(Domain(d.L1, d.L2, d.L3), Grid(g.N1, g.N2, g.N3))


def build_params(cfg: ExperimentConfig, space: SpectralSpace) -> PhysicalParams:
    p = cfg.physics
    if p.forcing == "entries":
        entries = parse_forcing_entries(p.forcing_entries, f"{cfg.source}: [physics] forcing_entries")
        try:
            forcing = ForcingSpec.from_entries(space, entries, p.amplitude)
        except ValueError as exc:
            raise ConfigError(f"{cfg.source}: [physics] forcing_entries: {exc}") from None
    else:
        forcing = ForcingSpec.preset(space, p.forcing, p.amplitude)
    return PhysicalParams(p.nu, p.f, forcing)


def build_integrator(cfg: ExperimentConfig) -> IntegratorConfig:
    i = cfg.integrator
    return IntegratorConfig(i.dt, i.scheme, i.cfl_guard)


def build_operator(cfg: ExperimentConfig, space: SpectralSpace, rng: np.random.Generator,
                   shells: int | None = None) -> InterpolationOperator:
    o = cfg.observation
    if shells is not None:
        N = modes_for_shells(space, shells)
    elif o.lambda_max:
        N = modes_below(space, o.lambda_max)
    else:
        N = modes_for_shells(space, o.shells)
    modes = build_mode_set(space, N)
    K = MultiplierK.preset(space, o.multiplier, rng) if o.kind == "generalized" else None
    return InterpolationOperator(modes, K)


def build_schedule(cfg: ExperimentConfig, rng: np.random.Generator) -> ObservationSchedule:
    s = cfg.schedule
    if s.alpha == s.beta:
        return ObservationSchedule.uniform(s.alpha, s.n_steps)
    jitter = np.random.default_rng(s.jitter_seed) if s.jitter_seed >= 0 else rng
    return ObservationSchedule.jittered(s.alpha, s.beta, s.n_steps, jitter)


def reference_state(cfg, space, params, integ, rng):
    """Absorbing-ball state: loaded from ``run.reference`` or spun up from seeded noise."""
    if cfg.run.reference:
        U, t = read_checkpoint(cfg.run.reference, space)
        return U, t, None
    U0 = random_state(space, rng, slope=3)
    r = spin_up(U0, params, cfg.run.spin_window, cfg.run.spin_tol, cfg.run.spin_max_time, integ)
    return r.state, r.time, r


# --- subcommands ----------------------------------------------------------------

def cmd_simulate(cfg: ExperimentConfig, out: Path, rng: np.random.Generator) -> dict:
    """Spin up to the absorbing ball, then write a free run as checkpoints and a norm table."""
    space = build_space(cfg)
    params = build_params(cfg, space)
    integ = build_integrator(cfg)
    U, t0, spin = reference_state(cfg, space, params, integ, rng)
    if spin is not None:
        write_csv(out / "spinup.csv", ["t", "norm_W2"], spin.trace)
    T = cfg.run.duration
    n = max(1, int(round(T / cfg.run.sample_every)))
    times = np.linspace(0.0, T, n + 1)
    traj = evolve(U, params, T, times, integ, t0=t0)
    write_trajectory(out / "trajectory", traj)
    write_checkpoint(out / "final.pea", traj.states[-1], traj.times[-1])
    radius = spin.radius if spin is not None else float("nan")
    log.info("simulate: %d samples written, absorbing radius %.6g", len(traj), radius)
    return {"samples": len(traj), "spin_up_time": t0, "absorbing_radius_W2": radius}


def cmd_assimilate(cfg: ExperimentConfig, out: Path, rng: np.random.Generator) -> dict:
    """Run the twin experiment and write per-step errors plus a verdict summary."""
    space = build_space(cfg)
    params = build_params(cfg, space)
    integ = build_integrator(cfg)
    U0, _, _ = reference_state(cfg, space, params, integ, rng)
    R = build_operator(cfg, space, rng)
    schedule = build_schedule(cfg, rng)
    twin = TwinConfig(params, R, schedule, integ, seed=int(rng.integers(2 ** 63)), reference0=U0,
                      initial_error=cfg.run.initial_error, margin=cfg.run.margin)
    rep = run_twin_experiment(twin)
    write_csv(out / "report.csv", ["n", "t_n", "err_H", "err_W1", "err_W2", "jump_norm", "q_local"], rep.rows())
    defect = completeness_defect(R, "W1")
    c1 = operator_norm(R, "H")
    c2 = operator_norm(R, "W2")
    write_csv(out / "summary.csv", ["N_modes", "defect_W1", "c1", "c2", "q_tilde", "verdict"],
              [(R.N, defect.value, c1.value, c2.value, rep.q_tilde, rep.verdict)])
    log.info("assimilate: N=%d q_tilde=%.4g reduction=%.3e verdict=%s", R.N, rep.q_tilde, rep.reduction,
             rep.verdict)
    return {"N_modes": R.N, "q_tilde": rep.q_tilde, "verdict": rep.verdict, "reduction": rep.reduction}


def cmd_defect(cfg: ExperimentConfig, out: Path, rng: np.random.Generator) -> dict:
    """Tabulate completeness defects and interpolation-operator norms over shell counts."""
    space = build_space(cfg)
    shells = parse_int_list(cfg.defect.shells, f"{cfg.source}: [defect] shells")
    rows = []
    for n in shells:
        R = build_operator(cfg, space, rng, shells=n)
        modes = R.modes
        closed1 = defect_closed_form(modes, "W1") if R.multiplier is None else float("nan")
        closed2 = defect_closed_form(modes, "W2") if R.multiplier is None else float("nan")
        est1 = est2 = res = float("nan")
        if cfg.defect.estimate:
            e1 = estimate_defect(R, "W1")
            e2 = estimate_defect(R, "W2")
            est1, est2, res = e1.value, e2.value, max(e1.residual, e2.residual)
        nH = nW1 = nW2 = float("nan")
        if cfg.defect.norms:
            nH, nW1, nW2 = (operator_norm(R, s).value for s in ("H", "W1", "W2"))
        rows.append((n, R.N, modes.lam_max, modes.lam_next, closed1, est1, closed2, est2, res, nH, nW1, nW2))
    write_csv(out / "defect.csv", ["shells", "N_modes", "lambda_N", "lambda_next", "defect_W1_closed",
                                   "defect_W1_estimate", "defect_W2_closed", "defect_W2_estimate",
                                   "residual", "norm_H", "norm_W1", "norm_W2"], rows)
    labels, lam, shell = mode_table(space)
    write_csv(out / "modes.csv", ["index", "k1", "k2", "m", "component", "lambda", "shell"],
              ((j + 1, *labels[j], lam[j], shell[j] + 1) for j in range(len(lam))))
    log.info("defect: %d shell counts written", len(rows))
    return {"rows": len(rows)}


def squeeze_pairs(cfg, space, params, integ, rng):
    """Pairs of absorbing-ball states: a reference state and a nearby one, both evolved for one time unit."""
    U, _, _ = reference_state(cfg, space, params, integ, rng)
    sq = cfg.squeeze
    pairs = []
    for _ in range(sq.n_pairs):
        U = evolve(U, params, 1.0, [1.0], integ).states[-1]
        d = random_state(space, rng, scale=sq.separation, norm_space="W1")
        V = project_state_symmetries(U + d * norm(U, "W1"))
        V = evolve(V, params, 1.0, [1.0], integ).states[-1]
        Un = evolve(U, params, 1.0, [1.0], integ).states[-1]
        pairs.append((Un, V))
        U = Un
    return pairs


def cmd_squeeze(cfg: ExperimentConfig, out: Path, rng: np.random.Generator) -> dict:
    """Sweep squeezing ratios q_N over shell counts and observation gaps."""
    space = build_space(cfg)
    params = build_params(cfg, space)
    integ = build_integrator(cfg)
    shells = parse_int_list(cfg.squeeze.shells, f"{cfg.source}: [squeeze] shells")
    times = parse_float_list(cfg.squeeze.times, f"{cfg.source}: [squeeze] times") or sorted(
        {cfg.schedule.alpha, cfg.schedule.beta})
    pairs = squeeze_pairs(cfg, space, params, integ, rng)
    rows = []
    for t in times:
        evolved = [(evolve(a, params, t, [t], integ).states[-1], evolve(b, params, t, [t], integ).states[-1])
                   for a, b in pairs]
        for n in shells:
            modes = build_mode_set(space, modes_for_shells(space, n))
            r = squeezing_from_evolved(pairs, evolved, modes)
            rows.append((n, modes.N, modes.lam_next, t, r.max(), r.mean(), len(r)))
    write_csv(out / "squeeze.csv", ["shells", "N_modes", "lambda_next", "t", "q_max", "q_mean", "n_pairs"], rows)
    log.info("squeeze: %d rows written", len(rows))
    return {"rows": len(rows)}


COMMANDS = {
    "simulate": cmd_simulate,
    "assimilate": cmd_assimilate,
    "defect": cmd_defect,
    "squeeze": cmd_squeeze,
}


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, seed: int, result: dict, argv) -> Path:
    manifest = {
        "tool": "peassim",
        "version": tool_version(),
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config_source": cfg.source,
        "config": cfg.to_dict(),
        "result": {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in result.items()},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n")
    (out / "config.resolved.ini").write_text(cfg.to_text())
    return path


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="peassim", description="Data assimilation experiments for the 3D primitive equations.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", type=Path, help="experiment config file (key = value in [sections])")
        p.add_argument("--out", type=Path, help=f"output directory (default: run.output, or ${OUT_ENV})")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--quiet", action="store_true", help="only report errors")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
            cfg.run.seed = args.seed
        out = args.out or Path(os.environ.get(OUT_ENV) or cfg.run.output)
        out.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(cfg.run.seed)
        result = COMMANDS[args.command](cfg, out, rng)
        write_manifest(out, args.command, cfg, cfg.run.seed, result, argv)
    except (ConfigError, CheckpointError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
