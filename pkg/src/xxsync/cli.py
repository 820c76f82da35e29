"""Command-line front end.

Every subcommand reads one experiment configuration (``--config`` file or a
shipped ``--preset``) and writes plot-ready CSV and JSON into ``--out``.
Exit codes: 0 success, 2 configuration error, 3 physicality abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, load_preset
from .dfs import DfsBasis, DfsReport, build_dfs_basis, gcd_analysis, verify_darkness
from .dynamics import (
    PhysicalityError,
    Trajectory,
    evolve,
    required_kmax,
    write_snapshot,
)
from .hilbert import (
    ChainSpec,
    SectorBasis,
    build_hamiltonian,
    embed_product_state,
    enumerate_sector,
    excitation_support,
)
from .observables import first_settling_time, fft_spectrum, pearson
from .predictor import (
    AsymptoticState,
    asymptotic_concurrence,
    asymptotic_state,
    classify_synchronization,
    closed_form_series,
    liouvillian_peripheral_spectrum,
    transition_table,
)

log = logging.getLogger("xxsync")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHYSICALITY = 3

# Largest sector-truncated basis built just to list and verify dark states.
DFS_LISTING_DIM_LIMIT = 4096
SETTLE_TOL = 0.02


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass
class Setup:
    config: ExperimentConfig
    chain: ChainSpec
    report: DfsReport
    basis: SectorBasis
    dfs: DfsBasis


def prepare(config: ExperimentConfig) -> Setup:
    """Basis, DFS census and dark states for the sectors the dynamics reaches."""
    chain, noise = config.chain, config.noise
    try:
        report = gcd_analysis(noise, chain.N)
        kmax = required_kmax(config.initial_state, noise, chain.N)
        basis = enumerate_sector(chain.N, kmax)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dfs = build_dfs_basis(report, chain, basis, allow_truncation=True)
    return Setup(config, chain, report, basis, dfs)


def default_pearson_window(report: DfsReport, chain: ChainSpec, t_max: float) -> float:
    """Two periods of the slowest single-excitation dark frequency.

    Without any dark mode there is no asymptotic oscillation to resolve and
    the window falls back to ``t_max / 20``.
    """
    from .dfs import mode_energy

    freqs = [abs(mode_energy(n, chain)) / (2 * math.pi) for n in report.labels]
    freqs = [f for f in freqs if f > 0]
    if report.thermal or not freqs:
        return t_max / 20.0
    return 2.0 / min(freqs)


# -- dfs ----------------------------------------------------------------------

def cmd_dfs(config: ExperimentConfig, out: Path) -> dict:
    chain, noise = config.chain, config.noise
    try:
        report = gcd_analysis(noise, chain.N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    kmax = report.r
    while kmax > 0 and enumerate_sector_dim(chain.N, kmax) > DFS_LISTING_DIM_LIMIT:
        kmax -= 1
    basis = enumerate_sector(chain.N, kmax)
    dfs = build_dfs_basis(report, chain, basis, allow_truncation=True)
    H = build_hamiltonian(chain, basis)
    dark = verify_darkness(dfs, noise, H)
    result = {
        "report": report.to_dict(),
        "listed_sectors": kmax,
        "complete": dfs.complete,
        "dark_states": [{"labels": list(s.labels), "energy": s.energy} for s in dfs.states],
        "darkness": {
            "max_lowering_residual": dark.max_lowering_residual,
            "max_energy_residual": dark.max_energy_residual,
            "max_raising_residual": dark.max_raising_residual,
            "passed": dark.passed,
        },
    }
    _write_json(out / "dfs.json", result)
    print(f"N={chain.N} noise sites {list(noise.sites)}: g={report.g}, r={report.r}, "
          f"labels {list(report.labels)}, DFS dimension {report.total_dim}"
          + (" (thermal: DFS destroyed)" if report.thermal else ""), file=sys.stderr)
    print(f"dark-state check over {len(dfs)} states: "
          f"{'passed' if dark.passed else 'FAILED'}", file=sys.stderr)
    print(json.dumps(result["report"], sort_keys=True))
    return result


def enumerate_sector_dim(N: int, kmax: int) -> int:
    return sum(math.comb(N, k) for k in range(kmax + 1))


# -- simulate -----------------------------------------------------------------

def run_trajectory(setup: Setup, extra_snapshots=()) -> Trajectory:
    config = setup.config
    integ = config.integrator
    if extra_snapshots:
        integ = replace(integ, snapshot_times=tuple(integ.snapshot_times) + tuple(extra_snapshots))
    rho0 = embed_product_state(config.initial_state, setup.basis)
    dark = None if setup.report.thermal else setup.dfs.vectors()
    return evolve(rho0, setup.chain, config.noise, integ, list(range(1, setup.chain.N + 1)),
                  dark_vectors=dark, bright_threshold=config.analyses.bright_threshold,
                  edge_concurrence=config.analyses.concurrence and setup.chain.N >= 3)


def cmd_simulate(config: ExperimentConfig, out: Path) -> dict:
    """Integrate the dynamics and run the analyses switched on in the config.

    Besides the trajectory this writes ``pearson.csv``, ``spectrum.csv`` (+
    ``spectrum_peaks.csv``) and ``concurrence.csv``; with ``predict`` or
    ``compare`` enabled the closed-form prediction and its residuals against
    this same trajectory are written too.
    """
    setup = prepare(config)
    a = config.analyses
    traj = run_trajectory(setup, () if a.t_star is None else (a.t_star,))
    traj.to_csv(out / "trajectory.csv")
    N = setup.chain.N
    diag: dict = {
        "t_star": traj.t_star,
        "min_eigenvalue": traj.min_eigenvalue,
        "max_trace_drift": float(np.max(np.abs(traj.trace_drift))),
        "basis_dim": setup.basis.dim,
    }
    if traj.bright_population is not None:
        _write_rows(out / "bright.csv", ("t", "bright"), zip(traj.times, traj.bright_population))
    write_snapshot(out / "final.snap", float(traj.times[-1]), traj.final)
    if traj.t_star_state is not None:
        write_snapshot(out / "t_star.snap", traj.t_star, traj.t_star_state)

    x, y = traj.site_series(1), traj.site_series(N)
    if a.pearson:
        window = a.pearson_window or default_pearson_window(setup.report, setup.chain,
                                                            config.integrator.t_max)
        pc = pearson(traj.times, x, y, window)
        pc.to_csv(out / "pearson.csv")
        late = pc.pc[traj.times >= 0.75 * traj.times[-1]]
        diag["pearson"] = {
            "window": window,
            "settle_anti": first_settling_time(pc, -1.0, SETTLE_TOL),
            "settle_in_phase": first_settling_time(pc, 1.0, SETTLE_TOL),
            "late_mean": float(np.nanmean(late)) if np.any(np.isfinite(late)) else None,
        }
    if a.spectrum:
        t_start = a.spectrum_t_start if a.spectrum_t_start is not None else (traj.t_star or 0.0)
        spec = fft_spectrum(traj.times, x, t_start)
        spec.spectrum_to_csv(out / "spectrum.csv")
        spec.to_csv(out / "spectrum_peaks.csv")
        diag["spectrum"] = {"t_start": t_start, "resolution": spec.resolution,
                            "peaks": [float(f) for f in spec.frequencies]}
    if traj.concurrence is not None:
        _write_rows(out / "concurrence.csv", ("t", "concurrence"), zip(traj.times, traj.concurrence))
        tail = traj.concurrence[traj.times >= 0.75 * traj.times[-1]]
        diag["concurrence"] = {"final_quarter_min": float(tail.min()),
                               "final_quarter_max": float(tail.max()),
                               "final_quarter_std": float(tail.std())}
    if a.predict or a.compare:
        state = _asymptotic_from_trajectory(setup, traj)
        if state is not None:
            if a.predict:
                _write_prediction(setup, state, out)
            if a.compare:
                diag["compare"] = _write_residuals(setup, state, traj, out)
    _write_json(out / "diagnostics.json", diag)
    print(json.dumps(diag, sort_keys=True))
    return diag


# -- predict / compare --------------------------------------------------------

def _asymptotic_from_trajectory(setup: Setup, traj: Trajectory) -> AsymptoticState | None:
    t_star = setup.config.analyses.t_star
    if t_star is not None:
        t0, snap = min(traj.snapshots, key=lambda s: abs(s[0] - t_star))
        return asymptotic_state(setup.dfs, snapshot=snap, t0=t0)
    if traj.t_star_state is None:
        log.warning("bright population never fell below %g; no asymptotic state",
                    setup.config.analyses.bright_threshold)
        return None
    return asymptotic_state(setup.dfs, snapshot=traj.t_star_state, t0=traj.t_star)


def _prediction_grid(config: ExperimentConfig, t0: float) -> np.ndarray:
    integ = config.integrator
    rec_dt = integ.dt * integ.record_stride
    n = integ.n_steps // integ.record_stride + 1
    times = np.arange(n) * rec_dt
    return times[times >= t0 - 1e-9 * rec_dt]


def _write_prediction(setup: Setup, state: AsymptoticState, out: Path) -> dict:
    N = setup.chain.N
    sites = list(range(1, N + 1))
    table = transition_table(setup.dfs, sites)
    # the verdict concerns the edge pair only
    verdict = classify_synchronization(setup.report, transition_table(setup.dfs, [1, N]), state)
    times = _prediction_grid(setup.config, state.t0)
    series = [closed_form_series(state, table, s, times) for s in sites]
    _write_rows(out / "closed_form.csv", ["t", *(f"sx_{s}" for s in sites)],
                zip(times, *series))
    (out / "transitions.json").write_text(table.to_json(indent=2, sort_keys=True) + "\n")
    result = {
        "verdict": verdict.to_dict(),
        "asymptotic_state": state.source,
        "t0": state.t0,
        "dfs_states_used": len(setup.dfs),
        "dfs_complete": setup.dfs.complete,
    }
    if setup.report.g == 2 and not setup.report.thermal:
        result["asymptotic_concurrence"] = asymptotic_concurrence(state, setup.report)
    _write_json(out / "verdict.json", result)
    return result


def _write_residuals(setup: Setup, state: AsymptoticState, traj: Trajectory, out: Path) -> dict:
    N = setup.chain.N
    window = setup.config.analyses.compare_window
    keep = (traj.times >= state.t0 - 1e-9) & (traj.times <= state.t0 + window + 1e-9)
    times = traj.times[keep]
    table = transition_table(setup.dfs, list(range(1, N + 1)))
    per_site = {}
    cols = []
    for s in range(1, N + 1):
        pred = closed_form_series(state, table, s, times)
        sim = traj.site_series(s)[keep]
        per_site[str(s)] = float(np.max(np.abs(pred - sim))) if times.size else math.nan
        if s in (1, N):
            cols += [sim, pred]
    _write_rows(out / "compare.csv", ("t", "sim_1", "pred_1", f"sim_{N}", f"pred_{N}"),
                zip(times, *cols))
    result = {
        "t_star": state.t0,
        "window": [float(times[0]), float(times[-1])] if times.size else None,
        "max_residual": max(per_site.values()),
        "per_site": per_site,
        "asymptotic_state": state.source,
    }
    _write_json(out / "residuals.json", result)
    return result


def cmd_predict(config: ExperimentConfig, out: Path) -> dict:
    """Closed-form asymptotic series and synchronization verdict.

    States confined to sectors 0..1 use the analytic asymptotic state; any
    other state is simulated up to the onset of the asymptotic regime first.
    """
    setup = prepare(config)
    if setup.report.r == 0 or excitation_support(config.initial_state) <= 1:
        if setup.report.thermal or setup.report.r == 0:
            # nothing survives except the ground state: no dark coherences at all
            dfs = setup.dfs
            coh = np.zeros((len(dfs), len(dfs)), dtype=complex)
            coh[dfs.index(()), dfs.index(())] = 1.0
            state = AsymptoticState(dfs, coh, "analytic", 0.0)
        else:
            state = asymptotic_state(setup.dfs, initial=config.initial_state)
    else:
        traj = run_trajectory(setup, () if config.analyses.t_star is None
                              else (config.analyses.t_star,))
        state = _asymptotic_from_trajectory(setup, traj)
        if state is None:
            raise PhysicalityError("asymptotic regime not reached within t_max; "
                                   "increase t_max or bright_threshold")
    result = _write_prediction(setup, state, out)
    print(json.dumps(result, sort_keys=True))
    return result


def cmd_compare(config: ExperimentConfig, out: Path) -> dict:
    setup = prepare(config)
    a = config.analyses
    traj = run_trajectory(setup, () if a.t_star is None else (a.t_star,))
    traj.to_csv(out / "trajectory.csv")
    state = _asymptotic_from_trajectory(setup, traj)
    if state is None:
        raise PhysicalityError("asymptotic regime not reached within t_max; "
                               "increase t_max or bright_threshold")
    result = _write_residuals(setup, state, traj, out)
    print(json.dumps(result, sort_keys=True))
    return result


# -- oracle -------------------------------------------------------------------

def cmd_oracle(config: ExperimentConfig, out: Path) -> dict:
    """Peripheral Liouvillian spectrum from the dense tensor-product oracle."""
    chain, noise = config.chain, config.noise
    try:
        spec = liouvillian_peripheral_spectrum(chain, noise)
        report = gcd_analysis(noise, chain.N)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    spec.to_csv(out / "peripheral.csv")
    expected = 1 if report.thermal else (2 ** report.r) ** 2
    result = {"count": spec.count, "expected_count": expected,
              "matches_dfs": spec.count == expected}
    _write_json(out / "oracle.json", result)
    print(json.dumps(result, sort_keys=True))
    return result


COMMANDS = {
    "dfs": cmd_dfs,
    "simulate": cmd_simulate,
    "predict": cmd_predict,
    "compare": cmd_compare,
    "oracle": cmd_oracle,
}


# -- sweeps and entry point ---------------------------------------------------

def parse_sweep(spec: str) -> tuple[str, list[float]]:
    """``param:start:stop:count`` (inclusive linspace) or ``param:v1,v2,...``."""
    name, _, rng = spec.partition(":")
    if not name or not rng:
        raise ConfigError(f"bad sweep {spec!r}; use param:start:stop:count or param:v1,v2")
    try:
        if "," in rng or rng.count(":") == 0:
            values = [float(v) for v in rng.split(",")]
        else:
            start, stop, count = rng.split(":")
            values = [float(v) for v in np.linspace(float(start), float(stop), int(count))]
    except ValueError:
        raise ConfigError(f"bad sweep range {rng!r}") from None
    if not values:
        raise ConfigError("empty sweep")
    return name, values


def _run(command: str, config: ExperimentConfig, out: Path) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config.to_json())
    try:
        COMMANDS[command](config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhysicalityError as exc:
        print(f"physicality abort: {exc}", file=sys.stderr)
        return EXIT_PHYSICALITY
    return EXIT_OK


def _sweep_job(job) -> int:
    command, data, out = job
    try:
        config = ExperimentConfig.from_dict(data)
    except ConfigError as exc:
        print(f"config error in {out}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return _run(command, config, Path(out))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xxsync", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="experiment configuration JSON")
    src.add_argument("--preset", help="shipped configuration (fig1a, fig1b, fig2)")
    p.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    p.add_argument("--sweep", help="param:start:stop:count or param:v1,v2,...; "
                                   "param in N, omega, J, gamma, dt, t_max")
    p.add_argument("--seed", type=int, default=None,
                   help="reserved; the dynamics is deterministic")
    p.add_argument("--workers", type=int, default=None, help="sweep worker processes")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        config = load_preset(args.preset) if args.preset else load_config(args.config)
        out = args.out if args.out is not None else Path(config.output_dir)
        if not args.sweep:
            return _run(args.command, config, out)
        name, values = parse_sweep(args.sweep)
        jobs = [(args.command, config.with_overrides(**{name: v}).to_dict(),
                 str(out / f"{name}={v!r}")) for v in values]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    workers = args.workers or os.cpu_count() or 1
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        codes = list(pool.map(_sweep_job, jobs))
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
