"""Command-line entry point ``partdiss``.

Every subcommand reads a JSON run configuration, runs the assumption
validators, then the experiment, and writes CSV tables plus a manifest.

Exit codes: 0 success, 1 configuration or horizon error, 2 a validator
returned FAIL, 3 the integration blew up.  Errors are reported on stderr
as a single JSON line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .attractor_lab import (ABSORB_SPREAD, H1_STABILITY, MONOTONE_BAND, ROUNDOFF_FLOOR, SATURATION,
                            PullbackConfig, absorbing_radius, ball_samples, parallel_map, pullback_run,
                            splitting_run)
from .config import KINDS, RunConfig
from .errors import BlowUpError, ConfigError, HorizonError, InfeasibleConstants
from .integrator import integrate_pathwise
from .models import build_model, validate_reaction_assumptions
from .noise_process import CHUNK, NoiseSource, validate_noise_assumptions
from .ou_stationary import OUProcess, temperedness_diagnostic
from .output import RunOutput
from .reports import FAIL, INCONCLUSIVE, ConditionResult, ValidationReport
from .spectral_core import GridField, SpectralField, grid_l2_array, h1_array, lp_norm_array

log = logging.getLogger("partdiss")

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_BLOWUP = 0, 1, 2, 3


class ValidationFailed(Exception):
    def __init__(self, failed: list):
        super().__init__("validation failed: " + ", ".join(failed))
        self.failed = failed


# ---------------------------------------------------------------------------
# validation

def run_validators(cfg: RunConfig, basis):
    """(noise report, reaction report, fitted model or None)."""
    cov1, cov2 = cfg.build_covariances(basis)
    noise = validate_noise_assumptions(cov1, cov2, cfg.noise.alpha, cfg.noise.tail_modes)
    try:
        model = cfg.build_model(basis)
    except InfeasibleConstants as exc:
        rep = ValidationReport(cfg.model.name, [ConditionResult(exc.condition, FAIL, note=str(exc))],
                               scope={"U": cfg.model.fit_box})
        return noise, rep, None
    reaction = validate_reaction_assumptions(model, cfg.model.fit_box, cfg.model.fit_samples, basis)
    return noise, reaction, model


def _validation_rows(*reports):
    rows = []
    for rep in reports:
        for c in rep.conditions:
            rows.append((rep.subject, c.name, c.verdict, c.note))
    return rows


def _validate_into(out: RunOutput, cfg: RunConfig, basis):
    noise, reaction, model = run_validators(cfg, basis)
    out.csv("validation.csv", ["subject", "condition", "verdict", "note"], _validation_rows(noise, reaction))
    out.extra["validation"] = {"noise": noise.to_dict(), "reaction": reaction.to_dict()}
    for rep in (noise, reaction):
        if rep.verdict == INCONCLUSIVE:
            log.warning("%s validation is INCONCLUSIVE: %s", rep.subject,
                        [c.name for c in rep.conditions if c.verdict == INCONCLUSIVE])
    failed = [f"{r.subject}:{n}" for r in (noise, reaction) for n in r.failed()]
    return model, failed


# ---------------------------------------------------------------------------
# experiments

def _initial_state(basis, p):
    u1, u2 = ball_samples(basis, p["initial_radius"], 1, p["initial_seed"])
    return SpectralField(basis, u1[0]), GridField(basis, u2[0])


def _simulate(cfg, basis, model, out, threads):
    p = cfg.experiment_params("simulate")
    path = cfg.build_path(basis)
    scfg = cfg.solver_config()
    rec = integrate_pathwise(_initial_state(basis, p), path, p["t0"], p["t1"], model, scfg, cfg.ou_mode())
    names = rec.column_names()
    out.csv("trajectory.csv", ["t"] + names,
            [[t] + [rec.columns[c][i] for c in names] for i, t in enumerate(rec.times)])
    if rec.snapshots is not None:
        frames = [{"t": np.array([t]), "u1": rec.snapshots["u1"][i], "u2": rec.snapshots["u2"][i]}
                  for i, t in enumerate(rec.times)]
        out.snapshots("snapshots.f64", frames)
    return {"records": len(rec.times), "final_u_H": float(rec.columns["u_H"][-1]) if "u_H" in rec.columns else None}


def _pullback_cfg(cfg, basis, model, times, p):
    return PullbackConfig(cfg.build_path(basis), model, cfg.solver_config(False), times,
                          radius=p.get("radius", 10.0), count=p["count"], sample_seed=p["sample_seed"],
                          ou_mode=cfg.ou_mode())


def _pullback(cfg, basis, model, out, threads):
    p = cfg.experiment_params("pullback")
    res = pullback_run(_pullback_cfg(cfg, basis, model, p["pullback_times"], p), threads, p["threshold"])
    out.csv("pullback.csv", ["t_pullback", "i", "j", "distance_H", "norm_i_H"], res.rows())
    out.csv("pullback_diam.csv", ["t_pullback", "diam_H"], list(zip(res.times, res.diam)))
    return {"diam": res.diam, "monotone": res.monotone, "converged": res.converged,
            "threshold": res.threshold, "final_diam": res.final_diam}


def _absorb(cfg, basis, model, out, threads):
    p = cfg.experiment_params("absorb")
    pc = _pullback_cfg(cfg, basis, model, [p["t_max"]], p)
    res = absorbing_radius(pc, p["scale_ladder"], p["t_max"], p["saturation"], threads)
    out.csv("absorption.csv", ["R", "t_max", "max_norm_sq"], res.rows())
    return {"rho_hat": res.rho_hat, "spread": res.spread, "saturation": res.saturation, "verdict": res.verdict}


def _splitting(cfg, basis, model, out, threads):
    p = cfg.experiment_params("splitting")
    res = splitting_run(_initial_state(basis, p), cfg.build_path(basis), p["t0"], p["t1"], model,
                        cfg.solver_config(False), cfg.ou_mode())
    out.csv("splitting.csv", ["t", "norm_v2_2", "bound", "norm_v2_1_h1", "split_residual"],
            [r + (float(e),) for r, e in zip(res.rows(), res.residual)])
    return {"identity_ok": res.identity_ok, "decay_ok": res.decay_ok,
            "max_residual": float(np.max(res.residual))}


def ou_series(cfg: RunConfig, basis, model, member: int, horizon: float, stride: int):
    """Times in [0, horizon] and (z1 coeffs, z2 grid) for ensemble member ``member``."""
    path = cfg.build_path(basis, member)
    proc = OUProcess.shared(path, model.sigma_values(basis), cfg.ou_mode())
    m0 = path.master(0)
    m1 = path.master(path.steps(horizon, "horizon"))
    z1, z2 = proc.series(m0, m1, stride)
    return np.arange(z1.shape[0]) * stride * path.h_noise, z1, z2


def _ou_stats(cfg, basis, model, out, threads):
    p = cfg.experiment_params("ou-stats")
    T, stride, q = float(p["horizon"]), int(p["stride"]), float(p["lp_power"])
    seeds = int(p["seeds"])
    nvar = min(basis.N, 8)

    def job(i):
        t, z1, z2 = ou_series(cfg, basis, model, i, T, stride)
        series = {
            "z1_lp": lp_norm_array(basis, basis.synthesize(z1), q) ** q,
            "z2_l2_sq": grid_l2_array(basis, z2) ** 2,
            "grad_z1_sq": h1_array(basis, z1) ** 2,
        }
        reps = {k: temperedness_diagnostic(t, v, T, p["threshold"]) for k, v in series.items()}
        lead = z1.reshape(z1.shape[0], -1)[:, :nvar]
        return reps, np.mean(lead ** 2, axis=0)

    results = parallel_map(job, list(range(seeds)), threads)
    rows, verdicts = [], {}
    for i, (reps, _) in enumerate(results):
        for name, r in reps.items():
            rows.append([i, name] + [g for _, g in r.ladder] + [r.expected_sup_unit, r.verdict])
            verdicts.setdefault(name, []).append(r.consistent)
    rungs = [f"g_T{Tp:g}" for Tp, _ in results[0][0]["z1_lp"].ladder] if results else []
    out.csv("temperedness.csv", ["member", "quantity"] + rungs + ["esup_unit", "verdict"], rows)
    emp = np.mean([v for _, v in results], axis=0)
    cov1, _ = cfg.build_covariances(basis)
    theo = (cov1.intensities / (2 * basis.eigenvalues)).reshape(-1)[:nvar]
    out.csv("ou_variance.csv", ["mode", "empirical", "stationary"],
            [(k + 1, emp[k], theo[k]) for k in range(nvar)])
    return {"members": seeds, "consistent": {k: int(sum(v)) for k, v in verdicts.items()}}


EXPERIMENTS = {
    "simulate": _simulate,
    "pullback": _pullback,
    "absorb": _absorb,
    "splitting": _splitting,
    "ou-stats": _ou_stats,
}


def calibration(cfg: RunConfig, command: str) -> dict:
    """Verdict thresholds in force for this run; these are tuning choices, not derived values."""
    p = cfg.experiment_params(command)
    out = {"monotone_band": MONOTONE_BAND, "roundoff_floor": ROUNDOFF_FLOOR, "absorb_spread": ABSORB_SPREAD,
           "saturation": SATURATION, "h1_stability": H1_STABILITY}
    if "threshold" in p:
        out[f"{command}_threshold"] = p["threshold"]
    return out


def run_command(command: str, cfg: RunConfig, out_dir, threads: int = 1) -> dict:
    """Validate, run ``command`` and write its outputs; returns the summary.

    Raises ValidationFailed when a validator returns FAIL.
    """
    if command not in KINDS:
        raise ConfigError(f"unknown command {command!r}")
    if command != cfg.kind:
        log.info("config experiment kind %r overridden by %r; kind fields use defaults", cfg.kind, command)
    basis = cfg.build_basis()
    out = RunOutput(out_dir, command, cfg)
    out.extra["calibration"] = calibration(cfg, command)
    model, failed = _validate_into(out, cfg, basis)
    if failed:
        out.manifest(status="validation_failed", failed=failed)
        raise ValidationFailed(failed)
    summary = {}
    if command != "validate":
        summary = EXPERIMENTS[command](cfg, basis, model, out, max(1, int(threads)))
    out.manifest(status="ok", summary=summary)
    return summary


# ---------------------------------------------------------------------------
# describe

def memory_estimate(cfg: RunConfig, basis) -> dict:
    """Rough resident bytes for caches, transforms and recorded output."""
    f8 = 8
    nc = basis.N ** basis.n
    ng = basis.M ** basis.n
    noise_cache = 2 * NoiseSource.cache_chunks * CHUNK * nc * f8
    ou_cache = OUProcess.cache_chunks * CHUNK * (nc + ng) * f8
    P = basis.padded_size
    matrices = (basis.M + P) * basis.N * f8 * 2
    nrec = 0
    p = cfg.experiment_params()
    if cfg.kind in ("simulate", "splitting"):
        nrec = int(round((p["t1"] - p["t0"]) / cfg.solver.h_step)) // cfg.solver.record_every + 1
    per_rec = 20 * f8 + (6 * (nc + ng) * f8 // 2 if cfg.output.snapshots else 0)
    total = noise_cache + ou_cache + matrices + nrec * per_rec
    return {"noise_cache": noise_cache, "ou_cache": ou_cache, "transforms": matrices,
            "records": nrec * per_rec, "total": total}


def describe(cfg: RunConfig) -> str:
    basis = cfg.build_basis()
    cov1, cov2 = cfg.build_covariances(basis)
    lines = [f"partdiss {__version__}  config sha256 {cfg.sha256()[:16]}",
             f"experiment: {cfg.kind}",
             f"basis: n={basis.n} modes per axis N={basis.N} ({basis.N ** basis.n} total), "
             f"grid M={basis.M}, padded grid {basis.padded_size}, d={basis.d}",
             f"noise: h={cfg.noise.h_noise} horizon [{cfg.noise.t_min}, {cfg.noise.t_max}] seed={cfg.noise.seed} "
             f"ou_init={cfg.noise.ou_init}"]
    lam = basis.eigenvalues.reshape(-1)
    expo = 2 * cfg.noise.alpha + 1
    for name, cov in (("cov1", cov1), ("cov2", cov2)):
        d = cov.intensities.reshape(-1)
        ks = sorted({max(1, d.size // 4), max(1, d.size // 2), d.size})
        sums = ", ".join(f"{k}: {d[:k].sum():.6g}" for k in ks)
        lines.append(f"{name} ({cov.kind}) trace partial sums  {sums}")
    reg = cov1.intensities.reshape(-1) * lam ** expo
    lines.append(f"sum delta_k lambda_k^(2a+1) up to N: {reg.sum():.6g}")
    m = build_model(cfg.model.name, dict(cfg.model.parameters))
    try:
        m = cfg.build_model(basis)
        src = "fitted" if not cfg.model.constants else "given"
    except InfeasibleConstants as exc:
        src = f"infeasible ({exc})"
    c = m.constants.to_dict()
    sig = m.sigma_values(basis)
    lines.append(f"model: {m.name} {cfg.model.parameters}  constants {src}")
    lines.append("  " + "  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in c.items()))
    lines.append(f"  sigma range [{sig.min():.6g}, {sig.max():.6g}]")
    lines.append(f"solver: scheme={cfg.solver.scheme} h={cfg.solver.h_step} record_every={cfg.solver.record_every}")
    mem = memory_estimate(cfg, basis)
    lines.append("memory estimate: " + ", ".join(f"{k} {v / 2 ** 20:.1f} MiB" for k, v in mem.items()))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# argument handling

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="partdiss", description="Random attractor experiments for "
                                 "partly dissipative stochastic reaction-diffusion systems.")
    ap.add_argument("--version", action="version", version=f"partdiss {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in KINDS + ("describe",):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        if name != "describe":
            sp.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
            sp.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    return ap


def _fail(code: int, exc: BaseException, command: str | None, **extra) -> int:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, "command": command}
    rec.update(extra)
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = RunConfig.load(args.config)
        if args.command == "describe":
            print(describe(cfg))
            return EXIT_OK
        out_dir = args.out or cfg.output.directory
        summary = run_command(args.command, cfg, out_dir, args.threads)
        print(json.dumps({"command": args.command, "out": str(out_dir), "summary": summary},
                         sort_keys=True, default=float))
        return EXIT_OK
    except ValidationFailed as exc:
        return _fail(EXIT_VALIDATION, exc, args.command, failed=exc.failed)
    except BlowUpError as exc:
        return _fail(EXIT_BLOWUP, exc, args.command, t=exc.t)
    except (ConfigError, HorizonError) as exc:
        return _fail(EXIT_CONFIG, exc, args.command)


if __name__ == "__main__":
    sys.exit(main())
