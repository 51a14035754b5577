"""Command-line front end: every analysis as a subcommand emitting
deterministic CSV/JSON.

    tctip <command> [--config FILE] [--out DIR] [--seed N]
                    [--print-config] [--stamp]

Exit codes: 0 success, 2 config error, 3 numerical failure,
4 nonconvergence.  Outputs embed the resolved config; rerunning with the
same config reproduces the files byte for byte (unless --stamp adds a
wall-clock timestamp).
"""
from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import (ModelParams, NoiseSpec, RampSpec, WeightMatrix,
               action_value, asymptotic_fixed_points, basin_grid,
               center_manifold, combined_rate_noise, critical_rate,
               expected_tip_time_bound, fixed_points, frozen_fixed_points,
               mpp_assemble, run_ensemble, saddle_node_locus,
               separatrix_polyline, simulate_ramp)
from .action import TransitionPath
from .io import ConfigError, RunConfig, dump_csv, dump_json, envelope, read_csv

MODEL_DEFAULTS = {"gamma": 0.43, "c": 0.286}
RAMP_DEFAULTS = {"r": 0.03, "vp_minus": 10.0, "vp_plus": 100.0, "k": 0.13,
                 "shape": "tanh"}
NOISE_DEFAULTS = {"sigma1": 0.005, "sigma2": 0.005, "seed": 1,
                  "dt": 0.1, "tau_f": 1e4}

DEFAULTS = {
    "fixed-points": dict(MODEL_DEFAULTS),
    "bifurcation": {"gamma": 0.43, "c_min": 0.02, "c_max": 0.4, "n_c": 96},
    "phase-diagram": {"gamma_min": 0.05, "gamma_max": 0.95, "n_gamma": 46},
    "separatrix": {**MODEL_DEFAULTS, "arclength_step": 2e-3},
    "basin-grid": {**MODEL_DEFAULTS, "nv": 101, "nm": 101, "t_max": 1e4,
                   "tol": 5e-3, "dt": 0.02},
    "center-manifold": {**MODEL_DEFAULTS, "order": 5, "v_max": 0.1,
                        "n_v": 101},
    "rate-tip": {"gamma": 0.43, **RAMP_DEFAULTS, "dt": 0.01,
                 "store_every": 10, "x0": None},
    "critical-rate": {"gamma": 0.43, **RAMP_DEFAULTS, "r_lo": 0.03,
                      "r_hi": 0.08, "tol": 1e-6, "dt": 0.01},
    "sde-ensemble": {**MODEL_DEFAULTS, **NOISE_DEFAULTS, "count": 10,
                     "x0": "O", "store_every": 0},
    "combined": {"gamma": 0.43, **RAMP_DEFAULTS, **NOISE_DEFAULTS,
                 "tau_f": 2500.0, "count": 100, "x0": "S-", "near_tol": 0.1},
    "mpp": {**MODEL_DEFAULTS, "sigma1": 0.005, "sigma2": 0.005, "T": 600.0,
            "n_nodes": 6001, "s_max": 4000.0, "ds": 0.01, "tol": 1e-9},
    "action": {**MODEL_DEFAULTS, "sigma1": 0.005, "sigma2": 0.005,
               "path_csv": None},
    "tip-time": {**MODEL_DEFAULTS, "sigma1": 0.005, "sigma2": 0.005,
                 "r_fraction": 0.5},
}


class Nonconvergence(RuntimeError):
    pass


def _params(cfg) -> ModelParams:
    return ModelParams(gamma=cfg["gamma"], c=cfg["c"])


def _ramp_spec(cfg) -> RampSpec:
    return RampSpec(r=cfg["r"], vp_minus=cfg["vp_minus"],
                    vp_plus=cfg["vp_plus"], k=cfg["k"], shape=cfg["shape"])


def _noise(cfg) -> NoiseSpec:
    return NoiseSpec(sigma1=cfg["sigma1"], sigma2=cfg["sigma2"],
                     seed=int(cfg["seed"]), dt=cfg["dt"], tau_f=cfg["tau_f"])


def _fps_record(fps) -> dict:
    rec = {"status": fps.status}
    for name, pt in fps.all_points().items():
        rec[name] = {"v": float(pt[0]), "m": float(pt[1]),
                     "stability": fps.stability.get(name, "unknown"),
                     "jacobian": fps.jacobians.get(name)}
    return rec


def cmd_fixed_points(cfg):
    p = _params(cfg)
    fps = fixed_points(p)
    rec = _fps_record(fps)
    if fps.status != "three":
        rec["note"] = "storm-state absent"
    u, s = asymptotic_fixed_points(p)
    rec["asymptotic"] = {"saddle": list(u), "storm": list(s)}
    return {"fixed_points": ("json", rec)}


def cmd_bifurcation(cfg):
    gamma = cfg["gamma"]
    cs = np.linspace(cfg["c_min"], cfg["c_max"], int(cfg["n_c"]))
    rows = []
    for c in cs:
        fps = fixed_points(ModelParams(gamma=gamma, c=float(c)))
        if fps.status == "three":
            rows.append([c, 0.0, fps.saddle[0], fps.storm[0], "three"])
        elif fps.status == "saddle_node":
            rows.append([c, 0.0, fps.degenerate[0], fps.degenerate[0],
                         "saddle_node"])
        else:
            rows.append([c, 0.0, "", "", "one"])
    header = ["c", "v_O", "v_U", "v_S", "status"]
    return {"bifurcation": ("csv", (header, rows))}


def cmd_phase_diagram(cfg):
    gammas = np.linspace(cfg["gamma_min"], cfg["gamma_max"],
                         int(cfg["n_gamma"]))
    rows = [[g, saddle_node_locus(float(g))] for g in gammas]
    return {"phase_diagram": ("csv", (["gamma", "c_star"], rows))}


def cmd_separatrix(cfg):
    p = _params(cfg)
    poly = separatrix_polyline(p, arclength_step=cfg["arclength_step"])
    rows = [[v, m] for v, m in poly]
    return {"separatrix": ("csv", (["v", "m"], rows))}


def cmd_basin_grid(cfg):
    p = _params(cfg)
    v_nodes, m_nodes, labels = basin_grid(
        p, resolution=(int(cfg["nv"]), int(cfg["nm"])),
        t_max=cfg["t_max"], tol=cfg["tol"], dt=cfg["dt"])
    rows = []
    for i, m in enumerate(m_nodes):
        for j, v in enumerate(v_nodes):
            rows.append([v, m, labels[i, j]])
    return {"basin_grid": ("csv", (["v", "m", "label"], rows))}


def cmd_center_manifold(cfg):
    p = _params(cfg)
    vs = np.linspace(0.0, cfg["v_max"], int(cfg["n_v"]))
    ms = center_manifold(vs, p, order=int(cfg["order"]))
    rows = [[v, m] for v, m in zip(vs, ms)]
    return {"center_manifold": ("csv", (["v", "m"], rows))}


def cmd_rate_tip(cfg):
    spec = _ramp_spec(cfg)
    x0 = cfg["x0"]
    res = simulate_ramp(None if x0 is None else np.asarray(x0, dtype=float),
                        spec, cfg["gamma"], dt=cfg["dt"],
                        store_every=int(cfg["store_every"]))
    rows = [[tau, v, m] for tau, (v, m) in zip(res.path.taus,
                                               res.path.states)]
    rec = {"verdict": res.verdict,
           "final_state": list(res.final_state),
           "tau0": res.tau0, "tau_f": res.tau_f,
           "start": _fps_record(frozen_fixed_points(res.tau0, spec,
                                                    cfg["gamma"])),
           "end": _fps_record(frozen_fixed_points(res.tau_f + 1e9, spec,
                                                  cfg["gamma"]))}
    return {"trajectory": ("csv", (["tau", "v", "m"], rows)),
            "verdict": ("json", rec)}


def cmd_critical_rate(cfg):
    spec = _ramp_spec(cfg)
    lo, hi = critical_rate(spec, cfg["gamma"], cfg["r_lo"], cfg["r_hi"],
                           tol=cfg["tol"], dt=cfg["dt"])
    rec = {"r_lo": lo, "r_hi": hi, "width": hi - lo, "tol": cfg["tol"]}
    return {"critical_rate": ("json", rec)}


def _resolve_x0(tag, p):
    if isinstance(tag, (list, tuple)):
        return np.asarray(tag, dtype=float)
    fps = fixed_points(p)
    if tag == "O":
        return fps.origin
    if tag == "S":
        if fps.storm is None:
            raise ConfigError("x0='S' needs three equilibria")
        return fps.storm
    raise ConfigError(f"unknown x0 {tag!r}")


def cmd_sde_ensemble(cfg):
    p = _params(cfg)
    n = _noise(cfg)
    x0 = _resolve_x0(cfg["x0"], p)
    out = run_ensemble(x0, p, n, count=int(cfg["count"]),
                       store_every=int(cfg["store_every"]))
    stats = out["stats"]
    rows = []
    for j, events in enumerate(out["events"]):
        for kind, tau in events:
            rows.append([j, kind, tau])
    rec = {"n_realizations": stats.n_realizations,
           "n_tipped": stats.n_tipped,
           "tip_fraction": stats.tip_fraction,
           "tip_time_mean": stats.tip_time_mean,
           "tip_time_median": stats.tip_time_median,
           "direction": out["direction"]}
    return {"events": ("csv", (["realization", "kind", "tau"], rows)),
            "stats": ("json", rec)}


def cmd_combined(cfg):
    spec = _ramp_spec(cfg)
    n = _noise(cfg)
    gamma = cfg["gamma"]
    s0 = -20.0 / spec.r if spec.r > 0 else 0.0
    start = frozen_fixed_points(s0, spec, gamma)
    tag = cfg["x0"]
    if tag == "S-":
        if start.storm is None:
            raise ConfigError("no storm state at ramp start")
        x0 = start.storm
    elif tag == "O":
        x0 = start.origin
    else:
        x0 = np.asarray(tag, dtype=float)
    res = combined_rate_noise(x0, spec, gamma, n, count=int(cfg["count"]),
                              near_tol=cfg["near_tol"])
    rows = [[j, lab, res.finals[j, 0], res.finals[j, 1],
             res.min_dist_sminus[j], res.first_near_sminus_tau[j]]
            for j, lab in enumerate(res.labels)]
    rec = {"counts": res.counts, "s_final": res.s_final,
           "near_tol": cfg["near_tol"]}
    header = ["realization", "label", "v_final", "m_final",
              "min_dist_sminus", "first_near_sminus_tau"]
    return {"realizations": ("csv", (header, rows)),
            "stats": ("json", rec)}


def cmd_mpp(cfg):
    p = _params(cfg)
    w = WeightMatrix(cfg["sigma1"], cfg["sigma2"])
    asm = mpp_assemble(p, w, T=cfg["T"], n=int(cfg["n_nodes"]),
                       s_max=cfg["s_max"], ds=cfg["ds"], tol=cfg["tol"])
    if not asm.mam.converged:
        raise Nonconvergence(
            f"gradient flow not converged after {asm.mam.iterations} "
            f"iterations (action {asm.mam.path.action:.6g})")
    rows = [[v, m] for v, m in asm.path]
    rec = {"action": asm.action,
           "gradient_segment_action": asm.gradient_segment.action,
           "junction_gap": asm.junction_gap,
           "iterations": asm.mam.iterations}
    return {"mpp_path": ("csv", (["v", "m"], rows)),
            "mpp": ("json", rec)}


def cmd_action(cfg):
    p = _params(cfg)
    w = WeightMatrix(cfg["sigma1"], cfg["sigma2"])
    if cfg["path_csv"] is None:
        raise ConfigError("action needs path_csv: a CSV with tau,v,m columns")
    header, rows = read_csv(cfg["path_csv"])
    if header[:3] != ["tau", "v", "m"]:
        raise ConfigError("path CSV must have header tau,v,m")
    arr = np.asarray(rows, dtype=float)
    path = TransitionPath(taus=arr[:, 0], psi=arr[:, 1:3])
    rec = {"action": action_value(path, p, w), "n_nodes": len(path)}
    return {"action": ("json", rec)}


def cmd_tip_time(cfg):
    p = _params(cfg)
    w = WeightMatrix(cfg["sigma1"], cfg["sigma2"])
    bound = expected_tip_time_bound(p, w, r_fraction=cfg["r_fraction"])
    rec = {"log_bound": bound.log_bound,
           "bound": (None if bound.bound == float("inf") else bound.bound),
           "bound_is_inf": bound.bound == float("inf"),
           "prefactor": bound.prefactor, "note": bound.note}
    return {"tip_time": ("json", rec)}


HANDLERS = {
    "fixed-points": cmd_fixed_points,
    "bifurcation": cmd_bifurcation,
    "phase-diagram": cmd_phase_diagram,
    "separatrix": cmd_separatrix,
    "basin-grid": cmd_basin_grid,
    "center-manifold": cmd_center_manifold,
    "rate-tip": cmd_rate_tip,
    "critical-rate": cmd_critical_rate,
    "sde-ensemble": cmd_sde_ensemble,
    "combined": cmd_combined,
    "mpp": cmd_mpp,
    "action": cmd_action,
    "tip-time": cmd_tip_time,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tctip",
        description="Tipping analyses for the low-dimensional "
                    "tropical-cyclone model")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in HANDLERS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None,
                        help="JSON config file overriding the defaults")
        sp.add_argument("--out", default=".",
                        help="output directory (default: current)")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the noise seed")
        sp.add_argument("--print-config", action="store_true",
                        help="print the resolved config and exit")
        sp.add_argument("--stamp", action="store_true",
                        help="record wall-clock time in outputs "
                             "(breaks byte reproducibility)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = RunConfig.resolve(args.command, DEFAULTS[args.command],
                                args.config, overrides)
    except ConfigError as exc:
        sys.stdout.write(dump_json({"error": "config", "detail": str(exc)}))
        return 2
    if args.print_config:
        sys.stdout.write(dump_json(cfg.as_dict()))
        return 0
    produced_at = (datetime.now(timezone.utc).isoformat()
                   if args.stamp else None)
    try:
        artifacts = HANDLERS[args.command](cfg)
    except ConfigError as exc:
        sys.stdout.write(dump_json({"error": "config", "detail": str(exc)}))
        return 2
    except Nonconvergence as exc:
        sys.stdout.write(dump_json({"error": "nonconvergence",
                                    "detail": str(exc)}))
        return 4
    except (RuntimeError, ValueError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        sys.stdout.write(dump_json({"error": "numerical",
                                    "detail": str(exc)}))
        return 3
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (kind, data) in artifacts.items():
        if kind == "json":
            dump_json(envelope(cfg, data, produced_at),
                      out_dir / f"{name}.json")
        else:
            header, rows = data
            dump_csv(header, rows, out_dir / f"{name}.csv")
            dump_json(envelope(cfg, {"rows": len(rows),
                                     "file": f"{name}.csv"}, produced_at),
                      out_dir / f"{name}.meta.json")
    summary = {name: kind for name, (kind, _) in artifacts.items()}
    sys.stdout.write(dump_json({"ok": True, "command": args.command,
                                "artifacts": summary,
                                "out_dir": str(out_dir)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
