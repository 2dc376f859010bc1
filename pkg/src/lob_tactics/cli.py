"""Command-line entry points.

Every subcommand is deterministic given its inputs and seed; directories it
writes get a ``manifest.json`` recording the configuration digest, seeds and
produced files.  Exit codes: 0 success, 2 configuration error, 3 numeric
failure, 4 data error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .calibrate import (estimate_intensities, estimate_regeneration,
                        generate_synthetic_events, imbalance_stats, read_events_csv,
                        write_events_csv)
from .config import (ConfigError, build_objects, builtin_config, load_config,
                     price_window_for, validate_config)
from .dp import (Policy, baseline_policy, extract_policy, solve_any_time_discrete,
                 solve_fixed_frequency, value_of_fixed_policy)
from .ergodicity import (check_assumptions, convergence_diagnostics, lyapunov_drift)
from .generator import build_controlled_generator
from .impact import (PayoffCalculator, build_depletion_race, hitting_probabilities,
                     impact_fixed_point)
from .model import AgentState, ModelError
from .simulate import simulate_market_only, simulate_paths


class DataError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, params: dict, config: dict | None,
                   seed, inputs: dict, outputs: list, started: float) -> None:
    manifest = {
        "tool": "lob-tactics",
        "version": __version__,
        "command": command,
        "parameters": params,
        "config_sha256": hashlib.sha256(
            json.dumps(config, sort_keys=True).encode()).hexdigest() if config else None,
        "seed": seed,
        "input_digests": inputs,
        "outputs": sorted(outputs),
        "wall_clock_s": round(time.time() - started, 3),
        "backend": _kernels.backend_name(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load_cfg(args) -> dict:
    if getattr(args, "builtin", None):
        return builtin_config(args.builtin)
    if not args.config:
        raise ConfigError(["--config or --builtin is required"])
    try:
        raw = load_config(args.config)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError([f"cannot parse {args.config}: {exc}"]) from exc
    return validate_config(raw)


def _pipeline(cfg: dict):
    model, regen, mc = build_objects(cfg)
    window = price_window_for(cfg, model, regen, mc)
    race = build_depletion_race(model)
    impact = impact_fixed_point(race, regen)
    return model, regen, mc, window, race, impact


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate_config(args) -> int:
    try:
        raw = load_config(args.config)
    except FileNotFoundError as exc:
        raise DataError(str(exc))
    norm = validate_config(raw)
    print(json.dumps(norm, indent=2, sort_keys=True))
    return 0


def cmd_impact(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    model, regen, mc, window, race, impact = _pipeline(cfg)
    hit = hitting_probabilities(race)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = [(q1, q2, impact.drift[q1, q2])
            for q1 in range(1, model.qmax + 1) for q2 in range(1, model.qmax + 1)]
    _write_csv(out_dir / "drift.csv", ["q1", "q2", "drift_ticks"], rows)
    summary = {
        "fixed_point_residual": impact.residual,
        "condition_estimate": impact.condition,
        "hitting_row_sum_defect": float(np.max(np.abs(hit.row_sums() - 1.0))),
        "race_row_defect": race.row_defect(),
        "n_transient_states": race.n_transient,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out_dir, "impact", {"config": str(args.config or args.builtin)},
                   cfg, None, {}, ["drift.csv", "summary.json"], started)
    print(f"drift surface written to {out_dir} "
          f"(residual {summary['fixed_point_residual']:.2e})")
    return 0


def _solve(cfg, mode, transition, qbef):
    model, regen, mc, window, race, impact = _pipeline(cfg)
    system = build_controlled_generator(model, regen, mc, window)
    payoff = PayoffCalculator(impact, mc)
    if mode == "fixed":
        surface, policy = solve_fixed_frequency(system, payoff, mc)
    else:
        surface, policy = solve_any_time_discrete(system, payoff, mc,
                                                  transition=transition)
    return model, regen, mc, system, payoff, impact, surface, policy


_POLICY_HEADER = ["time_index", "q_bef", "q_a", "q_aft", "q2", "inv", "p_ticks",
                  "p_exec_halfticks", "value", "decision"]


def _policy_rows(system, surface, policy):
    labels = policy.labels(system)
    st = system.states
    for k in range(surface.n_epochs):
        vals = surface.post_decision[k]
        for j in range(system.n_states):
            yield (k, st[j, 0], st[j, 1], st[j, 2], st[j, 3], st[j, 4], st[j, 5],
                   st[j, 6], float(vals[j]), labels[k, j])


def cmd_solve(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    if args.dt is not None:
        cfg["model"]["decision_dt"] = args.dt
    if args.horizon is not None:
        cfg["model"]["horizon"] = args.horizon
    model, regen, mc, system, payoff, impact, surface, policy = _solve(
        cfg, args.mode, args.transition, args.qbef)
    outputs = []
    for path, name in ((args.policy_out, "policy"), (args.value_out, "value")):
        if path:
            _write_csv(Path(path), _POLICY_HEADER, _policy_rows(system, surface, policy))
            outputs.append(str(path))
    out_dir = Path(args.policy_out or args.value_out or "solve-out").parent
    print(f"solved {system.n_states} states over {surface.n_epochs} epochs "
          f"({args.mode}, {surface.transition}); outputs: {outputs or 'none'}")
    return 0


def _parse_initial(text: str) -> AgentState:
    try:
        parts = [int(x) for x in text.split(",")]
        q_bef, q_a, q_aft, q2, p = parts
    except ValueError as exc:
        raise ConfigError([f"--initial must be 'q_bef,q_a,q_aft,q2,p', got {text!r}"])
    return AgentState(q_bef, q_a, q_aft, q2, max(q_a, 1), p, 0.0)


def _load_policy_csv(path: Path, system, mc) -> Policy:
    stances = None
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
    except FileNotFoundError as exc:
        raise DataError(str(exc))
    if not rows:
        raise DataError(f"policy file {path} is empty")
    n_ep = max(int(r["time_index"]) for r in rows) + 1
    stances = np.zeros((n_ep, system.n_states), dtype=np.int8)
    code = {"m": 3, "l": 1, "c": 2}
    for r in rows:
        key = (int(r["q_bef"]), int(r["q_a"]), int(r["q_aft"]), int(r["q2"]),
               int(r["inv"]), int(r["p_ticks"]), int(r["p_exec_halfticks"]))
        j = system.index.get(key)
        if j is None:
            raise DataError(f"policy row state {key} is not in the solved system")
        d = r["decision"]
        if d == "stay":
            stances[int(r["time_index"]), j] = 1 if int(r["q_a"]) > 0 else 2
        else:
            stances[int(r["time_index"]), j] = code[d]
    return Policy(regime="anytime", dt=mc.decision_dt, stances=stances)


def cmd_simulate(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    model, regen, mc, window, race, impact = _pipeline(cfg)
    system = build_controlled_generator(model, regen, mc, window)
    payoff = PayoffCalculator(impact, mc)
    if args.policy.startswith("baseline:"):
        name = args.policy.split(":", 1)[1]
        policy = baseline_policy({"join-bid": "join-bid", "market": "market"}
                                 .get(name, name), system, mc)
        policy.regime = args.regime
    else:
        policy = _load_policy_csv(Path(args.policy), system, mc)
        policy.regime = args.regime
    initial = _parse_initial(args.initial)
    stats = simulate_paths(model, regen, mc, impact, system, policy, initial,
                           args.paths, args.seed, regime=args.regime,
                           keep_arrays=True)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "gains.csv", ["path", "t_exec", "payoff", "cost"],
               ((j, float(stats.t_exec[j]), float(stats.gains[j]), float(stats.costs[j]))
                for j in range(stats.n_paths)))
    summary = {
        "mean_objective": stats.mean, "std": stats.std, "se": stats.se,
        "ci99_halfwidth": stats.ci99_halfwidth, "n_paths": stats.n_paths,
        "n_used": stats.n_used, "n_budget_exceeded": stats.n_budget_exceeded,
        "mean_exec_time": stats.mean_exec_time, "seed": args.seed,
        "regime": args.regime,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out_dir, "simulate",
                   {"paths": args.paths, "policy": args.policy,
                    "initial": args.initial, "regime": args.regime},
                   cfg, args.seed, {}, ["gains.csv", "summary.json"], started)
    print(f"mean objective {stats.mean:.6f} +- {stats.se:.6f} (1 se), "
          f"{stats.n_used}/{stats.n_paths} paths")
    return 0


def cmd_gen_synthetic(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    model, regen, mc = build_objects(cfg)
    frame, manifest = generate_synthetic_events(model, regen, args.n_events, args.seed,
                                                spread_ticks=max(
                                                    round(mc.spread / mc.tick), 1))
    out = Path(args.events_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events_csv(frame, out)
    sidecar = out.with_suffix(out.suffix + ".manifest.json")
    sidecar.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(frame)} events to {out}")
    return 0


def cmd_calibrate(args) -> int:
    started = time.time()
    try:
        frame = read_events_csv(args.events)
    except (FileNotFoundError, ModelError) as exc:
        raise DataError(str(exc))
    qmax = args.qmax or int(max(frame.q1.max(), frame.q2.max()))
    est = estimate_intensities(frame, qmax)
    if args.symmetrize:
        est = est.symmetrize()
    law, alpha = estimate_regeneration(frame, qmax, min_count=args.min_count)
    r = est.rates()
    out = {
        "schema": "lob-tactics/model-v1",
        "intensity": {"kind": "table", "qmax": qmax,
                      "table_bid_plus": r[0, 0, 1:, 1:, 1].tolist(),
                      "table_bid_cancel": r[0, 1, 1:, 1:, 1].tolist(),
                      "table_bid_market": r[0, 2, 1:, 1:, 1].tolist()},
        "regeneration": {"kind": "table", "bid": _law_rows(law, 1), "ask": _law_rows(law, 2)},
        "model": {"tick": 1.0, "spread": float(np.median(frame.spread)),
                  "horizon": 10.0, "decision_dt": 1.0},
        "estimation": {
            "n_events": len(frame), "symmetrized": bool(args.symmetrize),
            "empty_buckets": est.empty_buckets[:50], "alpha": alpha,
        },
    }
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n")
    stats = imbalance_stats(frame, [min(10.0, float(frame.t[-1]) / 10.0)])
    print(f"calibrated {qmax}x{qmax} grid from {len(frame)} events; "
          f"mean signed imbalance before trades: "
          f"{stats['mean_imbalance_by_type']['market']:.3f}")
    return 0


def _law_rows(law, side):
    rows = []
    q1s, q2s, dps, ps = law.outcomes(side, 1, 1)
    for a, b, dp, p in zip(q1s, q2s, dps, ps):
        rows.append({"q1": int(a), "q2": int(b), "dp": int(dp), "prob": float(p)})
    return rows


def cmd_check_ergodicity(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    model, regen, mc = build_objects(cfg)
    report = check_assumptions(model, regen)
    ly = lyapunov_drift(model, regen, z=args.z, c_bound_prime=args.c_bound)
    horizons = [1.0, 5.0, 10.0, 25.0, 50.0, 100.0, 200.0]
    mid = max(1, model.qmax // 2)
    conv = convergence_diagnostics(model, regen, horizons,
                                   [(1, model.qmax), (mid, mid)])
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "assumptions": {k: {"holds": a.holds, "witness": a.witness, "detail": a.detail}
                        for k, a in report.assumptions.items()},
        "all_hold": report.all_hold,
        "lyapunov": {"z": ly.z, "c_bound_prime": ly.c_bound_prime, "c": ly.c,
                     "d": ly.d, "holds": ly.holds,
                     "max_margin": float(ly.margins.max())},
        "convergence": {str(k): {"tv": list(map(float, v)),
                                 "decay_rate": conv.decay_rate[k]}
                        for k, v in conv.tv.items()},
        "horizons": horizons,
    }
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2) + "\n")
    _write_csv(out_dir / "margins.csv", ["q1", "q2", "V", "QV", "margin"],
               ((s[0], s[1], float(ly.v[j]), float(ly.qv[j]), float(ly.margins[j]))
                for j, s in enumerate(ly.states)))
    write_manifest(out_dir, "check-ergodicity", {"z": args.z, "c_bound": args.c_bound},
                   cfg, None, {}, ["report.json", "margins.csv"], started)
    print(f"assumptions hold: {report.all_hold}; "
          f"drift certificate holds: {ly.holds} (c={ly.c:.4g}, d={ly.d:.4g})")
    return 0 if (report.all_hold and ly.holds) else 3


def cmd_reproduce_figure(args) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.name == "fig5":
        cfg = builtin_config("fig5")
        return _reproduce_fig5(cfg, out_dir, args, started)
    if args.name == "fig4-shape":
        cfg = _load_cfg(args) if (args.config or args.builtin) else builtin_config("fig4")
        return _reproduce_fig4(cfg, out_dir, args, started)
    raise ConfigError([f"unknown figure {args.name!r}"])


def fig5_initial_states(qmax: int, qbef: int):
    """The 21 imbalance scenarios: full bid against every ask, then the mirror.

    The requested queue position is clamped when the bid is too small to hold
    that many orders ahead of the agent.
    """
    combos = [(qmax, q2) for q2 in range(1, qmax + 1)]
    combos += [(q1, qmax) for q1 in range(qmax - 1, 0, -1)]
    out = []
    for (q1, q2) in combos:
        b = min(qbef, q1 - 1)
        out.append(AgentState(b, 1, q1 - 1 - b, q2, 1, 0, 0.0))
    return out


def _reproduce_fig5(cfg, out_dir, args, started) -> int:
    model, regen, mc, window, race, impact = _pipeline(cfg)
    system = build_controlled_generator(model, regen, mc, window)
    payoff = PayoffCalculator(impact, mc)
    surface, policy = solve_any_time_discrete(system, payoff, mc)
    join = value_of_fixed_policy("join-bid", system, payoff, mc, regime="anytime")
    labels = policy.labels(system)
    rows = []
    for st in fig5_initial_states(model.qmax, args.qbef):
        key = (st.q_bef, st.q_a, st.q_aft, st.q2, st.inv, st.p, 0)
        j = system.index[key]
        imb = (st.q1 - st.q2) / (st.q1 + st.q2)
        rows.append((imb, st.q1, st.q2, float(surface.initial[j]),
                     float(join.initial[j]), labels[0, j]))
    rows.sort(key=lambda r: r[0])
    _write_csv(out_dir / "fig5.csv",
               ["imbalance", "q1", "q2", "optimal_value", "join_bid_value",
                "initial_decision"], rows)
    gaps = [r[3] - r[4] for r in rows]
    summary = {"n_states": len(rows), "min_gap": min(gaps), "max_gap": max(gaps),
               "dominance_ok": bool(min(gaps) >= -1e-10),
               "decisions": sorted({r[5] for r in rows}),
               "wall_clock_s": round(time.time() - started, 3)}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out_dir, "reproduce-figure", {"name": "fig5", "qbef": args.qbef},
                   cfg, None, {}, ["fig5.csv", "summary.json"], started)
    print(f"fig5: {len(rows)} scenarios, min optimal-joinbid gap {min(gaps):.2e}, "
          f"initial decisions {summary['decisions']}")
    return 0 if summary["dominance_ok"] else 3


def _reproduce_fig4(cfg, out_dir, args, started) -> int:
    model, regen, mc, window, race, impact = _pipeline(cfg)
    system = build_controlled_generator(model, regen, mc, window)
    payoff = PayoffCalculator(impact, mc)
    surface, policy = solve_fixed_frequency(system, payoff, mc)
    join = value_of_fixed_policy("join-bid", system, payoff, mc, regime="fixed")
    qbef = args.qbef
    rows = []
    worst = math.inf
    for q1 in range(1 + qbef, model.qmax + 1):
        for q2 in range(1, model.qmax + 1):
            key = (qbef, 1, q1 - 1 - qbef, q2, 1, 0, 0)
            j = system.index[key]
            diff = float(surface.initial[j] - join.initial[j])
            worst = min(worst, diff)
            rows.append((q1, q2, float(surface.initial[j]), float(join.initial[j]), diff))
    _write_csv(out_dir / "fig4_shape.csv",
               ["q1", "q2", "optimal_value", "join_bid_value", "difference"], rows)
    summary = {"min_difference": worst, "nonnegative": bool(worst >= -1e-10),
               "n_states": len(rows)}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out_dir, "reproduce-figure", {"name": "fig4-shape", "qbef": qbef},
                   cfg, None, {}, ["fig4_shape.csv", "summary.json"], started)
    print(f"fig4-shape: min(optimal - join-bid) = {worst:.3e} over {len(rows)} states")
    return 0 if worst >= -1e-10 else 3


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lob-tactics",
                                 description="order book tactics toolkit")
    ap.add_argument("--threads", type=int,
                    default=int(os.environ.get("LOB_TACTICS_THREADS", "0")),
                    help="worker threads for the simulation kernels (0 = default)")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_cfg(p):
        p.add_argument("--config", help="model configuration file (json/toml)")
        p.add_argument("--builtin", help="use a shipped configuration (fig5, fig4)")

    p = sub.add_parser("validate-config", help="check and echo a configuration")
    p.add_argument("config")
    p.set_defaults(fn=cmd_validate_config)

    p = sub.add_parser("impact", help="long-run mid move surface")
    add_cfg(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_impact)

    p = sub.add_parser("solve", help="backward-solve the optimal tactic")
    add_cfg(p)
    p.add_argument("--mode", choices=["fixed", "anytime"], default="anytime")
    p.add_argument("--transition", choices=["exp", "fd"], default="exp")
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--qbef", type=int, default=0)
    p.add_argument("--policy-out")
    p.add_argument("--value-out")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo a tactic")
    add_cfg(p)
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", required=True,
                   help="policy.csv or baseline:join-bid / baseline:market")
    p.add_argument("--initial", required=True, help="q_bef,q_a,q_aft,q2,p")
    p.add_argument("--regime", choices=["fixed", "anytime"], default="anytime")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic event stream")
    add_cfg(p)
    p.add_argument("--events-out", required=True)
    p.add_argument("--n-events", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_synthetic)

    p = sub.add_parser("calibrate", help="estimate a model from an event stream")
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--symmetrize", action="store_true")
    p.add_argument("--min-count", type=int, default=30)
    p.add_argument("--qmax", type=int)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("check-ergodicity", help="stability and convergence report")
    add_cfg(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--z", type=float, default=1.2)
    p.add_argument("--c-bound", type=int, default=1)
    p.set_defaults(fn=cmd_check_ergodicity)

    p = sub.add_parser("reproduce-figure", help="run a shipped experiment recipe")
    p.add_argument("name", choices=["fig5", "fig4-shape"])
    add_cfg(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--qbef", type=int, default=0)
    p.set_defaults(fn=cmd_reproduce_figure)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads and args.threads > 0:
        _kernels.set_threads(args.threads)
    try:
        return args.fn(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4
    except ModelError as exc:
        print(f"numeric/model error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
