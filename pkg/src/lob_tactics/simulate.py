"""Event-driven Monte Carlo of the book and of policy-driven executions.

Sampling is exact for the jump process: competing exponentials with the
redraw drawn atomically with the depleting event.  Paths own counter-based
random streams, so results are reproducible for a given seed whatever the
backend or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels, _rng
from .dp import STANCE_C, STANCE_L, STANCE_M, Policy
from .generator import ControlledSystem, agent_market_events, apply_control, market_order_outcomes
from .impact import ImpactSolution, terminal_payoff_g
from .model import (ASK, BID, AgentState, IntensityModel, ModelConfig, ModelError,
                    RegenerationLaw)


def rate_tables(model: IntensityModel, q1_cap: int | None = None):
    """Kernel-ready rate tables, extended above the cap so an agent-overfilled
    bid keeps draining (no arrivals, consumption frozen at the cap row)."""
    qmax = model.qmax
    cap = qmax if q1_cap is None else int(q1_cap)
    shape = (cap + 1, qmax + 1, model.n_max + 1)

    def extend(tab, arrivals):
        out = np.zeros(shape)
        out[: qmax + 1] = tab
        if cap > qmax and not arrivals:
            out[qmax + 1:] = tab[qmax]
        return out

    return (extend(model.bid_plus, True),
            extend(model.bid_cancel, False),
            extend(model.bid_market, False),
            extend(model.ask_plus, False),
            extend(model.ask_cancel, False),
            extend(model.ask_market, False))


def regen_pack(regen: RegenerationLaw, q1_cap: int | None = None):
    """Flat regeneration arrays with cumulative probabilities for sampling."""
    qmax = regen.qmax
    cap = qmax if q1_cap is None else int(q1_cap)
    start = np.zeros((2, cap + 1, qmax + 1), dtype=np.int64)
    count = np.zeros_like(start)
    start[:, : qmax + 1] = regen.start
    count[:, : qmax + 1] = regen.count
    if cap > qmax:
        start[:, qmax + 1:] = regen.start[:, qmax][:, None]
        count[:, qmax + 1:] = regen.count[:, qmax][:, None]
    cum = np.zeros_like(regen.out_prob)
    for side in (0, 1):
        pass
    # cumulative sums are per outcome slice; slices may be shared
    seen = set()
    for side in (0, 1):
        for q1 in range(qmax + 1):
            for q2 in range(qmax + 1):
                s = int(regen.start[side, q1, q2])
                c = int(regen.count[side, q1, q2])
                if c and (s, c) not in seen:
                    seen.add((s, c))
                    cum[s: s + c] = np.cumsum(regen.out_prob[s: s + c])
    return (start, count, regen.out_q1.copy(), regen.out_q2.copy(),
            regen.out_dp.copy(), cum, regen.out_prob.copy())


# ---------------------------------------------------------------------------
# market-only simulation


@dataclass
class MarketSample:
    """Per-path terminal snapshots of a market-only run."""

    q1: np.ndarray
    q2: np.ndarray
    p_shift: np.ndarray
    n_events: np.ndarray
    n_regens: np.ndarray
    seed: int

    def distribution(self, qmax: int) -> np.ndarray:
        """Empirical joint law of (q1, q2), padded like the model tables."""
        out = np.zeros((qmax + 1, qmax + 1))
        np.add.at(out, (np.minimum(self.q1, qmax), np.minimum(self.q2, qmax)), 1.0)
        return out / len(self.q1)


def simulate_market_only(model: IntensityModel, regen: RegenerationLaw,
                         q1_0: int, q2_0: int, n_paths: int, seed: int,
                         horizon_events: int | None = None,
                         horizon_time: float | None = None) -> MarketSample:
    """Run the book alone and return terminal snapshots per path."""
    if horizon_events is None and horizon_time is None:
        raise ModelError("give horizon_events and/or horizon_time")
    max_ev = int(horizon_events) if horizon_events is not None else 10 ** 9
    max_t = float(horizon_time) if horizon_time is not None else math.inf
    tabs = rate_tables(model)
    pack = regen_pack(regen)
    out = _kernels.market_paths(seed, n_paths, q1_0, q2_0, max_ev, max_t, tabs, pack)
    return MarketSample(q1=out[:, 0], q2=out[:, 1], p_shift=out[:, 2],
                        n_events=out[:, 3], n_regens=out[:, 4], seed=seed)


def drift_mc_estimate(model, regen, q1_0, q2_0, n_paths, horizon_events, seed):
    """Monte Carlo mean long-run mid move (ticks) with its standard error."""
    sample = simulate_market_only(model, regen, q1_0, q2_0, n_paths, seed,
                                  horizon_events=horizon_events)
    shifts = sample.p_shift.astype(float)
    return float(shifts.mean()), float(shifts.std(ddof=1) / math.sqrt(n_paths))


def race_mc(model: IntensityModel, q1_0: int, q2_0: int, n_paths: int, seed: int,
            max_events: int = 10 ** 6):
    """Sample the depletion race; returns (side, pre_q1, pre_q2) arrays."""
    tabs = rate_tables(model)
    out = _kernels.race_paths(seed, n_paths, q1_0, q2_0, max_events, tabs)
    if np.any(out[:, 0] == 0):
        raise ModelError("some race paths did not absorb within the event budget")
    return out[:, 0], out[:, 1], out[:, 2]


# ---------------------------------------------------------------------------
# policy simulation


@dataclass
class GainStats:
    """Realised objective of a tactic over independent paths."""

    n_paths: int
    n_used: int
    mean: float
    std: float
    se: float
    mean_exec_time: float
    n_budget_exceeded: int
    seed: int
    gains: np.ndarray = field(repr=False, default=None)
    costs: np.ndarray = field(repr=False, default=None)
    t_exec: np.ndarray = field(repr=False, default=None)

    @property
    def ci99_halfwidth(self) -> float:
        return 2.576 * self.se


def policy_lookup_table(system: ControlledSystem) -> tuple[np.ndarray, int]:
    """Dense (posted, q_bef, q_aft, q2, layer) -> state row map for the kernels."""
    K = system.price_window
    n_layers = 2 * K + 1
    cap = system.q1_cap
    qmax = cap - system.order_size
    lut = np.full((2, cap + 1, cap + 1, qmax + 1, n_layers), -1, dtype=np.int64)
    st = system.states
    posted = (st[:, 1] > 0).astype(np.int64)
    lut[posted, st[:, 0], st[:, 2], st[:, 3], st[:, 5] + K] = np.arange(system.n_states)
    return lut, K


def simulate_paths(model: IntensityModel, regen: RegenerationLaw, cfg: ModelConfig,
                   impact: ImpactSolution, system: ControlledSystem, policy: Policy,
                   initial: AgentState, n_paths: int, seed: int,
                   regime: str | None = None, max_events: int | None = None,
                   keep_arrays: bool = False) -> GainStats:
    """Monte Carlo value of a tactic from a fixed initial state.

    The per-path objective is the liquidation value at the execution time less
    the accrued waiting cost, mirroring the backward recursion of the matching
    regime exactly (so the comparison against the solved value is unbiased).
    """
    regime = regime or policy.regime
    if cfg.order_size != 1 or system.order_size != 1:
        return _simulate_paths_python(model, regen, cfg, impact, system, policy,
                                      initial, n_paths, seed, regime, max_events,
                                      keep_arrays)
    initial.validate()
    tabs = rate_tables(model, system.q1_cap)
    pack = regen_pack(regen, system.q1_cap)
    lut, K = policy_lookup_table(system)
    if max_events is None:
        flow = 2.0 * model.flow_bound()
        max_events = int(50 + 20 * flow * cfg.horizon)
    clip_lo = cfg.payoff.lo if cfg.payoff.kind == "clip" else -math.inf
    clip_hi = cfg.payoff.hi if cfg.payoff.kind == "clip" else math.inf
    scalars = (cfg.tick, cfg.spread / 2.0, cfg.impact_alpha, cfg.wait_cost,
               clip_lo, clip_hi)
    init = (initial.q_bef, initial.q_a, initial.q_aft, initial.q2, initial.p,
            initial.p_exec)
    gains, costs, t_exec, n_ev, status = _kernels.controlled_paths(
        seed, n_paths, init, policy.stances.shape[0], cfg.decision_dt, cfg.horizon,
        regime == "anytime", scalars, tabs, pack, impact.drift, model.qmax,
        policy.stances, lut, K, max_events)
    if np.any(status == _kernels.STATUS_POLICY_MISS):
        j = int(np.nonzero(status == _kernels.STATUS_POLICY_MISS)[0][0])
        raise ModelError(f"policy has no entry for a state reached on path {j}; "
                         "was it solved on a compatible system?")
    ok = status == _kernels.STATUS_OK
    objective = gains[ok] - costs[ok]
    n_used = int(ok.sum())
    return GainStats(
        n_paths=n_paths, n_used=n_used,
        mean=float(objective.mean()) if n_used else math.nan,
        std=float(objective.std(ddof=1)) if n_used > 1 else math.nan,
        se=float(objective.std(ddof=1) / math.sqrt(n_used)) if n_used > 1 else math.nan,
        mean_exec_time=float(t_exec[ok].mean()) if n_used else math.nan,
        n_budget_exceeded=int((~ok).sum()), seed=seed,
        gains=gains if keep_arrays else None,
        costs=costs if keep_arrays else None,
        t_exec=t_exec if keep_arrays else None)


# ---------------------------------------------------------------------------
# reference python path (any order size; also used for event logs)


@dataclass
class SimPath:
    """Full event log of one controlled path."""

    seed: int
    events: list
    t_exec: float
    gain: float
    cost: float
    objective: float


def _sample_outcome(rng_state, outcomes):
    total = sum(r for (r, _, _) in outcomes)
    rng_state, u = _rng.splitmix_next(rng_state)
    dt = -math.log(1.0 - u) / total
    rng_state, u = _rng.splitmix_next(rng_state)
    r = u * total
    acc = 0.0
    for (rate, nxt, filled) in outcomes:
        acc += rate
        if r < acc:
            return rng_state, dt, nxt, filled
    return rng_state, dt, outcomes[-1][1], outcomes[-1][2]


def _policy_row(system: ControlledSystem, st: AgentState, half_tick: float) -> int:
    K = system.price_window
    lay = min(max(st.p, -K), K)
    key = (st.q_bef, st.q_a, st.q_aft, st.q2, st.inv, lay, round(st.p_exec / half_tick))
    row = system.index.get(key)
    if row is None:
        raise ModelError(f"policy undefined on reached state {st}")
    return row


def simulate_one_path(model, regen, cfg, impact, system, policy, initial: AgentState,
                      seed: int, path_index: int = 0, regime: str | None = None,
                      max_events: int = 100000) -> SimPath:
    """Single-path reference simulation with an event log (any order size)."""
    regime = regime or policy.regime
    anytime = regime == "anytime"
    rng = _rng.splitmix_init(seed, path_index)
    st = initial
    t = 0.0
    cost = 0.0
    events = []
    n_ep = policy.stances.shape[0]
    gain = None
    t_exec = cfg.horizon
    fill_time = None

    for k in range(n_ep):
        if st.inv > 0:
            row = _policy_row(system, st, cfg.half_tick)
            stance = int(policy.stances[k, row])
            if stance == STANCE_M:
                gain = terminal_payoff_g(st, impact, cfg)
                t_exec = k * cfg.decision_dt
                if not anytime:
                    cost = cfg.wait_cost * cfg.order_size * t_exec
                events.append((t, "decide-m", 0, 0, st, st))
                break
            if stance == STANCE_L and not st.posted:
                nxt = apply_control(st, "l", cfg, regen)[0][0]
                events.append((t, "decide-l", 0, 0, st, nxt))
                st = nxt
            elif stance == STANCE_C and st.posted:
                outs = apply_control(st, "c", cfg, regen)
                rng, _, st2 = _pick_weighted(rng, outs)
                events.append((t, "decide-c", 0, 0, st, st2))
                st = st2
        t_end = min((k + 1) * cfg.decision_dt, cfg.horizon)
        if anytime and st.inv > 0:
            cost += cfg.wait_cost * cfg.order_size * (t_end - k * cfg.decision_dt)
        while True:
            outcomes = agent_market_events(model, regen, cfg, st)
            if len(events) > max_events:
                raise ModelError("event budget exceeded")
            total = sum(r for (r, _, _) in outcomes)
            if total <= 0.0:
                t = t_end
                break
            rng, dt, nxt, filled = _sample_outcome(rng, outcomes)
            if t + dt > t_end:
                t = t_end
                break
            t += dt
            events.append((t, "flow", filled, 0, st, nxt))
            st = nxt
            if st.inv == 0 and fill_time is None:
                fill_time = t
                if not anytime:
                    gain = terminal_payoff_g(st, impact, cfg)
                    t_exec = t
                    cost = cfg.wait_cost * cfg.order_size * t
                    break
        if gain is not None:
            break
        if anytime and st.inv == 0:
            gain = terminal_payoff_g(st, impact, cfg)
            t_exec = fill_time
            break

    if gain is None:
        gain = terminal_payoff_g(st, impact, cfg)
        t_exec = cfg.horizon
        if not anytime:
            cost = cfg.wait_cost * cfg.order_size * cfg.horizon
    return SimPath(seed=seed, events=events, t_exec=t_exec, gain=gain, cost=cost,
                   objective=gain - cost)


def _pick_weighted(rng, outs):
    rng, u = _rng.splitmix_next(rng)
    acc = 0.0
    for (nxt, pr) in outs:
        acc += pr
        if u < acc:
            return rng, u, nxt
    return rng, u, outs[-1][0]


def _simulate_paths_python(model, regen, cfg, impact, system, policy, initial,
                           n_paths, seed, regime, max_events, keep_arrays) -> GainStats:
    gains = np.zeros(n_paths)
    costs = np.zeros(n_paths)
    t_exec = np.zeros(n_paths)
    bad = 0
    for j in range(n_paths):
        try:
            p = simulate_one_path(model, regen, cfg, impact, system, policy, initial,
                                  seed, j, regime, max_events or 100000)
        except ModelError:
            bad += 1
            gains[j] = math.nan
            continue
        gains[j] = p.gain
        costs[j] = p.cost
        t_exec[j] = p.t_exec
    ok = ~np.isnan(gains)
    objective = gains[ok] - costs[ok]
    n_used = int(ok.sum())
    return GainStats(n_paths=n_paths, n_used=n_used,
                     mean=float(objective.mean()) if n_used else math.nan,
                     std=float(objective.std(ddof=1)) if n_used > 1 else math.nan,
                     se=float(objective.std(ddof=1) / math.sqrt(n_used)) if n_used > 1 else math.nan,
                     mean_exec_time=float(t_exec[ok].mean()) if n_used else math.nan,
                     n_budget_exceeded=bad, seed=seed,
                     gains=gains if keep_arrays else None,
                     costs=costs if keep_arrays else None,
                     t_exec=t_exec if keep_arrays else None)
