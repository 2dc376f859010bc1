"""Backward solvers for the optimal tactic, in both decision regimes.

Between decisions the value propagates through the market flow with the
execution channel paying the liquidation value and stopping the waiting cost;
the propagation uses uniformization, which keeps probabilities exact to the
series truncation.  At decision epochs the value is the coordinate-wise best
of being posted, being out of the book, or liquidating now; ties resolve
toward the most immediate action (market over post over pull).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .generator import ControlledSystem
from .impact import PayoffCalculator
from .model import ModelConfig, ModelError

log = logging.getLogger(__name__)

STANCE_L = 1
STANCE_C = 2
STANCE_M = 3

_TIE_ATOL = 1e-12


class UniformizedPropagator:
    """Action of the killed-flow semigroup plus its running-reward integral.

    ``step(v, w, dt)`` returns ``exp(dt Q) v + int_0^dt exp(s Q) w ds`` for a
    sub-generator ``Q`` (row sums <= 0; the deficit is the execution outflow).
    """

    def __init__(self, Q: sp.csr_matrix, tol: float = 1e-12):
        self.Q = Q
        self.tol = tol
        diag = Q.diagonal()
        self.rate = float(max(-diag.min(), 0.0))
        n = Q.shape[0]
        if self.rate > 0.0:
            self.P = (sp.identity(n, format="csr") + Q * (1.0 / self.rate)).tocsr()
        else:
            self.P = sp.identity(n, format="csr")
        self.max_terms_used = 0
        self.max_tail = 0.0

    def step(self, v_end: np.ndarray, w: np.ndarray, dt: float) -> np.ndarray:
        if dt <= 0.0:
            return v_end.copy()
        lam = self.rate
        if lam == 0.0:
            return v_end + dt * w
        m = lam * dt
        if m > 600.0:  # keep the series start representable
            half = self.step(v_end, w, dt / 2.0)
            return self.step(half, w, dt / 2.0)
        pmf = math.exp(-m)
        cum = pmf
        x = v_end.copy()
        y = w.copy()
        acc_v = pmf * x
        acc_w = (1.0 - cum) * y
        k = 0
        # stop once both the pmf tail and the integral-weight tail are spent
        tail_budget = m  # sum over k of P(N > k)
        tail_spent = 1.0 - cum
        while (1.0 - cum) > self.tol or (tail_budget - tail_spent) > self.tol:
            k += 1
            if k > 100000:
                raise ModelError("uniformization series failed to converge")
            x = self.P @ x
            pmf *= m / k
            cum += pmf
            acc_v += pmf * x
            y = self.P @ y
            tail = 1.0 - cum
            acc_w += tail * y
            tail_spent += tail
        self.max_terms_used = max(self.max_terms_used, k)
        self.max_tail = max(self.max_tail, 1.0 - cum)
        return acc_v + acc_w / lam


@dataclass
class ValueSurface:
    """Backward-solved values: one row per decision epoch plus the terminal row."""

    regime: str                    # 'fixed' or 'anytime'
    dt: float
    horizon: float
    epoch_times: np.ndarray
    post_decision: np.ndarray      # (n_epochs, n) value right at each epoch
    continuation: np.ndarray       # (n_epochs, n) value just after each epoch
    terminal: np.ndarray
    transition: str = "exp"
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_epochs(self) -> int:
        return len(self.epoch_times)

    @property
    def initial(self) -> np.ndarray:
        return self.post_decision[0] if self.n_epochs else self.terminal


@dataclass
class Policy:
    """Chosen stance per (epoch, state); 1 = posted, 2 = out of book, 3 = liquidate."""

    regime: str
    dt: float
    stances: np.ndarray            # (n_epochs, n) int8
    tie_counts: dict = field(default_factory=dict)

    def labels(self, system: ControlledSystem) -> np.ndarray:
        """Render actions: a stance matching the current one reads as 'stay'."""
        posted = system.posted_mask
        out = np.full(self.stances.shape, "stay", dtype=object)
        out[(self.stances == STANCE_L) & ~posted[None, :]] = "l"
        out[(self.stances == STANCE_C) & posted[None, :]] = "c"
        out[self.stances == STANCE_M] = "m"
        return out


def _epoch_times(cfg: ModelConfig) -> np.ndarray:
    n = int(math.ceil(cfg.horizon / cfg.decision_dt - 1e-9))
    return np.arange(max(n, 0)) * cfg.decision_dt


def _decision_rows(system: ControlledSystem, v_cont: np.ndarray, g: np.ndarray):
    row_l = v_cont[system.l_target]
    row_c = system.c_map @ v_cont
    return row_l, row_c, g


def _argmax_stances(row_l, row_c, row_m):
    best = np.maximum(np.maximum(row_l, row_c), row_m)
    tie = _TIE_ATOL * (1.0 + np.abs(best))
    stance = np.full(best.shape, STANCE_C, dtype=np.int8)
    stance[row_l >= best - tie] = STANCE_L
    stance[row_m >= best - tie] = STANCE_M
    n_ties = int(np.sum((row_l >= best - tie).astype(int)
                        + (row_c >= best - tie).astype(int)
                        + (row_m >= best - tie).astype(int) > 1))
    return best, stance, n_ties


def solve_fixed_frequency(system: ControlledSystem, payoff: PayoffCalculator,
                          cfg: ModelConfig, explicit_stay: bool = False,
                          tol: float = 1e-12):
    """Decisions on the fixed grid, exact flow and cost accrual in between."""
    g = payoff.live_values(system)
    gtilde = payoff.fill_payoff_rate(system)
    w = gtilde - cfg.wait_cost * cfg.order_size
    prop = UniformizedPropagator(system.matrix, tol=tol)

    times = _epoch_times(cfg)
    n_ep = len(times)
    n = system.n_states
    cont = np.zeros((n_ep, n))
    post = np.zeros((n_ep, n))
    stances = np.zeros((n_ep, n), dtype=np.int8)
    ties = {}

    v = g.copy()
    prev_t = cfg.horizon
    for k in range(n_ep - 1, -1, -1):
        v = prop.step(v, w, prev_t - times[k])
        cont[k] = v
        row_l, row_c, row_m = _decision_rows(system, v, g)
        if explicit_stay:
            # redundant under stance semantics; kept to compare the readings
            stay = v
            row_l = np.maximum(row_l, np.where(system.posted_mask, stay, row_l))
            row_c = np.maximum(row_c, np.where(system.posted_mask, row_c, stay))
        v, st, n_tie = _argmax_stances(row_l, row_c, row_m)
        post[k] = v
        stances[k] = st
        ties[k] = n_tie
        prev_t = times[k]

    surface = ValueSurface(regime="fixed", dt=cfg.decision_dt, horizon=cfg.horizon,
                           epoch_times=times, post_decision=post, continuation=cont,
                           terminal=g,
                           diagnostics={"clamped_rate": system.clamped_rate,
                                        "series_terms": prop.max_terms_used,
                                        "series_tail": prop.max_tail})
    policy = Policy(regime="fixed", dt=cfg.decision_dt, stances=stances, tie_counts=ties)
    return surface, policy


def solve_any_time_discrete(system: ControlledSystem, payoff: PayoffCalculator,
                            cfg: ModelConfig, transition: str = "exp",
                            tol: float = 1e-12):
    """Per-period chain approximation of the act-whenever problem.

    Each period charges a flat waiting cost and the state moves through the
    one-period transition, either the exact exponential or its first-order
    difference approximation.
    """
    if transition not in ("exp", "fd"):
        raise ModelError(f"unknown transition mode {transition!r}")
    g = payoff.live_values(system)
    gtilde = payoff.fill_payoff_rate(system)
    prop = UniformizedPropagator(system.matrix, tol=tol)
    if transition == "fd" and prop.rate * cfg.decision_dt > 1.0 + 1e-12:
        raise ModelError(
            f"difference transition needs dt <= {1.0 / prop.rate:.6g} "
            f"(total outflow {prop.rate:.6g}); got {cfg.decision_dt}")

    times = _epoch_times(cfg)
    n_ep = len(times)
    n = system.n_states
    cont = np.zeros((n_ep, n))
    post = np.zeros((n_ep, n))
    stances = np.zeros((n_ep, n), dtype=np.int8)
    ties = {}
    cq = cfg.wait_cost * cfg.order_size

    v = g.copy()
    for k in range(n_ep - 1, -1, -1):
        dt_k = min(cfg.horizon, (k + 1) * cfg.decision_dt) - times[k]
        if transition == "exp":
            pv = prop.step(v, gtilde, dt_k)
        else:
            pv = v + dt_k * (system.matrix @ v + gtilde)
        cont[k] = pv
        row_l, row_c, _ = _decision_rows(system, pv, g)
        v, st, n_tie = _argmax_stances(row_l - cq * dt_k, row_c - cq * dt_k, g)
        post[k] = v
        stances[k] = st
        ties[k] = n_tie

    surface = ValueSurface(regime="anytime", dt=cfg.decision_dt, horizon=cfg.horizon,
                           epoch_times=times, post_decision=post, continuation=cont,
                           terminal=g, transition=transition,
                           diagnostics={"clamped_rate": system.clamped_rate,
                                        "series_terms": prop.max_terms_used,
                                        "series_tail": prop.max_tail})
    policy = Policy(regime="anytime", dt=cfg.decision_dt, stances=stances, tie_counts=ties)
    return surface, policy


def extract_policy(surface: ValueSurface, system: ControlledSystem,
                   payoff: PayoffCalculator, cfg: ModelConfig) -> Policy:
    """Re-derive the argmax stances from a stored surface."""
    g = payoff.live_values(system)
    n_ep = surface.n_epochs
    stances = np.zeros((n_ep, system.n_states), dtype=np.int8)
    ties = {}
    cq = cfg.wait_cost * cfg.order_size
    for k in range(n_ep):
        row_l, row_c, _ = _decision_rows(system, surface.continuation[k], g)
        if surface.regime == "anytime":
            dt_k = min(cfg.horizon, (k + 1) * cfg.decision_dt) - surface.epoch_times[k]
            row_l = row_l - cq * dt_k
            row_c = row_c - cq * dt_k
        _, st, n_tie = _argmax_stances(row_l, row_c, g)
        stances[k] = st
        ties[k] = n_tie
    return Policy(regime=surface.regime, dt=surface.dt, stances=stances, tie_counts=ties)


def baseline_policy(name: str, system: ControlledSystem, cfg: ModelConfig) -> Policy:
    """Named reference tactics over the full epoch grid."""
    times = _epoch_times(cfg)
    shape = (len(times), system.n_states)
    if name in ("join-bid", "join-the-bid"):
        stances = np.full(shape, STANCE_L, dtype=np.int8)
    elif name in ("market", "always-market"):
        stances = np.full(shape, STANCE_M, dtype=np.int8)
    elif name in ("pull", "stay-out"):
        stances = np.full(shape, STANCE_C, dtype=np.int8)
    else:
        raise ModelError(f"unknown baseline {name!r}")
    return Policy(regime="anytime", dt=cfg.decision_dt, stances=stances)


def value_of_fixed_policy(policy, system: ControlledSystem, payoff: PayoffCalculator,
                          cfg: ModelConfig, regime: str | None = None,
                          transition: str = "exp", tol: float = 1e-12) -> ValueSurface:
    """Backward evaluation of a given tactic (no maximisation).

    ``policy`` may be a :class:`Policy` or a baseline name.
    """
    if isinstance(policy, str):
        policy = baseline_policy(policy, system, cfg)
        if regime is not None:
            policy.regime = regime
    regime = regime or policy.regime
    g = payoff.live_values(system)
    gtilde = payoff.fill_payoff_rate(system)
    prop = UniformizedPropagator(system.matrix, tol=tol)
    times = _epoch_times(cfg)
    n_ep = len(times)
    if policy.stances.shape[0] != n_ep or policy.stances.shape[1] != system.n_states:
        raise ModelError(
            f"policy grid {policy.stances.shape} does not match "
            f"{(n_ep, system.n_states)}; was it solved on this system?")
    cont = np.zeros((n_ep, system.n_states))
    post = np.zeros((n_ep, system.n_states))
    cq = cfg.wait_cost * cfg.order_size

    v = g.copy()
    prev_t = cfg.horizon
    for k in range(n_ep - 1, -1, -1):
        if regime == "fixed":
            pv = prop.step(v, gtilde - cq, prev_t - times[k])
            cost_l = cost_c = 0.0
        else:
            dt_k = min(cfg.horizon, (k + 1) * cfg.decision_dt) - times[k]
            if transition == "exp":
                pv = prop.step(v, gtilde, dt_k)
            else:
                pv = v + dt_k * (system.matrix @ v + gtilde)
            cost_l = cost_c = cq * dt_k
        cont[k] = pv
        row_l, row_c, row_m = _decision_rows(system, pv, g)
        st = policy.stances[k]
        v = np.where(st == STANCE_M, row_m,
                     np.where(st == STANCE_L, row_l - cost_l, row_c - cost_c))
        post[k] = v
        prev_t = times[k]

    return ValueSurface(regime=regime, dt=cfg.decision_dt, horizon=cfg.horizon,
                        epoch_times=times, post_decision=post, continuation=cont,
                        terminal=g, transition=transition,
                        diagnostics={"clamped_rate": system.clamped_rate})
