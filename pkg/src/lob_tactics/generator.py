"""Transition structure of the market and of the controlled agent state.

Builds rate matrices over enumerated states: the market book on a truncated
price-layer grid, its price-marginal over queue pairs, and the controlled
process around the agent's resting order.  Control applications (post, pull,
liquidate) are plain functions over :class:`AgentState`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .model import (ASK, BID, AgentState, BookState, IntensityModel, ModelConfig,
                    ModelError, RegenerationLaw, canonical_agent_state)

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-10


# ---------------------------------------------------------------------------
# market-only transitions


def market_transitions(model: IntensityModel, regen: RegenerationLaw, q1: int, q2: int):
    """All outgoing flows from a live book state as (q1', q2', dp, rate)."""
    out = []
    book = (q1, q2)
    for side in (BID, ASK):
        own = q1 if side == BID else q2
        for n in range(1, model.n_max + 1):
            rp = model.lam_plus(side, book, n)
            if rp > 0.0:
                if side == BID:
                    out.append((q1 + n, q2, 0, rp))
                else:
                    out.append((q1, q2 + n, 0, rp))
            rm = model.lam_minus(side, book, n)
            if rm > 0.0:
                if n < own:
                    if side == BID:
                        out.append((q1 - n, q2, 0, rm))
                    else:
                        out.append((q1, q2 - n, 0, rm))
                else:
                    q1s, q2s, dps, ps = regen.outcomes(side, q1, q2)
                    for a, b, dp, p in zip(q1s, q2s, dps, ps):
                        if p > 0.0:
                            out.append((int(a), int(b), int(dp), rm * float(p)))
    return out


@dataclass
class MarketGenerator:
    """Rate matrix of the book over (q1, q2, price layer) states."""

    states: np.ndarray            # (n, 3): q1, q2, layer offset in ticks
    matrix: sp.csr_matrix
    price_window: int
    clamped_rate: float           # total rate redirected onto boundary layers
    index: dict = field(repr=False)

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def row_sum_defect(self) -> float:
        return float(np.max(np.abs(self.matrix.sum(axis=1))))

    def state_index(self, q1: int, q2: int, layer: int) -> int:
        return self.index[(q1, q2, layer)]


def build_market_generator(model: IntensityModel, regen: RegenerationLaw,
                           price_window: int) -> MarketGenerator:
    """Assemble the conservative book generator on a +-price_window tick grid.

    Regeneration flow that would leave the window is folded onto the boundary
    layer; the redirected rate is reported, not dropped, so rows still sum to
    zero exactly.
    """
    _validate_pair(model, regen)
    qmax = model.qmax
    K = int(price_window)
    layers = 2 * K + 1
    n = qmax * qmax * layers
    if n > 10 ** 6:
        log.warning("market generator has %d states; expect heavy memory use", n)

    def sid(q1, q2, lay):
        return ((q1 - 1) * qmax + (q2 - 1)) * layers + (lay + K)

    states = np.zeros((n, 3), dtype=np.int64)
    index = {}
    for q1 in range(1, qmax + 1):
        for q2 in range(1, qmax + 1):
            for lay in range(-K, K + 1):
                j = sid(q1, q2, lay)
                states[j] = (q1, q2, lay)
                index[(q1, q2, lay)] = j

    rows, cols, vals = [], [], []
    clamped = 0.0
    for q1 in range(1, qmax + 1):
        for q2 in range(1, qmax + 1):
            trans = market_transitions(model, regen, q1, q2)
            tot = sum(r for (_, _, _, r) in trans)
            for lay in range(-K, K + 1):
                i = sid(q1, q2, lay)
                for (a, b, dp, r) in trans:
                    lay2 = lay + dp
                    if lay2 > K:
                        lay2 = K
                        clamped += r
                    elif lay2 < -K:
                        lay2 = -K
                        clamped += r
                    rows.append(i)
                    cols.append(sid(a, b, lay2))
                    vals.append(r)
                rows.append(i)
                cols.append(i)
                vals.append(-tot)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return MarketGenerator(states=states, matrix=mat, price_window=K,
                           clamped_rate=clamped, index=index)


def build_queue_generator(model: IntensityModel, regen: RegenerationLaw):
    """Price-marginal generator over (q1, q2); valid because rates and the
    redraw law do not depend on the mid price.  Returns (states, dense Q)."""
    _validate_pair(model, regen)
    qmax = model.qmax
    n = qmax * qmax

    def sid(q1, q2):
        return (q1 - 1) * qmax + (q2 - 1)

    states = [(q1, q2) for q1 in range(1, qmax + 1) for q2 in range(1, qmax + 1)]
    Q = np.zeros((n, n))
    for q1 in range(1, qmax + 1):
        for q2 in range(1, qmax + 1):
            i = sid(q1, q2)
            for (a, b, _dp, r) in market_transitions(model, regen, q1, q2):
                Q[i, sid(a, b)] += r
                Q[i, i] -= r
    return states, Q


def _validate_pair(model: IntensityModel, regen: RegenerationLaw) -> None:
    if regen.qmax != model.qmax:
        raise ModelError("intensity model and regeneration law disagree on the queue cap")
    if regen.q_tilde_max > model.qmax:
        raise ModelError("regeneration support exceeds the queue cap")


# ---------------------------------------------------------------------------
# control applications


def apply_control(state: AgentState, control: str, cfg: ModelConfig,
                  regen: RegenerationLaw) -> list[tuple[AgentState, float]]:
    """Apply a tactic decision; returns the resulting state distribution.

    ``l`` posts the whole remaining inventory behind the current bid queue,
    ``c`` pulls the resting order, ``m`` buys the remainder at the ask with a
    linear overflow impact.  Pulling or liquidating can empty the bid, in
    which case the book regenerates as a bid depletion.
    """
    state.validate()
    if control == "l":
        if state.q_a != 0:
            raise ModelError(f"cannot post twice: {state}")
        if state.inv <= 0:
            raise ModelError(f"nothing left to post: {state}")
        new = AgentState(state.q_bef + state.q_aft, state.inv, 0, state.q2,
                         state.inv, state.p, state.p_exec)
        return [(new, 1.0)]
    if control == "c":
        if state.q_a == 0:
            return [(state, 1.0)]
        merged = state.q_bef + state.q_aft
        if merged >= 1:
            return [(AgentState(merged, 0, 0, state.q2, state.inv, state.p, state.p_exec), 1.0)]
        out = []
        q1s, q2s, dps, ps = regen.outcomes(BID, state.q1, state.q2)
        for a, b, dp, p in zip(q1s, q2s, dps, ps):
            out.append((AgentState(int(a), 0, 0, int(b), state.inv,
                                   state.p + int(dp), state.p_exec), float(p)))
        return out
    if control == "m":
        if state.inv <= 0:
            raise ModelError(f"no inventory for a market order: {state}")
        return market_order_outcomes(state, cfg, regen)
    raise ModelError(f"unknown control {control!r}")


def market_order_outcomes(state: AgentState, cfg: ModelConfig,
                          regen: RegenerationLaw) -> list[tuple[AgentState, float]]:
    """Full liquidation now: cash update plus the post-trade book distribution."""
    i = state.inv
    overflow = max(i - state.q2, 0)
    cash = i * (state.p * cfg.tick + cfg.spread / 2.0 + cfg.impact_alpha * overflow)
    pe = state.p_exec + cash
    if i >= state.q2:
        out = []
        q1s, q2s, dps, ps = regen.outcomes(ASK, state.q1, state.q2)
        for a, b, dp, p in zip(q1s, q2s, dps, ps):
            out.append((AgentState(int(a), 0, 0, int(b), 0, state.p + int(dp), pe), float(p)))
        return out
    rest = state.q_bef + state.q_aft
    if rest >= 1:
        return [(AgentState(rest, 0, 0, state.q2 - i, 0, state.p, pe), 1.0)]
    out = []
    q1s, q2s, dps, ps = regen.outcomes(BID, state.q1, state.q2)
    for a, b, dp, p in zip(q1s, q2s, dps, ps):
        out.append((AgentState(int(a), 0, 0, int(b), 0, state.p + int(dp), pe), float(p)))
    return out


def terminal_liquidation(state: AgentState, cfg: ModelConfig,
                         regen: RegenerationLaw) -> list[tuple[AgentState, float]]:
    """Forced end-of-horizon liquidation; same arithmetic as the market control."""
    if state.inv == 0:
        pulled = state if state.q_a == 0 else apply_control(state, "c", cfg, regen)[0][0]
        return [(pulled, 1.0)]
    return market_order_outcomes(state, cfg, regen)


# ---------------------------------------------------------------------------
# controlled generator


def agent_market_events(model: IntensityModel, regen: RegenerationLaw,
                        cfg: ModelConfig, state: AgentState,
                        ) -> list[tuple[float, AgentState, int]]:
    """Market flow out of a controlled state as (rate, new state, units filled).

    Cancellations by other participants never touch the agent's order and eat
    the volume behind it first; market orders eat the volume ahead first and
    fill the agent at the bid price.
    """
    out = []
    b, a, f, q2 = state.q_bef, state.q_a, state.q_aft, state.q2
    i, p, pe = state.inv, state.p, state.p_exec
    q1 = b + a + f
    book = (q1, q2)
    fill_px = p * cfg.tick - cfg.spread / 2.0
    for n in range(1, model.n_max + 1):
        r = model.lam_plus(BID, book, n)
        if r > 0.0:
            if a > 0:
                out.append((r, AgentState(b, a, f + n, q2, i, p, pe), 0))
            else:
                out.append((r, AgentState(b + n, 0, 0, q2, i, p, pe), 0))

        r = model.lam_plus(ASK, book, n)
        if r > 0.0:
            out.append((r, canonical_agent_state(b, a, f, q2 + n, i, p, pe), 0))

        r = model.lam_minus_cancel(BID, book, n)
        if r > 0.0:
            if a > 0:
                cancellable = b + f
                if n >= cancellable:
                    out.append((r, AgentState(0, a, 0, q2, i, p, pe), 0))
                elif n <= f:
                    out.append((r, AgentState(b, a, f - n, q2, i, p, pe), 0))
                else:
                    out.append((r, AgentState(b + f - n, a, 0, q2, i, p, pe), 0))
            else:
                if n >= q1:
                    for (a2, b2, dp, pr) in _regen_iter(regen, BID, q1, q2):
                        out.append((r * pr, AgentState(a2, 0, 0, b2, i, p + dp, pe), 0))
                else:
                    out.append((r, AgentState(q1 - n, 0, 0, q2, i, p, pe), 0))

        r = model.lam_minus_market(BID, book, n)
        if r > 0.0:
            if n >= q1:
                filled = a
                pe2 = pe + filled * fill_px
                for (a2, b2, dp, pr) in _regen_iter(regen, BID, q1, q2):
                    out.append((r * pr,
                                AgentState(a2, 0, 0, b2, 0 if a > 0 else i, p + dp, pe2),
                                filled))
            else:
                cb = min(n, b)
                ca = min(n - cb, a)
                cf = min(n - cb - ca, f)
                nb, na, nf = b - cb, a - ca, f - cf
                ni = i if a == 0 else na
                out.append((r, canonical_agent_state(nb, na, nf, q2, ni, p, pe + ca * fill_px), ca))

        r = model.lam_minus(ASK, book, n)
        if r > 0.0:
            if n >= q2:
                for (a2, b2, dp, pr) in _regen_iter(regen, ASK, q1, q2):
                    if a > 0:
                        if dp == 0 and a2 == q1:
                            # redraw leaves the bid as it was: placement kept
                            out.append((r * pr, AgentState(b, a, f, b2, i, p, pe), 0))
                        else:
                            # the redrawn bid volume sits ahead of the agent
                            out.append((r * pr, AgentState(a2, a, 0, b2, i, p + dp, pe), 0))
                    else:
                        out.append((r * pr, AgentState(a2, 0, 0, b2, i, p + dp, pe), 0))
            else:
                out.append((r, canonical_agent_state(b, a, f, q2 - n, i, p, pe), 0))
    return out


def _regen_iter(regen: RegenerationLaw, side: int, q1: int, q2: int):
    q1s, q2s, dps, ps = regen.outcomes(side, q1, q2)
    return [(int(a), int(b), int(dp), float(p))
            for a, b, dp, p in zip(q1s, q2s, dps, ps) if p > 0.0]


@dataclass
class ControlledSystem:
    """Enumerated live states plus the market flow and control maps over them.

    ``matrix`` is the flow restricted to unexecuted states; executions leave
    through the fill channel, recorded per state as flat arrays of
    (rate, post-fill book, price, cash) so a payoff can be attached later.
    """

    states: np.ndarray            # (n, 7): q_bef, q_a, q_aft, q2, inv, p, pe_halfticks
    index: dict = field(repr=False)
    matrix: sp.csr_matrix = None
    fill_indptr: np.ndarray = None
    fill_rate: np.ndarray = None
    fill_q1: np.ndarray = None
    fill_q2: np.ndarray = None
    fill_p: np.ndarray = None
    fill_pe: np.ndarray = None    # cash units
    l_target: np.ndarray = None
    c_map: sp.csr_matrix = None
    price_window: int = 0
    clamped_rate: float = 0.0
    q1_cap: int = 0
    order_size: int = 1
    posted_mask: np.ndarray = None

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def fill_rate_total(self) -> np.ndarray:
        out = np.zeros(self.n_states)
        owner = np.repeat(np.arange(self.n_states), np.diff(self.fill_indptr))
        np.add.at(out, owner, self.fill_rate)
        return out

    def conservation_defect(self) -> float:
        """Max |row sum of live flow + total fill rate| over states."""
        row = np.asarray(self.matrix.sum(axis=1)).ravel()
        return float(np.max(np.abs(row + self.fill_rate_total())))

    def agent_state(self, j: int, half_tick: float) -> AgentState:
        b, a, f, q2, i, p, pek = (int(x) for x in self.states[j])
        return AgentState(b, a, f, q2, i, p, pek * half_tick)


def build_controlled_generator(model: IntensityModel, regen: RegenerationLaw,
                               cfg: ModelConfig, price_window: int,
                               seeds: Sequence[AgentState] | None = None,
                               max_states: int = 1_000_000) -> ControlledSystem:
    """Enumerate live (unexecuted) states and assemble the controlled flow.

    For unit orders the full product space is used; for larger orders the
    enumeration is the reachable closure of ``seeds`` under market events and
    control applications, since the accumulated cost enters the state.
    """
    _validate_pair(model, regen)
    qa = cfg.order_size
    K = int(price_window)
    ht = cfg.half_tick
    q1_cap = model.qmax + qa

    def key(st: AgentState):
        pek = round(st.p_exec / ht)
        if abs(pek * ht - st.p_exec) > 1e-9 * max(1.0, abs(st.p_exec)) + 1e-12:
            raise ModelError(f"accumulated cost {st.p_exec} leaves the half-tick grid")
        lay = min(max(st.p, -K), K)
        return (st.q_bef, st.q_a, st.q_aft, st.q2, st.inv, lay, pek)

    keys: list[tuple] = []
    index: dict = {}

    def add(k) -> int:
        j = index.get(k)
        if j is None:
            j = len(keys)
            index[k] = j
            keys.append(k)
            if j >= max_states:
                raise ModelError(f"controlled state space exceeds max_states={max_states}")
        return j

    if qa == 1:
        pe0 = 0 if seeds is None else round(seeds[0].p_exec / ht)
        for lay in range(-K, K + 1):
            for q2 in range(1, model.qmax + 1):
                for tot in range(1, q1_cap + 1):
                    for b in range(0, tot):
                        add((b, 1, tot - 1 - b, q2, 1, lay, pe0))
                for q1 in range(1, q1_cap + 1):
                    add((q1, 0, 0, q2, 1, lay, pe0))
    else:
        if not seeds:
            raise ModelError("order_size > 1 needs seed states for the reachable closure")
        for s in seeds:
            add(key(s))

    def clamp_state(st: AgentState) -> tuple:
        return key(st)

    rows, cols, vals = [], [], []
    fill_lists: list[list] = []
    l_tgt: list[int] = []
    c_rows, c_cols, c_vals = [], [], []
    clamped = 0.0

    cursor = 0
    while cursor < len(keys):
        j = cursor
        cursor += 1
        b, a, f, q2, i, lay, pek = keys[j]
        st = AgentState(b, a, f, q2, i, lay, pek * ht)

        fills_here = []
        tot = 0.0
        for (r, nxt, filled) in agent_market_events(model, regen, cfg, st):
            tot += r
            nxt_lay = min(max(nxt.p, -K), K)
            if nxt_lay != nxt.p:
                clamped += r
            if nxt.inv == 0 and i > 0:
                fills_here.append((r, nxt.q1, nxt.q2, nxt_lay, nxt.p_exec))
            else:
                t = add((nxt.q_bef, nxt.q_a, nxt.q_aft, nxt.q2, nxt.inv, nxt_lay,
                         round(nxt.p_exec / ht)))
                rows.append(j)
                cols.append(t)
                vals.append(r)
        rows.append(j)
        cols.append(j)
        vals.append(-tot)
        fill_lists.append(fills_here)

        # control maps
        if a == 0:
            posted = apply_control(st, "l", cfg, regen)[0][0]
            l_tgt.append(add(clamp_state(posted)))
            c_rows.append(j)
            c_cols.append(j)
            c_vals.append(1.0)
        else:
            l_tgt.append(j)
            for (nxt, pr) in apply_control(st, "c", cfg, regen):
                c_rows.append(j)
                c_cols.append(add(clamp_state(nxt)))
                c_vals.append(pr)

    n = len(keys)
    states = np.array(keys, dtype=np.int64).reshape(n, 7)
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    c_map = sp.csr_matrix((c_vals, (c_rows, c_cols)), shape=(n, n))

    fill_indptr = np.zeros(n + 1, dtype=np.int64)
    for j, lst in enumerate(fill_lists):
        fill_indptr[j + 1] = fill_indptr[j] + len(lst)
    m = fill_indptr[-1]
    fr = np.zeros(m)
    fq1 = np.zeros(m, dtype=np.int64)
    fq2 = np.zeros(m, dtype=np.int64)
    fp = np.zeros(m, dtype=np.int64)
    fpe = np.zeros(m)
    pos = 0
    for lst in fill_lists:
        for (r, a2, b2, lay2, pe2) in lst:
            fr[pos] = r
            fq1[pos] = a2
            fq2[pos] = b2
            fp[pos] = lay2
            fpe[pos] = pe2
            pos += 1

    return ControlledSystem(
        states=states, index=index, matrix=matrix,
        fill_indptr=fill_indptr, fill_rate=fr, fill_q1=fq1, fill_q2=fq2,
        fill_p=fp, fill_pe=fpe,
        l_target=np.array(l_tgt, dtype=np.int64), c_map=c_map,
        price_window=K, clamped_rate=clamped, q1_cap=q1_cap,
        order_size=qa, posted_mask=states[:, 1] > 0)
