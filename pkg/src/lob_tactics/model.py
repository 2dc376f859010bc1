"""Domain types for the best-quotes order book and the controlled agent state.

The market is described by the best bid queue, the best ask queue and a mid
price offset on a tick grid.  Event intensities are queue-dependent and
price-independent; when one side is fully depleted the book is redrawn from a
regeneration law keyed by the pre-depletion state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

BID = 1
ASK = 2

_PROB_TOL = 1e-12


class ModelError(ValueError):
    """Raised for invalid model parameters or state transitions."""


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class BookState:
    """Market-only state: best-bid size, best-ask size, mid offset in ticks."""

    q1: int
    q2: int
    p: int = 0

    def validate(self, qmax: int | None = None) -> None:
        if self.q1 < 1 or self.q2 < 1:
            raise ModelError(f"live book needs both queues >= 1, got {self}")
        if qmax is not None and (self.q1 > qmax or self.q2 > qmax):
            raise ModelError(f"queue cap {qmax} violated by {self}")

    def mirrored(self) -> "BookState":
        return BookState(self.q2, self.q1, -self.p)


@dataclass(frozen=True)
class AgentState:
    """Controlled state: bid queue split around the agent's resting order.

    ``q_bef`` volume ahead of the agent, ``q_a`` the agent's resting size,
    ``q_aft`` volume behind, ``inv`` the remaining quantity to buy, ``p`` the
    mid offset in ticks and ``p_exec`` the accumulated acquisition cost in
    price units.  When the agent has no resting order the bid volume is
    carried canonically in ``q_bef`` with ``q_aft = 0``.
    """

    q_bef: int
    q_a: int
    q_aft: int
    q2: int
    inv: int
    p: int = 0
    p_exec: float = 0.0

    @property
    def q1(self) -> int:
        return self.q_bef + self.q_a + self.q_aft

    @property
    def posted(self) -> bool:
        return self.q_a > 0

    def book(self) -> BookState:
        return BookState(self.q1, self.q2, self.p)

    def validate(self) -> None:
        if min(self.q_bef, self.q_a, self.q_aft, self.inv) < 0:
            raise ModelError(f"negative component in {self}")
        if self.q2 < 1:
            raise ModelError(f"ask queue must stay >= 1, got {self}")
        if self.q1 < 1:
            raise ModelError(f"bid queue must stay >= 1, got {self}")
        if self.q_a not in (0, self.inv):
            raise ModelError(f"resting size must be 0 or the whole inventory, got {self}")
        if self.inv == 0 and self.q_a != 0:
            raise ModelError(f"executed state cannot keep a resting order: {self}")


def canonical_agent_state(q_bef, q_a, q_aft, q2, inv, p, p_exec) -> AgentState:
    """Normalise the bef/aft split, which is meaningless without a resting order."""
    if q_a == 0:
        return AgentState(q_bef + q_aft, 0, 0, q2, inv, p, p_exec)
    return AgentState(q_bef, q_a, q_aft, q2, inv, p, p_exec)


# ---------------------------------------------------------------------------
# payoff wrapper


@dataclass(frozen=True)
class PayoffSpec:
    """Lipschitz wrapper applied to the benchmark-relative gain."""

    kind: str = "identity"
    lo: float = float("-inf")
    hi: float = float("inf")

    def __post_init__(self):
        if self.kind not in ("identity", "clip"):
            raise ModelError(f"unknown payoff kind {self.kind!r}")
        if self.kind == "clip" and not self.lo < self.hi:
            raise ModelError("clip payoff needs lo < hi")

    def apply(self, x):
        if self.kind == "identity":
            return x
        return np.clip(x, self.lo, self.hi)

    __call__ = apply

    @property
    def is_identity(self) -> bool:
        return self.kind == "identity"


def _on_half_tick_grid(x: float, tick: float) -> bool:
    r = x / (tick / 2.0)
    return abs(r - round(r)) < 1e-9


@dataclass(frozen=True)
class ModelConfig:
    """Scalar problem parameters shared by the solvers and the simulator.

    ``wait_cost`` is a price-unit cost per unit of inventory and per second.
    ``spread / 2`` and ``impact_alpha`` must sit on the half-tick grid so that
    every cash amount the model can produce is an exact half-tick multiple.
    """

    tick: float = 1.0
    spread: float = 1.0
    impact_alpha: float = 0.0
    wait_cost: float = 0.0
    order_size: int = 1
    horizon: float = 10.0
    decision_dt: float = 1.0
    payoff: PayoffSpec = field(default_factory=PayoffSpec)

    def __post_init__(self):
        if self.tick <= 0:
            raise ModelError("tick must be > 0")
        if self.spread <= 0:
            raise ModelError("spread must be > 0")
        if self.decision_dt <= 0:
            raise ModelError("decision_dt must be > 0")
        if self.wait_cost < 0:
            raise ModelError("wait_cost must be >= 0")
        if self.order_size < 1:
            raise ModelError("order_size must be >= 1")
        if self.horizon < 0:
            raise ModelError("horizon must be >= 0")
        if self.impact_alpha < 0:
            raise ModelError("impact_alpha must be >= 0")
        if not _on_half_tick_grid(self.spread / 2.0, self.tick):
            raise ModelError(
                f"spread/2 = {self.spread / 2} must be a multiple of half a tick ({self.tick / 2})"
            )
        if not _on_half_tick_grid(self.impact_alpha, self.tick):
            raise ModelError(
                f"impact_alpha = {self.impact_alpha} must be a multiple of half a tick"
            )

    @property
    def half_tick(self) -> float:
        return self.tick / 2.0


# ---------------------------------------------------------------------------
# intensities


def _as_table(fn_or_array, qmax: int, n_max: int) -> np.ndarray:
    """Materialise rates on the padded (q1, q2, n) grid; index 0 is unused."""
    tab = np.zeros((qmax + 1, qmax + 1, n_max + 1))
    if callable(fn_or_array):
        for q1 in range(1, qmax + 1):
            for q2 in range(1, qmax + 1):
                for n in range(1, n_max + 1):
                    tab[q1, q2, n] = fn_or_array(q1, q2, n)
    else:
        arr = np.asarray(fn_or_array, dtype=float)
        if arr.shape == (qmax, qmax) and n_max == 1:
            tab[1:, 1:, 1] = arr
        elif arr.shape == (qmax, qmax, n_max):
            tab[1:, 1:, 1:] = arr
        else:
            raise ModelError(f"rate table shape {arr.shape} does not match qmax={qmax}, n_max={n_max}")
    return tab


@dataclass(frozen=True)
class IntensityModel:
    """Queue-dependent arrival/cancel/market rates for both best limits.

    Tables are indexed ``[q1, q2, n]`` with live values at indices >= 1.  In
    symmetric mode only the bid side is supplied and the ask side is the
    mirror image, so the bid-ask symmetry relation holds by construction.
    Raw (possibly asymmetric) models are used to carry calibration output.
    """

    qmax: int
    n_max: int
    bid_plus: np.ndarray
    bid_cancel: np.ndarray
    bid_market: np.ndarray
    ask_plus: np.ndarray
    ask_cancel: np.ndarray
    ask_market: np.ndarray
    symmetric: bool = True

    # -- constructors -------------------------------------------------------

    @staticmethod
    def from_bid_functions(lam_plus, lam_cancel, lam_market, *, qmax: int, n_max: int = 1,
                           ) -> "IntensityModel":
        bp = _as_table(lam_plus, qmax, n_max)
        bc = _as_table(lam_cancel, qmax, n_max)
        bm = _as_table(lam_market, qmax, n_max)
        # insertion cap: no inflow that would push a queue beyond qmax
        for q1 in range(1, qmax + 1):
            for n in range(1, n_max + 1):
                if q1 + n > qmax:
                    bp[q1, :, n] = 0.0
        for tab in (bp, bc, bm):
            if not np.all(np.isfinite(tab)) or np.any(tab < 0):
                raise ModelError("rates must be finite and non-negative")
        ap = np.swapaxes(bp, 0, 1).copy()
        ac = np.swapaxes(bc, 0, 1).copy()
        am = np.swapaxes(bm, 0, 1).copy()
        return IntensityModel(qmax, n_max, bp, bc, bm, ap, ac, am, symmetric=True)

    @staticmethod
    def constant(lam_plus: float, lam_minus: float | None = None, *,
                 lam_minus_cancel: float | None = None,
                 lam_minus_market: float | None = None,
                 market_fraction: float = 0.5,
                 qmax: int, n_max: int = 1) -> "IntensityModel":
        """Constant-rate model; the total consumption rate may be given and split."""
        if lam_minus_cancel is None or lam_minus_market is None:
            if lam_minus is None:
                raise ModelError("give lam_minus or both cancel/market components")
            lam_minus_market = lam_minus * market_fraction
            lam_minus_cancel = lam_minus - lam_minus_market
        return IntensityModel.from_bid_functions(
            lambda q1, q2, n: lam_plus if n == 1 else 0.0,
            lambda q1, q2, n: lam_minus_cancel if n == 1 else 0.0,
            lambda q1, q2, n: lam_minus_market if n == 1 else 0.0,
            qmax=qmax, n_max=n_max)

    @staticmethod
    def queue_reactive_ratio(*, base_plus: float, base_minus: float,
                             decay_plus: float = 0.85, growth_minus: float = 1.05,
                             market_fraction: float = 0.5, qmax: int) -> "IntensityModel":
        """Own-queue reactive rates: arrivals shrink and consumption grows with q1."""
        if not (0 < decay_plus <= 1.0 and growth_minus >= 1.0):
            raise ModelError("need 0 < decay_plus <= 1 and growth_minus >= 1")
        return IntensityModel.from_bid_functions(
            lambda q1, q2, n: base_plus * decay_plus ** (q1 - 1),
            lambda q1, q2, n: base_minus * growth_minus ** (q1 - 1) * (1 - market_fraction),
            lambda q1, q2, n: base_minus * growth_minus ** (q1 - 1) * market_fraction,
            qmax=qmax)

    @staticmethod
    def from_tables(bid_plus, bid_cancel, bid_market, *, qmax: int, n_max: int = 1) -> "IntensityModel":
        return IntensityModel.from_bid_functions(bid_plus, bid_cancel, bid_market,
                                                 qmax=qmax, n_max=n_max)

    @staticmethod
    def from_raw_tables(bid_plus, bid_cancel, bid_market, ask_plus, ask_cancel, ask_market,
                        *, qmax: int, n_max: int = 1) -> "IntensityModel":
        """Asymmetric model from explicit per-side tables; caps are enforced, not fixed."""
        tabs = [_as_table(t, qmax, n_max) for t in
                (bid_plus, bid_cancel, bid_market, ask_plus, ask_cancel, ask_market)]
        for tab in tabs:
            if not np.all(np.isfinite(tab)) or np.any(tab < 0):
                raise ModelError("rates must be finite and non-negative")
        bp, bc, bm, ap, ac, am = tabs
        for q1 in range(1, qmax + 1):
            for n in range(1, n_max + 1):
                if q1 + n > qmax and (np.any(bp[q1, :, n] > 0) or np.any(ap[:, q1, n] > 0)):
                    raise ModelError(
                        f"insertion rate beyond the queue cap (q={q1}, n={n}) violates the bound")
        return IntensityModel(qmax, n_max, bp, bc, bm, ap, ac, am, symmetric=False)

    # -- rate lookups --------------------------------------------------------

    def lam_plus(self, side: int, book, n: int = 1) -> float:
        q1, q2 = _book_coords(book)
        tab = self.bid_plus if side == BID else self.ask_plus
        return _clamped_lookup(tab, q1, q2, n, self.qmax, arrivals=True, side=side)

    def lam_minus_cancel(self, side: int, book, n: int = 1) -> float:
        q1, q2 = _book_coords(book)
        tab = self.bid_cancel if side == BID else self.ask_cancel
        return _clamped_lookup(tab, q1, q2, n, self.qmax, arrivals=False, side=side)

    def lam_minus_market(self, side: int, book, n: int = 1) -> float:
        q1, q2 = _book_coords(book)
        tab = self.bid_market if side == BID else self.ask_market
        return _clamped_lookup(tab, q1, q2, n, self.qmax, arrivals=False, side=side)

    def lam_minus(self, side: int, book, n: int = 1) -> float:
        return self.lam_minus_cancel(side, book, n) + self.lam_minus_market(side, book, n)

    def side_outflow(self, side: int, book) -> float:
        return sum(self.lam_plus(side, book, n) + self.lam_minus(side, book, n)
                   for n in range(1, self.n_max + 1))

    def flow_bound(self) -> float:
        """Smallest constant dominating the per-side in/out flow over the grid."""
        best = 0.0
        for q1 in range(1, self.qmax + 1):
            for q2 in range(1, self.qmax + 1):
                book = (q1, q2)
                best = max(best, self.side_outflow(BID, book), self.side_outflow(ASK, book))
        return best

    def symmetry_violation(self) -> float:
        """Max absolute rate gap between the bid side and the mirrored ask side."""
        gap = 0.0
        for bid_tab, ask_tab in ((self.bid_plus, self.ask_plus),
                                 (self.bid_cancel, self.ask_cancel),
                                 (self.bid_market, self.ask_market)):
            gap = max(gap, float(np.max(np.abs(bid_tab - np.swapaxes(ask_tab, 0, 1)))))
        return gap

    def is_constant(self) -> bool:
        """True when the rates do not depend on (q1, q2), the insertion cap aside."""
        for tab, capped_side in ((self.bid_plus, BID), (self.bid_cancel, 0), (self.bid_market, 0),
                                 (self.ask_plus, ASK), (self.ask_cancel, 0), (self.ask_market, 0)):
            for n in range(1, self.n_max + 1):
                ref = float(tab[1, 1, n])
                for q1 in range(1, self.qmax + 1):
                    for q2 in range(1, self.qmax + 1):
                        own = q1 if capped_side == BID else q2
                        if capped_side and own + n > self.qmax:
                            continue
                        if abs(tab[q1, q2, n] - ref) > 1e-14:
                            return False
        return True


def _book_coords(book) -> tuple[int, int]:
    if isinstance(book, BookState):
        return book.q1, book.q2
    q1, q2 = book[0], book[1]
    return int(q1), int(q2)


def _clamped_lookup(tab: np.ndarray, q1: int, q2: int, n: int, qmax: int,
                    *, arrivals: bool, side: int) -> float:
    """Rate lookup tolerating q1 above the cap (agent inserts can overfill the bid).

    Above the cap arrivals stop and consumption freezes at the cap row, so the
    queue drifts back into range.
    """
    if n < 1 or n >= tab.shape[2]:
        return 0.0
    if q1 < 1 or q2 < 1:
        return 0.0
    own = q1 if side == BID else q2
    if own > qmax:
        if arrivals:
            return 0.0
        if side == BID:
            q1 = qmax
        else:
            q2 = qmax
    if q1 > qmax:
        q1 = qmax
    if q2 > qmax:
        q2 = qmax
    return float(tab[q1, q2, n])


# ---------------------------------------------------------------------------
# regeneration


@dataclass(frozen=True)
class RegenerationLaw:
    """Post-depletion redraw of the book, conditioned on the pre-depletion state.

    Outcomes are stored flat; ``start``/``count`` index the slice for each
    ``(side, q1, q2)`` cell.  ``dp`` is the signed mid move in ticks attached
    to the redraw.
    """

    qmax: int
    start: np.ndarray          # (2, qmax+1, qmax+1) int
    count: np.ndarray
    out_q1: np.ndarray
    out_q2: np.ndarray
    out_dp: np.ndarray
    out_prob: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        for side in (BID, ASK):
            for q1 in range(1, self.qmax + 1):
                for q2 in range(1, self.qmax + 1):
                    q1s, q2s, dps, ps = self.outcomes(side, q1, q2)
                    if len(ps) == 0:
                        raise ModelError(f"no regeneration outcomes for side {side}, state ({q1},{q2})")
                    if abs(ps.sum() - 1.0) > _PROB_TOL:
                        raise ModelError(
                            f"regeneration probabilities for ({side},{q1},{q2}) sum to {ps.sum()!r}")
                    if np.any(ps < 0):
                        raise ModelError("negative regeneration probability")
                    if np.any(q1s < 1) or np.any(q2s < 1):
                        raise ModelError("regenerated queues must be >= 1")
                    if np.any(q1s > self.qmax) or np.any(q2s > self.qmax):
                        raise ModelError("regeneration support exceeds the queue cap")

    @property
    def q_tilde_max(self) -> int:
        return int(max(self.out_q1.max(), self.out_q2.max()))

    @property
    def p_tilde_max(self) -> int:
        return int(np.abs(self.out_dp).max()) if len(self.out_dp) else 0

    def outcomes(self, side: int, q1: int, q2: int):
        q1 = min(max(q1, 1), self.qmax)
        q2 = min(max(q2, 1), self.qmax)
        s = int(self.start[side - 1, q1, q2])
        c = int(self.count[side - 1, q1, q2])
        sl = slice(s, s + c)
        return self.out_q1[sl], self.out_q2[sl], self.out_dp[sl], self.out_prob[sl]

    def mean_move(self, side: int, q1: int, q2: int) -> float:
        """Expected signed tick move when the given side depletes from (q1, q2)."""
        _, _, dps, ps = self.outcomes(side, q1, q2)
        return float(np.dot(dps, ps))

    def symmetry_violation(self) -> float:
        """Max probability defect between bid outcomes and mirrored ask outcomes."""
        worst = 0.0
        for q1 in range(1, self.qmax + 1):
            for q2 in range(1, self.qmax + 1):
                bid = self._dist_dict(BID, q1, q2)
                ask = self._dist_dict(ASK, q2, q1)
                mirrored = {(b, a, -d): p for (a, b, d), p in ask.items()}
                keys = set(bid) | set(mirrored)
                for k in keys:
                    worst = max(worst, abs(bid.get(k, 0.0) - mirrored.get(k, 0.0)))
        return worst

    def _dist_dict(self, side, q1, q2):
        q1s, q2s, dps, ps = self.outcomes(side, q1, q2)
        d: dict = {}
        for a, b, dp, p in zip(q1s, q2s, dps, ps):
            key = (int(a), int(b), int(dp))
            d[key] = d.get(key, 0.0) + float(p)
        return d

    # -- constructors --------------------------------------------------------

    @staticmethod
    def point_mass(*, bid_state: tuple[int, int], bid_move: int, qmax: int) -> "RegenerationLaw":
        """Same redraw from every pre-depletion state; the ask side is the mirror."""
        return RegenerationLaw.from_outcomes(
            bid_outcomes=[(bid_state[0], bid_state[1], bid_move, 1.0)], qmax=qmax)

    @staticmethod
    def from_outcomes(*, bid_outcomes: Sequence[tuple], qmax: int,
                      ask_outcomes: Sequence[tuple] | None = None,
                      bid_conditional: Mapping[tuple[int, int], Sequence[tuple]] | None = None,
                      ) -> "RegenerationLaw":
        """Build from unconditional outcome lists ``(q1', q2', dp, prob)``.

        ``bid_conditional`` overrides the fallback for specific pre-states.
        When ``ask_outcomes`` is omitted the ask side mirrors the bid side and
        the law is symmetric by construction.
        """
        symmetric = ask_outcomes is None
        if ask_outcomes is None:
            ask_outcomes = [(b, a, -dp, p) for (a, b, dp, p) in bid_outcomes]
            ask_conditional = None
            if bid_conditional:
                ask_conditional = {(q2, q1): [(b, a, -dp, p) for (a, b, dp, p) in outs]
                                   for (q1, q2), outs in bid_conditional.items()}
        else:
            ask_conditional = None

        start = np.zeros((2, qmax + 1, qmax + 1), dtype=np.int64)
        count = np.zeros_like(start)
        flat_q1: list[int] = []
        flat_q2: list[int] = []
        flat_dp: list[int] = []
        flat_p: list[float] = []

        def push(outs) -> tuple[int, int]:
            s = len(flat_q1)
            for (a, b, dp, p) in outs:
                flat_q1.append(int(a))
                flat_q2.append(int(b))
                flat_dp.append(int(dp))
                flat_p.append(float(p))
            return s, len(outs)

        shared = {BID: push(bid_outcomes), ASK: push(ask_outcomes)}
        cond = {BID: bid_conditional or {}, ASK: ask_conditional or {}}
        cond_slices: dict = {}
        for side in (BID, ASK):
            for q1 in range(1, qmax + 1):
                for q2 in range(1, qmax + 1):
                    outs = cond[side].get((q1, q2))
                    if outs is None:
                        s, c = shared[side]
                    else:
                        key = (side, q1, q2)
                        if key not in cond_slices:
                            cond_slices[key] = push(outs)
                        s, c = cond_slices[key]
                    start[side - 1, q1, q2] = s
                    count[side - 1, q1, q2] = c

        return RegenerationLaw(
            qmax=qmax, start=start, count=count,
            out_q1=np.array(flat_q1, dtype=np.int64),
            out_q2=np.array(flat_q2, dtype=np.int64),
            out_dp=np.array(flat_dp, dtype=np.int64),
            out_prob=np.array(flat_p, dtype=float),
            symmetric=symmetric)


def default_price_window(model: IntensityModel, regen: RegenerationLaw, horizon: float) -> int:
    """Tick half-width of the price layer grid: enough room for the moves a
    horizon of typical flow can produce, capped to keep the state space small."""
    h = model.flow_bound()
    k = regen.p_tilde_max * math.ceil(max(horizon, 1.0) * h)
    return int(min(max(k, 1), 40))
