"""Estimation of intensities and the regeneration law from event streams.

The estimator is the occupation-time ratio: events counted per (q1, q2)
bucket divided by the time the book spent there.  Depletions are consumption
events at least as large as their queue; the redraw law is the empirical
distribution of the next record's pre-event state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import (ASK, BID, IntensityModel, ModelError, RegenerationLaw)

KIND_LIMIT = 0
KIND_CANCEL = 1
KIND_MARKET = 2

_KIND_NAMES = {KIND_LIMIT: "limit", KIND_CANCEL: "cancel", KIND_MARKET: "market"}
_KIND_CODES = {v: k for k, v in _KIND_NAMES.items()}
_SIDE_NAMES = {BID: "bid", ASK: "ask"}
_SIDE_CODES = {v: k for k, v in _SIDE_NAMES.items()}

CSV_COLUMNS = ["timestamp", "type", "side", "size", "q1_before", "q2_before",
               "mid_before", "spread_before"]


@dataclass
class EventFrame:
    """Column arrays for an event stream; mid and spread are in ticks."""

    t: np.ndarray
    kind: np.ndarray
    side: np.ndarray
    size: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    mid: np.ndarray
    spread: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def validate(self) -> None:
        if len(self) and np.any(np.diff(self.t) < 0):
            raise ModelError("timestamps must be non-decreasing")
        if np.any(self.size < 1):
            raise ModelError("event sizes must be >= 1")
        if np.any(self.q1 < 0) or np.any(self.q2 < 0):
            raise ModelError("queue snapshots must be non-negative")


def write_events_csv(frame: EventFrame, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for k in range(len(frame)):
            w.writerow([repr(float(frame.t[k])), _KIND_NAMES[int(frame.kind[k])],
                        _SIDE_NAMES[int(frame.side[k])], int(frame.size[k]),
                        int(frame.q1[k]), int(frame.q2[k]), int(frame.mid[k]),
                        int(frame.spread[k])])


def read_events_csv(path) -> EventFrame:
    cols = {name: [] for name in CSV_COLUMNS}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ModelError(f"event file is missing columns {missing}")
        for row in reader:
            for c in CSV_COLUMNS:
                cols[c].append(row[c])
    try:
        frame = EventFrame(
            t=np.array([float(x) for x in cols["timestamp"]]),
            kind=np.array([_KIND_CODES[x.strip().lower()] for x in cols["type"]],
                          dtype=np.int64),
            side=np.array([_SIDE_CODES[x.strip().lower()] for x in cols["side"]],
                          dtype=np.int64),
            size=np.array([int(x) for x in cols["size"]], dtype=np.int64),
            q1=np.array([int(x) for x in cols["q1_before"]], dtype=np.int64),
            q2=np.array([int(x) for x in cols["q2_before"]], dtype=np.int64),
            mid=np.array([int(x) for x in cols["mid_before"]], dtype=np.int64),
            spread=np.array([int(x) for x in cols["spread_before"]], dtype=np.int64))
    except (KeyError, ValueError) as exc:
        raise ModelError(f"malformed event file: {exc}") from exc
    frame.validate()
    return frame


# ---------------------------------------------------------------------------
# synthetic stream


def generate_synthetic_events(model: IntensityModel, regen: RegenerationLaw,
                              n_events: int, seed: int, q1_0: int | None = None,
                              q2_0: int | None = None, spread_ticks: int = 1,
                              ) -> tuple[EventFrame, dict]:
    """Simulate the book and emit typed event records plus a truth manifest."""
    from .simulate import rate_tables, regen_pack

    if q1_0 is None:
        q1_0 = max(1, model.qmax // 2)
    if q2_0 is None:
        q2_0 = max(1, model.qmax // 2)
    tabs = rate_tables(model)
    pack = regen_pack(regen)
    t, kind, side, size, q1, q2, mid = _kernels.synthetic_events(
        seed, n_events, q1_0, q2_0, tabs, pack)
    frame = EventFrame(t=t, kind=kind, side=side, size=size, q1=q1, q2=q2, mid=mid,
                       spread=np.full(len(t), spread_ticks, dtype=np.int64))
    manifest = {
        "seed": int(seed),
        "n_events": int(len(t)),
        "start": [int(q1_0), int(q2_0)],
        "qmax": int(model.qmax),
        "true_bid_plus": model.bid_plus[1:, 1:, 1:].tolist(),
        "true_bid_cancel": model.bid_cancel[1:, 1:, 1:].tolist(),
        "true_bid_market": model.bid_market[1:, 1:, 1:].tolist(),
    }
    return frame, manifest


# ---------------------------------------------------------------------------
# intensity estimation


@dataclass
class IntensityEstimate:
    """Raw per-bucket counts, occupation times and the implied rates."""

    qmax: int
    n_max: int
    counts: np.ndarray           # (2 sides, 3 kinds, qmax+1, qmax+1, n_max+1)
    occupation: np.ndarray       # (qmax+1, qmax+1) seconds
    empty_buckets: list = field(default_factory=list)
    symmetrized: bool = False

    def rates(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.counts / self.occupation[None, None, :, :, None]
        return np.nan_to_num(r, nan=0.0, posinf=0.0)

    def total_events(self) -> int:
        return int(self.counts.sum())

    def symmetrize(self) -> "IntensityEstimate":
        """Pool each bucket with its mirror; keeps the total event count."""
        c = self.counts
        cs = np.empty_like(c)
        occ_m = self.occupation + self.occupation.T
        for kind in range(3):
            bid = c[0, kind] + np.swapaxes(c[1, kind], 0, 1)
            cs[0, kind] = bid
            cs[1, kind] = np.swapaxes(bid, 0, 1)
        est = IntensityEstimate(self.qmax, self.n_max, cs, occ_m,
                                list(self.empty_buckets), symmetrized=True)
        return est

    def to_model(self) -> IntensityModel:
        r = self.rates()
        if self.symmetrized:
            return IntensityModel.from_tables(
                r[0, KIND_LIMIT, 1:, 1:, 1:], r[0, KIND_CANCEL, 1:, 1:, 1:],
                r[0, KIND_MARKET, 1:, 1:, 1:], qmax=self.qmax, n_max=self.n_max)
        return IntensityModel.from_raw_tables(
            r[0, KIND_LIMIT, 1:, 1:, 1:], r[0, KIND_CANCEL, 1:, 1:, 1:],
            r[0, KIND_MARKET, 1:, 1:, 1:],
            r[1, KIND_LIMIT, 1:, 1:, 1:], r[1, KIND_CANCEL, 1:, 1:, 1:],
            r[1, KIND_MARKET, 1:, 1:, 1:], qmax=self.qmax, n_max=self.n_max)


def estimate_intensities(frame: EventFrame, qmax: int, n_max: int = 1,
                         pool_sizes: bool = True) -> IntensityEstimate:
    """Occupation-time rate estimates on the (q1, q2) grid.

    With ``pool_sizes`` every event lands in the unit-size bucket, which is
    the estimator the shipped experiments use; otherwise sizes up to
    ``n_max`` are tabulated separately.
    """
    if len(frame) < 1:
        raise ModelError("need at least one event")
    counts = np.zeros((2, 3, qmax + 1, qmax + 1, n_max + 1))
    occ = np.zeros((qmax + 1, qmax + 1))

    q1 = np.clip(frame.q1, 0, qmax)
    q2 = np.clip(frame.q2, 0, qmax)
    live = (q1 >= 1) & (q2 >= 1)
    size = np.ones(len(frame), dtype=np.int64) if pool_sizes else np.clip(frame.size, 1, n_max)
    np.add.at(counts, (frame.side - 1, frame.kind, q1, q2, size), live.astype(float))

    # the state before event k+1 persists over (t_k, t_k+1]
    hold = np.diff(frame.t)
    np.add.at(occ, (q1[1:], q2[1:]), hold * live[1:])

    empty = [(int(a), int(b)) for a, b in zip(*np.nonzero(
        (occ[1:, 1:] <= 0) & (counts.sum(axis=(0, 1, 4))[1:, 1:] > 0)))]
    return IntensityEstimate(qmax=qmax, n_max=n_max, counts=counts, occupation=occ,
                             empty_buckets=[(a + 1, b + 1) for a, b in empty])


# ---------------------------------------------------------------------------
# regeneration estimation


def find_depletions(frame: EventFrame) -> np.ndarray:
    """Indices of consumption events that wipe their side's queue."""
    own = np.where(frame.side == BID, frame.q1, frame.q2)
    consuming = frame.kind != KIND_LIMIT
    dep = consuming & (frame.size >= own) & (own >= 1)
    dep[-1:] = False  # no post-state observable for the last record
    return np.nonzero(dep)[0]


def estimate_regeneration(frame: EventFrame, qmax: int, min_count: int = 30):
    """Empirical redraw law keyed by the pre-depletion state, with a pooled
    fallback for thin cells; also returns the mean tick move per side."""
    idx = find_depletions(frame)
    if len(idx) == 0:
        raise ModelError("no depletions in the stream; cannot estimate the redraw law")
    sides = frame.side[idx]
    pre = list(zip(frame.q1[idx], frame.q2[idx]))
    post = list(zip(frame.q1[idx + 1], frame.q2[idx + 1],
                    frame.mid[idx + 1] - frame.mid[idx]))

    def collect(side):
        pooled: dict = {}
        cells: dict = {}
        for s, pr, po in zip(sides, pre, post):
            if s != side:
                continue
            po = (int(min(po[0], qmax)) or 1, int(min(po[1], qmax)) or 1, int(po[2]))
            pooled[po] = pooled.get(po, 0) + 1
            cell = (int(min(pr[0], qmax)), int(min(pr[1], qmax)))
            cells.setdefault(cell, {})
            cells[cell][po] = cells[cell].get(po, 0) + 1
        return pooled, cells

    bid_pool, bid_cells = collect(BID)
    ask_pool, ask_cells = collect(ASK)
    if not bid_pool or not ask_pool:
        raise ModelError("need at least one depletion on each side")

    def outs(d):
        tot = sum(d.values())
        return [(a, b, dp, c / tot) for (a, b, dp), c in sorted(d.items())]

    bid_cond = {cell: outs(d) for cell, d in bid_cells.items()
                if sum(d.values()) >= min_count}
    ask_cond = {cell: outs(d) for cell, d in ask_cells.items()
                if sum(d.values()) >= min_count}
    law = RegenerationLaw.from_outcomes(
        bid_outcomes=outs(bid_pool), ask_outcomes=outs(ask_pool),
        bid_conditional=bid_cond or None, qmax=qmax)
    if ask_cond:
        # rebuild with both conditional sides
        law = _law_with_conditionals(qmax, outs(bid_pool), outs(ask_pool),
                                     bid_cond, ask_cond)
    alpha = {
        "bid": float(np.mean([dp for (_, _, dp), c in bid_pool.items() for _ in range(c)])),
        "ask": float(np.mean([dp for (_, _, dp), c in ask_pool.items() for _ in range(c)])),
        "n_depletions": int(len(idx)),
    }
    return law, alpha


def _law_with_conditionals(qmax, bid_fallback, ask_fallback, bid_cond, ask_cond):
    start = np.zeros((2, qmax + 1, qmax + 1), dtype=np.int64)
    count = np.zeros_like(start)
    flat: list[tuple] = []

    def push(outs):
        s = len(flat)
        flat.extend(outs)
        return s, len(outs)

    shared = {BID: push(bid_fallback), ASK: push(ask_fallback)}
    cache: dict = {}
    for side, cond in ((BID, bid_cond), (ASK, ask_cond)):
        for q1 in range(1, qmax + 1):
            for q2 in range(1, qmax + 1):
                outs = cond.get((q1, q2))
                if outs is None:
                    s, c = shared[side]
                else:
                    key = (side, q1, q2)
                    if key not in cache:
                        cache[key] = push(outs)
                    s, c = cache[key]
                start[side - 1, q1, q2] = s
                count[side - 1, q1, q2] = c
    arr = np.array(flat, dtype=float)
    return RegenerationLaw(qmax=qmax, start=start, count=count,
                           out_q1=arr[:, 0].astype(np.int64),
                           out_q2=arr[:, 1].astype(np.int64),
                           out_dp=arr[:, 2].astype(np.int64),
                           out_prob=arr[:, 3], symmetric=False)


# ---------------------------------------------------------------------------
# imbalance statistics


def event_sign(frame: EventFrame) -> np.ndarray:
    """+1 for buy-flavoured events (bid provision/cancel, ask-side trades)."""
    buy = ((frame.kind != KIND_MARKET) & (frame.side == BID)) | \
          ((frame.kind == KIND_MARKET) & (frame.side == ASK))
    return np.where(buy, 1.0, -1.0)


def imbalance_stats(frame: EventFrame, horizons: list[float], n_bins: int = 20) -> dict:
    """Signed-imbalance summaries: per-type means, densities around liquidity
    events, and the mean forward mid move per imbalance bin and horizon."""
    if len(frame) < 2:
        raise ModelError("need at least two events")
    eps = event_sign(frame)
    with np.errstate(invalid="ignore", divide="ignore"):
        imb = eps * (frame.q1 - frame.q2) / (frame.q1 + frame.q2)
    imb = np.nan_to_num(imb)

    by_type = {
        _KIND_NAMES[k]: float(imb[frame.kind == k].mean()) if np.any(frame.kind == k)
        else math.nan
        for k in range(3)}

    edges = np.linspace(-1.0, 1.0, n_bins + 1)
    provision = frame.kind == KIND_LIMIT
    dens_prov, _ = np.histogram(imb[provision], bins=edges, density=False)
    dens_cons, _ = np.histogram(imb[~provision], bins=edges, density=False)

    moves = {}
    span = frame.t[-1]
    for dt in horizons:
        if dt >= span:
            raise ModelError(f"horizon {dt}s exceeds the data span {span:.3f}s")
        j = np.searchsorted(frame.t, frame.t + dt, side="left")
        ok = j < len(frame)
        dmid = np.zeros(len(frame))
        dmid[ok] = (frame.mid[j[ok]] - frame.mid[ok]) / np.maximum(frame.spread[ok], 1)
        signed = eps * dmid
        which = np.clip(np.digitize(imb, edges) - 1, 0, n_bins - 1)
        sums = np.zeros(n_bins)
        cnts = np.zeros(n_bins)
        np.add.at(sums, which[ok], signed[ok])
        np.add.at(cnts, which[ok], 1.0)
        with np.errstate(invalid="ignore"):
            moves[dt] = np.where(cnts > 0, sums / np.maximum(cnts, 1), np.nan)

    return {"mean_imbalance_by_type": by_type,
            "bin_edges": edges,
            "density_provision": dens_prov,
            "density_consumption": dens_cons,
            "mean_move_by_imbalance": moves}
