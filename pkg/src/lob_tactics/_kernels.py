"""Hot simulation kernels with a numba fast path and a numpy fallback.

Set ``LOB_TACTICS_NUMBA=0`` to force the fallback.  Per-path splitmix64
streams make every kernel deterministic given (seed, path index) whatever the
backend or thread count.  The market-only and depletion-race kernels have a
vectorised numpy fallback; the controlled-path and event-stream kernels fall
back to the same code uncompiled.
"""

from __future__ import annotations

import os

import numpy as np

from . import _rng

_ENV_FLAG = os.environ.get("LOB_TACTICS_NUMBA", "1").strip().lower()
_WANT_NUMBA = _ENV_FLAG not in ("0", "false", "off", "no")

try:  # pragma: no cover - exercised implicitly by backend selection
    if _WANT_NUMBA:
        import numba
        from numba import njit, prange
        NUMBA_ENABLED = True
    else:
        raise ImportError
except ImportError:  # pragma: no cover
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):  # type: ignore
        def deco(fn):
            return fn
        if args and callable(args[0]):
            return args[0]
        return deco

    prange = range  # type: ignore


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def set_threads(n: int) -> None:
    if NUMBA_ENABLED and n > 0:
        numba.set_num_threads(n)


_INV53 = 1.0 / 9007199254740992.0

# event categories, scanned in this fixed order
# 0 bid limit, 1 bid cancel, 2 bid market, 3 ask limit, 4 ask cancel, 5 ask market


@njit(cache=True, inline="always")
def _next_u(state):
    s = state + np.uint64(0x9E3779B97F4A7C15)
    z = s
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return s, np.float64(z >> np.uint64(11)) * _INV53


@njit(cache=True, inline="always")
def _init_state(seed, path):
    s = np.uint64(seed) + (np.uint64(path) + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15)
    z = s
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _pick_regen(rs, u, side, q1, q2, start, count, out_cum):
    s = start[side - 1, q1, q2]
    c = count[side - 1, q1, q2]
    j = s
    for k in range(c - 1):
        if u < out_cum[s + k]:
            break
        j = s + k + 1
    return j


# ---------------------------------------------------------------------------
# market-only paths


@njit(cache=True, parallel=True)
def _market_paths_nb(seed, n_paths, q1_0, q2_0, max_events, max_time,
                     lp1, lc1, lm1, lp2, lc2, lm2,
                     start, count, out_q1, out_q2, out_dp, out_cum,
                     out_state):
    n_max = lp1.shape[2] - 1
    for path in prange(n_paths):
        rs = _init_state(seed, path)
        q1 = q1_0
        q2 = q2_0
        p = 0
        t = 0.0
        n_ev = 0
        n_regen = 0
        while n_ev < max_events:
            tot = 0.0
            for n in range(1, n_max + 1):
                tot += lp1[q1, q2, n] + lc1[q1, q2, n] + lm1[q1, q2, n]
                tot += lp2[q1, q2, n] + lc2[q1, q2, n] + lm2[q1, q2, n]
            if tot <= 0.0:
                break
            rs, u = _next_u(rs)
            dt = -np.log(1.0 - u) / tot
            if t + dt > max_time:
                t = max_time
                break
            t += dt
            rs, u = _next_u(rs)
            r = u * tot
            acc = 0.0
            cat = 5
            size = n_max
            done = False
            for c in range(6):
                for n in range(1, n_max + 1):
                    if c == 0:
                        rate = lp1[q1, q2, n]
                    elif c == 1:
                        rate = lc1[q1, q2, n]
                    elif c == 2:
                        rate = lm1[q1, q2, n]
                    elif c == 3:
                        rate = lp2[q1, q2, n]
                    elif c == 4:
                        rate = lc2[q1, q2, n]
                    else:
                        rate = lm2[q1, q2, n]
                    acc += rate
                    if r < acc:
                        cat = c
                        size = n
                        done = True
                        break
                if done:
                    break
            if cat == 0:
                q1 += size
            elif cat == 3:
                q2 += size
            else:
                own = q1 if cat < 3 else q2
                if size >= own:
                    rs, u3 = _next_u(rs)
                    side = 1 if cat < 3 else 2
                    j = _pick_regen(rs, u3, side, q1, q2, start, count, out_cum)
                    q1 = out_q1[j]
                    q2 = out_q2[j]
                    p += out_dp[j]
                    n_regen += 1
                else:
                    if cat < 3:
                        q1 -= size
                    else:
                        q2 -= size
            n_ev += 1
        out_state[path, 0] = q1
        out_state[path, 1] = q2
        out_state[path, 2] = p
        out_state[path, 3] = n_ev
        out_state[path, 4] = n_regen


def _market_paths_np(seed, n_paths, q1_0, q2_0, max_events, max_time,
                     lp1, lc1, lm1, lp2, lc2, lm2,
                     start, count, out_q1, out_q2, out_dp, out_cum,
                     out_state):
    n_max = lp1.shape[2] - 1
    tabs = (lp1, lc1, lm1, lp2, lc2, lm2)
    tot_tab = np.zeros(lp1.shape[:2])
    for tab in tabs:
        tot_tab += tab[:, :, 1:].sum(axis=2)

    rs = _rng.path_states(seed, n_paths)
    q1 = np.full(n_paths, q1_0, dtype=np.int64)
    q2 = np.full(n_paths, q2_0, dtype=np.int64)
    p = np.zeros(n_paths, dtype=np.int64)
    t = np.zeros(n_paths)
    n_ev = np.zeros(n_paths, dtype=np.int64)
    n_regen = np.zeros(n_paths, dtype=np.int64)
    alive = np.ones(n_paths, dtype=bool)

    max_count = int(count.max()) if count.size else 0
    for _ in range(int(max_events)):
        if not alive.any():
            break
        idx = np.nonzero(alive)[0]
        tot = tot_tab[q1[idx], q2[idx]]
        frozen = tot <= 0.0
        if frozen.any():
            alive[idx[frozen]] = False
            idx = idx[~frozen]
            tot = tot[~frozen]
            if idx.size == 0:
                break
        rs[idx], u = _rng.next_uniform(rs[idx])
        dt = -np.log(1.0 - u) / tot
        overtime = t[idx] + dt > max_time
        if overtime.any():
            over = idx[overtime]
            t[over] = max_time
            alive[over] = False
            idx = idx[~overtime]
            dt = dt[~overtime]
            tot = tot[~overtime]
            if idx.size == 0:
                continue
        t[idx] += dt
        rs[idx], u = _rng.next_uniform(rs[idx])
        r = u * tot
        acc = np.zeros(idx.size)
        chosen = np.full(idx.size, -1, dtype=np.int64)
        chosen_n = np.zeros(idx.size, dtype=np.int64)
        for c, tab in enumerate(tabs):
            for n in range(1, n_max + 1):
                rate = tab[q1[idx], q2[idx], n]
                acc += rate
                sel = (chosen < 0) & (r < acc)
                chosen[sel] = c
                chosen_n[sel] = n
        sel = chosen < 0  # numerical tail: attribute to the last category
        chosen[sel] = 5
        chosen_n[sel] = n_max

        size = chosen_n
        is_bid = chosen < 3
        own = np.where(is_bid, q1[idx], q2[idx])
        grow = (chosen == 0) | (chosen == 3)
        depl = (~grow) & (size >= own)
        shrink = (~grow) & (~depl)

        g = idx[grow]
        q1[g[is_bid[grow]]] += size[grow][is_bid[grow]]
        q2[g[~is_bid[grow]]] += size[grow][~is_bid[grow]]
        s = idx[shrink]
        q1[s[is_bid[shrink]]] -= size[shrink][is_bid[shrink]]
        q2[s[~is_bid[shrink]]] -= size[shrink][~is_bid[shrink]]

        if depl.any():
            d = idx[depl]
            side_idx = np.where(is_bid[depl], 0, 1)
            rs[d], u3 = _rng.next_uniform(rs[d])
            st = start[side_idx, q1[d], q2[d]]
            ct = count[side_idx, q1[d], q2[d]]
            pick = st.copy()
            undecided = np.ones(d.size, dtype=bool)
            for j in range(max_count - 1):
                valid = undecided & (j < ct - 1)
                if not valid.any():
                    break
                cum = out_cum[st + j]
                hit = valid & (u3 < cum)
                undecided[hit] = False
                pick[valid & ~hit] = st[valid & ~hit] + j + 1
            q1[d] = out_q1[pick]
            q2[d] = out_q2[pick]
            p[d] += out_dp[pick]
            n_regen[d] += 1
        n_ev[idx] += 1

    out_state[:, 0] = q1
    out_state[:, 1] = q2
    out_state[:, 2] = p
    out_state[:, 3] = n_ev
    out_state[:, 4] = n_regen


def market_paths(seed, n_paths, q1_0, q2_0, max_events, max_time, tables, regen_pack):
    """Simulate market-only paths; stop at ``max_events`` or ``max_time``.

    Returns an (n_paths, 5) int64/float mix packed as
    ``[q1, q2, p_shift, n_events, n_regens]``.
    """
    out = np.zeros((n_paths, 5), dtype=np.int64)
    args = (np.uint64(seed), n_paths, int(q1_0), int(q2_0), int(max_events),
            float(max_time), *tables, *regen_pack[:6], out)
    if NUMBA_ENABLED:
        _market_paths_nb(*args)
    else:
        with np.errstate(over="ignore"):
            _market_paths_np(*args)
    return out


# ---------------------------------------------------------------------------
# depletion race (no regeneration; stop at first depletion)


@njit(cache=True, parallel=True)
def _race_paths_nb(seed, n_paths, q1_0, q2_0, max_events,
                   lp1, lc1, lm1, lp2, lc2, lm2, out):
    n_max = lp1.shape[2] - 1
    for path in prange(n_paths):
        rs = _init_state(seed, path)
        q1 = q1_0
        q2 = q2_0
        side = 0
        pre1 = 0
        pre2 = 0
        n_ev = 0
        while n_ev < max_events:
            tot = 0.0
            for n in range(1, n_max + 1):
                tot += lp1[q1, q2, n] + lc1[q1, q2, n] + lm1[q1, q2, n]
                tot += lp2[q1, q2, n] + lc2[q1, q2, n] + lm2[q1, q2, n]
            if tot <= 0.0:
                break
            rs, u = _next_u(rs)  # holding time, kept for stream parity
            rs, u = _next_u(rs)
            r = u * tot
            acc = 0.0
            cat = 5
            size = n_max
            done = False
            for c in range(6):
                for n in range(1, n_max + 1):
                    if c == 0:
                        rate = lp1[q1, q2, n]
                    elif c == 1:
                        rate = lc1[q1, q2, n]
                    elif c == 2:
                        rate = lm1[q1, q2, n]
                    elif c == 3:
                        rate = lp2[q1, q2, n]
                    elif c == 4:
                        rate = lc2[q1, q2, n]
                    else:
                        rate = lm2[q1, q2, n]
                    acc += rate
                    if r < acc:
                        cat = c
                        size = n
                        done = True
                        break
                if done:
                    break
            n_ev += 1
            if cat == 0:
                q1 += size
            elif cat == 3:
                q2 += size
            else:
                own = q1 if cat < 3 else q2
                if size >= own:
                    side = 1 if cat < 3 else 2
                    pre1 = q1
                    pre2 = q2
                    break
                if cat < 3:
                    q1 -= size
                else:
                    q2 -= size
        out[path, 0] = side
        out[path, 1] = pre1
        out[path, 2] = pre2
        out[path, 3] = n_ev


def _race_paths_np(seed, n_paths, q1_0, q2_0, max_events,
                   lp1, lc1, lm1, lp2, lc2, lm2, out):
    n_max = lp1.shape[2] - 1
    tabs = (lp1, lc1, lm1, lp2, lc2, lm2)
    tot_tab = np.zeros(lp1.shape[:2])
    for tab in tabs:
        tot_tab += tab[:, :, 1:].sum(axis=2)
    rs = _rng.path_states(seed, n_paths)
    q1 = np.full(n_paths, q1_0, dtype=np.int64)
    q2 = np.full(n_paths, q2_0, dtype=np.int64)
    side = np.zeros(n_paths, dtype=np.int64)
    pre1 = np.zeros(n_paths, dtype=np.int64)
    pre2 = np.zeros(n_paths, dtype=np.int64)
    n_ev = np.zeros(n_paths, dtype=np.int64)
    alive = np.ones(n_paths, dtype=bool)
    for _ in range(int(max_events)):
        if not alive.any():
            break
        idx = np.nonzero(alive)[0]
        tot = tot_tab[q1[idx], q2[idx]]
        frozen = tot <= 0.0
        if frozen.any():
            alive[idx[frozen]] = False
            idx = idx[~frozen]
            tot = tot[~frozen]
            if idx.size == 0:
                break
        rs[idx], _ = _rng.next_uniform(rs[idx])
        rs[idx], u = _rng.next_uniform(rs[idx])
        r = u * tot
        acc = np.zeros(idx.size)
        chosen = np.full(idx.size, -1, dtype=np.int64)
        chosen_n = np.zeros(idx.size, dtype=np.int64)
        for c, tab in enumerate(tabs):
            for n in range(1, n_max + 1):
                acc += tab[q1[idx], q2[idx], n]
                sel = (chosen < 0) & (r < acc)
                chosen[sel] = c
                chosen_n[sel] = n
        chosen[chosen < 0] = 5
        chosen_n[chosen_n == 0] = n_max
        n_ev[idx] += 1

        size = chosen_n
        is_bid = chosen < 3
        own = np.where(is_bid, q1[idx], q2[idx])
        grow = (chosen == 0) | (chosen == 3)
        depl = (~grow) & (size >= own)
        shrink = (~grow) & (~depl)

        g = idx[grow]
        q1[g[is_bid[grow]]] += size[grow][is_bid[grow]]
        q2[g[~is_bid[grow]]] += size[grow][~is_bid[grow]]
        s = idx[shrink]
        q1[s[is_bid[shrink]]] -= size[shrink][is_bid[shrink]]
        q2[s[~is_bid[shrink]]] -= size[shrink][~is_bid[shrink]]
        if depl.any():
            d = idx[depl]
            side[d] = np.where(is_bid[depl], 1, 2)
            pre1[d] = q1[d]
            pre2[d] = q2[d]
            alive[d] = False
    out[:, 0] = side
    out[:, 1] = pre1
    out[:, 2] = pre2
    out[:, 3] = n_ev


def race_paths(seed, n_paths, q1_0, q2_0, max_events, tables):
    """Race both queues to depletion; returns ``[side, pre_q1, pre_q2, n_events]``.

    ``side`` is 0 when the event budget ran out before either side depleted.
    """
    out = np.zeros((n_paths, 4), dtype=np.int64)
    args = (np.uint64(seed), n_paths, int(q1_0), int(q2_0), int(max_events), *tables, out)
    if NUMBA_ENABLED:
        _race_paths_nb(*args)
    else:
        with np.errstate(over="ignore"):
            _race_paths_np(*args)
    return out


# ---------------------------------------------------------------------------
# controlled policy paths (order size 1)

STATUS_OK = 0
STATUS_POLICY_MISS = 1
STATUS_EVENT_BUDGET = 2

DEC_STAY = 0
DEC_L = 1
DEC_C = 2
DEC_M = 3


@njit(cache=True, inline="always")
def _exec_value(q1, q2, p, pe, drift, qmax, tick, clip_lo, clip_hi):
    a = q1 if q1 < qmax else qmax
    b = q2 if q2 < qmax else qmax
    v = (p + drift[a, b]) * tick - pe
    if v < clip_lo:
        v = clip_lo
    if v > clip_hi:
        v = clip_hi
    return v


@njit(cache=True, inline="always")
def _market_now_value(b, a, f, q2, i, p, pe, tick, half_spread, alpha, drift, qmax,
                      start, count, out_q1, out_q2, out_dp, out_prob,
                      rstart, rcount, clip_lo, clip_hi):
    """Deterministic value of liquidating now: payoff wrapper outside the redraw mean."""
    q1 = b + a + f
    over = i - q2
    if over < 0:
        over = 0
    pe2 = pe + i * (p * tick + half_spread + alpha * over)
    inner = 0.0
    if i >= q2:
        s = rstart
        c = rcount
        for k in range(c):
            j = s + k
            qq1 = out_q1[j]
            qq2 = out_q2[j]
            a1 = qq1 if qq1 < qmax else qmax
            a2 = qq2 if qq2 < qmax else qmax
            inner += out_prob[j] * ((p + out_dp[j] + drift[a1, a2]) * tick)
    else:
        rest = b + f
        if rest >= 1:
            a1 = rest if rest < qmax else qmax
            a2 = q2 - i if q2 - i < qmax else qmax
            inner = (p + drift[a1, a2]) * tick
        else:
            # own cancel empties the bid: book redrawn as a bid depletion
            s = start[0, q1, q2]
            c = count[0, q1, q2]
            for k in range(c):
                j = s + k
                a1 = out_q1[j] if out_q1[j] < qmax else qmax
                a2 = out_q2[j] if out_q2[j] < qmax else qmax
                inner += out_prob[j] * ((p + out_dp[j] + drift[a1, a2]) * tick)
    v = inner - pe2
    if v < clip_lo:
        v = clip_lo
    if v > clip_hi:
        v = clip_hi
    return v


@njit(cache=True, parallel=True)
def _controlled_paths_nb(seed, n_paths, b0, a0, f0, q20, p0, pe0,
                         n_epochs, dt, horizon, regime_anytime,
                         tick, half_spread, alpha, wait_cost, clip_lo, clip_hi,
                         lp1, lc1, lm1, lp2, lc2, lm2,
                         start, count, out_q1, out_q2, out_dp, out_cum, out_prob,
                         drift, qmax, decisions, lookup, layer_off,
                         max_events, out_gain, out_cost, out_texec, out_nev, out_status):
    n_max = lp1.shape[2] - 1
    n_layers = lookup.shape[4]
    for path in prange(n_paths):
        rs = _init_state(seed, path)
        b = b0
        a = a0
        f = f0
        q2 = q20
        p = p0
        pe = pe0
        i = 1
        t = 0.0
        n_ev = 0
        status = STATUS_OK
        gain = 0.0
        cost = 0.0
        t_exec = horizon
        done = False
        fill_time = -1.0

        for k in range(n_epochs):
            # ---- decision at epoch k (only while unexecuted)
            if i > 0:
                lay = p + layer_off
                if lay < 0:
                    lay = 0
                if lay >= n_layers:
                    lay = n_layers - 1
                posted = 1 if a > 0 else 0
                row = lookup[posted, b, f, q2, lay]
                if row < 0:
                    status = STATUS_POLICY_MISS
                    done = True
                    break
                d = decisions[k, row]
                if d == DEC_M:
                    q1 = b + a + f
                    rst = start[1, q1, q2]
                    rct = count[1, q1, q2]
                    gain = _market_now_value(b, a, f, q2, i, p, pe, tick, half_spread,
                                             alpha, drift, qmax, start, count,
                                             out_q1, out_q2, out_dp, out_prob,
                                             rst, rct, clip_lo, clip_hi)
                    t_exec = t
                    if not regime_anytime:
                        cost = wait_cost * t
                    done = True
                    break
                if d == DEC_L and a == 0:
                    b = b + f
                    f = 0
                    a = i
                elif d == DEC_C and a > 0:
                    merged = b + f
                    if merged >= 1:
                        b = merged
                        f = 0
                        a = 0
                    else:
                        q1 = b + a + f
                        rs, u3 = _next_u(rs)
                        j = _pick_regen(rs, u3, 1, q1, q2, start, count, out_cum)
                        b = out_q1[j]
                        f = 0
                        a = 0
                        q2 = out_q2[j]
                        p += out_dp[j]

            # ---- evolve over (k dt, (k+1) dt]
            t_end = (k + 1) * dt
            if t_end > horizon:
                t_end = horizon
            if regime_anytime and i > 0:
                cost += wait_cost * (t_end - k * dt)
            while True:
                q1 = b + a + f
                tot = 0.0
                for n in range(1, n_max + 1):
                    tot += lp1[q1, q2, n] + lc1[q1, q2, n] + lm1[q1, q2, n]
                    tot += lp2[q1, q2, n] + lc2[q1, q2, n] + lm2[q1, q2, n]
                if tot <= 0.0:
                    t = t_end
                    break
                rs, u = _next_u(rs)
                dt_ev = -np.log(1.0 - u) / tot
                if t + dt_ev > t_end:
                    t = t_end
                    break
                t += dt_ev
                n_ev += 1
                if n_ev > max_events:
                    status = STATUS_EVENT_BUDGET
                    done = True
                    break
                rs, u = _next_u(rs)
                r = u * tot
                acc = 0.0
                cat = 5
                size = n_max
                found = False
                for c in range(6):
                    for n in range(1, n_max + 1):
                        if c == 0:
                            rate = lp1[q1, q2, n]
                        elif c == 1:
                            rate = lc1[q1, q2, n]
                        elif c == 2:
                            rate = lm1[q1, q2, n]
                        elif c == 3:
                            rate = lp2[q1, q2, n]
                        elif c == 4:
                            rate = lc2[q1, q2, n]
                        else:
                            rate = lm2[q1, q2, n]
                        acc += rate
                        if r < acc:
                            cat = c
                            size = n
                            found = True
                            break
                    if found:
                        break

                if cat == 0:
                    if a > 0:
                        f += size
                    else:
                        b += size
                elif cat == 3:
                    q2 += size
                elif cat == 1:  # bid cancellation by others
                    if a > 0:
                        cancellable = b + f
                        if size >= cancellable:
                            b = 0
                            f = 0
                        else:
                            if size <= f:
                                f -= size
                            else:
                                b = b + f - size
                                f = 0
                    else:
                        if size >= q1:
                            rs, u3 = _next_u(rs)
                            j = _pick_regen(rs, u3, 1, q1, q2, start, count, out_cum)
                            b = out_q1[j]
                            f = 0
                            q2 = out_q2[j]
                            p += out_dp[j]
                        else:
                            b -= size
                elif cat == 2:  # market order hits the bid
                    if size >= q1:
                        filled = a
                        rs, u3 = _next_u(rs)
                        j = _pick_regen(rs, u3, 1, q1, q2, start, count, out_cum)
                        if filled > 0:
                            pe += filled * (p * tick - half_spread)
                            i = 0
                            a = 0
                            fill_time = t
                        b = out_q1[j]
                        f = 0
                        q2 = out_q2[j]
                        p += out_dp[j]
                    else:
                        cb = size if size < b else b
                        rem = size - cb
                        ca = rem if rem < a else a
                        rem -= ca
                        cf = rem if rem < f else f
                        b -= cb
                        f -= cf
                        if ca > 0:
                            pe += ca * (p * tick - half_spread)
                            a -= ca
                            i = a
                            if i == 0:
                                fill_time = t
                else:  # ask-side consumption
                    if size >= q2:
                        rs, u3 = _next_u(rs)
                        j = _pick_regen(rs, u3, 2, q1, q2, start, count, out_cum)
                        nq1 = out_q1[j]
                        ndp = out_dp[j]
                        if a > 0:
                            if ndp == 0 and nq1 == q1:
                                q2 = out_q2[j]
                            else:
                                # redrawn bid volume sits ahead of the agent
                                b = nq1
                                f = 0
                                q2 = out_q2[j]
                                p += ndp
                        else:
                            b = nq1
                            f = 0
                            q2 = out_q2[j]
                            p += ndp
                    else:
                        q2 -= size

                if i == 0 and not regime_anytime:
                    gain = _exec_value(b + a + f, q2, p, pe, drift, qmax, tick,
                                       clip_lo, clip_hi)
                    t_exec = fill_time
                    cost = wait_cost * fill_time
                    done = True
                    break
            if done:
                break
            if i == 0 and regime_anytime:
                gain = _exec_value(b + a + f, q2, p, pe, drift, qmax, tick,
                                   clip_lo, clip_hi)
                t_exec = fill_time
                done = True
                break

        if not done and status == STATUS_OK:
            # forced liquidation at the horizon
            q1 = b + a + f
            rst = start[1, q1, q2]
            rct = count[1, q1, q2]
            gain = _market_now_value(b, a, f, q2, i, p, pe, tick, half_spread,
                                     alpha, drift, qmax, start, count,
                                     out_q1, out_q2, out_dp, out_prob,
                                     rst, rct, clip_lo, clip_hi)
            t_exec = horizon
            if not regime_anytime:
                cost = wait_cost * horizon

        out_gain[path] = gain
        out_cost[path] = cost
        out_texec[path] = t_exec
        out_nev[path] = n_ev
        out_status[path] = status


def controlled_paths(seed, n_paths, init_state, n_epochs, dt, horizon, regime_anytime,
                     cfg_scalars, tables, regen_pack, drift, qmax, decisions, lookup,
                     layer_off, max_events):
    """Run policy-driven paths for a unit order; see the simulate module for the API."""
    b0, a0, f0, q20, p0, pe0 = init_state
    tick, half_spread, alpha, wait_cost, clip_lo, clip_hi = cfg_scalars
    out_gain = np.zeros(n_paths)
    out_cost = np.zeros(n_paths)
    out_texec = np.zeros(n_paths)
    out_nev = np.zeros(n_paths, dtype=np.int64)
    out_status = np.zeros(n_paths, dtype=np.int64)
    args = (np.uint64(seed), n_paths, int(b0), int(a0), int(f0), int(q20), int(p0),
            float(pe0), int(n_epochs), float(dt), float(horizon), bool(regime_anytime),
            float(tick), float(half_spread), float(alpha), float(wait_cost),
            float(clip_lo), float(clip_hi), *tables, *regen_pack, drift, int(qmax),
            decisions, lookup, int(layer_off), int(max_events),
            out_gain, out_cost, out_texec, out_nev, out_status)
    if NUMBA_ENABLED:
        _controlled_paths_nb(*args)
    else:
        with np.errstate(over="ignore"):
            fn = getattr(_controlled_paths_nb, "py_func", _controlled_paths_nb)
            fn(*args)
    return out_gain, out_cost, out_texec, out_nev, out_status


# ---------------------------------------------------------------------------
# synthetic event stream (single path, market only)


@njit(cache=True)
def _synthetic_events_nb(seed, n_events, q1_0, q2_0,
                         lp1, lc1, lm1, lp2, lc2, lm2,
                         start, count, out_q1, out_q2, out_dp, out_cum,
                         ev_t, ev_kind, ev_side, ev_size, ev_q1, ev_q2, ev_mid):
    n_max = lp1.shape[2] - 1
    rs = _init_state(seed, 0)
    q1 = q1_0
    q2 = q2_0
    p = 0
    t = 0.0
    for e in range(n_events):
        tot = 0.0
        for n in range(1, n_max + 1):
            tot += lp1[q1, q2, n] + lc1[q1, q2, n] + lm1[q1, q2, n]
            tot += lp2[q1, q2, n] + lc2[q1, q2, n] + lm2[q1, q2, n]
        if tot <= 0.0:
            return e
        rs, u = _next_u(rs)
        t += -np.log(1.0 - u) / tot
        rs, u = _next_u(rs)
        r = u * tot
        acc = 0.0
        cat = 5
        size = n_max
        found = False
        for c in range(6):
            for n in range(1, n_max + 1):
                if c == 0:
                    rate = lp1[q1, q2, n]
                elif c == 1:
                    rate = lc1[q1, q2, n]
                elif c == 2:
                    rate = lm1[q1, q2, n]
                elif c == 3:
                    rate = lp2[q1, q2, n]
                elif c == 4:
                    rate = lc2[q1, q2, n]
                else:
                    rate = lm2[q1, q2, n]
                acc += rate
                if r < acc:
                    cat = c
                    size = n
                    found = True
                    break
            if found:
                break
        ev_t[e] = t
        ev_kind[e] = 0 if (cat == 0 or cat == 3) else (1 if (cat == 1 or cat == 4) else 2)
        ev_side[e] = 1 if cat < 3 else 2
        ev_size[e] = size
        ev_q1[e] = q1
        ev_q2[e] = q2
        ev_mid[e] = p
        if cat == 0:
            q1 += size
        elif cat == 3:
            q2 += size
        else:
            own = q1 if cat < 3 else q2
            if size >= own:
                rs, u3 = _next_u(rs)
                side = 1 if cat < 3 else 2
                j = _pick_regen(rs, u3, side, q1, q2, start, count, out_cum)
                q1 = out_q1[j]
                q2 = out_q2[j]
                p += out_dp[j]
            else:
                if cat < 3:
                    q1 -= size
                else:
                    q2 -= size
    return n_events


def synthetic_events(seed, n_events, q1_0, q2_0, tables, regen_pack):
    """Generate a market-only event stream; returns pre-event state per record."""
    ev_t = np.zeros(n_events)
    ev_kind = np.zeros(n_events, dtype=np.int64)
    ev_side = np.zeros(n_events, dtype=np.int64)
    ev_size = np.zeros(n_events, dtype=np.int64)
    ev_q1 = np.zeros(n_events, dtype=np.int64)
    ev_q2 = np.zeros(n_events, dtype=np.int64)
    ev_mid = np.zeros(n_events, dtype=np.int64)
    args = (np.uint64(seed), int(n_events), int(q1_0), int(q2_0), *tables,
            *regen_pack[:6], ev_t, ev_kind, ev_side, ev_size, ev_q1, ev_q2, ev_mid)
    if NUMBA_ENABLED:
        n = _synthetic_events_nb(*args)
    else:
        with np.errstate(over="ignore"):
            fn = getattr(_synthetic_events_nb, "py_func", _synthetic_events_nb)
            n = fn(*args)
    sl = slice(0, int(n))
    return (ev_t[sl], ev_kind[sl], ev_side[sl], ev_size[sl], ev_q1[sl], ev_q2[sl], ev_mid[sl])
