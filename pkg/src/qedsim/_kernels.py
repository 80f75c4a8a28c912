"""Compiled event loops for the Markovian sample-path constructions.

Event type codes: 0 arrival, 1 departure, 2 abandonment, 3 blocked arrival.
Simultaneous candidate events are resolved in that order.
"""
import numpy as np
from numba import njit

INF_COUNT = np.int64(2**62)


@njit(cache=True)
def time_change_loop(q0, servers, capacity, mu, theta, arr_times, s_epochs, r_epochs, horizon):
    """Random-time-change construction driven by unit-rate streams.

    A departure happens when the service clock ``I_S = mu * int (Q ^ servers)``
    reaches the next epoch of the unit-rate stream ``s_epochs``; abandonments
    likewise with ``I_R = theta * int (Q - servers)^+`` and ``r_epochs``.
    """
    cap = arr_times.size + s_epochs.size + r_epochs.size
    times = np.empty(cap)
    types = np.empty(cap, np.int8)
    q_after = np.empty(cap, np.int64)
    t = 0.0
    clock_s = 0.0
    clock_r = 0.0
    q = q0
    ia = 0
    js = 0
    jr = 0
    k = 0
    exhausted = False
    while True:
        ta = arr_times[ia] if ia < arr_times.size else np.inf
        busy = q if q < servers else servers
        waiting = q - servers if q > servers else 0
        rs = mu * busy
        rr = theta * waiting
        td = np.inf
        if rs > 0.0:
            if js < s_epochs.size:
                td = t + (s_epochs[js] - clock_s) / rs
            else:
                exhausted = True
        tr = np.inf
        if rr > 0.0:
            if jr < r_epochs.size:
                tr = t + (r_epochs[jr] - clock_r) / rr
            else:
                exhausted = True
        tn = min(ta, min(td, tr))
        stop = tn > horizon or exhausted
        if stop:
            tn = horizon
        # both clocks advance together before the state changes
        clock_s = clock_s + rs * (tn - t)
        clock_r = clock_r + rr * (tn - t)
        t = tn
        if stop:
            break
        if ta <= td and ta <= tr:
            ia += 1
            if q >= capacity:
                types[k] = 3
            else:
                q += 1
                types[k] = 0
        elif td <= tr:
            # snap to the stream epoch to avoid drift
            clock_s = s_epochs[js]
            js += 1
            q -= 1
            types[k] = 1
        else:
            clock_r = r_epochs[jr]
            jr += 1
            q -= 1
            types[k] = 2
        times[k] = t
        q_after[k] = q
        k += 1
    return times[:k], types[:k], q_after[:k], clock_s, clock_r, js, jr, exhausted


@njit(cache=True)
def _advance(next_epoch, level, t, rate, gaps, pos):
    # bring a (re)activated level's stream past time t; returns gap cursor
    if np.isnan(next_epoch[level]):
        if pos >= gaps.size:
            return -1
        next_epoch[level] = t + gaps[pos] / rate
        pos += 1
    while next_epoch[level] <= t:
        if pos >= gaps.size:
            return -1
        next_epoch[level] += gaps[pos] / rate
        pos += 1
    return pos


@njit(cache=True)
def thinning_loop(q0, servers, capacity, mu, theta, arr_times, s_gaps, r_gaps, max_level, horizon):
    """Thinning construction with one rate-``mu`` stream per busy-server level.

    Level ``k`` fires a departure at its epoch ``s`` only if ``Q(s-) ^ servers >= k``;
    waiting position ``k`` has its own rate-``theta`` abandonment stream.
    Streams are instantiated lazily; a level's stream is advanced past the
    current time when the level becomes active again (its epochs while
    inactive are thinned away).
    """
    cap = arr_times.size + s_gaps.size + r_gaps.size
    times = np.empty(cap)
    types = np.empty(cap, np.int8)
    q_after = np.empty(cap, np.int64)
    next_s = np.full(max_level + 2, np.nan)
    next_r = np.full(max_level + 2, np.nan)
    ps = 0
    pr = 0
    t = 0.0
    q = q0
    ia = 0
    k = 0
    ok = True
    busy = q if q < servers else servers
    waiting = q - servers if q > servers else 0
    for lev in range(1, busy + 1):
        ps = _advance(next_s, lev, t, mu, s_gaps, ps)
        if ps < 0:
            ok = False
            break
    if ok and theta > 0.0:
        for lev in range(1, waiting + 1):
            pr = _advance(next_r, lev, t, theta, r_gaps, pr)
            if pr < 0:
                ok = False
                break
    while ok:
        ta = arr_times[ia] if ia < arr_times.size else np.inf
        busy = q if q < servers else servers
        waiting = q - servers if q > servers else 0
        td = np.inf
        kd = -1
        if mu > 0.0:
            for lev in range(1, busy + 1):
                if next_s[lev] < td:
                    td = next_s[lev]
                    kd = lev
        tr = np.inf
        kr = -1
        if theta > 0.0:
            for lev in range(1, waiting + 1):
                if next_r[lev] < tr:
                    tr = next_r[lev]
                    kr = lev
        tn = min(ta, min(td, tr))
        if tn > horizon:
            break
        if ta <= td and ta <= tr:
            t = ta
            ia += 1
            if q >= capacity:
                types[k] = 3
            else:
                q += 1
                types[k] = 0
                if q <= servers:
                    if mu > 0.0:
                        ps = _advance(next_s, q, t, mu, s_gaps, ps)
                        if ps < 0:
                            ok = False
                elif theta > 0.0:
                    pr = _advance(next_r, q - servers, t, theta, r_gaps, pr)
                    if pr < 0:
                        ok = False
        elif td <= tr:
            t = td
            if ps >= s_gaps.size:
                ok = False
                break
            next_s[kd] = t + s_gaps[ps] / mu
            ps += 1
            q -= 1
            types[k] = 1
            # a waiting customer enters service: level `servers` stays busy
            if q >= servers and mu > 0.0:
                ps = _advance(next_s, servers, t, mu, s_gaps, ps)
                if ps < 0:
                    ok = False
        else:
            t = tr
            if pr >= r_gaps.size:
                ok = False
                break
            next_r[kr] = t + r_gaps[pr] / theta
            pr += 1
            q -= 1
            types[k] = 2
        times[k] = t
        q_after[k] = q
        k += 1
    return times[:k], types[:k], q_after[:k], ok
