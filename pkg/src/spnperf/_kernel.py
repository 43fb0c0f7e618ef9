"""Compiled event loop for :func:`spnperf.sim.simulate`.

All net structure arrives as flat CSR arrays; see ``sim._flatten``.
Exponential transitions race through a single aggregated clock (direct
method), deterministic transitions keep an absolute firing time while
enabled and lose it when disabled (enabling memory).
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_VANISHING_LOOP = 1


@njit(cache=True)
def _eval_prog(prog, lo, hi, m, stack):
    if lo == hi:
        return True
    sp = 0
    for k in range(lo, hi):
        op = prog[k, 0]
        if op <= 4:
            v = m[prog[k, 1]]
            c = prog[k, 2]
            if op == 0:
                r = v > c
            elif op == 1:
                r = v >= c
            elif op == 2:
                r = v == c
            elif op == 3:
                r = v < c
            else:
                r = v <= c
            stack[sp] = r
            sp += 1
        elif op == 7:
            stack[sp - 1] = not stack[sp - 1]
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == 5:
                stack[sp - 1] = a and b
            else:
                stack[sp - 1] = a or b
    return stack[0]


@njit(cache=True)
def _degree(t, m, infinite, in_ptr, in_p, in_w, inh_ptr, inh_p, inh_w, g_ptr, g_prog, stack):
    for k in range(inh_ptr[t], inh_ptr[t + 1]):
        if m[inh_p[k]] >= inh_w[k]:
            return 0
    deg = -1
    for k in range(in_ptr[t], in_ptr[t + 1]):
        q = m[in_p[k]] // in_w[k]
        if q == 0:
            return 0
        if deg < 0 or q < deg:
            deg = q
    if not _eval_prog(g_prog, g_ptr[t], g_ptr[t + 1], m, stack):
        return 0
    if deg < 0 or not infinite[t]:
        return 1
    return deg


@njit(cache=True)
def run(
    kind, param, prio, infinite,
    in_ptr, in_p, in_w, inh_ptr, inh_p, inh_w,
    d_ptr, d_p, d_c, g_ptr, g_prog, dep_ptr, dep_t,
    c_ptr, c_prog, track, m0,
    seed, warmup, batch_len, n_batches, K, max_vanishing,
):
    np.random.seed(seed)
    n_t = kind.shape[0]
    n_p = m0.shape[0]
    n_c = c_ptr.shape[0] - 1
    m = m0.copy()
    stack = np.zeros(max(g_prog.shape[0], c_prog.shape[0]) + 1, dtype=np.bool_)

    batch_tok = np.zeros((n_batches, n_p))
    batch_fire = np.zeros((n_batches, n_t))
    batch_cond = np.zeros((n_batches, max(n_c, 1)))
    hist = np.zeros((n_p, K + 1))
    truncated = False

    deg = np.zeros(n_t, dtype=np.int64)
    det_time = np.full(n_t, np.inf)
    for t in range(n_t):
        deg[t] = _degree(t, m, infinite, in_ptr, in_p, in_w, inh_ptr, inh_p, inh_w, g_ptr, g_prog, stack)
        if kind[t] == 2 and deg[t] > 0:
            det_time[t] = param[t]
    cond = np.zeros(max(n_c, 1), dtype=np.bool_)
    for c in range(n_c):
        cond[c] = _eval_prog(c_prog, c_ptr[c], c_ptr[c + 1], m, stack)

    end = warmup + n_batches * batch_len
    now = 0.0
    status = STATUS_OK
    first = True

    while True:
        if not first:
            # choose and fire the next timed transition
            rate_sum = 0.0
            for t in range(n_t):
                if kind[t] == 1 and deg[t] > 0:
                    rate_sum += param[t] * deg[t]
            t_exp = np.inf
            if rate_sum > 0.0:
                t_exp = now + np.random.exponential(1.0 / rate_sum)
            t_det = np.inf
            det_idx = -1
            for t in range(n_t):
                if kind[t] == 2 and det_time[t] < t_det:
                    t_det = det_time[t]
                    det_idx = t
            nxt = t_exp if t_exp < t_det else t_det
            if nxt >= end:
                nxt = end
            # accumulate time-weighted statistics over [now, nxt)
            a = now
            while a < nxt:
                if a < warmup:
                    a = warmup if nxt > warmup else nxt
                    continue
                bi = int((a - warmup) / batch_len)
                if bi >= n_batches:
                    bi = n_batches - 1
                seg_end = warmup + (bi + 1) * batch_len
                if seg_end > nxt or bi == n_batches - 1:
                    seg_end = nxt
                dt = seg_end - a
                for p in range(n_p):
                    v = m[p]
                    batch_tok[bi, p] += v * dt
                    if track[p]:
                        if v > K:
                            hist[p, K] += dt
                            truncated = True
                        else:
                            hist[p, v] += dt
                for c in range(n_c):
                    if cond[c]:
                        batch_cond[bi, c] += dt
                a = seg_end
            now = nxt
            if now >= end:
                break
            if t_exp < t_det:
                u = np.random.random() * rate_sum
                chosen = -1
                for t in range(n_t):
                    if kind[t] == 1 and deg[t] > 0:
                        chosen = t
                        u -= param[t] * deg[t]
                        if u < 0.0:
                            break
            else:
                chosen = det_idx
            _fire(chosen, now, m, deg, det_time, kind, param, infinite,
                  in_ptr, in_p, in_w, inh_ptr, inh_p, inh_w, d_ptr, d_p, d_c,
                  g_ptr, g_prog, dep_ptr, dep_t, stack)
            if now >= warmup:
                bi = min(int((now - warmup) / batch_len), n_batches - 1)
                batch_fire[bi, chosen] += 1.0
        first = False

        # resolve vanishing markings in zero time
        count = 0
        while True:
            best = -1
            wsum = 0.0
            ncand = 0
            last = -1
            for t in range(n_t):
                if kind[t] == 0 and deg[t] > 0:
                    if prio[t] > best:
                        best = prio[t]
                        wsum = param[t]
                        ncand = 1
                        last = t
                    elif prio[t] == best:
                        wsum += param[t]
                        ncand += 1
            if best < 0:
                break
            count += 1
            if count > max_vanishing:
                status = STATUS_VANISHING_LOOP
                break
            if ncand == 1:
                chosen = last
            else:
                u = np.random.random() * wsum
                chosen = -1
                for t in range(n_t):
                    if kind[t] == 0 and deg[t] > 0 and prio[t] == best:
                        chosen = t
                        u -= param[t]
                        if u < 0.0:
                            break
            _fire(chosen, now, m, deg, det_time, kind, param, infinite,
                  in_ptr, in_p, in_w, inh_ptr, inh_p, inh_w, d_ptr, d_p, d_c,
                  g_ptr, g_prog, dep_ptr, dep_t, stack)
            if now >= warmup:
                bi = min(int((now - warmup) / batch_len), n_batches - 1)
                batch_fire[bi, chosen] += 1.0
        if status != STATUS_OK:
            break
        for c in range(n_c):
            cond[c] = _eval_prog(c_prog, c_ptr[c], c_ptr[c + 1], m, stack)

    return batch_tok, batch_fire, batch_cond, hist, truncated, status, now, m


@njit(cache=True)
def _fire(t, now, m, deg, det_time, kind, param, infinite,
          in_ptr, in_p, in_w, inh_ptr, inh_p, inh_w, d_ptr, d_p, d_c,
          g_ptr, g_prog, dep_ptr, dep_t, stack):
    for k in range(d_ptr[t], d_ptr[t + 1]):
        m[d_p[k]] += d_c[k]
    if kind[t] == 2:
        det_time[t] = np.inf
    for k in range(dep_ptr[t], dep_ptr[t + 1]):
        u = dep_t[k]
        deg[u] = _degree(u, m, infinite, in_ptr, in_p, in_w, inh_ptr, inh_p, inh_w, g_ptr, g_prog, stack)
        if kind[u] == 2:
            if deg[u] == 0:
                det_time[u] = np.inf
            elif det_time[u] == np.inf:
                det_time[u] = now + param[u]
