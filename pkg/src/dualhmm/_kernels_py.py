"""Pure numpy versions of the compiled kernels.

Same signatures and results (up to rounding) as :mod:`dualhmm._kernels`.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import binom

# binomial terms below this log-fraction of the row's mode term are dropped
LOG_BINOM_TAIL = np.log(1e-30)


def pushforward_sparse(src, logw, level, lf, shape, out):
    src = np.asarray(src)
    K = src.shape[1]
    strides = np.ones(K, dtype=np.int64)
    for j in range(K - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]
    for m, lw in zip(src, logw):
        if lw == -np.inf:
            continue
        M = int(m.sum())
        n = np.indices(tuple(int(v) + 1 for v in m)).reshape(K, -1).T
        N = n.sum(axis=1)
        acc = (lw + lf[m].sum() - lf[M]
               - (lf[n] + lf[m - n]).sum(axis=1)
               + level[M, N] + lf[N] + lf[M - N])
        np.add.at(out, n @ strides, np.exp(acc))


def pushforward_binomial(src, logw, p, lf, out):
    if not 0.0 < p < 1.0:
        raise ValueError("survival probability must lie in (0, 1)")
    src = np.asarray(src)
    for mm, lw in zip(src, logw):
        if lw == -np.inf:
            continue
        lp = binom.logpmf(np.arange(mm + 1), mm, p)
        lp[lp < np.max(lp) + LOG_BINOM_TAIL] = -np.inf
        out[: mm + 1] += np.exp(lw + lp)


def _normalize_dense(lw, hi):
    seg = lw[: hi + 1]
    top = np.max(seg)
    if top == -np.inf:
        return -np.inf
    tot = top + np.log(np.sum(np.exp(seg - top)))
    seg -= tot
    return tot


def cir_filter_loglik(times, offsets, counts, shape0, theta0, gamma, lam, rule_kind, rule_value,
                      relative, log_marg, rec_pred=None, rec_filt=None):
    from scipy.special import gammaln

    T1 = times.shape[0]
    cap = 1 + int(np.sum(counts[: offsets[T1]]))
    lw = np.full(cap, -np.inf)
    lw[0] = 0.0
    hi = 0
    theta = theta0
    warned = 0
    for i in range(T1):
        if i > 0:
            em1 = np.expm1(2.0 * gamma * (times[i] - times[i - 1]))
            p = 0.0 if not np.isfinite(em1) else theta0 / (theta * em1 + theta0)
            if p <= 0.0:
                lw[:] = -np.inf
                lw[0] = 0.0
                hi = 0
            elif p < 1.0:
                seg = lw[: hi + 1]
                live = np.nonzero(seg > -np.inf)[0]
                top = np.max(seg[live])
                out = np.zeros(hi + 1)
                pushforward_binomial(live, seg[live] - top, p, None, out)
                with np.errstate(divide="ignore"):
                    lw[: hi + 1] = np.log(out) + top
                _normalize_dense(lw, hi)
            theta = theta0 if not np.isfinite(em1) else theta0 * theta * (em1 + 1.0) / (theta * em1 + theta0)
        if rec_pred is not None:
            live = np.nonzero(lw[: hi + 1] > -np.inf)[0]
            rec_pred.append((int(live[0]), lw[live[0]: hi + 1].copy(), theta))
        tot = 0.0
        for y in counts[offsets[i]:offsets[i + 1]]:
            y = int(y)
            r = shape0 + np.arange(hi + 1)
            seg = lw[: hi + 1]
            seg += (gammaln(r + y) - gammaln(r) - gammaln(y + 1.0)
                    + r * np.log(theta / (theta + lam)) + y * np.log(lam / (theta + lam)))
            if y > 0:
                lw[y: hi + 1 + y] = seg.copy()
                lw[:y] = -np.inf
                hi += y
            theta += lam
            acc = _normalize_dense(lw, hi)
            if acc == -np.inf:
                raise FloatingPointError(f"all mixture weights vanish at time index {i}")
            tot += acc
        log_marg[i] = tot
        live = np.nonzero(lw[: hi + 1] > -np.inf)[0]
        if rule_kind == 0 or (rule_kind == 2 and rule_value >= 1.0):
            if rec_filt is not None:
                rec_filt.append((int(live[0]), lw[live[0]: hi + 1].copy(), theta))
            continue
        w = np.exp(lw[live])
        n = live.size
        order = np.argsort(-w, kind="stable")
        if rule_kind == 1:
            keep = order[: int(rule_value)] if rule_value < n else order
        elif rule_kind == 2:
            cum = np.cumsum(w[order])
            keep = order[: min(int(np.searchsorted(cum, rule_value, side="left")) + 1, n)]
        else:
            ref = rule_value * w.max() if relative else rule_value
            keep = np.nonzero(w >= ref)[0]
            if keep.size == 0:
                warned += 1
                keep = order[:1]
        if keep.size < n:
            kept = lw[live[keep]].copy()
            lw[: hi + 1] = -np.inf
            lw[live[keep]] = kept
            _normalize_dense(lw, hi)
            hi = int(np.max(live[keep]))
        if rec_filt is not None:
            live = np.nonzero(lw[: hi + 1] > -np.inf)[0]
            rec_filt.append((int(live[0]), lw[live[0]: hi + 1].copy(), theta))
    return warned


def cir_backward_indices(x_next, u, pr, plw, pth, r, logw, th, tp, rate, shape0, max_terms, block=64):
    from scipy.special import gammaln

    lxn = np.log(x_next)[:, None]
    lt = plw[None, :] + pr[None, :] * np.log(pth) - gammaln(pr)[None, :] + (pr[None, :] - 1.0) * lxn
    top = np.max(lt, axis=1)
    log_nu = top + np.log(np.sum(np.exp(lt - top[:, None]), axis=1)) - pth * x_next

    n = x_next.shape[0]
    lth = np.log(th / (th + tp))
    ltp = np.log(tp / (th + tp))
    lgr = gammaln(r)
    S = np.zeros(0)

    def grow(upto):
        nonlocal S
        k0 = S.shape[0]
        if upto <= k0:
            return
        k = np.arange(k0, upto, dtype=float)[:, None]
        lt = logw[None, :] + gammaln(r[None, :] + k) - lgr[None, :] - gammaln(k + 1.0) + r[None, :] * lth + k * ltp
        top = np.max(lt, axis=1)
        with np.errstate(invalid="ignore"):
            s = top + np.log(np.sum(np.exp(lt - np.where(np.isfinite(top), top, 0.0)[:, None]), axis=1))
        S = np.concatenate([S, np.where(np.isfinite(top), s, -np.inf)])

    cum = np.zeros(n)
    k_out = np.full(n, -1, dtype=np.int64)
    resid = np.zeros(n)
    last = np.full(n, -1, dtype=np.int64)
    stall = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    k0 = 0
    lx = np.log(x_next)
    while active.size:
        if k0 > max_terms:
            raise RuntimeError("backward kernel mass did not reach the uniform; weights are inconsistent")
        ks = np.arange(k0, k0 + block)
        grow(k0 + block)
        sh = shape0 + ks.astype(float)
        lo = (sh[None, :] * np.log(rate) - gammaln(sh)[None, :] + (sh[None, :] - 1.0) * lx[active, None]
              - rate * x_next[active, None])
        p = np.exp(lo + S[ks][None, :] - log_nu[active, None])
        c = cum[active, None] + np.cumsum(p, axis=1)
        uu = u[active]
        hit = c[:, -1] >= uu
        if np.any(hit):
            rows = np.nonzero(hit)[0]
            pos = (c[rows] < uu[rows, None]).sum(axis=1)
            prev = np.where(pos > 0, c[rows, np.maximum(pos - 1, 0)], cum[active[rows]])
            k_out[active[rows]] = ks[pos]
            resid[active[rows]] = (uu[rows] - prev) / p[rows, pos]
        nz = p > 0
        has = nz.any(axis=1)
        lastpos = nz.shape[1] - 1 - np.argmax(nz[:, ::-1], axis=1)
        last[active[has]] = ks[lastpos[has]]
        tiny = p.sum(axis=1) <= 1e-15 * np.maximum(c[:, -1], 1e-300)
        stall[active] = np.where(tiny, stall[active] + 1, 0)
        done_round = ~hit & (stall[active] >= 2) & (c[:, -1] > 0.999999) & (last[active] >= 0)
        if np.any(done_round):
            rows = active[done_round]
            k_out[rows] = last[rows]
            resid[rows] = 1.0
        cum[active] = c[:, -1]
        active = active[~hit & ~done_round]
        k0 += block
    m_out = np.empty(n, dtype=np.int64)
    for k in np.unique(k_out):
        rows = np.nonzero(k_out == k)[0]
        lt = logw + gammaln(r + k) - lgr + r * lth
        c = np.cumsum(np.exp(lt - np.max(lt)))
        m_out[rows] = np.minimum(np.searchsorted(c, resid[rows] * c[-1], side="left"), c.shape[0] - 1)
    return k_out, m_out
