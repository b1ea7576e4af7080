# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: death-process pushforwards and a fused CIR filter loop."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, floor, log, log1p, INFINITY
from libc.math cimport expm1 as expm1_, lgamma as lgamma_
from libc.stdlib cimport qsort

cnp.import_array()


def pushforward_sparse(const cnp.int64_t[:, ::1] src, const double[::1] logw,
                       const double[:, ::1] level, const double[::1] lf,
                       shape, double[::1] out):
    """Accumulate ``sum_m w_m p_{m,n}`` into the flattened dense box ``out``.

    ``p_{m,n} = P(|m| -> |n|) * prod_j C(m_j, n_j) / C(|m|, |n|)`` with the
    level probabilities ``exp(level[M, N])`` and ``lf`` a table of
    ``log(k!)``.  ``logw`` must already be shifted so that its maximum is 0.
    """
    cdef Py_ssize_t n_src = src.shape[0]
    cdef Py_ssize_t K = src.shape[1]
    cdef Py_ssize_t[32] strides
    cdef cnp.int64_t[32] n
    cdef cnp.int64_t[32] m
    cdef Py_ssize_t i, j, flat
    cdef cnp.int64_t M, N
    cdef double base, acc
    if K > 32:
        raise ValueError("dimension above 32 not supported by the compiled kernel")
    strides[K - 1] = 1
    for j in range(K - 2, -1, -1):
        strides[j] = strides[j + 1] * shape[j + 1]
    for i in range(n_src):
        if logw[i] == -INFINITY:
            continue
        M = 0
        base = logw[i]
        for j in range(K):
            m[j] = src[i, j]
            M += m[j]
            base += lf[m[j]]
            n[j] = 0
        base -= lf[M]
        # odometer over all n <= m
        while True:
            N = 0
            acc = base
            flat = 0
            for j in range(K):
                N += n[j]
                acc -= lf[n[j]] + lf[m[j] - n[j]]
                flat += n[j] * strides[j]
            acc += level[M, N] + lf[N] + lf[M - N]
            out[flat] += exp(acc)
            j = K - 1
            while j >= 0:
                if n[j] < m[j]:
                    n[j] += 1
                    break
                n[j] = 0
                j -= 1
            if j < 0:
                break


# Binomial terms below this fraction of a row's mode term are not generated.
# The dropped mass per row is below 1e-27, far under double rounding of the rest.
DEF BINOM_TAIL = 1e-30


cdef inline void _binom_row(cnp.int64_t mm, double logw, double p, double lp, double lq, double r,
                            const double* lf, double* out) noexcept nogil:
    """``out[n] += exp(logw) Bin(n; mm, p)`` from the mode outwards by the pmf ratio."""
    cdef cnp.int64_t mode, k
    cdef double val, top, cut
    mode = <cnp.int64_t>floor((mm + 1) * p)
    if mode > mm:
        mode = mm
    top = exp(logw + lf[mm] - lf[mode] - lf[mm - mode] + mode * lp + (mm - mode) * lq)
    if top == 0.0:
        return
    cut = top * BINOM_TAIL
    out[mode] += top
    val = top
    k = mode
    while k < mm:
        val *= (mm - k) * r / (k + 1)
        if val < cut:
            break
        k += 1
        out[k] += val
    val = top
    k = mode
    while k > 0:
        val *= k / (r * (mm - k + 1))
        if val < cut:
            break
        k -= 1
        out[k] += val


def pushforward_binomial(const cnp.int64_t[::1] src, const double[::1] logw,
                         double p, const double[::1] lf, double[::1] out):
    """Binomial thinning pushforward ``out[n] += w_m Bin(n; m, p)`` on one axis.

    Each row is generated from its mode by the pmf ratio recurrence, so
    only one ``exp`` is evaluated per source.
    """
    cdef Py_ssize_t i
    if not (0.0 < p < 1.0):
        raise ValueError("survival probability must lie in (0, 1)")
    cdef double lp = log(p), lq = log1p(-p), r = p / (1.0 - p)
    for i in range(src.shape[0]):
        if logw[i] == -INFINITY:
            continue
        _binom_row(src[i], logw[i], p, lp, lq, r, &lf[0], &out[0])


cdef struct _Entry:
    double w
    Py_ssize_t pos


cdef int _cmp_entry(const void* a, const void* b) noexcept nogil:
    cdef const _Entry* x = <const _Entry*> a
    cdef const _Entry* y = <const _Entry*> b
    if x.w > y.w:
        return -1
    if x.w < y.w:
        return 1
    if x.pos < y.pos:
        return -1
    if x.pos > y.pos:
        return 1
    return 0


cdef double _normalize(double* lw, Py_ssize_t lo, Py_ssize_t hi) noexcept nogil:
    """Normalize ``lw[lo..hi]`` in place and return the log total."""
    cdef Py_ssize_t k
    cdef double top = -INFINITY, s = 0.0, tot
    for k in range(lo, hi + 1):
        if lw[k] > top:
            top = lw[k]
    if top == -INFINITY:
        return -INFINITY
    for k in range(lo, hi + 1):
        if lw[k] != -INFINITY:
            s += exp(lw[k] - top)
    tot = top + log(s)
    for k in range(lo, hi + 1):
        if lw[k] != -INFINITY:
            lw[k] -= tot
    return tot


def cir_filter_loglik(const double[::1] times, const cnp.int64_t[::1] offsets,
                      const cnp.int64_t[::1] counts, double shape0, double theta0,
                      double gamma, double lam, int rule_kind, double rule_value,
                      bint relative, double[::1] log_marg, list rec_pred=None, list rec_filt=None):
    """Fused CIR/Poisson filter returning per-time log predictive probabilities.

    The mixture is kept as a dense vector of log-weights over ``m``, with
    ``-inf`` for absent indices and every live index inside ``[lo, hi]``.
    Each time step folds the count rows ``counts[offsets[i]:offsets[i+1]]``,
    prunes by ``rule_kind`` (0 off, 1 fixed number, 2 fixed mass, 3 fixed
    threshold) and predicts by binomial thinning.  Returns the number of
    threshold steps that would have removed every component.

    When ``rec_pred`` / ``rec_filt`` are lists, ``(lo, log_weights[lo..hi],
    theta)`` is appended for every predictive / filtering mixture.
    """
    cdef Py_ssize_t T1 = times.shape[0]
    cdef Py_ssize_t cap = 1, i, r, k, n_live, keep, lo, hi
    cdef cnp.int64_t y
    cdef double theta = theta0, tot, acc, em1, p, lp_, lq, ratio, top, ref, cum, ly, lth, lla
    cdef int warned = 0
    for r in range(offsets[T1]):
        cap += counts[r]
    cdef double[::1] lw = np.full(cap, -INFINITY)
    cdef double[::1] tmp = np.zeros(cap)
    cdef double[::1] lf = np.zeros(cap + 1)
    ent_arr = np.zeros(cap, dtype=[("w", "f8"), ("pos", "i8")])
    cdef _Entry[::1] ent = ent_arr
    for k in range(1, cap + 1):
        lf[k] = lf[k - 1] + log(<double> k)
    lw[0] = 0.0
    lo = 0
    hi = 0
    for i in range(T1):
        if i > 0:
            em1 = expm1_(2.0 * gamma * (times[i] - times[i - 1]))
            if em1 != em1 or em1 == INFINITY:
                p = 0.0
            else:
                p = theta0 / (theta * em1 + theta0)
            if p <= 0.0:
                for k in range(lo, hi + 1):
                    lw[k] = -INFINITY
                lw[0] = 0.0
                lo = 0
                hi = 0
            elif p < 1.0:
                top = -INFINITY
                for k in range(lo, hi + 1):
                    if lw[k] > top:
                        top = lw[k]
                for k in range(hi + 1):
                    tmp[k] = 0.0
                lp_ = log(p)
                lq = log1p(-p)
                ratio = p / (1.0 - p)
                for k in range(lo, hi + 1):
                    if lw[k] != -INFINITY:
                        _binom_row(k, lw[k] - top, p, lp_, lq, ratio, &lf[0], &tmp[0])
                lo = hi
                for k in range(hi, -1, -1):
                    if tmp[k] > 0.0:
                        lw[k] = log(tmp[k]) + top
                        lo = k
                    else:
                        lw[k] = -INFINITY
                while hi > lo and lw[hi] == -INFINITY:
                    hi -= 1
                _normalize(&lw[0], lo, hi)
            if em1 != em1 or em1 == INFINITY:
                theta = theta0
            else:
                theta = theta0 * theta * (em1 + 1.0) / (theta * em1 + theta0)
        if rec_pred is not None:
            rec_pred.append((lo, np.asarray(lw[lo:hi + 1]).copy(), theta))
        tot = 0.0
        for r in range(offsets[i], offsets[i + 1]):
            y = counts[r]
            ly = lf[y]
            lth = log(theta / (theta + lam))
            lla = log(lam / (theta + lam))
            for k in range(lo, hi + 1):
                if lw[k] != -INFINITY:
                    lw[k] += lgamma_(shape0 + k + y) - lgamma_(shape0 + k) - ly + (shape0 + k) * lth + y * lla
            if y > 0:
                for k in range(hi, lo - 1, -1):
                    lw[k + y] = lw[k]
                for k in range(lo, lo + y):
                    lw[k] = -INFINITY
                lo += y
                hi += y
            theta += lam
            acc = _normalize(&lw[0], lo, hi)
            if acc == -INFINITY:
                raise FloatingPointError(f"all mixture weights vanish at time index {i}")
            tot += acc
        log_marg[i] = tot
        if rule_kind == 0 or (rule_kind == 2 and rule_value >= 1.0):
            if rec_filt is not None:
                rec_filt.append((lo, np.asarray(lw[lo:hi + 1]).copy(), theta))
            continue
        n_live = 0
        for k in range(lo, hi + 1):
            if lw[k] != -INFINITY:
                ent[n_live].w = exp(lw[k])
                ent[n_live].pos = k
                n_live += 1
        keep = n_live
        if rule_kind == 1:
            if rule_value < n_live:
                qsort(&ent[0], n_live, sizeof(_Entry), _cmp_entry)
                keep = <Py_ssize_t> rule_value
        elif rule_kind == 2:
            qsort(&ent[0], n_live, sizeof(_Entry), _cmp_entry)
            cum = 0.0
            keep = 0
            while keep < n_live:
                cum += ent[keep].w
                keep += 1
                if cum >= rule_value:
                    break
        else:
            top = 0.0
            for k in range(n_live):
                if ent[k].w > top:
                    top = ent[k].w
            ref = rule_value * top if relative else rule_value
            keep = 0
            for k in range(n_live):
                if ent[k].w >= ref:
                    ent[keep] = ent[k]
                    keep += 1
            if keep == 0:
                warned += 1
                qsort(&ent[0], n_live, sizeof(_Entry), _cmp_entry)
                keep = 1
        if keep < n_live:
            for k in range(lo, hi + 1):
                tmp[k] = lw[k]
                lw[k] = -INFINITY
            lo = hi
            hi = 0
            for k in range(keep):
                r = ent[k].pos
                lw[r] = tmp[r]
                if r < lo:
                    lo = r
                if r > hi:
                    hi = r
            _normalize(&lw[0], lo, hi)
        if rec_filt is not None:
            rec_filt.append((lo, np.asarray(lw[lo:hi + 1]).copy(), theta))
    return warned


def cir_backward_indices(const double[::1] x_next, const double[::1] u, const double[::1] pr,
                         const double[::1] plw, double pth, const double[::1] r,
                         const double[::1] logw, double th, double tp, double rate, double shape0,
                         long max_terms):
    """Double index ``(k, m)`` of the CIR backward kernel by inverse CDF.

    For each draw the terms ``w_m NB(k; r_m, th/(th+tp)) Ga(x_next; shape0+k, rate)
    / nu(x_next)`` are accumulated in lexicographic ``(k, m)`` order until
    they pass the uniform ``u``.  ``nu`` is the predictive gamma mixture with
    shapes ``pr``, log-weights ``plw`` and rate ``pth``.  The row sums over
    ``m`` are shared by all draws and computed once per ``k``.  Returns the
    arrays ``k`` and the positions of ``m`` in ``r``.
    """
    cdef Py_ssize_t n = x_next.shape[0], nm = r.shape[0], i, j, kk, last
    cdef double lth = log(th / (th + tp)), ltp = log(tp / (th + tp)), lx, cum, p, prev, resid, acc, rowtop
    cdef double lrate = log(rate), lnu
    cdef Py_ssize_t npr = pr.shape[0]
    cdef double[::1] pbase = np.empty(npr)
    cdef int stall
    cdef cnp.int64_t[::1] k_out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] m_out = np.empty(n, dtype=np.int64)
    cdef double[::1] lgr = np.empty(nm)
    cdef double[::1] row = np.empty(nm)
    cdef double[::1] S = np.empty(64)
    cdef Py_ssize_t nS = 0
    for j in range(nm):
        lgr[j] = lgamma_(r[j])
    for j in range(npr):
        pbase[j] = plw[j] + pr[j] * log(pth) - lgamma_(pr[j])
    for i in range(n):
        lx = log(x_next[i])
        rowtop = -INFINITY
        for j in range(npr):
            if pbase[j] + (pr[j] - 1.0) * lx > rowtop:
                rowtop = pbase[j] + (pr[j] - 1.0) * lx
        acc = 0.0
        for j in range(npr):
            acc += exp(pbase[j] + (pr[j] - 1.0) * lx - rowtop)
        lnu = rowtop + log(acc) - pth * x_next[i]
        cum = 0.0
        kk = 0
        last = -1
        stall = 0
        while True:
            if kk > max_terms:
                raise RuntimeError("backward kernel mass did not reach the uniform; weights are inconsistent")
            while kk >= nS:
                if nS == S.shape[0]:
                    S = np.concatenate([np.asarray(S), np.empty(S.shape[0])])
                rowtop = -INFINITY
                for j in range(nm):
                    row[j] = logw[j] + lgamma_(r[j] + nS) - lgr[j] - lgamma_(nS + 1.0) + r[j] * lth + nS * ltp
                    if row[j] > rowtop:
                        rowtop = row[j]
                acc = 0.0
                if rowtop > -INFINITY:
                    for j in range(nm):
                        acc += exp(row[j] - rowtop)
                    S[nS] = rowtop + log(acc)
                else:
                    S[nS] = -INFINITY
                nS += 1
            p = exp((shape0 + kk) * lrate - lgamma_(shape0 + kk) + (shape0 + kk - 1.0) * lx
                    - rate * x_next[i] + S[kk] - lnu)
            prev = cum
            cum += p
            if p > 0.0:
                last = kk
            if cum >= u[i]:
                resid = (u[i] - prev) / p
                break
            # the running sum can fall short of the uniform by rounding only; once the
            # remaining terms are negligible take the last term with positive mass
            if p <= 1e-15 * cum and kk > 0:
                stall += 1
            else:
                stall = 0
            if stall >= 128 and cum > 0.999999 and last >= 0:
                kk = last
                resid = 1.0
                break
            kk += 1
        k_out[i] = kk
        # locate m inside row kk from the residual fraction
        rowtop = -INFINITY
        for j in range(nm):
            row[j] = logw[j] + lgamma_(r[j] + kk) - lgr[j] + r[j] * lth
            if row[j] > rowtop:
                rowtop = row[j]
        acc = 0.0
        for j in range(nm):
            row[j] = exp(row[j] - rowtop)
            acc += row[j]
        prev = 0.0
        m_out[i] = nm - 1
        for j in range(nm):
            prev += row[j]
            if prev >= resid * acc:
                m_out[i] = j
                break
    return np.asarray(k_out), np.asarray(m_out)
