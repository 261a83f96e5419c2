"""Compiled inner loops for the Gibbs/FFBS sampler.

Index 0 of every coefficient vector is the intercept; expert ``j`` sits at
``j + 1``. Inactive coefficients are kept at exactly zero. Functions return
integer status codes instead of raising so failures can be reported with
their (iteration, period) coordinates.
"""

import math

import numpy as np
from numba import njit

OK = 0
ERR_Q = 1
ERR_SIGMA = 2
ERR_PSD = 3

TRANSPORT_CODES = {"coherent": 0, "renormalize": 1, "drop": 2}
RULE_CODES = {"zero": 0, "equal": 1, "previous": 2}
CONTINUING_CODES = {"active": 0, "complement": 1}
STATUS_MESSAGES = {
    ERR_Q: "one-step forecast variance is not positive",
    ERR_SIGMA: "latent covariance of the continuing experts is singular",
    ERR_PSD: "smoothing covariance is not positive semidefinite",
}

# no NaN/Inf assumptions: the kernels test finiteness explicitly
_JIT = dict(cache=True, error_model="numpy", fastmath={"contract", "arcp", "nsz"})

_JITTERS = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@njit(**_JIT)
def _chol_try(A, idx, n, L, jitter):
    for i in range(n):
        ii = idx[i]
        for j in range(i + 1):
            s = A[ii, idx[j]]
            if i == j:
                s += jitter
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0 or not math.isfinite(s):
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
        for j in range(i + 1, n):
            L[i, j] = 0.0
    return True


@njit(**_JIT)
def chol_robust(A, idx, n, L):
    """Factor ``A[idx, idx]`` into ``L L'`` (first ``n`` rows of ``L``).

    Plain Cholesky, then relative jitter 1e-12..1e-6, then an eigenvalue
    square root after clipping eigenvalues above ``-1e-8``. Returns 0 on
    success, 1 for an all-zero block (``L`` zeroed), 2 when the factor came
    from the eigenvalue fallback (not triangular), -1 on failure.
    """
    scale = 0.0
    for i in range(n):
        scale += abs(A[idx[i], idx[i]])
    if n == 0:
        return 0
    scale /= n
    if scale < 1e-300:
        for i in range(n):
            for j in range(n):
                L[i, j] = 0.0
        return 1
    if _chol_try(A, idx, n, L, 0.0):
        return 0
    for jit in _JITTERS:
        if _chol_try(A, idx, n, L, jit * scale):
            return 0
    sub = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            sub[i, j] = 0.5 * (A[idx[i], idx[j]] + A[idx[j], idx[i]])
    w, V = np.linalg.eigh(sub)
    wmax = max(1.0, np.max(np.abs(w)))
    if np.min(w) < -1e-8 * wmax:
        return -1
    for i in range(n):
        for j in range(n):
            L[i, j] = V[i, j] * math.sqrt(max(w[j], 0.0))
    return 2


@njit(**_JIT)
def _live_index(act_row, out):
    out[0] = 0
    n = 1
    for j in range(act_row.shape[0]):
        if act_row[j]:
            out[n] = j + 1
            n += 1
    return n


@njit(**_JIT)
def latent_scales(loc, var, act, phi, t, mu, sd):
    """Locations ``mu`` and scales ``sd = sqrt(phi A)`` of the latent states at ``t``.

    Experts without a submission get the cross-sectional mean location and
    mean variance (and ``phi = 1``); if nobody reports at ``t`` the previous
    period is used.
    """
    J = loc.shape[1]
    src = t
    cnt = 0
    for j in range(J):
        if act[t, j]:
            cnt += 1
    if cnt == 0 and t > 0:
        src = t - 1
    mv = 0.0
    ml = 0.0
    c = 0
    for j in range(J):
        if act[src, j] and var[src, j] > 0.0:
            mv += var[src, j]
            ml += loc[src, j]
            c += 1
    if c == 0:
        return ERR_SIGMA
    mv /= c
    ml /= c
    for j in range(J):
        if act[src, j] and var[src, j] > 0.0:
            A = var[src, j]
            mu[j] = loc[src, j]
        else:
            A = mv
            mu[j] = ml
        ph = phi[t, j] if (src == t and act[t, j]) else 1.0
        sd[j] = math.sqrt(ph * A)
    return OK


@njit(**_JIT)
def equicorr_gain(m_corr, nc):
    """``kappa`` with ``M[x, C] M[C, C]^{-1} = kappa 1'`` for equicorrelation ``m_corr``.

    Hence ``B[x, c] = kappa sd_x / sd_c`` for ``Sigma = D M D``.
    """
    den = 1.0 - m_corr + nc * m_corr
    if nc == 0:
        return 0.0
    if not den > 1e-12:
        return np.nan
    return m_corr / den


@njit(**_JIT)
def make_workspace(J):
    """Scratch buffers for one chain, allocated once and reused every period."""
    p = J + 1
    return (
        np.zeros((p, p)),  # 0 Ltot (only special columns are meaningful)
        np.zeros((p, p)),  # 1 Lent (only entering columns are meaningful)
        np.zeros(p),  # 2 fresh entering means
        np.zeros(p),  # 3 fresh entering variances
        np.zeros(p),  # 4 diagonal of Ltot outside special columns
        np.zeros(p, np.int64),  # 5 special (moved) columns
        np.zeros((p, p)),  # 6 Ltot @ C
        np.zeros(p, np.int64),  # 7 entering coordinates
        np.zeros(J, np.int64),  # 8 moving experts
        np.zeros(J, np.int64),  # 9 continuing experts
        np.zeros((p, p)),  # 10 Cholesky factor (MC mode)
        np.zeros(p, np.int64),  # 11 live index
        np.zeros(J),  # 12 latent locations
        np.zeros(J),  # 13 latent scales
        np.zeros(p, np.int64),  # 14 live before the event
        np.zeros(p, np.int64),  # 15 live after the event
        np.zeros(p, np.int64),  # 16 exit columns
    )


@njit(**_JIT)
def transport_map(
    prev_act, cur_act, mu, sd, m_corr, prior_mean, hist, rule, entry_var, transport, cont_rule, ws,
):
    """Composite linear transport for an exit-then-entry event.

    ``theta~ = Ltot theta + Lent g`` where ``theta`` is a prior draw and ``g``
    the fresh entering block (mean ``fmean``, variance ``fvar``). ``Ltot``
    includes the exit map, the activity masks and the entry reset; columns
    outside ``special`` are ``diag[k] e_k``. Returns ``(status, n_special,
    n_entering)``.
    """
    Ltot, Lent, fmean, fvar, dg, spec, ent = ws[0], ws[1], ws[2], ws[3], ws[4], ws[5], ws[7]
    moving, cont = ws[8], ws[9]
    J = mu.shape[0]
    p = J + 1
    ns = 0
    ne = 0
    for k in range(p):
        dg[k] = 1.0 if (k == 0 or cur_act[k - 1]) else 0.0
    for j in range(J):
        if prev_act[j] != cur_act[j]:
            spec[ns] = j + 1
            ns += 1
            dg[j + 1] = 0.0
            for i in range(p):
                Ltot[i, j + 1] = 0.0
            if cur_act[j]:
                ent[ne] = j + 1
                ne += 1

    # exit: theta0 += theta_x (mu_x - B mu_C), theta_C += B' theta_x, then mask
    nm = 0
    for j in range(J):
        if prev_act[j] and not cur_act[j]:
            moving[nm] = j
            nm += 1
    if nm > 0:
        nc = 0
        for j in range(J):
            if cont_rule == 0:
                ok = prev_act[j] and cur_act[j]
            else:
                ok = not (prev_act[j] and not cur_act[j])
            if ok:
                cont[nc] = j
                nc += 1
        if transport == 0:
            kap = equicorr_gain(m_corr, nc)
            if not math.isfinite(kap):
                return ERR_SIGMA, ns, ne
            for k in range(nm):
                x = moving[k]
                shift = mu[x]
                for c in range(nc):
                    j = cont[c]
                    b = kap * sd[x] / sd[j]
                    shift -= b * mu[j]
                    # rows outside the post-event stayers are masked or reset
                    if prev_act[j] and cur_act[j]:
                        Ltot[j + 1, x + 1] = b
                Ltot[0, x + 1] = shift
        elif transport == 1 and nc > 0:
            tot = 0.0
            for c in range(nc):
                tot += prior_mean[cont[c] + 1]
            for c in range(nc):
                j = cont[c]
                w = prior_mean[j + 1] / tot if abs(tot) > 1e-12 else 1.0 / nc
                if prev_act[j] and cur_act[j]:
                    for k in range(nm):
                        Ltot[j + 1, moving[k] + 1] = w

    # entry: reset the entering block, then theta0 -= theta_e (mu_e - B mu_C),
    # theta_C -= B' theta_e, entering block unchanged, then mask
    if ne > 0:
        nc = 0
        for j in range(J):
            entering = cur_act[j] and not prev_act[j]
            if cont_rule == 0:
                ok = prev_act[j] and cur_act[j]
            else:
                ok = not entering
            if ok:
                cont[nc] = j
                nc += 1
        kap = equicorr_gain(m_corr, nc)
        if transport == 0 and not math.isfinite(kap):
            return ERR_SIGMA, ns, ne
        for k in range(ne):
            e = ent[k]
            for i in range(p):
                Lent[i, e] = 0.0
            Lent[e, e] = 1.0
            if rule == 1:
                fmean[e] = 1.0 / J
            elif rule == 2 and math.isfinite(hist[e - 1]):
                fmean[e] = hist[e - 1]
            else:
                fmean[e] = 0.0
            fvar[e] = entry_var
            if transport == 0:
                shift = mu[e - 1]
                for c in range(nc):
                    j = cont[c]
                    b = kap * sd[e - 1] / sd[j]
                    shift -= b * mu[j]
                    if cur_act[j]:
                        Lent[j + 1, e] = -b
                Lent[0, e] = -shift
    return OK, ns, ne


@njit(**_JIT)
def apply_left(Ltot, dg, spec, ns, M, out):
    """``out = Ltot @ M`` using the sparse column structure of ``Ltot``."""
    p = M.shape[0]
    for i in range(p):
        di = dg[i]
        for j in range(M.shape[1]):
            out[i, j] = di * M[i, j]
    for s in range(ns):
        k = spec[s]
        for i in range(p):
            lik = Ltot[i, k]
            if lik != 0.0:
                for j in range(M.shape[1]):
                    out[i, j] += lik * M[k, j]


@njit(**_JIT)
def turnover_prior(
    m_prev, C_prev, d, prev_act, cur_act, mu, sd, m_corr, hist, rule, entry_var, transport, cont_rule,
    draws, rng, ws, a_out, R_out, G_out, mh_out, Ch_out,
):
    """Adjusted prior at a turnover period plus the backward-sampling cross moments.

    With ``draws == 0`` moments are exact and ``mh_out``/``Ch_out`` are left
    untouched (they equal the previous filter moments). Otherwise
    ``theta_{t-1}`` and the evolution noise are drawn jointly, pushed through
    the transport, and all moments, including ``Cov(theta_{t-1}, adjusted)``,
    are sample moments, which keeps the smoothing covariance PSD.
    """
    p = m_prev.shape[0]
    st, ns, ne = transport_map(
        prev_act, cur_act, mu, sd, m_corr, m_prev, hist, rule, entry_var, transport, cont_rule, ws
    )
    if st != OK:
        return st
    Ltot, Lent, fmean, fvar, dg, spec, LC, ent = ws[0], ws[1], ws[2], ws[3], ws[4], ws[5], ws[6], ws[7]
    if draws == 0:
        lp, lc, xs = ws[14], ws[15], ws[16]
        npv = _live_index(prev_act, lp)
        ncu = _live_index(cur_act, lc)
        nx = 0
        for q in range(ns):
            if not cur_act[spec[q] - 1]:
                xs[nx] = spec[q]
                nx += 1
        for i in range(p):
            a_out[i] = 0.0
            for j in range(p):
                R_out[i, j] = 0.0
                G_out[i, j] = 0.0
        # LC = Ltot C on (live after) x (live before); G = C Ltot' = LC'
        for ii in range(ncu):
            i = lc[ii]
            di = dg[i]
            acc = di * m_prev[i]
            for q in range(nx):
                acc += Ltot[i, xs[q]] * m_prev[xs[q]]
            for q in range(ne):
                acc += Lent[i, ent[q]] * fmean[ent[q]]
            a_out[i] = acc
            for jj in range(npv):
                j = lp[jj]
                acc = di * C_prev[i, j]
                for q in range(nx):
                    acc += Ltot[i, xs[q]] * C_prev[xs[q], j]
                LC[i, j] = acc
                G_out[j, i] = acc
        # R = Ltot C Ltot' / d + Lent diag(fvar) Lent'
        for ii in range(ncu):
            i = lc[ii]
            for jj in range(ii + 1):
                j = lc[jj]
                acc = LC[i, j] if dg[j] != 0.0 else 0.0
                for q in range(nx):
                    acc += Ltot[j, xs[q]] * LC[i, xs[q]]
                f = 0.0
                for q in range(ne):
                    e = ent[q]
                    f += Lent[i, e] * fvar[e] * Lent[j, e]
                v = acc / d + f
                R_out[i, j] = v
                R_out[j, i] = v
        return OK

    live = ws[11]
    Lc = ws[10]
    nl = 0
    for i in range(p):
        if C_prev[i, i] > 0.0:
            live[nl] = i
            nl += 1
    if chol_robust(C_prev, live, nl, Lc) < 0:
        return ERR_PSD
    om = math.sqrt(max(1.0 / d - 1.0, 0.0))
    sum_p = np.zeros(p)
    sum_a = np.zeros(p)
    spp = np.zeros((p, p))
    spa = np.zeros((p, p))
    saa = np.zeros((p, p))
    z = np.empty(p)
    th_prev = np.empty(p)
    th = np.empty(p)
    star = np.empty(p)
    for s_ in range(draws):
        for i in range(p):
            th_prev[i] = m_prev[i]
        for i in range(nl):
            z[i] = rng.standard_normal()
        for i in range(nl):
            acc = 0.0
            for k in range(i + 1):
                acc += Lc[i, k] * z[k]
            th_prev[live[i]] += acc
        for i in range(p):
            th[i] = th_prev[i]
        for i in range(nl):
            z[i] = rng.standard_normal()
        for i in range(nl):
            acc = 0.0
            for k in range(i + 1):
                acc += Lc[i, k] * z[k]
            th[live[i]] += om * acc
        for i in range(p):
            star[i] = dg[i] * th[i]
        for s in range(ns):
            k = spec[s]
            for i in range(p):
                star[i] += Ltot[i, k] * th[k]
        for s in range(ne):
            e = ent[s]
            g = fmean[e] + math.sqrt(fvar[e]) * rng.standard_normal()
            for i in range(p):
                star[i] += Lent[i, e] * g
        for i in range(p):
            sum_p[i] += th_prev[i]
            sum_a[i] += star[i]
            for j in range(p):
                spa[i, j] += th_prev[i] * star[j]
            for j in range(i + 1):
                spp[i, j] += th_prev[i] * th_prev[j]
                saa[i, j] += star[i] * star[j]
    S = float(draws)
    for i in range(p):
        mh_out[i] = sum_p[i] / S
        a_out[i] = sum_a[i] / S
    for i in range(p):
        for j in range(p):
            G_out[i, j] = (spa[i, j] - S * mh_out[i] * a_out[j]) / (S - 1.0)
        for j in range(i + 1):
            c = (spp[i, j] - S * mh_out[i] * mh_out[j]) / (S - 1.0)
            Ch_out[i, j] = c
            Ch_out[j, i] = c
            r = (saa[i, j] - S * a_out[i] * a_out[j]) / (S - 1.0)
            R_out[i, j] = r
            R_out[j, i] = r
    return OK


@njit(**_JIT)
def forward_pass(
    y, loc, var, act, x, phi, m0, C0, n0, s0, d, beta,
    m_corr, draws, rule, entry_var, transport, cont_rule, rng,
    pa, pR, fm, fC, fn, fs, turn, G, mh, Ch, hist, fail_t, ws,
):
    """Forward filter with turnover transport. ``fail_t[0]`` gets the failing period."""
    T, J = loc.shape
    p = J + 1
    mu = ws[12]
    sd = ws[13]
    m_prev = np.empty(p)
    C_prev = np.empty((p, p))
    F = np.empty(p)
    RF = np.empty(p)
    live = np.empty(p, np.int64)
    for j in range(J):
        hist[j] = np.nan
    for t in range(T):
        if t == 0:
            n = n0
            s = s0
            for i in range(p):
                ki = i == 0 or act[0, i - 1]
                m_prev[i] = m0[i] if ki else 0.0
                for k in range(p):
                    kk = k == 0 or act[0, k - 1]
                    C_prev[i, k] = C0[i, k] if (ki and kk) else 0.0
        else:
            n = fn[t - 1]
            s = fs[t - 1]
            m_prev[:] = fm[t - 1]
            C_prev[:, :] = fC[t - 1]
        changed = False
        if t > 0:
            for j in range(J):
                if act[t, j] != act[t - 1, j]:
                    changed = True
                    break
        turn[t] = changed
        if changed:
            st = latent_scales(loc, var, act, phi, t, mu, sd)
            if st == OK:
                st = turnover_prior(
                    m_prev, C_prev, d, act[t - 1], act[t], mu, sd, m_corr, hist, rule, entry_var,
                    transport, cont_rule, draws, rng, ws, pa[t], pR[t], G[t], mh[t], Ch[t],
                )
            if st != OK:
                fail_t[0] = t
                return st
        else:
            for i in range(p):
                pa[t, i] = m_prev[i]
                for k in range(p):
                    pR[t, i, k] = C_prev[i, k] / d

        # conjugate update on the live block; inactive rows stay exactly zero
        nl = _live_index(act[t], live)
        F[0] = 1.0
        for j in range(J):
            F[j + 1] = x[t, j] if act[t, j] else 0.0
        f = 0.0
        q = s
        for ii in range(nl):
            i = live[ii]
            f += F[i] * pa[t, i]
            acc = 0.0
            for kk in range(nl):
                k = live[kk]
                acc += pR[t, i, k] * F[k]
            RF[i] = acc
            q += F[i] * acc
        for i in range(p):
            fm[t, i] = pa[t, i]
            for k in range(p):
                fC[t, i, k] = 0.0
        if math.isfinite(y[t]):
            if not q > 0.0:
                fail_t[0] = t
                return ERR_Q
            e = y[t] - f
            n_new = beta * n + 1.0
            r = (beta * n + e * e / q) / n_new
            for ii in range(nl):
                i = live[ii]
                fm[t, i] = pa[t, i] + RF[i] / q * e
                for kk in range(ii + 1):
                    k = live[kk]
                    c = r * (pR[t, i, k] - RF[i] * RF[k] / q)
                    fC[t, i, k] = c
                    fC[t, k, i] = c
            fn[t] = n_new
            fs[t] = s * r
        else:
            for ii in range(nl):
                i = live[ii]
                for kk in range(nl):
                    k = live[kk]
                    fC[t, i, k] = pR[t, i, k]
            fn[t] = beta * n
            fs[t] = s
        for j in range(J):
            if act[t, j]:
                hist[j] = fm[t, j + 1]
    return OK


@njit(**_JIT)
def backward_sample(act, pa, pR, fm, fC, fn, fs, turn, G, mh, Ch, exact, d, beta, rng, theta, v, fail_t):
    """FFBS draw of ``theta`` (T x p) and ``v`` (T) given a completed forward pass.

    With ``exact`` the turnover cross moments are taken from the filter
    (``mh = m_t``, ``Ch = C_t``); otherwise from the transport sample.
    """
    T, J = act.shape
    p = J + 1
    live = np.empty(p, np.int64)
    nlive = np.empty(p, np.int64)
    L = np.empty((p, p))
    cov = np.empty((p, p))
    mean = np.empty(p)
    z = np.empty(p)
    K = np.empty((p, p))
    sol = np.empty(p)
    diff = np.empty(p)

    t = T - 1
    prec = rng.gamma(fn[t] / 2.0, 2.0 / (fn[t] * fs[t]))
    vt = 1.0 / prec
    nl = _live_index(act[t], live)
    sc = vt / fs[t]
    for i in range(p):
        for k in range(p):
            cov[i, k] = fC[t, i, k] * sc
    st = chol_robust(cov, live, nl, L)
    if st < 0:
        fail_t[0] = t
        return ERR_PSD
    for i in range(p):
        theta[t, i] = 0.0
    for i in range(nl):
        z[i] = rng.standard_normal()
    for i in range(nl):
        acc = fm[t, live[i]]
        for k in range(nl if st == 2 else i + 1):
            acc += L[i, k] * z[k]
        theta[t, live[i]] = acc
    v[t] = vt

    for t in range(T - 2, -1, -1):
        if beta < 1.0:
            prec = beta * prec + rng.gamma((1.0 - beta) * fn[t] / 2.0, 2.0 / (fn[t] * fs[t]))
        vt = 1.0 / prec
        v[t] = vt
        sc = vt / fs[t]
        nl = _live_index(act[t], live)
        if not turn[t + 1]:
            for ii in range(nl):
                i = live[ii]
                mean[i] = fm[t, i] + d * (theta[t + 1, i] - pa[t + 1, i])
                for kk in range(ii + 1):
                    k = live[kk]
                    c = (1.0 - d) * fC[t, i, k] * sc
                    cov[i, k] = c
                    cov[k, i] = c
        else:
            nn = _live_index(act[t + 1], nlive)
            if chol_robust(pR[t + 1], nlive, nn, L) != 0:
                fail_t[0] = t
                return ERR_PSD
            # W = Lr^{-1} G[:, live']', so gain' R^{-1} = W' Lr^{-1}
            m_src = fm[t] if exact else mh[t + 1]
            C_src = fC[t] if exact else Ch[t + 1]
            for k in range(nn):
                diff[k] = theta[t + 1, nlive[k]] - pa[t + 1, nlive[k]]
            for k in range(nn):
                s_ = diff[k]
                for r in range(k):
                    s_ -= L[k, r] * sol[r]
                sol[k] = s_ / L[k, k]
            for ii in range(nl):
                i = live[ii]
                for k in range(nn):
                    s_ = G[t + 1, i, nlive[k]]
                    for r in range(k):
                        s_ -= L[k, r] * K[r, i]
                    K[k, i] = s_ / L[k, k]
            for ii in range(nl):
                i = live[ii]
                acc = m_src[i]
                for k in range(nn):
                    acc += K[k, i] * sol[k]
                mean[i] = acc
            for ii in range(nl):
                i = live[ii]
                for jj in range(ii + 1):
                    j = live[jj]
                    acc = C_src[i, j]
                    for k in range(nn):
                        acc -= K[k, i] * K[k, j]
                    cov[i, j] = acc * sc
                    cov[j, i] = acc * sc
        st = chol_robust(cov, live, nl, L)
        if st < 0:
            fail_t[0] = t
            return ERR_PSD
        for i in range(p):
            theta[t, i] = 0.0
        for i in range(nl):
            z[i] = rng.standard_normal()
        for i in range(nl):
            acc = mean[live[i]]
            for k in range(nl if st == 2 else i + 1):
                acc += L[i, k] * z[k]
            theta[t, live[i]] = acc
    return OK


@njit(**_JIT)
def draw_latent(y, loc, var, dof, act, theta, v, rng, x, phi):
    """Conjugate draws of latent expert states then their scale-mixture variables.

    Active states use Matheron's update: draw ``z`` from the prior
    ``N(a, phi A)``, then ``x = z + D theta (y - theta0 - theta'z - eps) /
    (v + theta' D theta)`` with ``eps ~ N(0, v)``.
    """
    T, J = loc.shape
    z = np.empty(J)
    dv = np.empty(J)
    for t in range(T):
        ml = 0.0
        c = 0
        for j in range(J):
            if act[t, j]:
                ml += loc[t, j]
                c += 1
        ml = ml / c if c > 0 else 0.0
        resid = y[t] - theta[t, 0]
        denom = v[t]
        for j in range(J):
            if act[t, j]:
                dv[j] = phi[t, j] * var[t, j]
                z[j] = loc[t, j] + math.sqrt(dv[j]) * rng.standard_normal()
                resid -= theta[t, j + 1] * z[j]
                denom += theta[t, j + 1] * theta[t, j + 1] * dv[j]
        if math.isfinite(y[t]):
            resid -= math.sqrt(v[t]) * rng.standard_normal()
            k = resid / denom
        else:
            k = 0.0
        for j in range(J):
            if act[t, j]:
                x[t, j] = z[j] + dv[j] * theta[t, j + 1] * k
                dev = x[t, j] - loc[t, j]
                shape = (dof[t, j] + 1.0) / 2.0
                rate = (dof[t, j] + dev * dev / var[t, j]) / 2.0
                phi[t, j] = 1.0 / rng.gamma(shape, 1.0 / rate)
            else:
                x[t, j] = ml
                phi[t, j] = 1.0


@njit(**_JIT)
def init_latent(loc, var, dof, act, rng, x, phi):
    T, J = loc.shape
    for t in range(T):
        ml = 0.0
        c = 0
        for j in range(J):
            if act[t, j]:
                ml += loc[t, j]
                c += 1
        ml = ml / c if c > 0 else 0.0
        for j in range(J):
            if act[t, j]:
                phi[t, j] = 1.0 / rng.gamma(dof[t, j] / 2.0, 2.0 / dof[t, j])
                x[t, j] = loc[t, j] + math.sqrt(phi[t, j] * var[t, j]) * rng.standard_normal()
            else:
                phi[t, j] = 1.0
                x[t, j] = ml


@njit(**_JIT)
def run_chain(
    y, loc, var, dof, act, m0, C0, n0, s0, d, beta,
    m_corr, draws, rule, entry_var, transport, cont_rule,
    burn, keep, thin, rng, x0, phi0, n_init,
    theta_out, v_out, x_out, phi_out, tm_out, tC_out, tn_out, ts_out, hist_out, where,
):
    """Run the sampler; ``where`` receives (iteration, period) on failure.

    The first ``n_init`` rows of the latent states start from ``x0``/``phi0``
    (warm start) instead of the prior draw.
    """
    T, J = loc.shape
    p = J + 1
    pa = np.zeros((T, p))
    pR = np.zeros((T, p, p))
    fm = np.zeros((T, p))
    fC = np.zeros((T, p, p))
    fn = np.zeros(T)
    fs = np.zeros(T)
    turn = np.zeros(T, np.bool_)
    G = np.zeros((T, p, p))
    mh = np.zeros((T, p))
    Ch = np.zeros((T, p, p))
    hist = np.empty(J)
    theta = np.zeros((T, p))
    v = np.zeros(T)
    x = np.zeros((T, J))
    phi = np.ones((T, J))
    fail_t = np.zeros(1, np.int64)
    ws = make_workspace(J)
    init_latent(loc, var, dof, act, rng, x, phi)
    for t in range(min(n_init, T)):
        for j in range(J):
            if act[t, j]:
                x[t, j] = x0[t, j]
                phi[t, j] = phi0[t, j]
    total = burn + keep * thin
    slot = 0
    for it in range(total):
        st = forward_pass(
            y, loc, var, act, x, phi, m0, C0, n0, s0, d, beta,
            m_corr, draws, rule, entry_var, transport, cont_rule, rng,
            pa, pR, fm, fC, fn, fs, turn, G, mh, Ch, hist, fail_t, ws,
        )
        if st == OK:
            st = backward_sample(
                act, pa, pR, fm, fC, fn, fs, turn, G, mh, Ch, draws == 0, d, beta, rng, theta, v, fail_t
            )
        if st != OK:
            where[0] = it
            where[1] = fail_t[0]
            return st
        draw_latent(y, loc, var, dof, act, theta, v, rng, x, phi)
        if it >= burn and (it - burn) % thin == 0:
            theta_out[slot] = theta
            v_out[slot] = v
            x_out[slot] = x
            phi_out[slot] = phi
            tm_out[slot] = fm[T - 1]
            tC_out[slot] = fC[T - 1]
            tn_out[slot] = fn[T - 1]
            ts_out[slot] = fs[T - 1]
            hist_out[slot] = hist
            slot += 1
    return OK


@njit(**_JIT)
def predictive_draws(
    tm, tC, tn, ts, hist, last_act, fut_act, fut_loc, fut_var, fut_dof, mu, sd,
    d_h, beta_h, m_corr, draws, rule, entry_var, transport, cont_rule, rng,
    f_out, q_out, dof_out, y_out, where,
):
    """One predictive component per retained draw.

    Evolves each terminal filter state with the compounded discounts,
    applies the turnover transport between ``last_act`` and ``fut_act``
    (latent locations ``mu`` and scales ``sd``), draws the active experts'
    states from their Student-t densities, and returns the Student-t
    predictive parameters plus one ``y`` sample per draw.
    """
    K, p = tm.shape
    J = p - 1
    changed = False
    for j in range(J):
        if last_act[j] != fut_act[j]:
            changed = True
    a = np.empty(p)
    R = np.empty((p, p))
    G = np.empty((p, p))
    mh = np.empty(p)
    Ch = np.empty((p, p))
    F = np.empty(p)
    ws = make_workspace(J)
    for i in range(K):
        if changed:
            st = turnover_prior(
                tm[i], tC[i], d_h, last_act, fut_act, mu, sd, m_corr, hist[i], rule, entry_var,
                transport, cont_rule, draws, rng, ws, a, R, G, mh, Ch,
            )
            if st != OK:
                where[0] = i
                return st
        else:
            for r in range(p):
                a[r] = tm[i, r]
                for c in range(p):
                    R[r, c] = tC[i, r, c] / d_h
        F[0] = 1.0
        for j in range(J):
            if fut_act[j]:
                ph = 1.0 / rng.gamma(fut_dof[j] / 2.0, 2.0 / fut_dof[j])
                F[j + 1] = fut_loc[j] + math.sqrt(ph * fut_var[j]) * rng.standard_normal()
            else:
                F[j + 1] = 0.0
        f = 0.0
        q = ts[i]
        for r in range(p):
            f += F[r] * a[r]
            acc = 0.0
            for c in range(p):
                acc += R[r, c] * F[c]
            q += F[r] * acc
        if not q > 0.0:
            where[0] = i
            return ERR_Q
        nd = beta_h * tn[i]
        f_out[i] = f
        q_out[i] = q
        dof_out[i] = nd
        g = rng.gamma(nd / 2.0, 2.0 / nd)
        y_out[i] = f + math.sqrt(q) * rng.standard_normal() / math.sqrt(g)
    return OK
