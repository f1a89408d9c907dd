"""Compiled inner loops: device evaluation, MNA stamping, Newton, LU.

Kept in one module so numba's on-disk cache is invalidated whenever any
kernel changes (the cache only tracks the defining file).
"""
import math

import numpy as np
from numba import njit

PIVOT_MIN = 1e-18


@njit(cache=True, inline="always")
def _softplus(u):
    if u > 0.0:
        return u + math.log1p(math.exp(-u))
    return math.log1p(math.exp(u))


@njit(cache=True, inline="always")
def _sigmoid(u):
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def ekv_eval(sign, vg, vd, vs, vth, n, i_spec, lam, vt):
    """Jitted core: returns (i_ds, dI/dv_g, dI/dv_d, dI/dv_s)."""
    vg = sign * vg
    vd = sign * vd
    vs = sign * vs
    # reference the channel to its lower terminal: no body effect
    src_low = vs <= vd
    ref = vs if src_low else vd
    vg -= ref
    vd -= ref
    vs -= ref
    vp = (vg - vth) / n
    xf = (vp - vs) / vt
    xr = (vp - vd) / vt
    spf = _softplus(0.5 * xf)
    spr = _softplus(0.5 * xr)
    ff = spf * spf
    fr = spr * spr
    # dF/dx = ln(1+e^{x/2}) * sigmoid(x/2)
    dff = spf * _sigmoid(0.5 * xf)
    dfr = spr * _sigmoid(0.5 * xr)
    a = ff - fr
    vds = vd - vs
    clm = 1.0 + lam * abs(vds)
    sgn = 1.0 if vds > 0.0 else (-1.0 if vds < 0.0 else 0.0)
    i = i_spec * a * clm
    gm = i_spec * (dff - dfr) / (n * vt) * clm
    gds = i_spec * (dfr / vt * clm + a * lam * sgn)
    gms = i_spec * (-dff / vt * clm - a * lam * sgn)
    # chain rule through the reference terminal; the current now depends
    # only on voltage differences so the three partials sum to zero
    if src_low:
        gms = -gm - gds
    else:
        gds = -gm - gms
    # p-device: I_p(v) = -I_n(-v), partials keep their sign
    return sign * i, gm, gds, gms


@njit(cache=True, nogil=True)
def pulse_eval(v1, v2, td, tr, tf, pw, per, t):
    if t <= td:
        return v1
    tl = t - td
    if per > 0.0:
        tl = tl - per * math.floor(tl / per)
    if tl < tr:
        return v1 + (v2 - v1) * tl / tr
    tl -= tr
    if tl <= pw:
        return v2
    tl -= pw
    if tl < tf:
        return v2 + (v1 - v2) * tl / tf
    return v1




@njit(cache=True, nogil=True)
def _lu_solve(a, b):
    """Dense LU with partial pivoting. Returns (x, bad_row); bad_row = -1 on success."""
    n = a.shape[0]
    lu = a.copy()
    x = b.copy()
    perm = np.arange(n)
    for k in range(n):
        p = k
        big = abs(lu[k, k])
        for r in range(k + 1, n):
            if abs(lu[r, k]) > big:
                big = abs(lu[r, k])
                p = r
        if big < PIVOT_MIN:
            return x, perm[k]
        if p != k:
            for c in range(n):
                tmp = lu[k, c]
                lu[k, c] = lu[p, c]
                lu[p, c] = tmp
            tmp = x[k]
            x[k] = x[p]
            x[p] = tmp
            ti = perm[k]
            perm[k] = perm[p]
            perm[p] = ti
        piv = lu[k, k]
        for r in range(k + 1, n):
            fac = lu[r, k] / piv
            if fac != 0.0:
                lu[r, k] = fac
                for c in range(k + 1, n):
                    lu[r, c] -= fac * lu[k, c]
                x[r] -= fac * x[k]
    for k in range(n - 1, -1, -1):
        s = x[k]
        for c in range(k + 1, n):
            s -= lu[k, c] * x[c]
        x[k] = s / lu[k, k]
    return x, -1


@njit(cache=True, nogil=True)
def _assemble(x, t, scale, gmin, h, method, nn,
              mos_nodes, mos_par, res_nodes, res_g, cap_nodes, cap_c, cap_v, cap_i,
              src_nodes, src_kind, src_par, jac, res):
    """Stamp Jacobian and KCL/branch residual at full vector ``x`` (x[0] = ground)."""
    jac[:, :] = 0.0
    res[:] = 0.0
    for k in range(mos_nodes.shape[0]):
        d = mos_nodes[k, 0]
        g = mos_nodes[k, 1]
        s = mos_nodes[k, 2]
        vg = min(max(x[g], -5.0), 5.0)
        vd = min(max(x[d], -5.0), 5.0)
        vs = min(max(x[s], -5.0), 5.0)
        i, gm, gds, gms = ekv_eval(mos_par[k, 0], vg, vd, vs, mos_par[k, 1], mos_par[k, 2],
                                   mos_par[k, 3], mos_par[k, 4], mos_par[k, 5])
        res[d] += i
        res[s] -= i
        jac[d, g] += gm
        jac[d, d] += gds
        jac[d, s] += gms
        jac[s, g] -= gm
        jac[s, d] -= gds
        jac[s, s] -= gms
    for k in range(res_nodes.shape[0]):
        a = res_nodes[k, 0]
        b = res_nodes[k, 1]
        gr = res_g[k]
        i = gr * (x[a] - x[b])
        res[a] += i
        res[b] -= i
        jac[a, a] += gr
        jac[b, b] += gr
        jac[a, b] -= gr
        jac[b, a] -= gr
    if method != 0:
        for k in range(cap_nodes.shape[0]):
            a = cap_nodes[k, 0]
            b = cap_nodes[k, 1]
            v = x[a] - x[b]
            if method == 1:
                geq = cap_c[k] / h
                i = geq * (v - cap_v[k])
            else:
                geq = 2.0 * cap_c[k] / h
                i = geq * (v - cap_v[k]) - cap_i[k]
            res[a] += i
            res[b] -= i
            jac[a, a] += geq
            jac[b, b] += geq
            jac[a, b] -= geq
            jac[b, a] -= geq
    if gmin > 0.0:
        for k in range(1, nn + 1):
            res[k] += gmin * x[k]
            jac[k, k] += gmin
    for j in range(src_nodes.shape[0]):
        p = src_nodes[j, 0]
        q = src_nodes[j, 1]
        row = nn + 1 + j
        ib = x[row]
        res[p] += ib
        res[q] -= ib
        jac[p, row] += 1.0
        jac[q, row] -= 1.0
        if src_kind[j] == 1:
            val = pulse_eval(src_par[j, 0], src_par[j, 1], src_par[j, 2], src_par[j, 3],
                             src_par[j, 4], src_par[j, 5], src_par[j, 6], t)
        else:
            val = src_par[j, 0]
        res[row] = x[p] - x[q] - scale * val
        jac[row, p] += 1.0
        jac[row, q] -= 1.0


@njit(cache=True, nogil=True)
def _resid_norm(res, nn):
    s = 0.0
    for k in range(1, res.shape[0]):
        # branch rows are volts; weight them like 1 mS so norms stay comparable
        w = 1.0 if k <= nn else 1e-3
        s += (w * res[k]) ** 2
    return math.sqrt(s)


@njit(cache=True, nogil=True)
def _newton(x0, t, scale, gmin, h, method, nn,
            mos_nodes, mos_par, res_nodes, res_g, cap_nodes, cap_c, cap_v, cap_i,
            src_nodes, src_kind, src_par,
            reltol, vntol, abstol, max_iter, damping):
    """Damped Newton. Returns (x, status, iterations, worst_row, worst_residual).

    status: 0 converged, 1 iteration limit, 2 singular matrix.
    """
    dim = x0.shape[0]
    x = x0.copy()
    jac = np.zeros((dim, dim))
    res = np.zeros(dim)
    jac_t = np.zeros((dim, dim))
    res_t = np.zeros(dim)
    _assemble(x, t, scale, gmin, h, method, nn, mos_nodes, mos_par, res_nodes, res_g,
              cap_nodes, cap_c, cap_v, cap_i, src_nodes, src_kind, src_par, jac, res)
    norm = _resid_norm(res, nn)
    for it in range(max_iter):
        dx, bad = _lu_solve(jac[1:, 1:], -res[1:])
        if bad >= 0:
            return x, 2, it, bad + 1, norm
        big = 0.0
        for k in range(nn):
            if abs(dx[k]) > big:
                big = abs(dx[k])
        if big > damping:
            dx *= damping / big
        xt = x.copy()
        for tries in range(5):
            for k in range(dim - 1):
                xt[k + 1] = x[k + 1] + dx[k]
            _assemble(xt, t, scale, gmin, h, method, nn, mos_nodes, mos_par, res_nodes,
                      res_g, cap_nodes, cap_c, cap_v, cap_i, src_nodes, src_kind,
                      src_par, jac_t, res_t)
            norm_t = _resid_norm(res_t, nn)
            if norm_t <= norm or tries == 4:
                break
            dx *= 0.5
        converged = True
        for k in range(nn):
            tol = vntol + reltol * max(abs(x[k + 1]), abs(xt[k + 1]))
            if abs(xt[k + 1] - x[k + 1]) > tol:
                converged = False
                break
        worst = 0
        worst_val = 0.0
        for k in range(1, nn + 1):
            if abs(res_t[k]) > worst_val:
                worst_val = abs(res_t[k])
                worst = k
        if worst_val > abstol:
            converged = False
        for k in range(nn + 1, dim):
            if abs(res_t[k]) > vntol:
                converged = False
        x = xt
        tmp = jac
        jac = jac_t
        jac_t = tmp
        tmp2 = res
        res = res_t
        res_t = tmp2
        norm = norm_t
        if converged:
            return x, 0, it + 1, worst, worst_val
    worst = 0
    worst_val = 0.0
    for k in range(1, nn + 1):
        if abs(res[k]) > worst_val:
            worst_val = abs(res[k])
            worst = k
    return x, 1, max_iter, worst, worst_val


@njit(cache=True, nogil=True)
def _cap_update(x, h, method, cap_nodes, cap_c, cap_v, cap_i):
    for k in range(cap_nodes.shape[0]):
        v = x[cap_nodes[k, 0]] - x[cap_nodes[k, 1]]
        if method == 1:
            i = cap_c[k] / h * (v - cap_v[k])
        else:
            i = 2.0 * cap_c[k] / h * (v - cap_v[k]) - cap_i[k]
        cap_v[k] = v
        cap_i[k] = i


@njit(cache=True, nogil=True)
def _transient_loop(x_dc, h, nsteps, trap, nn,
                    mos_nodes, mos_par, res_nodes, res_g, cap_nodes, cap_c,
                    src_nodes, src_kind, src_par,
                    reltol, vntol, abstol, max_iter, damping):
    """Fixed-step implicit integration.

    Returns (times, states, count, status, fail_time, worst_row, worst_residual).
    """
    dim = x_dc.shape[0]
    cap_v = np.zeros(cap_nodes.shape[0])
    cap_i = np.zeros(cap_nodes.shape[0])
    for k in range(cap_nodes.shape[0]):
        cap_v[k] = x_dc[cap_nodes[k, 0]] - x_dc[cap_nodes[k, 1]]
    cap = 2 * nsteps + 1
    times = np.empty(cap)
    states = np.empty((cap, dim))
    times[0] = 0.0
    states[0] = x_dc
    count = 1
    x = x_dc.copy()
    for step in range(1, nsteps + 1):
        t = step * h
        method = 2 if (trap and step > 2) else 1
        xn, status, its, worst, wval = _newton(
            x, t, 1.0, 0.0, h, method, nn, mos_nodes, mos_par, res_nodes, res_g,
            cap_nodes, cap_c, cap_v, cap_i, src_nodes, src_kind, src_par,
            reltol, vntol, abstol, max_iter, damping)
        if status == 0:
            _cap_update(xn, h, method, cap_nodes, cap_c, cap_v, cap_i)
            x = xn
            times[count] = t
            states[count] = x
            count += 1
            continue
        # single-level retry: two half steps with backward Euler
        hh = 0.5 * h
        ok = True
        for half in range(2):
            th = t - h + hh * (half + 1)
            xn, status, its, worst, wval = _newton(
                x, th, 1.0, 0.0, hh, 1, nn, mos_nodes, mos_par, res_nodes, res_g,
                cap_nodes, cap_c, cap_v, cap_i, src_nodes, src_kind, src_par,
                reltol, vntol, abstol, max_iter, damping)
            if status != 0:
                ok = False
                break
            _cap_update(xn, hh, 1, cap_nodes, cap_c, cap_v, cap_i)
            x = xn
            times[count] = th
            states[count] = x
            count += 1
        if not ok:
            return times, states, count, 1, t, worst, wval
    return times, states, count, 0, 0.0, 0, 0.0
