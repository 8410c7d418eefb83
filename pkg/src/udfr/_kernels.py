"""Compiled inner loops for grid fields: sampling, fused loss/gradient, Adam.

These mirror the numpy implementations in :mod:`udfr.sampling` and
:mod:`udfr.optimize` (the test suite checks that they agree) and exist only
for speed on a single CPU.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always", fastmath=True, error_model="numpy")
def _cell(x, lo, scale, n):
    u = (x - lo) * scale
    if u < 0.0:
        u = 0.0
    elif u > n - 1:
        u = n - 1.0
    i = int(math.floor(u))
    if i > n - 2:
        i = n - 2
    return i, u - i


@njit(cache=True, fastmath=True, error_model="numpy")
def _stencil(data, res, lo, scale, x, y, z, idx, wts):
    """Fill the 8 corner indices/weights; return the interpolated value."""
    nx, ny, nz = res[0], res[1], res[2]
    ix, fx = _cell(x, lo[0], scale[0], nx)
    iy, fy = _cell(y, lo[1], scale[1], ny)
    iz, fz = _cell(z, lo[2], scale[2], nz)
    base = ix + nx * (iy + ny * iz)
    val = 0.0
    k = 0
    for c in range(2):
        wz = fz if c else 1.0 - fz
        for b in range(2):
            wy = fy if b else 1.0 - fy
            for a in range(2):
                wx = fx if a else 1.0 - fx
                j = base + a + nx * (b + ny * c)
                w = wx * wy * wz
                idx[k] = j
                wts[k] = w
                val += data[j] * w
                k += 1
    return val


@njit(cache=True, inline="always", fastmath=True, error_model="numpy")
def _softplus(x, beta):
    bx = beta * x
    return (max(bx, 0.0) + math.log1p(math.exp(-abs(bx)))) / beta


@njit(cache=True, inline="always", fastmath=True, error_model="numpy")
def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, fastmath=True, error_model="numpy")
def softplus_grid_values(data, res, lo, scale, beta, pts):
    out = np.empty(pts.shape[0])
    idx = np.empty(8, np.int64)
    wts = np.empty(8)
    for i in range(pts.shape[0]):
        raw = _stencil(data, res, lo, scale, pts[i, 0], pts[i, 1], pts[i, 2], idx, wts)
        out[i] = _softplus(raw, beta)
    return out


@njit(cache=True, fastmath=True, error_model="numpy")
def _estimate_weights(t, f, n, far, s, c, w):
    trans = 1.0
    for i in range(n):
        if i < n - 1:
            delta = t[i + 1] - t[i]
            lo = min(f[i], f[i + 1])
            lip = 0.5 * (f[i] + f[i + 1] - delta)
            fs = max(min(lo, lip), 0.0)
        else:
            delta = far - t[i]
            fs = f[i]
        delta = max(delta, 1e-12)
        sigma = c * s * _sigmoid(-s * fs)
        alpha = -math.expm1(-sigma * delta)
        w[i] = trans * alpha
        trans *= 1.0 - alpha


@njit(cache=True, fastmath=True, error_model="numpy")
def hierarchical_sample_grid(data, res, lo, scale, beta, origins, dirs, near, far,
                             s_sched, c, n0, per_iter, u0, u_imp):
    """Per-ray uniform + importance sampling against a softplus grid.

    ``u0`` holds ``(R, n0)`` stratum offsets, ``u_imp`` ``(R, k, per_iter)``
    inverse-CDF draws; ``s_sched[i]`` is the sharpness of pass ``i``.
    """
    n_rays = origins.shape[0]
    k = s_sched.shape[0]
    n_total = n0 + k * per_iter
    t_out = np.empty((n_rays, n_total))
    f_out = np.empty((n_rays, n_total))
    idx = np.empty(8, np.int64)
    wts = np.empty(8)
    t = np.empty(n_total)
    f = np.empty(n_total)
    w = np.empty(n_total)
    cdf = np.empty(n_total + 1)
    tn = np.empty(per_iter)
    fn = np.empty(per_iter)
    for r in range(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        width = (far[r] - near[r]) / n0
        for i in range(n0):
            ti = near[r] + (i + u0[r, i]) * width
            t[i] = ti
            raw = _stencil(data, res, lo, scale, ox + ti * dx, oy + ti * dy, oz + ti * dz,
                           idx, wts)
            f[i] = _softplus(raw, beta)
        n = n0
        for it in range(k):
            _estimate_weights(t, f, n, far[r], s_sched[it], c, w)
            total = 0.0
            for i in range(n):
                total += w[i]
            cdf[0] = 0.0
            if total > 0.0:
                for i in range(n):
                    cdf[i + 1] = cdf[i] + w[i] / total
            else:
                span = far[r] - t[0]
                for i in range(n):
                    seg = (t[i + 1] if i < n - 1 else far[r]) - t[i]
                    cdf[i + 1] = cdf[i] + seg / span
            cdf[n] = 1.0
            for j in range(per_iter):
                u = u_imp[r, it, j]
                seg = np.searchsorted(cdf[:n + 1], u, side="right") - 1
                if seg < 0:
                    seg = 0
                elif seg > n - 1:
                    seg = n - 1
                left = t[seg]
                right = t[seg + 1] if seg < n - 1 else far[r]
                denom = cdf[seg + 1] - cdf[seg]
                frac = (u - cdf[seg]) / denom if denom > 0 else 0.0
                frac = min(max(frac, 0.0), 1.0)
                tj = left + frac * (right - left)
                tn[j] = tj
                raw = _stencil(data, res, lo, scale, ox + tj * dx, oy + tj * dy, oz + tj * dz,
                               idx, wts)
                fn[j] = _softplus(raw, beta)
            # insertion merge; n stays small (<= a few hundred)
            for j in range(per_iter):
                tj, fj = tn[j], fn[j]
                pos = n
                while pos > 0 and t[pos - 1] > tj:
                    t[pos] = t[pos - 1]
                    f[pos] = f[pos - 1]
                    pos -= 1
                t[pos] = tj
                f[pos] = fj
                n += 1
        span = abs(t[n - 1] - t[0]) + 1.0
        prev = -np.inf
        for i in range(n):
            eps = 1e-12 * span * i
            prev = max(prev, t[i] - eps)
            t_out[r, i] = prev + eps
            f_out[r, i] = f[i]
    return t_out, f_out


@njit(cache=True, fastmath=True, error_model="numpy")
def render_loss_grad(data, cdata, res, lo, scale, beta, c, log_s, origins, dirs, t, far,
                     gt, bg, reg_tau, lambda2, g_udf, g_color):
    """Color + regularizer terms and their gradients, accumulated into
    ``g_udf``/``g_color`` (which must be zeroed by the caller).

    Returns ``(l_color, l_reg, d_log_s, rgb)``.
    """
    n_rays, n = t.shape
    s = math.exp(log_s)
    idx = np.empty((n, 8), np.int64)
    wts = np.empty((n, 8))
    f = np.empty(n)
    e = np.empty(n)
    sigma = np.empty(n)
    delta = np.empty(n)
    tau = np.empty(n)
    T = np.empty(n)
    T_after = np.empty(n)
    w = np.empty(n)
    dsp = np.empty(n)
    col = np.empty((n, 3))
    inside = np.empty((n, 3), np.bool_)
    rgb = np.empty((n_rays, 3))
    inv_color = 1.0 / (3.0 * n_rays)
    inv_reg = 1.0 / (n_rays * n)
    l_color = 0.0
    l_reg = 0.0
    d_log_s = 0.0
    for r in range(n_rays):
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        depth = 0.0
        for i in range(n):
            ti = t[r, i]
            raw = _stencil(data, res, lo, scale, ox + ti * dx, oy + ti * dy, oz + ti * dz,
                           idx[i], wts[i])
            f[i] = _softplus(raw, beta)
            dsp[i] = _sigmoid(beta * raw)
            e[i] = _sigmoid(-s * f[i])
            sigma[i] = c * s * e[i]
            dl = (t[r, i + 1] if i < n - 1 else far[r]) - ti
            delta[i] = max(dl, 1e-12)
            tau[i] = sigma[i] * delta[i]
            T[i] = math.exp(-depth)
            depth += tau[i]
            T_after[i] = math.exp(-depth)
            w[i] = T[i] * -math.expm1(-tau[i])
            for ch in range(3):
                v = 0.0
                for q in range(8):
                    v += wts[i, q] * cdata[idx[i, q], ch]
                inside[i, ch] = 0.0 <= v <= 1.0
                col[i, ch] = min(max(v, 0.0), 1.0)
        t_end = T_after[n - 1]
        d_rgb = np.empty(3)
        for ch in range(3):
            acc = t_end * bg[ch]
            for i in range(n):
                acc += w[i] * col[i, ch]
            rgb[r, ch] = acc
            res_ = acc - gt[r, ch]
            l_color += abs(res_)
            d_rgb[ch] = (1.0 if res_ > 0 else (-1.0 if res_ < 0 else 0.0)) * inv_color
        behind = np.empty(3)
        for ch in range(3):
            behind[ch] = t_end * bg[ch]
        for i in range(n - 1, -1, -1):
            d_tau = 0.0
            for ch in range(3):
                d_tau += d_rgb[ch] * (T_after[i] * col[i, ch] - behind[ch])
                behind[ch] += w[i] * col[i, ch]
            d_sigma = d_tau * delta[i]
            reg = math.exp(-reg_tau * f[i])
            l_reg += reg
            d_f = d_sigma * (-c * s * s * e[i] * (1.0 - e[i]))
            d_f += lambda2 * (-reg_tau * reg) * inv_reg
            d_raw = d_f * dsp[i]
            d_log_s += d_sigma * sigma[i] * (1.0 - s * f[i] * (1.0 - e[i]))
            for q in range(8):
                j = idx[i, q]
                g_udf[j] += d_raw * wts[i, q]
                for ch in range(3):
                    if inside[i, ch]:
                        g_color[j, ch] += w[i] * d_rgb[ch] * wts[i, q]
    return l_color * inv_color, l_reg * inv_reg, d_log_s, rgb


@njit(cache=True, fastmath=True, error_model="numpy")
def adam_update(p, g, m, v, lr, b1, b2, eps, bc1, bc2):
    pf, gf, mf, vf = p.ravel(), g.ravel(), m.ravel(), v.ravel()
    for i in range(pf.size):
        gi = gf[i]
        mi = b1 * mf[i] + (1.0 - b1) * gi
        vi = b2 * vf[i] + (1.0 - b2) * gi * gi
        mf[i] = mi
        vf[i] = vi
        pf[i] -= lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)
