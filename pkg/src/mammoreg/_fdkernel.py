"""Numba kernels: bilinear lookup and the central-difference MI gradient
over B-spline coefficients.

Each coefficient only moves pixels inside its 4x4-span support, so the joint
histogram is patched in place for those pixels and restored afterwards. MI
is tracked through sums of c*log2(c); the fixed marginal never changes.
"""

import numpy as np
from numba import njit

# Samples this close (in pixels) outside the grid snap onto its edge, so
# round-off in transformed coordinates does not drop border pixels.
EDGE_TOL = 1e-9


@njit(cache=True)
def _bilinear(img, u, v):
    h, w = img.shape
    if u < 0.0 or v < 0.0 or u > w - 1 or v > h - 1:
        return 0.0
    i0 = int(np.floor(u))
    j0 = int(np.floor(v))
    i1 = min(i0 + 1, w - 1)
    j1 = min(j0 + 1, h - 1)
    tu = u - i0
    tv = v - j0
    top = img[j0, i0] + tu * (img[j0, i1] - img[j0, i0])
    bot = img[j1, i0] + tu * (img[j1, i1] - img[j1, i0])
    val = top + tv * (bot - top)
    if val < 0.0:
        return 0.0
    if val > 1.0:
        return 1.0
    return val


@njit(cache=True)
def bilinear_many(img, u, v, out):
    """Unclipped lookup at flat index arrays; zero outside. Same arithmetic
    as the numpy path so results agree bit for bit."""
    h, w = img.shape
    for k in range(u.size):
        uu = u[k]
        vv = v[k]
        if not (uu >= -EDGE_TOL and vv >= -EDGE_TOL and uu <= w - 1 + EDGE_TOL and vv <= h - 1 + EDGE_TOL):
            out[k] = 0.0
            continue
        uu = min(max(uu, 0.0), w - 1.0)
        vv = min(max(vv, 0.0), h - 1.0)
        i0 = int(np.floor(uu))
        j0 = int(np.floor(vv))
        i1 = min(i0 + 1, w - 1)
        j1 = min(j0 + 1, h - 1)
        tu = uu - i0
        tv = vv - j0
        top = img[j0, i0] + tu * (img[j0, i1] - img[j0, i0])
        bot = img[j1, i0] + tu * (img[j1, i1] - img[j1, i0])
        out[k] = top + tv * (bot - top)
    return out


@njit(cache=True)
def plogp_table(n):
    out = np.zeros(n + 2)
    for k in range(2, n + 2):
        out[k] = k * np.log2(k)
    return out


@njit(cache=True)
def sum_plogp(counts, table):
    s = 0.0
    for c in counts.ravel():
        s += table[c]
    return s


@njit(cache=True)
def mi_gradient(mov, fbin, mask, sx, sy, disp, mbin, joint, margm, table,
                wx, wy, xlo, xhi, ylo, yhi, hstep, bins, n):
    ny = wy.shape[1]
    nx = wx.shape[1]
    grad = np.zeros((2, ny, nx))
    s_joint = sum_plogp(joint, table)
    s_marg = sum_plogp(margm, table)
    buf_f = np.empty(mov.size, dtype=np.int64)
    buf_o = np.empty(mov.size, dtype=np.int64)
    buf_n = np.empty(mov.size, dtype=np.int64)
    for comp in range(2):
        for j in range(ny):
            for i in range(nx):
                vals = np.zeros(2)
                for side in range(2):
                    d_h = hstep if side == 0 else -hstep
                    sj = s_joint
                    sm = s_marg
                    nchg = 0
                    for r in range(ylo[j], yhi[j]):
                        wyv = wy[r, j]
                        for q in range(xlo[i], xhi[i]):
                            if not mask[r, q]:
                                continue
                            d = d_h * wyv * wx[q, i]
                            px = disp[0, r, q]
                            py = disp[1, r, q]
                            if comp == 0:
                                px += d
                            else:
                                py += d
                            v = _bilinear(mov, q + px / sx, r + py / sy)
                            nb = int(v * bins)
                            if nb > bins - 1:
                                nb = bins - 1
                            ob = mbin[r, q]
                            if nb == ob:
                                continue
                            fb = fbin[r, q]
                            c = joint[fb, ob]
                            sj += table[c - 1] - table[c]
                            joint[fb, ob] = c - 1
                            c = joint[fb, nb]
                            sj += table[c + 1] - table[c]
                            joint[fb, nb] = c + 1
                            c = margm[ob]
                            sm += table[c - 1] - table[c]
                            margm[ob] = c - 1
                            c = margm[nb]
                            sm += table[c + 1] - table[c]
                            margm[nb] = c + 1
                            buf_f[nchg] = fb
                            buf_o[nchg] = ob
                            buf_n[nchg] = nb
                            nchg += 1
                    vals[side] = (sj - sm) / n
                    for t in range(nchg):
                        joint[buf_f[t], buf_n[t]] -= 1
                        joint[buf_f[t], buf_o[t]] += 1
                        margm[buf_n[t]] -= 1
                        margm[buf_o[t]] += 1
                grad[comp, j, i] = (vals[0] - vals[1]) / (2.0 * hstep)
    return grad
