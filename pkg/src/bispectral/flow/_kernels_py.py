"""Pure NumPy flow kernels; reference implementation for the compiled ones.

Unknowns are interleaved per cell as ``(p_l, rho_l^h)``; equations as
``(water, hydrogen)``. The linearization matrix is written in LAPACK
``gbsv`` band storage with ``KL = KU = 3``: entry ``(r, c)`` of the full
matrix lives at ``ab[6 + r - c, c]``.

``consts`` packs the scalar parameters in this order::

    rho_w, mu_l, mu_g, c_v, mh, diffusion, n_vg, p_r, s_lr, s_gr, gravity,
    source_w, source_h
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

KL = 3
KU = 3
LDAB = 2 * KL + KU + 1
N_CONSTS = 13


def cell_properties(p, rho, consts):
    """Saturation, its pc-derivative, mobilities and gas pressure per cell."""
    rho_w, mu_l, mu_g, c_v, mh, _, n, p_r, s_lr, s_gr = consts[:10]
    v = 1.0 - 1.0 / n
    span = 1.0 - s_lr - s_gr
    pc = rho / mh - p
    two = pc > 0.0
    x = np.where(two, pc, 0.0) / p_r
    base = 1.0 + x**n
    s_le = np.maximum(base ** (-v), 1e-6)
    s_l = np.where(two, s_lr + span * s_le, 1.0)
    ds = np.where(two, -span * v * n * base ** (-v - 1.0) * x ** (n - 1.0) / p_r, 0.0)
    inner = np.clip(1.0 - s_le ** (1.0 / v), 0.0, 1.0)
    k_rl = np.sqrt(s_le) * (1.0 - inner**v) ** 2
    k_rg = np.sqrt(1.0 - s_le) * inner ** (2.0 * v)
    pg = np.where(two, rho / mh, p)
    return {
        "two": two,
        "s_l": s_l,
        "ds": ds,
        "lam_l": k_rl / mu_l,
        "lam_g": k_rg / mu_g,
        "pg": pg,
        "dpg_dp": np.where(two, 0.0, 1.0),
        "dpg_drho": np.where(two, 1.0 / mh, 0.0),
        "xw": rho_w / (rho_w + rho),
    }


def accumulation(p, rho, phi, h, consts):
    """Water and hydrogen mass per unit cross-section in each cell."""
    rho_w, c_v = consts[0], consts[3]
    s_l = cell_properties(p, rho, consts)["s_l"]
    a_w = h * phi * rho_w * s_l
    a_h = h * phi * rho * (s_l + c_v * (1.0 - s_l))
    return a_w, a_h, s_l


def assemble(p, rho, acc_w_old, acc_h_old, phi, h, trans, dist, trans_r, dist_r,
             dt, q_left, p_right, consts, res, ab):
    """Fill ``res`` (2N) and ``ab`` (LDAB, 2N); return right-face fluxes.

    The returned triple is (water flux, hydrogen flux, hydrogen flux carried
    by the gas phase) through the right boundary in kg m^-2 s^-1, positive
    outward.
    """
    rho_w, mu_l, mu_g, c_v, mh, dif = consts[:6]
    grav, f_w, f_h = consts[10], consts[11], consts[12]
    n = p.size
    cp = cell_properties(p, rho, consts)
    s_l, ds = cp["s_l"], cp["ds"]
    lam_l, lam_g, pg = cp["lam_l"], cp["lam_g"], cp["pg"]
    dpg_dp, dpg_drho = cp["dpg_dp"], cp["dpg_drho"]
    dcoef = phi * s_l * cp["xw"]

    hp = h * phi
    a_w = hp * rho_w * s_l
    mfac = s_l + c_v * (1.0 - s_l)
    a_h = hp * rho * mfac

    res[:] = 0.0
    ab[:] = 0.0
    r_w = (a_w - acc_w_old) / dt - h * f_w
    r_h = (a_h - acc_h_old) / dt - h * f_h

    # local accumulation derivatives, blocks (i, i)
    d = np.zeros((n, 2, 2))
    d[:, 0, 0] = -hp * rho_w * ds / dt
    d[:, 0, 1] = hp * rho_w * ds / mh / dt
    d[:, 1, 0] = hp * rho * (c_v - 1.0) * ds / dt
    d[:, 1, 1] = hp * (mfac - rho * (c_v - 1.0) * ds / mh) / dt
    lo = np.zeros((n, 2, 2))
    up = np.zeros((n, 2, 2))

    if n > 1:
        L = np.arange(n - 1)
        R = L + 1
        rho_lf = rho_w + 0.5 * (rho[L] + rho[R])
        dpl = p[R] - p[L] - grav * rho_lf * dist
        left_l = dpl < 0.0
        lam_lu = np.where(left_l, lam_l[L], lam_l[R])
        rho_lu = np.where(left_l, rho[L], rho[R])
        rho_gf = c_v * 0.5 * (rho[L] + rho[R])
        dpgf = pg[R] - pg[L] - grav * rho_gf * dist
        left_g = dpgf < 0.0
        lam_gu = np.where(left_g, lam_g[L], lam_g[R])
        rho_gu = np.where(left_g, rho[L], rho[R])
        al = trans * lam_lu
        ag = c_v * trans * lam_gu * rho_gu
        dd = dif * 0.5 * (dcoef[L] + dcoef[R]) / dist
        drho = rho[R] - rho[L]
        fw = -rho_w * al * dpl + dd * drho
        fh = -rho_lu * al * dpl - ag * dpgf - dd * drho

        r_w[L] += fw
        r_w[R] -= fw
        r_h[L] += fh
        r_h[R] -= fh

        # dF/du_L and dF/du_R, rows (water, hydrogen), cols (p, rho)
        fl = np.empty((n - 1, 2, 2))
        fr = np.empty((n - 1, 2, 2))
        fl[:, 0, 0] = rho_w * al
        fl[:, 0, 1] = -dd
        fl[:, 1, 0] = rho_lu * al + ag * dpg_dp[L]
        fl[:, 1, 1] = ag * dpg_drho[L] + dd
        fr[:, 0, 0] = -rho_w * al
        fr[:, 0, 1] = dd
        fr[:, 1, 0] = -rho_lu * al - ag * dpg_dp[R]
        fr[:, 1, 1] = -ag * dpg_drho[R] - dd

        d[L] += fl
        up[L] += fr
        d[R] -= fr
        lo[R] -= fl

    # right boundary: Dirichlet liquid state, no gas
    k = n - 1
    dpl = p_right - p[k] - grav * (rho_w + 0.5 * rho[k]) * dist_r
    if dpl < 0.0:
        lam_lu, rho_lu = lam_l[k], rho[k]
    else:
        lam_lu, rho_lu = 1.0 / mu_l, 0.0
    dpgf = p_right - pg[k] - grav * c_v * 0.5 * rho[k] * dist_r
    lam_gu = lam_g[k] if dpgf < 0.0 else 0.0
    al = trans_r * lam_lu
    ag = c_v * trans_r * lam_gu * rho[k]
    dd = dif * dcoef[k] / dist_r
    drho = -rho[k]
    fw = -rho_w * al * dpl + dd * drho
    fg = -ag * dpgf
    fh = -rho_lu * al * dpl + fg - dd * drho
    r_w[k] += fw
    r_h[k] += fh
    d[k, 0, 0] += rho_w * al
    d[k, 0, 1] += -dd
    d[k, 1, 0] += rho_lu * al + ag * dpg_dp[k]
    d[k, 1, 1] += ag * dpg_drho[k] + dd

    # left boundary: prescribed hydrogen inflow, no water flux
    r_h[0] -= q_left

    res[0::2] = r_w
    res[1::2] = r_h
    _scatter_blocks(ab, lo, d, up)
    return fw, fh, fg


def _scatter_blocks(ab, lo, d, up):
    n = d.shape[0]
    cells = np.arange(n)
    for blocks, shift in ((lo, -1), (d, 0), (up, 1)):
        i = cells[max(0, -shift): n - max(0, shift)]
        j = i + shift
        for a in range(2):
            for b in range(2):
                ab[6 + 2 * i + a - 2 * j - b, 2 * j + b] = blocks[i, a, b]


def solve(ab, rhs):
    """Solve the banded system; ``ab`` is left untouched."""
    return solve_banded((KL, KU), ab[KL:], rhs, overwrite_ab=False, check_finite=False)
