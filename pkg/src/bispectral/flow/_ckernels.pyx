# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled flow kernels; same contract as ``_kernels_py``."""
import numpy as np

from libc.math cimport pow, sqrt
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_lapack cimport dgbsv

cdef enum:
    KL = 3
    KU = 3
    LDAB = 10
    DIAG = 6


cdef inline void _put(double* ab, Py_ssize_t r, Py_ssize_t c, double v) noexcept nogil:
    ab[DIAG + r - c + LDAB * c] += v


cdef struct CellProps:
    double s_l
    double ds
    double lam_l
    double lam_g
    double pg
    double dpg_dp
    double dpg_drho
    double dcoef


cdef inline CellProps _cell(double p, double rho, double phi, const double* c) noexcept nogil:
    cdef CellProps out
    cdef double rho_w = c[0], mu_l = c[1], mu_g = c[2], mh = c[4]
    cdef double n = c[6], p_r = c[7], s_lr = c[8], s_gr = c[9]
    cdef double v = 1.0 - 1.0 / n
    cdef double span = 1.0 - s_lr - s_gr
    cdef double pc = rho / mh - p
    cdef double x, base, s_le, inner
    if pc > 0.0:
        x = pc / p_r
        base = 1.0 + pow(x, n)
        s_le = pow(base, -v)
        if s_le < 1e-6:
            s_le = 1e-6
        out.s_l = s_lr + span * s_le
        out.ds = -span * v * n * pow(base, -v - 1.0) * pow(x, n - 1.0) / p_r
        inner = 1.0 - pow(s_le, 1.0 / v)
        if inner < 0.0:
            inner = 0.0
        elif inner > 1.0:
            inner = 1.0
        out.lam_l = sqrt(s_le) * (1.0 - pow(inner, v)) * (1.0 - pow(inner, v)) / mu_l
        out.lam_g = sqrt(1.0 - s_le) * pow(inner, 2.0 * v) / mu_g
        out.pg = rho / mh
        out.dpg_dp = 0.0
        out.dpg_drho = 1.0 / mh
    else:
        out.s_l = 1.0
        out.ds = 0.0
        out.lam_l = 1.0 / mu_l
        out.lam_g = 0.0
        out.pg = p
        out.dpg_dp = 1.0
        out.dpg_drho = 0.0
    out.dcoef = phi * out.s_l * rho_w / (rho_w + rho)
    return out


def assemble(double[::1] p, double[::1] rho, double[::1] acc_w_old, double[::1] acc_h_old,
             double[::1] phi, double[::1] h, double[::1] trans, double[::1] dist,
             double trans_r, double dist_r, double dt, double q_left, double p_right,
             double[::1] consts, double[::1] res, double[::1, :] ab):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i, L, R
    cdef double rho_w = consts[0], mu_l = consts[1], c_v = consts[3], mh = consts[4]
    cdef double dif = consts[5], grav = consts[10], f_w = consts[11], f_h = consts[12]
    cdef double hp, mfac, a_w, a_h
    cdef double dpl, dpgf, lam_lu, rho_lu, lam_gu, rho_gu, al, ag, dd, drho, fw, fh, fg
    cdef double fl00, fl01, fl10, fl11, fr00, fr01, fr10, fr11
    cdef CellProps cl, cr
    if ab.shape[0] != LDAB or ab.shape[1] != 2 * n or res.shape[0] != 2 * n:
        raise ValueError("work arrays do not match the mesh")
    cdef CellProps* props = <CellProps*> malloc(n * sizeof(CellProps))
    if props == NULL:
        raise MemoryError()

    cdef const double* cptr = &consts[0]
    cdef double* abp = &ab[0, 0]
    cdef Py_ssize_t m = ab.shape[0] * ab.shape[1]
    with nogil:
        for i in range(m):
            abp[i] = 0.0
        for i in range(n):
            cl = _cell(p[i], rho[i], phi[i], cptr)
            props[i] = cl
            hp = h[i] * phi[i]
            mfac = cl.s_l + c_v * (1.0 - cl.s_l)
            a_w = hp * rho_w * cl.s_l
            a_h = hp * rho[i] * mfac
            res[2 * i] = (a_w - acc_w_old[i]) / dt - h[i] * f_w
            res[2 * i + 1] = (a_h - acc_h_old[i]) / dt - h[i] * f_h
            _put(abp, 2 * i, 2 * i, -hp * rho_w * cl.ds / dt)
            _put(abp, 2 * i, 2 * i + 1, hp * rho_w * cl.ds / mh / dt)
            _put(abp, 2 * i + 1, 2 * i, hp * rho[i] * (c_v - 1.0) * cl.ds / dt)
            _put(abp, 2 * i + 1, 2 * i + 1, hp * (mfac - rho[i] * (c_v - 1.0) * cl.ds / mh) / dt)

        for L in range(n - 1):
            R = L + 1
            cl = props[L]
            cr = props[R]
            dpl = p[R] - p[L] - grav * (rho_w + 0.5 * (rho[L] + rho[R])) * dist[L]
            if dpl < 0.0:
                lam_lu = cl.lam_l
                rho_lu = rho[L]
            else:
                lam_lu = cr.lam_l
                rho_lu = rho[R]
            dpgf = cr.pg - cl.pg - grav * c_v * 0.5 * (rho[L] + rho[R]) * dist[L]
            if dpgf < 0.0:
                lam_gu = cl.lam_g
                rho_gu = rho[L]
            else:
                lam_gu = cr.lam_g
                rho_gu = rho[R]
            al = trans[L] * lam_lu
            ag = c_v * trans[L] * lam_gu * rho_gu
            dd = dif * 0.5 * (cl.dcoef + cr.dcoef) / dist[L]
            drho = rho[R] - rho[L]
            fw = -rho_w * al * dpl + dd * drho
            fh = -rho_lu * al * dpl - ag * dpgf - dd * drho
            res[2 * L] += fw
            res[2 * R] -= fw
            res[2 * L + 1] += fh
            res[2 * R + 1] -= fh

            fl00 = rho_w * al
            fl01 = -dd
            fl10 = rho_lu * al + ag * cl.dpg_dp
            fl11 = ag * cl.dpg_drho + dd
            fr00 = -rho_w * al
            fr01 = dd
            fr10 = -rho_lu * al - ag * cr.dpg_dp
            fr11 = -ag * cr.dpg_drho - dd

            # row L gets +F, row R gets -F
            _put(abp, 2 * L, 2 * L, fl00)
            _put(abp, 2 * L, 2 * L + 1, fl01)
            _put(abp, 2 * L + 1, 2 * L, fl10)
            _put(abp, 2 * L + 1, 2 * L + 1, fl11)
            _put(abp, 2 * L, 2 * R, fr00)
            _put(abp, 2 * L, 2 * R + 1, fr01)
            _put(abp, 2 * L + 1, 2 * R, fr10)
            _put(abp, 2 * L + 1, 2 * R + 1, fr11)
            _put(abp, 2 * R, 2 * R, -fr00)
            _put(abp, 2 * R, 2 * R + 1, -fr01)
            _put(abp, 2 * R + 1, 2 * R, -fr10)
            _put(abp, 2 * R + 1, 2 * R + 1, -fr11)
            _put(abp, 2 * R, 2 * L, -fl00)
            _put(abp, 2 * R, 2 * L + 1, -fl01)
            _put(abp, 2 * R + 1, 2 * L, -fl10)
            _put(abp, 2 * R + 1, 2 * L + 1, -fl11)

        i = n - 1
        cl = props[i]
        dpl = p_right - p[i] - grav * (rho_w + 0.5 * rho[i]) * dist_r
        if dpl < 0.0:
            lam_lu = cl.lam_l
            rho_lu = rho[i]
        else:
            lam_lu = 1.0 / mu_l
            rho_lu = 0.0
        dpgf = p_right - cl.pg - grav * c_v * 0.5 * rho[i] * dist_r
        lam_gu = cl.lam_g if dpgf < 0.0 else 0.0
        al = trans_r * lam_lu
        ag = c_v * trans_r * lam_gu * rho[i]
        dd = dif * cl.dcoef / dist_r
        drho = -rho[i]
        fw = -rho_w * al * dpl + dd * drho
        fg = -ag * dpgf
        fh = -rho_lu * al * dpl + fg - dd * drho
        res[2 * i] += fw
        res[2 * i + 1] += fh
        _put(abp, 2 * i, 2 * i, rho_w * al)
        _put(abp, 2 * i, 2 * i + 1, -dd)
        _put(abp, 2 * i + 1, 2 * i, rho_lu * al + ag * cl.dpg_dp)
        _put(abp, 2 * i + 1, 2 * i + 1, ag * cl.dpg_drho + dd)

        res[1] -= q_left
        free(props)
    return fw, fh, fg


def solve(ab, rhs):
    """Banded LU solve via LAPACK dgbsv; ``ab`` is left untouched."""
    cdef double[::1, :] work = np.array(ab, dtype=np.float64, order="F", copy=True)
    out = np.array(rhs, dtype=np.float64, copy=True)
    cdef double[::1] b = out
    cdef int n = work.shape[1]
    cdef int kl = KL, ku = KU, nrhs = 1, ldab = LDAB, ldb = n, info = 0
    cdef int[::1] ipiv = np.empty(n, dtype=np.intc)
    with nogil:
        dgbsv(&n, &kl, &ku, &nrhs, &work[0, 0], &ldab, &ipiv[0], &b[0], &ldb, &info)
    if info != 0:
        out[:] = np.nan
    return out
