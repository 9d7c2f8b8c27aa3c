"""van Genuchten-Mualem laws."""
from __future__ import annotations

import numpy as np

SLE_MIN = 1e-6


class CapillarySingularity(ValueError):
    pass


def effective_saturation(s_l, s_lr, s_gr):
    s_l = np.asarray(s_l, dtype=float)
    if not s_lr + s_gr < 1:
        raise ValueError("s_lr + s_gr must be below 1")
    return np.clip((s_l - s_lr) / (1.0 - s_lr - s_gr), 0.0, 1.0)


def capillary_pressure(s_le, p_r, n):
    """p_c = p_r (s_le^{-1/v} - 1)^{1/n}, v = 1 - 1/n."""
    s_le = np.asarray(s_le, dtype=float)
    if np.any(s_le <= 0):
        raise CapillarySingularity("capillary pressure is singular at s_le <= 0")
    v = 1.0 - 1.0 / n
    return p_r * np.maximum(s_le ** (-1.0 / v) - 1.0, 0.0) ** (1.0 / n)


def capillary_pressure_regularized(s_le, p_r, n):
    return capillary_pressure(np.clip(s_le, SLE_MIN, 1.0), p_r, n)


def effective_saturation_from_pc(p_c, p_r, n):
    """Inverse of the capillary law: s_le = (1 + (p_c/p_r)^n)^{-v}; 1 for p_c <= 0."""
    p_c = np.asarray(p_c, dtype=float)
    v = 1.0 - 1.0 / n
    x = np.maximum(p_c, 0.0) / p_r
    return np.maximum((1.0 + x**n) ** (-v), SLE_MIN)


def rel_perm(s_le, n):
    """Mualem relative permeabilities (k_rl, k_rg)."""
    s_le = np.clip(np.asarray(s_le, dtype=float), 0.0, 1.0)
    v = 1.0 - 1.0 / n
    inner = np.clip(1.0 - s_le ** (1.0 / v), 0.0, 1.0)
    k_rl = np.sqrt(s_le) * (1.0 - inner**v) ** 2
    k_rg = np.sqrt(1.0 - s_le) * inner ** (2.0 * v)
    return k_rl, k_rg
