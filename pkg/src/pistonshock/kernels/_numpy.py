"""Pure-numpy twin of the compiled finite-volume kernel.

Same contract as ``_fvcore``: minmod-limited MUSCL reconstruction of the
primitive variables and an HLL flux evaluated in the frame of each moving
face. Kept formula-identical to the Cython loop so the two backends agree to
the last bit.
"""

import numpy as np


def hll_fluxes(rho, v, gamma, w_face, g_rho, g_mom):
    """Face fluxes for one hydro stage.

    rho, v: padded cell arrays, two ghost cells each side (length n+4).
    w_face: face velocities (length n+1).
    g_rho, g_mom: output flux arrays (length n+1), overwritten.
    """
    d_rho = rho[1:] - rho[:-1]
    d_v = v[1:] - v[:-1]

    def minmod(a, b):
        return np.where(a * b > 0.0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)

    s_rho = minmod(d_rho[:-1], d_rho[1:])    # slope of cells 1 .. n+2
    s_v = minmod(d_v[:-1], d_v[1:])

    # face f sits between padded cells f+1 and f+2
    rho_l = rho[1:-2] + 0.5 * s_rho[:-1]
    v_l = v[1:-2] + 0.5 * s_v[:-1]
    rho_r = rho[2:-1] - 0.5 * s_rho[1:]
    v_r = v[2:-1] - 0.5 * s_v[1:]

    c_l = np.sqrt(gamma * rho_l ** (gamma - 1.0))
    c_r = np.sqrt(gamma * rho_r ** (gamma - 1.0))
    sl = np.minimum(v_l - c_l, v_r - c_r) - w_face
    sr = np.maximum(v_l + c_l, v_r + c_r) - w_face

    p_l = rho_l**gamma
    p_r = rho_r**gamma
    # F(U) - w U with U = (rho, rho v)
    f1_l = rho_l * (v_l - w_face)
    f2_l = rho_l * v_l * (v_l - w_face) + p_l
    f1_r = rho_r * (v_r - w_face)
    f2_r = rho_r * v_r * (v_r - w_face) + p_r

    u1_l, u2_l = rho_l, rho_l * v_l
    u1_r, u2_r = rho_r, rho_r * v_r

    span = sr - sl
    mid1 = (sr * f1_l - sl * f1_r + sl * sr * (u1_r - u1_l)) / span
    mid2 = (sr * f2_l - sl * f2_r + sl * sr * (u2_r - u2_l)) / span

    g_rho[:] = np.where(sl >= 0.0, f1_l, np.where(sr <= 0.0, f1_r, mid1))
    g_mom[:] = np.where(sl >= 0.0, f2_l, np.where(sr <= 0.0, f2_r, mid2))
    return g_rho, g_mom
