# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled finite-volume kernel: MUSCL reconstruction + moving-face HLL flux.

Formula-identical to kernels._numpy.hll_fluxes; the pure loop avoids the
temporary arrays of the vectorized form.
"""

from libc.math cimport fabs, pow, sqrt

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline double _minmod(double a, double b) nogil:
    if a * b > 0.0:
        return a if fabs(a) < fabs(b) else b
    return 0.0


def hll_fluxes(double[::1] rho, double[::1] v, double gamma,
               double[::1] w_face, double[::1] g_rho, double[::1] g_mom):
    """Face fluxes for one hydro stage; see the numpy twin for the contract."""
    cdef Py_ssize_t n_faces = w_face.shape[0]
    cdef Py_ssize_t f, i
    cdef double s_rho_l, s_rho_r, s_v_l, s_v_r
    cdef double rho_l, rho_r, v_l, v_r, c_l, c_r, sl, sr, w
    cdef double p_l, p_r, f1_l, f2_l, f1_r, f2_r, span

    with nogil:
        for f in range(n_faces):
            i = f + 1          # left cell of face f in the padded array
            s_rho_l = _minmod(rho[i] - rho[i - 1], rho[i + 1] - rho[i])
            s_v_l = _minmod(v[i] - v[i - 1], v[i + 1] - v[i])
            s_rho_r = _minmod(rho[i + 1] - rho[i], rho[i + 2] - rho[i + 1])
            s_v_r = _minmod(v[i + 1] - v[i], v[i + 2] - v[i + 1])

            rho_l = rho[i] + 0.5 * s_rho_l
            v_l = v[i] + 0.5 * s_v_l
            rho_r = rho[i + 1] - 0.5 * s_rho_r
            v_r = v[i + 1] - 0.5 * s_v_r

            w = w_face[f]
            c_l = sqrt(gamma * pow(rho_l, gamma - 1.0))
            c_r = sqrt(gamma * pow(rho_r, gamma - 1.0))
            sl = (v_l - c_l if v_l - c_l < v_r - c_r else v_r - c_r) - w
            sr = (v_l + c_l if v_l + c_l > v_r + c_r else v_r + c_r) - w

            p_l = pow(rho_l, gamma)
            p_r = pow(rho_r, gamma)
            f1_l = rho_l * (v_l - w)
            f2_l = rho_l * v_l * (v_l - w) + p_l
            f1_r = rho_r * (v_r - w)
            f2_r = rho_r * v_r * (v_r - w) + p_r

            if sl >= 0.0:
                g_rho[f] = f1_l
                g_mom[f] = f2_l
            elif sr <= 0.0:
                g_rho[f] = f1_r
                g_mom[f] = f2_r
            else:
                span = sr - sl
                g_rho[f] = (sr * f1_l - sl * f1_r + sl * sr * (rho_r - rho_l)) / span
                g_mom[f] = (sr * f2_l - sl * f2_r
                            + sl * sr * (rho_r * v_r - rho_l * v_l)) / span
    return np.asarray(g_rho), np.asarray(g_mom)
