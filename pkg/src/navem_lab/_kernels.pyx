# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled polygon jet kernel (same contract as ``_kernels_py.polygon_jets``)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, hypot

cnp.import_array()


def polygon_jets(const double[:, ::1] vertices, const double[:, ::1] pts, int order, double eps):
    cdef Py_ssize_t nv = vertices.shape[0]
    cdef Py_ssize_t npts = pts.shape[0]
    bub_arr = np.zeros((npts, 6))
    tra_arr = np.zeros((npts, nv, 6))
    cdef double[:, ::1] bub = bub_arr
    cdef double[:, :, ::1] tra = tra_arr

    # per-edge constants
    nx_a = np.empty(nv); ny_a = np.empty(nv); len_a = np.empty(nv)
    gsx_a = np.empty(nv); gsy_a = np.empty(nv)
    cdef double[::1] nx = nx_a, ny = ny_a, L = len_a, gsx = gsx_a, gsy = gsy_a
    # per-edge scratch for one point
    phi_a = np.empty(nv); s_a = np.empty(nv)
    gpx_a = np.empty(nv); gpy_a = np.empty(nv)
    hpxx_a = np.empty(nv); hpxy_a = np.empty(nv); hpyy_a = np.empty(nv)
    u_a = np.empty(nv); gux_a = np.empty(nv); guy_a = np.empty(nv)
    huxx_a = np.empty(nv); huxy_a = np.empty(nv); huyy_a = np.empty(nv)
    cdef double[::1] phi = phi_a, s = s_a, gpx = gpx_a, gpy = gpy_a
    cdef double[::1] hpxx = hpxx_a, hpxy = hpxy_a, hpyy = hpyy_a
    cdef double[::1] u = u_a, gux = gux_a, guy = guy_a, huxx = huxx_a, huxy = huxy_a, huyy = huyy_a

    cdef Py_ssize_t i, j, p, ip
    cdef double ex, ey, ax, ay, mx, my, x, y, d, rx, ry, t, q, r
    cdef double p3, gtx, gty, ht, grx, gry, hrxx, hrxy, hryy, gphx, gphy
    cdef double mu, sumsq, bval, U, gUx, gUy, hUxx, hUxy, hUyy, g3, w
    cdef double gbx, gby, hbxx, hbxy, hbyy, c, psi, gPx, gPy, hPxx, hPxy, hPyy, gpsx, gpsy
    cdef double ss, sp
    cdef bint singular = False

    for i in range(nv):
        j = (i + 1) % nv
        ex = vertices[j, 0] - vertices[i, 0]
        ey = vertices[j, 1] - vertices[i, 1]
        L[i] = hypot(ex, ey)
        nx[i] = -ey / L[i]
        ny[i] = ex / L[i]
        gsx[i] = ex / (L[i] * L[i])
        gsy[i] = ey / (L[i] * L[i])

    for p in range(npts):
        x = pts[p, 0]
        y = pts[p, 1]
        mu = 1e300
        for i in range(nv):
            j = (i + 1) % nv
            ax = vertices[i, 0]
            ay = vertices[i, 1]
            mx = 0.5 * (ax + vertices[j, 0])
            my = 0.5 * (ay + vertices[j, 1])
            d = (x - ax) * nx[i] + (y - ay) * ny[i]
            rx = x - mx
            ry = y - my
            t = (0.25 * L[i] * L[i] - (rx * rx + ry * ry)) / L[i]
            q = sqrt(t * t + d * d * d * d)
            if t > 0.0:
                r = 0.5 * d * d * d * d / (q + t)
            else:
                r = 0.5 * (q - t)
            phi[i] = sqrt(d * d + r * r)
            s[i] = (x - ax) * gsx[i] + (y - ay) * gsy[i]
            if phi[i] < mu:
                mu = phi[i]
            if order > 0 and phi[i] > 0.0:
                gtx = -2.0 * rx / L[i]
                gty = -2.0 * ry / L[i]
                ht = -2.0 / L[i]
                grx = (d * d * d * nx[i] - r * gtx) / q
                gry = (d * d * d * ny[i] - r * gty) / q
                hrxx = (-2.0 * gtx * grx - 2.0 * grx * grx + 3.0 * d * d * nx[i] * nx[i] - r * ht) / q
                hrxy = (-(gtx * gry + grx * gty) - 2.0 * grx * gry + 3.0 * d * d * nx[i] * ny[i]) / q
                hryy = (-2.0 * gty * gry - 2.0 * gry * gry + 3.0 * d * d * ny[i] * ny[i] - r * ht) / q
                gphx = (d * nx[i] + r * grx) / phi[i]
                gphy = (d * ny[i] + r * gry) / phi[i]
                gpx[i] = gphx
                gpy[i] = gphy
                p3 = phi[i] * phi[i] * phi[i]
                hpxx[i] = (d * d * grx * grx + r * (r * nx[i] * nx[i] - 2.0 * d * nx[i] * grx)) / p3 + r * hrxx / phi[i]
                hpxy[i] = ((d * d * grx * gry + r * (r * nx[i] * ny[i] - d * (nx[i] * gry + grx * ny[i]))) / p3
                           + r * hrxy / phi[i])
                hpyy[i] = (d * d * gry * gry + r * (r * ny[i] * ny[i] - 2.0 * d * ny[i] * gry)) / p3 + r * hryy / phi[i]

        if order > 0 and mu < eps:
            singular = True
            break

        sumsq = 0.0
        U = 0.0
        for i in range(nv):
            if mu > 0.0:
                u[i] = mu / phi[i]
            else:
                u[i] = 1.0 if phi[i] == 0.0 else 0.0
            sumsq += u[i] * u[i]
            U += u[i]
        bval = mu / sqrt(sumsq)
        bub[p, 0] = bval
        for j in range(nv):
            ip = (j + nv - 1) % nv
            tra[p, j, 0] = (u[j] * (1.0 - s[j]) + u[ip] * s[ip]) / U
        if order == 0:
            continue

        gbx = 0.0; gby = 0.0; hbxx = 0.0; hbxy = 0.0; hbyy = 0.0
        gUx = 0.0; gUy = 0.0; hUxx = 0.0; hUxy = 0.0; hUyy = 0.0
        for i in range(nv):
            c = bval / phi[i]
            g3 = c * c * c
            gbx += g3 * gpx[i]
            gby += g3 * gpy[i]
            w = 3.0 * g3 / phi[i]
            hbxx += g3 * hpxx[i] - w * gpx[i] * gpx[i]
            hbxy += g3 * hpxy[i] - w * gpx[i] * gpy[i]
            hbyy += g3 * hpyy[i] - w * gpy[i] * gpy[i]
            c = mu / (phi[i] * phi[i])
            gux[i] = -c * gpx[i]
            guy[i] = -c * gpy[i]
            huxx[i] = c * (2.0 * gpx[i] * gpx[i] / phi[i] - hpxx[i])
            huxy[i] = c * (2.0 * gpx[i] * gpy[i] / phi[i] - hpxy[i])
            huyy[i] = c * (2.0 * gpy[i] * gpy[i] / phi[i] - hpyy[i])
            gUx += gux[i]; gUy += guy[i]
            hUxx += huxx[i]; hUxy += huxy[i]; hUyy += huyy[i]
        hbxx += 3.0 / bval * gbx * gbx
        hbxy += 3.0 / bval * gbx * gby
        hbyy += 3.0 / bval * gby * gby
        bub[p, 1] = gbx; bub[p, 2] = gby
        bub[p, 3] = hbxx; bub[p, 4] = hbxy; bub[p, 5] = hbyy

        for j in range(nv):
            ip = (j + nv - 1) % nv
            ss = s[j]
            sp = s[ip]
            psi = tra[p, j, 0]
            gPx = gux[j] * (1.0 - ss) - u[j] * gsx[j] + gux[ip] * sp + u[ip] * gsx[ip]
            gPy = guy[j] * (1.0 - ss) - u[j] * gsy[j] + guy[ip] * sp + u[ip] * gsy[ip]
            hPxx = huxx[j] * (1.0 - ss) - 2.0 * gux[j] * gsx[j] + huxx[ip] * sp + 2.0 * gux[ip] * gsx[ip]
            hPxy = (huxy[j] * (1.0 - ss) - (gux[j] * gsy[j] + guy[j] * gsx[j])
                    + huxy[ip] * sp + (gux[ip] * gsy[ip] + guy[ip] * gsx[ip]))
            hPyy = huyy[j] * (1.0 - ss) - 2.0 * guy[j] * gsy[j] + huyy[ip] * sp + 2.0 * guy[ip] * gsy[ip]
            gpsx = (gPx - psi * gUx) / U
            gpsy = (gPy - psi * gUy) / U
            tra[p, j, 1] = gpsx
            tra[p, j, 2] = gpsy
            tra[p, j, 3] = (hPxx - psi * hUxx - 2.0 * gpsx * gUx) / U
            tra[p, j, 4] = (hPxy - psi * hUxy - gpsx * gUy - gUx * gpsy) / U
            tra[p, j, 5] = (hPyy - psi * hUyy - 2.0 * gpsy * gUy) / U

    return bub_arr, tra_arr, singular
