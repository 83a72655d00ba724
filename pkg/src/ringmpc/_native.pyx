# cython: language_level=3
"""Compiled implementations of the hot numerical kernels.

Mirrors `ringmpc._pykernels` exactly: same algorithms, same tableau and
step-control constants, same status codes. Dense linear algebra goes
through BLAS; everything else is plain C loops. No fast-math anywhere,
so results are reproducible across runs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, fabs, sin, sqrt
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemv

cnp.import_array()

QP_CONVERGED = 0
QP_MAX_ITER = 1

RK_OK = 0
RK_STEP_UNDERFLOW = 1
RK_SINGULAR_RADIUS = 2

cdef double _STEP_SAFETY = 0.9
cdef double _STEP_MIN_FACTOR = 0.2
cdef double _STEP_MAX_FACTOR = 5.0


def backend_name():
    return "native"


# ---------------------------------------------------------------------------
# box QP kernels

cdef void _hmul(double* a, double* x, double* out, int d) noexcept nogil:
    # out = A x for symmetric A stored contiguously (row == column major)
    cdef int inc = 1
    cdef double one = 1.0, zero = 0.0
    cdef char tn = b'N'
    dgemv(&tn, &d, &d, &one, a, &d, x, &inc, &zero, out, &inc)


cdef double _res_at(double* w, double* hw, double* fs, double* scale,
                    double* lo, double* hi, int d) noexcept nogil:
    cdef double r = 0.0, u, v
    cdef int i
    for i in range(d):
        u = scale[i] * w[i]
        if u < lo[i]:
            u = lo[i]
        elif u > hi[i]:
            u = hi[i]
        v = u - (hw[i] + fs[i]) / scale[i]
        if v < lo[i]:
            v = lo[i]
        elif v > hi[i]:
            v = hi[i]
        v = fabs(u - v)
        if v > r:
            r = v
    return r


cdef double _obj_at(double* w, double* hw, double* fs, int d) noexcept nogil:
    # 0.5 w'(H w) + fs'w
    cdef double acc = 0.0
    cdef int i
    for i in range(d):
        acc += 0.5 * w[i] * hw[i] + fs[i] * w[i]
    return acc


cdef void _clip_into(double* src, double* lo, double* hi, double* dst,
                     int n) noexcept nogil:
    cdef int i
    cdef double v
    for i in range(n):
        v = src[i]
        if v < lo[i]:
            v = lo[i]
        elif v > hi[i]:
            v = hi[i]
        dst[i] = v


def apgd_box_dense(double[:, ::1] hs, double[::1] fs, double[::1] lo,
                   double[::1] hi, double[::1] scale, double[::1] w0,
                   double lip, double mu, double tol, int max_iter,
                   int check_every=1):
    """See `ringmpc._pykernels.apgd_box_dense`."""
    cdef int d = fs.shape[0]
    cdef cnp.ndarray[double, ndim=1] lo_w = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] hi_w = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] x = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] y = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] z = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] hx = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] hy = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] hz = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] h_best = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] best_w = np.empty(d)
    cdef cnp.ndarray[double, ndim=1] u_out = np.empty(d)
    cdef double* px = &x[0]
    cdef double* py = &y[0]
    cdef double* pz = &z[0]
    cdef double* phx = &hx[0]
    cdef double* phy = &hy[0]
    cdef double* phz = &hz[0]
    cdef double* phb = &h_best[0]
    cdef double* pb = &best_w[0]
    cdef double* plo = &lo_w[0]
    cdef double* phi = &hi_w[0]
    cdef double* plou = &lo[0]
    cdef double* phiu = &hi[0]
    cdef double* psc = &scale[0]
    cdef double* pfs = &fs[0]
    cdef double* ph = &hs[0, 0]
    cdef int i, it = 0, status = QP_MAX_ITER
    cdef double f_val, res, best_res, best_f, f_accepted
    cdef double theta = 1.0, theta_next, beta, q, acc, fz, rz, inv_lip
    cdef bint restart, do_check

    for i in range(d):
        plo[i] = lo[i] / scale[i]
        phi[i] = hi[i] / scale[i]
    # y doubles as the projected start; one matvec per iteration from
    # here on: H y follows from the cached H z and H x by linearity of
    # the momentum step (a fresh product is always taken at z, so the
    # combination never feeds back into itself)
    _clip_into(&w0[0], plo, phi, py, d)
    _hmul(ph, py, phy, d)
    f_val = _obj_at(py, phy, pfs, d)
    res = _res_at(py, phy, pfs, psc, plou, phiu, d)
    memcpy(pb, py, d * sizeof(double))
    memcpy(phb, phy, d * sizeof(double))
    best_res = res
    best_f = f_val
    if res <= tol:
        for i in range(d):
            u_out[i] = psc[i] * pb[i]
        _clip_into(&u_out[0], plou, phiu, &u_out[0], d)
        return u_out, 0, best_res, QP_CONVERGED, best_f

    memcpy(px, py, d * sizeof(double))
    memcpy(phx, phy, d * sizeof(double))
    f_accepted = f_val
    inv_lip = 1.0 / lip

    while it < max_iter:
        it += 1
        # z = clip(y - (H y + fs) / lip); the restart test accumulates
        # (y-z).(z-x) in the same pass
        acc = 0.0
        for i in range(d):
            fz = py[i] - (phy[i] + pfs[i]) * inv_lip
            if fz < plo[i]:
                fz = plo[i]
            elif fz > phi[i]:
                fz = phi[i]
            pz[i] = fz
            acc += (py[i] - fz) * (fz - px[i])
        restart = acc > 0.0
        _hmul(ph, pz, phz, d)

        do_check = (it % check_every == 0) or (it == max_iter)
        if do_check:
            fz = _obj_at(pz, phz, pfs, d)
            rz = _res_at(pz, phz, pfs, psc, plou, phiu, d)
            if rz < best_res:
                best_res = rz
                best_f = fz
                memcpy(pb, pz, d * sizeof(double))
                memcpy(phb, phz, d * sizeof(double))
            if rz <= tol:
                status = QP_CONVERGED
                break
            if fz > f_accepted + 1e-12 * (1.0 + fabs(f_accepted)):
                memcpy(px, pb, d * sizeof(double))
                memcpy(phx, phb, d * sizeof(double))
                memcpy(py, pb, d * sizeof(double))
                memcpy(phy, phb, d * sizeof(double))
                theta = 1.0
                f_accepted = best_f
                lip *= 1.5
                inv_lip = 1.0 / lip
                continue
            f_accepted = fz

        if mu > 0.0:
            q = sqrt(mu / lip)
            beta = (1.0 - q) / (1.0 + q)
        else:
            theta_next = 0.5 * (1.0 + sqrt(1.0 + 4.0 * theta * theta))
            beta = (theta - 1.0) / theta_next
            theta = theta_next
        if restart:
            beta = 0.0
            theta = 1.0
        for i in range(d):
            py[i] = pz[i] + beta * (pz[i] - px[i])
            phy[i] = (1.0 + beta) * phz[i] - beta * phx[i]
            px[i] = pz[i]
            phx[i] = phz[i]

    for i in range(d):
        u_out[i] = psc[i] * pb[i]
    _clip_into(&u_out[0], plou, phiu, &u_out[0], d)
    return u_out, it, best_res, status, best_f


cdef double[7] _DP_C = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0,
                        1.0, 1.0]
cdef double[7][6] _DP_A = [
    [0, 0, 0, 0, 0, 0],
    [1.0 / 5.0, 0, 0, 0, 0, 0],
    [3.0 / 40.0, 9.0 / 40.0, 0, 0, 0, 0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0, 0, 0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0,
     0, 0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0, 0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
     11.0 / 84.0],
]
cdef double[7] _DP_E = [71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
                        -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0]


cdef int _rhs6(double t, double* y, double ur, double ut, double uz,
               double inv_mass, double phi0, double rate, double mu,
               double* dy) noexcept nogil:
    cdef double phi = phi0 + rate * t
    cdef double ca = cos(phi)
    cdef double sa = sin(phi)
    cdef double r = sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    cdef double c
    if r < 1.0:
        return 1
    c = -mu / (r * r * r)
    dy[0] = y[3]
    dy[1] = y[4]
    dy[2] = y[5]
    dy[3] = c * y[0] + (ur * ca - ut * sa) * inv_mass
    dy[4] = c * y[1] + (ur * sa + ut * ca) * inv_mass
    dy[5] = c * y[2] + uz * inv_mass
    return 0


cdef double _err_norm6(double* err, double* y0, double* y1, double rtol,
                       double atol) noexcept nogil:
    cdef double acc = 0.0, sc, a0, a1
    cdef int i
    for i in range(6):
        a0 = fabs(y0[i])
        a1 = fabs(y1[i])
        sc = atol + rtol * (a0 if a0 > a1 else a1)
        acc += (err[i] / sc) * (err[i] / sc)
    return sqrt(acc / 6.0)


def rk45_two_body(r0, v0, thrust, double mass, double phi0, double rate,
                  double mu, double dt, double rtol, double atol,
                  double max_step):
    """See `ringmpc._pykernels.rk45_two_body`."""
    cdef double[6] y
    cdef double[6] y_new
    cdef double[6] yi
    cdef double[6] err
    cdef double[7][6] k
    cdef double ur, ut, uz, inv_mass, t, h, h_min, norm, factor
    cdef double d0, d1, d2, h0, h1, sc, acc0, acc1
    cdef int i, j, s, n_steps = 0, bad
    r0a = np.ascontiguousarray(r0, dtype=np.float64)
    v0a = np.ascontiguousarray(v0, dtype=np.float64)
    ua = np.ascontiguousarray(thrust, dtype=np.float64)
    for i in range(3):
        y[i] = r0a[i]
        y[i + 3] = v0a[i]
    ur = ua[0]
    ut = ua[1]
    uz = ua[2]
    inv_mass = 1.0 / mass

    t = 0.0
    if _rhs6(t, y, ur, ut, uz, inv_mass, phi0, rate, mu, k[0]):
        return (np.array([y[0], y[1], y[2]]), np.array([y[3], y[4], y[5]]),
                0, RK_SINGULAR_RADIUS, t)

    # Hairer-style starting step size, matching the fallback
    acc0 = 0.0
    acc1 = 0.0
    for i in range(6):
        sc = atol + rtol * fabs(y[i])
        acc0 += (y[i] / sc) * (y[i] / sc)
        acc1 += (k[0][i] / sc) * (k[0][i] / sc)
    d0 = sqrt(acc0 / 6.0)
    d1 = sqrt(acc1 / 6.0)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    if h0 > dt:
        h0 = dt
    if h0 > max_step:
        h0 = max_step
    for i in range(6):
        yi[i] = y[i] + h0 * k[0][i]
    if _rhs6(h0, yi, ur, ut, uz, inv_mass, phi0, rate, mu, k[1]):
        h = h0
    else:
        acc0 = 0.0
        for i in range(6):
            sc = atol + rtol * fabs(y[i])
            acc0 += ((k[1][i] - k[0][i]) / sc) ** 2
        d2 = sqrt(acc0 / 6.0) / h0
        if (d1 if d1 > d2 else d2) <= 1e-15:
            h1 = 1e-6 if 1e-6 > h0 * 1e-3 else h0 * 1e-3
        else:
            h1 = (0.01 / (d1 if d1 > d2 else d2)) ** 0.2
        h = 100.0 * h0
        if h1 < h:
            h = h1
        if dt < h:
            h = dt
        if max_step < h:
            h = max_step
    h_min = 1e-12 * (dt if dt > 1.0 else 1.0)

    while t < dt:
        if h > dt - t:
            h = dt - t
        if h > max_step:
            h = max_step
        if h < h_min:
            return (np.array([y[0], y[1], y[2]]),
                    np.array([y[3], y[4], y[5]]), n_steps,
                    RK_STEP_UNDERFLOW, t)
        bad = 0
        for s in range(1, 7):
            for i in range(6):
                acc0 = 0.0
                for j in range(s):
                    acc0 += _DP_A[s][j] * k[j][i]
                yi[i] = y[i] + h * acc0
            if _rhs6(t + _DP_C[s] * h, yi, ur, ut, uz, inv_mass, phi0, rate,
                     mu, k[s]):
                bad = 1
                break
        if bad:
            return (np.array([y[0], y[1], y[2]]),
                    np.array([y[3], y[4], y[5]]), n_steps,
                    RK_SINGULAR_RADIUS, t)
        for i in range(6):
            acc0 = 0.0
            for j in range(6):
                acc0 += _DP_A[6][j] * k[j][i]
            acc1 = 0.0
            for j in range(7):
                acc1 += _DP_E[j] * k[j][i]
            y_new[i] = y[i] + h * acc0
            err[i] = h * acc1
        norm = _err_norm6(err, y, y_new, rtol, atol)
        if norm <= 1.0:
            t += h
            for i in range(6):
                y[i] = y_new[i]
                k[0][i] = k[6][i]
            n_steps += 1
            if norm == 0.0:
                factor = _STEP_MAX_FACTOR
            else:
                factor = _STEP_SAFETY * norm ** -0.2
                if factor > _STEP_MAX_FACTOR:
                    factor = _STEP_MAX_FACTOR
            if factor < _STEP_MIN_FACTOR:
                factor = _STEP_MIN_FACTOR
            h *= factor
        else:
            factor = _STEP_SAFETY * norm ** -0.2
            if factor < _STEP_MIN_FACTOR:
                factor = _STEP_MIN_FACTOR
            h *= factor
    return (np.array([y[0], y[1], y[2]]), np.array([y[3], y[4], y[5]]),
            n_steps, RK_OK, t)
