"""Pure-numpy implementations of the hot numerical kernels.

These are the fallback used when the compiled extension is unavailable
(see `ringmpc._backend`). The compiled module implements the same
algorithms with the same constants; results agree to rounding noise.

Kernels:
  * accelerated projected-gradient solver for box-constrained QPs with
    a dense Hessian (`apgd_box_dense`);
  * Dormand-Prince 5(4) adaptive integrator for two-body motion with
    a thrust vector held fixed in a rotating local frame
    (`rk45_two_body`).

All kernels are deterministic given their inputs.
"""

from __future__ import annotations

import math

import numpy as np

# status codes shared with the compiled kernels
QP_CONVERGED = 0
QP_MAX_ITER = 1

RK_OK = 0
RK_STEP_UNDERFLOW = 1
RK_SINGULAR_RADIUS = 2

# Dormand-Prince 5(4) tableau
_DP_C = (0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0)
_DP_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0,
     -5103.0 / 18656.0),
    (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0,
     11.0 / 84.0),
)
# fifth-order weights equal the last A row (FSAL); E = b5 - b4
_DP_E = (71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0,
         -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)

_STEP_SAFETY = 0.9
_STEP_MIN_FACTOR = 0.2
_STEP_MAX_FACTOR = 5.0


def _kkt_residual(u, grad_u, lo, hi):
    """Infinity norm of u - clip(u - grad, box)."""
    step = np.clip(u - grad_u, lo, hi)
    return float(np.max(np.abs(u - step))) if u.size else 0.0


def apgd_box_dense(hs, fs, lo, hi, scale, w0, lip, mu, tol, max_iter,
                   check_every=1):
    """Accelerated projected gradient on an optionally diagonally
    scaled box QP.

    Minimizes 0.5 w'hs w + fs'w over the box {lo/scale <= w <= hi/scale},
    where hs = D H D, fs = D f, u = scale * w is the original variable and
    `lo`/`hi` bound u (pass ones to solve in the original variable; `hs`
    then only needs to support `@`). Convergence is tested on the
    original-variable KKT fixed-point residual
    ||u - clip(u - (H u + f), box)||_inf, which equals the
    scaled-gradient test below. Momentum uses the constant factor for
    strongly convex problems when mu > 0, otherwise the FISTA sequence;
    both use gradient-mapping restarts. Candidates that would increase the
    objective are rejected (the accepted sequence is monotone) and reject
    events also grow the Lipschitz estimate defensively.

    Returns (u, iterations, kkt_residual, status, objective).
    """
    d = fs.shape[0]
    lo_w = lo / scale
    hi_w = hi / scale

    def res_at(w, g):
        u = np.clip(scale * w, lo, hi)
        return _kkt_residual(u, g / scale, lo, hi)

    w = np.clip(w0, lo_w, hi_w)
    hw = hs @ w
    f_val = 0.5 * float(w @ hw) + float(fs @ w)
    res = res_at(w, hw + fs)

    best_w = w.copy()
    best_res = res
    best_f = f_val
    if res <= tol:
        u = np.clip(scale * best_w, lo, hi)
        return u, 0, best_res, QP_CONVERGED, best_f

    # One matvec per iteration: H y follows from the cached H z and H x
    # by linearity of the momentum step y = z + beta (z - x). The
    # combination never feeds back into a cached product (H z is always
    # a fresh matvec), so rounding does not accumulate.
    x = w.copy()
    hx = hw.copy()
    y = w
    hy = hw
    h_best = hw.copy()
    theta = 1.0
    f_accepted = f_val
    status = QP_MAX_ITER
    it = 0
    while it < max_iter:
        it += 1
        z = np.clip(y - (hy + fs) / lip, lo_w, hi_w)
        hz = hs @ z
        restart = float((y - z) @ (z - x)) > 0.0

        if it % check_every == 0 or it == max_iter:
            gz = hz + fs
            fz = 0.5 * float(z @ hz) + float(fs @ z)
            rz = res_at(z, gz)
            if rz < best_res:
                best_res = rz
                best_w = z.copy()
                best_f = fz
                h_best = hz.copy()
            if rz <= tol:
                status = QP_CONVERGED
                break
            if fz > f_accepted + 1e-12 * (1.0 + abs(f_accepted)):
                # reject: return to the best accepted point, kill momentum,
                # and back off the step in case lip was underestimated
                x = best_w.copy()
                hx = h_best.copy()
                y = best_w
                hy = h_best
                theta = 1.0
                f_accepted = best_f
                lip *= 1.5
                continue
            f_accepted = fz

        if mu > 0.0:
            q = math.sqrt(mu / lip)
            beta = (1.0 - q) / (1.0 + q)
        else:
            theta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
            beta = (theta - 1.0) / theta_next
            theta = theta_next
        if restart:
            beta = 0.0
            theta = 1.0
        y = z + beta * (z - x)
        hy = (1.0 + beta) * hz - beta * hx
        x = z
        hx = hz

    u = np.clip(scale * best_w, lo, hi)
    return u, it, best_res, status, best_f


def _two_body_rhs(t, y, ur, ut, uz, inv_mass, phi0, rate, mu):
    phi = phi0 + rate * t
    ca = math.cos(phi)
    sa = math.sin(phi)
    ax = (ur * ca - ut * sa) * inv_mass
    ay = (ur * sa + ut * ca) * inv_mass
    az = uz * inv_mass
    r = math.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    if r < 1.0:
        return None
    c = -mu / (r * r * r)
    return np.array([y[3], y[4], y[5],
                     c * y[0] + ax, c * y[1] + ay, c * y[2] + az])


def _error_norm(err, y0, y1, rtol, atol):
    sc = atol + rtol * np.maximum(np.abs(y0), np.abs(y1))
    return math.sqrt(float(np.mean((err / sc) ** 2)))


def _initial_step(y0, f0, rhs, t_end, rtol, atol, max_step):
    """Hairer-style starting step size estimate."""
    sc = atol + rtol * np.abs(y0)
    d0 = math.sqrt(float(np.mean((y0 / sc) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, t_end, max_step)
    y1 = y0 + h0 * f0
    f1 = rhs(h0, y1)
    if f1 is None:
        return h0
    d2 = math.sqrt(float(np.mean(((f1 - f0) / sc) ** 2))) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, t_end, max_step)


def rk45_two_body(r0, v0, thrust, mass, phi0, rate, mu, dt, rtol, atol,
                  max_step):
    """Adaptive Dormand-Prince 5(4) propagation of two-body motion.

    The thrust vector (radial, along-track, cross-track, in N) is held
    fixed in a local frame whose in-plane axes rotate at `rate` starting
    from polar angle `phi0`. Integrates exactly to t = dt.

    Returns (r, v, n_steps, status, t_reached).
    """
    y = np.concatenate([np.asarray(r0, float), np.asarray(v0, float)])
    ur, ut, uz = (float(thrust[0]), float(thrust[1]), float(thrust[2]))
    inv_mass = 1.0 / mass

    def rhs(t, yv):
        return _two_body_rhs(t, yv, ur, ut, uz, inv_mass, phi0, rate, mu)

    t = 0.0
    f0 = rhs(t, y)
    if f0 is None:
        return y[:3], y[3:], 0, RK_SINGULAR_RADIUS, t
    h = _initial_step(y, f0, rhs, dt, rtol, atol, max_step)
    h_min = 1e-12 * max(dt, 1.0)

    k = [None] * 7
    k[0] = f0
    n_steps = 0
    while t < dt:
        h = min(h, dt - t, max_step)
        if h < h_min:
            return y[:3], y[3:], n_steps, RK_STEP_UNDERFLOW, t
        failed_radius = False
        for i in range(1, 7):
            yi = y + h * sum(a * k[j] for j, a in enumerate(_DP_A[i]))
            ki = rhs(t + _DP_C[i] * h, yi)
            if ki is None:
                failed_radius = True
                break
            k[i] = ki
        if failed_radius:
            return y[:3], y[3:], n_steps, RK_SINGULAR_RADIUS, t
        y_new = y + h * sum(a * k[j] for j, a in enumerate(_DP_A[6]))
        err = h * sum(e * k[j] for j, e in enumerate(_DP_E))
        norm = _error_norm(err, y, y_new, rtol, atol)
        if norm <= 1.0:
            t += h
            y = y_new
            k[0] = k[6]  # FSAL
            n_steps += 1
            factor = _STEP_MAX_FACTOR if norm == 0.0 else min(
                _STEP_MAX_FACTOR, _STEP_SAFETY * norm ** -0.2)
            h *= max(_STEP_MIN_FACTOR, factor)
        else:
            h *= max(_STEP_MIN_FACTOR, _STEP_SAFETY * norm ** -0.2)
    return y[:3].copy(), y[3:].copy(), n_steps, RK_OK, t
