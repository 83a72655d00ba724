"""Condensed prediction operators and the box-constrained QP solver.

All three controllers reduce to minimizing 0.5 u'Hu + f'u subject to
per-component thrust bounds, after eliminating the predicted states.
The only constraint structure is the box, so the solver is accelerated
projected gradient with gradient-mapping restarts, stepping at a
power-iteration Lipschitz bound. Convergence is declared on the
fixed-point residual ||u - clip(u - (Hu + f), box)||_inf.

The condensed Hessians here are sigma*I + C'C with sigma = 2*alpha_u,
so the exact strong-convexity constant is known and the solver runs
with the linear-rate momentum instead of the generic FISTA sequence.
`CachedBoxQp` pays the Lipschitz estimate once per Hessian, and the
joint all-spacecraft program supplies its Hessian as a matvec operator
(`RingOperator`) because materializing it dense buys nothing but a
35x slower iteration at full scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend, _pykernels
from .dynamics import DiscreteModel
from .errors import InvalidArgumentError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50_000

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max-iterations"


@dataclass(frozen=True, eq=False)
class QpProblem:
    """0.5 u'Hu + f'u over {lower <= u <= upper}, H symmetric PD."""

    h: np.ndarray
    f: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        h = np.ascontiguousarray(self.h, dtype=float)
        f = np.ascontiguousarray(self.f, dtype=float)
        lower = np.ascontiguousarray(self.lower, dtype=float)
        upper = np.ascontiguousarray(self.upper, dtype=float)
        d = f.shape[0]
        if h.shape != (d, d):
            raise InvalidArgumentError(
                f"H has shape {h.shape}, expected ({d}, {d})")
        h_mag = float(np.max(np.abs(h))) if d else 0.0
        asym = float(np.max(np.abs(h - h.T))) if d else 0.0
        if asym > 1e-12 * (1.0 + h_mag):
            raise InvalidArgumentError(f"H is not symmetric (max dev {asym:.3e})")
        if lower.shape != (d,) or upper.shape != (d,):
            raise InvalidArgumentError("bound shapes do not match f")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidArgumentError("bounds must be finite")
        if np.any(lower > upper):
            raise InvalidArgumentError("lower bound exceeds upper bound")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.f.shape[0]


@dataclass(frozen=True, eq=False)
class QpSolution:
    u_star: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str

    @property
    def converged(self) -> bool:
        return self.status == STATUS_CONVERGED


@dataclass(frozen=True, eq=False)
class PredictionOperator:
    """Stacked maps x(1..Np) = Phi x0 + Gamma a(0..Np-1).

    Gamma acts on accelerations; divide thrust sequences by mass first.
    Block (k, j) of Gamma is A^(k-1-j) B for j < k and zero otherwise;
    block k of Phi is A^k.
    """

    phi: np.ndarray
    gamma: np.ndarray
    horizon: int


def build_prediction(model: DiscreteModel, horizon: int) -> PredictionOperator:
    if horizon < 1:
        raise InvalidArgumentError(f"horizon must be >= 1, got {horizon}")
    a, b = model.a, model.b
    nx, nu = b.shape
    phi = np.zeros((nx * horizon, nx))
    gamma = np.zeros((nx * horizon, nu * horizon))
    # powers[k] = A^k B reused along every diagonal of Gamma
    a_pow_b = np.empty((horizon, nx, nu))
    a_pow_b[0] = b
    a_k = a.copy()
    for k in range(horizon):
        phi[k * nx:(k + 1) * nx] = a_k
        if k + 1 < horizon:
            a_pow_b[k + 1] = a @ a_pow_b[k]
            a_k = a @ a_k
    for k in range(1, horizon + 1):
        for j in range(k):
            gamma[(k - 1) * nx:k * nx, j * nu:(j + 1) * nu] = a_pow_b[k - 1 - j]
    return PredictionOperator(phi=phi, gamma=gamma, horizon=horizon)


def power_iteration_bound(h, iters: int = 200,
                          rel_tol: float = 1e-12) -> float:
    """Upper bound on the largest eigenvalue of an SPD matrix.

    `h` is a square array or anything supporting `h @ v` and `.dim`.
    Deterministic start vector; the 5% margin covers the residual of a
    truncated iteration (the solver also backs off on its own if the
    step size still proves too long).
    """
    d = h.shape[0] if isinstance(h, np.ndarray) else h.dim
    v = 1.0 + 0.01 * np.arange(d) / max(d, 1)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = h @ v
        lam_new = float(v @ w)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 1.0
        v = w / nw
        if abs(lam_new - lam) <= rel_tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return 1.05 * lam


def kkt_residual(problem: QpProblem, u: np.ndarray) -> float:
    grad = problem.h @ u + problem.f
    step = np.clip(u - grad, problem.lower, problem.upper)
    return float(np.max(np.abs(u - step))) if u.size else 0.0


def objective_value(problem: QpProblem, u: np.ndarray) -> float:
    return 0.5 * float(u @ (problem.h @ u)) + float(problem.f @ u)


def solve_box_qp(problem: QpProblem, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER,
                 warm_start: np.ndarray | None = None,
                 lipschitz: float | None = None,
                 strong_convexity: float = 0.0,
                 check_every: int = 1,
                 dump_path=None) -> QpSolution:
    """Solve a box QP; returns the best iterate even on non-convergence.

    `lipschitz` is estimated by power iteration when not supplied;
    passing `strong_convexity` > 0 (a lower bound on H's spectrum)
    switches the momentum to the linear-rate sequence. `max_iter`
    counts gradient iterations.
    """
    if lipschitz is None:
        lipschitz = power_iteration_bound(problem.h)
    if warm_start is None:
        w0 = np.zeros(problem.dim)
    else:
        w0 = np.asarray(warm_start, dtype=float)
    ones = np.ones(problem.dim)
    u, iters, res, code, obj = _backend.apgd_box_dense(
        problem.h, problem.f, problem.lower, problem.upper, ones,
        np.ascontiguousarray(w0), float(lipschitz),
        float(strong_convexity), float(tol), int(max_iter),
        int(check_every))
    status = (STATUS_CONVERGED if code == _backend.QP_CONVERGED
              else STATUS_MAX_ITER)
    solution = QpSolution(u_star=u, objective=float(obj),
                          kkt_residual=float(res), iterations=int(iters),
                          status=status)
    if dump_path is not None:
        dump_solve(dump_path, problem, solution)
    return solution


class RingOperator:
    """H = blockdiag_i(sigma*I + C'C) + V'V applied without forming H.

    One shared C per block (the weighted radial rows of every
    spacecraft's prediction) plus a coupling V = kappa * (L kron g'),
    one row per block reading off kappa times a weighted combination of
    the per-block scalars g.u_j. V'V u then reduces to an
    n_blocks-by-n_blocks product on those scalars. Supports the
    protocol the solver and the power iteration need: `dim`, `shape`
    and `@` (each product returns a fresh array, so callers may keep
    references to earlier results).
    """

    def __init__(self, sigma: float, c_block: np.ndarray, kappa: float,
                 lap: np.ndarray, g_row: np.ndarray):
        if sigma <= 0.0:
            raise InvalidArgumentError("sigma must be positive")
        lap = np.ascontiguousarray(lap, dtype=float)
        if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
            raise InvalidArgumentError("coupling matrix must be square")
        self.sigma = float(sigma)
        self.c = np.ascontiguousarray(c_block, dtype=float)
        self.g = np.ascontiguousarray(g_row, dtype=float)
        self.kappa = float(kappa)
        self.lap = lap
        self.n_blocks = lap.shape[0]
        self.block_dim = self.c.shape[1]
        if self.g.shape != (self.block_dim,):
            raise InvalidArgumentError("g_row width does not match C")
        self.ltl = (self.kappa ** 2) * (lap.T @ lap)

    @property
    def dim(self) -> int:
        return self.n_blocks * self.block_dim

    @property
    def shape(self) -> tuple:
        return (self.dim, self.dim)

    def __matmul__(self, u: np.ndarray) -> np.ndarray:
        ub = u.reshape(self.n_blocks, self.block_dim)
        out = self.sigma * ub + (ub @ self.c.T) @ self.c
        out += np.outer(self.ltl @ (ub @ self.g), self.g)
        return out.ravel()

    def dense(self) -> np.ndarray:
        """Materialized H, for tests and small problems only."""
        h = np.kron(self.ltl, np.outer(self.g, self.g))
        blk = self.c.T @ self.c
        blk[np.diag_indices_from(blk)] += self.sigma
        d = self.block_dim
        for i in range(self.n_blocks):
            h[i * d:(i + 1) * d, i * d:(i + 1) * d] += blk
        return h


class CachedBoxQp:
    """Solver for a family of box QPs sharing one Hessian and box.

    The per-Hessian work (validation, the power-iteration Lipschitz
    bound) happens once here; each solve only brings a new linear term
    and an optional warm start. `h` is either a dense symmetric matrix
    or an operator like RingOperator; the iteration is the same either
    way, dense arrays just run through the compiled kernel.

    A dense H is trusted to be symmetric; only its shape and the bounds
    are validated (callers assembling H from C'C products get symmetry
    by construction).
    """

    def __init__(self, h, lower: np.ndarray, upper: np.ndarray,
                 strong_convexity: float = 0.0):
        lower = np.ascontiguousarray(lower, dtype=float)
        upper = np.ascontiguousarray(upper, dtype=float)
        self.dense_h = isinstance(h, np.ndarray)
        if self.dense_h:
            h = np.ascontiguousarray(h, dtype=float)
        d = h.shape[0] if self.dense_h else h.dim
        if (self.dense_h and h.shape != (d, d)) or lower.shape != (d,) \
                or upper.shape != (d,):
            raise InvalidArgumentError("H/bound shapes are inconsistent")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidArgumentError("bounds must be finite")
        if np.any(lower > upper):
            raise InvalidArgumentError("lower bound exceeds upper bound")
        self.h = h
        self.lower = lower
        self.upper = upper
        self.strong_convexity = float(strong_convexity)
        self.lipschitz = power_iteration_bound(h)
        self._ones = np.ones(d)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, f: np.ndarray, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER,
              warm_start: np.ndarray | None = None,
              check_every: int = 1) -> QpSolution:
        f = np.ascontiguousarray(f, dtype=float)
        if f.shape != (self.dim,):
            raise InvalidArgumentError("linear term has the wrong dimension")
        if warm_start is None:
            w0 = np.zeros(self.dim)
        else:
            w0 = np.ascontiguousarray(warm_start, dtype=float)
        kernel = (_backend.apgd_box_dense if self.dense_h
                  else _pykernels.apgd_box_dense)
        u, iters, res, code, obj = kernel(
            self.h, f, self.lower, self.upper, self._ones, w0,
            self.lipschitz, self.strong_convexity, float(tol),
            int(max_iter), int(check_every))
        status = (STATUS_CONVERGED if code == _backend.QP_CONVERGED
                  else STATUS_MAX_ITER)
        return QpSolution(u_star=u, objective=float(obj),
                          kkt_residual=float(res), iterations=int(iters),
                          status=status)


def dump_solve(path, problem: QpProblem, solution: QpSolution) -> None:
    """Write one solve to an .npz archive for offline verification.

    Keys: h, f, lower, upper, u_star, objective, kkt_residual,
    iterations, status.
    """
    np.savez(path, h=problem.h, f=problem.f, lower=problem.lower,
             upper=problem.upper, u_star=solution.u_star,
             objective=solution.objective,
             kkt_residual=solution.kkt_residual,
             iterations=solution.iterations, status=solution.status)
