"""Convex program construction and solving for the two control modes.

Uniformity mode minimizes the spatial variance of the simplified SNR over
the receiving plane (a convex QP); enhanced mode minimizes total LED power
subject to SNR and illuminance floors over the activity area (an LP).  Both
are handled by one small dense primal-dual interior-point solver
(Mehrotra-style predictor-corrector; a zero quadratic term degenerates to
the LP case), preceded by a phase-1 feasibility solve so infeasible
instances are detected cleanly rather than by divergence.

Constraint rows are sampled on a coarse grid for tractability; callers can
re-check on a finer grid and append violated sample points as extra rows
(see solve_refined), which converges in a few rounds because the underlying
fields are smooth.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import nnls

from .geometry import Region, RegionPartition, classify_points
from .photometry import illuminance_coefficients, plane_grid, snr_coefficients
from .scene import Scene

__all__ = [
    "SolveStatus",
    "SolveReport",
    "UniformityQp",
    "EnhancedLp",
    "build_uniformity_qp",
    "build_enhanced_lp",
    "default_snr_threshold",
    "solve_qp",
    "solve_lp",
    "solve_inequality_program",
    "solve_refined",
    "kkt_residual",
]

_MAX_ITER = 100
_GAP_TOL = 1e-8
_FEAS_TOL = 1e-9
_PHASE1_BIG = 1e6


class SolveStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one solve, with certificates.

    max_violation and kkt_residual are in row-scaled units (each constraint
    row divided by max(1, |coefficients|, |bound|)).
    """

    x: np.ndarray
    objective: float
    max_violation: float
    kkt_residual: float
    iterations: int
    status: SolveStatus
    worst_row: Optional[str] = None


def _row_scales(g_mat: np.ndarray, h_vec: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.maximum(np.abs(g_mat).max(axis=1), np.abs(h_vec)))


def _step_length(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _newton_solve(chol, g_mat, w, s, z, r_d, r_p, r_c):
    rhs = -r_d - g_mat.T @ (w * r_p - r_c / s)
    dx = chol(rhs)
    dz = w * (g_mat @ dx + r_p) - r_c / s
    ds = -r_p - g_mat @ dx
    return dx, dz, ds


def _predictor_corrector(quad, c, g_mat, h_vec, x0, max_iter, gap_tol):
    """Core Mehrotra iteration from a strictly feasible primal start."""
    n = len(c)
    m = len(h_vec)
    x = x0.astype(float).copy()
    s = h_vec - g_mat @ x
    if np.any(s <= 0):
        # Nudge inward: should not happen after phase 1.
        s = np.maximum(s, 1e-10)
    z = np.ones(m)
    quad_mat = quad
    h_scale = 1.0 + float(np.abs(h_vec).max(initial=0.0))

    for it in range(1, max_iter + 1):
        grad = c + (quad_mat @ x if quad_mat is not None else 0.0)
        r_d = grad + g_mat.T @ z
        r_p = g_mat @ x + s - h_vec
        mu = float(s @ z) / m
        obj = float(c @ x) + (0.5 * float(x @ quad_mat @ x) if quad_mat is not None else 0.0)
        grad_scale = 1.0 + float(np.abs(grad).max(initial=0.0))
        if (np.abs(r_d).max() <= gap_tol * grad_scale
                and np.abs(r_p).max() <= gap_tol * h_scale
                and mu * m <= gap_tol * (1.0 + abs(obj))):
            return x, z, it, SolveStatus.OPTIMAL
        if (mu * m <= 1e-3 * gap_tol * (1.0 + abs(obj))
                and np.abs(r_p).max() <= gap_tol * h_scale):
            # Complementarity has bottomed out but the dual residual sits at
            # its numerical floor; let the caller certify the iterate.
            return x, z, it, SolveStatus.MAX_ITER

        w = z / s
        k_mat = g_mat.T @ (g_mat * w[:, None])
        if quad_mat is not None:
            k_mat = k_mat + quad_mat
        ridge = 1e-13 * max(1.0, float(np.trace(k_mat)) / n)
        k_mat = k_mat + ridge * np.eye(n)
        try:
            l_fac = np.linalg.cholesky(k_mat)

            def chol(b, l_fac=l_fac):
                y = np.linalg.solve(l_fac, b)
                return np.linalg.solve(l_fac.T, y)
        except np.linalg.LinAlgError:
            def chol(b, k_mat=k_mat):
                return np.linalg.lstsq(k_mat, b, rcond=None)[0]

        # Predictor (affine scaling) step
        dx_a, dz_a, ds_a = _newton_solve(chol, g_mat, w, s, z, r_d, r_p, s * z)
        alpha_a = min(1.0, _step_length(s, ds_a), _step_length(z, dz_a))
        mu_aff = float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector step
        r_c = s * z + ds_a * dz_a - sigma * mu
        dx, dz, ds = _newton_solve(chol, g_mat, w, s, z, r_d, r_p, r_c)
        alpha = min(1.0, 0.99 * min(_step_length(s, ds), _step_length(z, dz)))
        x += alpha * dx
        s += alpha * ds
        z += alpha * dz
    return x, z, max_iter, SolveStatus.MAX_ITER


def _phase1_start(g_mat: np.ndarray, h_vec: np.ndarray, max_iter: int):
    """Minimize the worst constraint violation; returns (x, min_violation)."""
    m, n = g_mat.shape
    g1 = np.hstack([g_mat, -np.ones((m, 1))])
    cap_row = np.zeros((1, n + 1))
    cap_row[0, n] = -1.0
    g1 = np.vstack([g1, cap_row])
    h1 = np.concatenate([h_vec, [_PHASE1_BIG]])
    c1 = np.zeros(n + 1)
    c1[n] = 1.0
    x0 = np.zeros(n + 1)
    x0[n] = max(float(np.max(-h_vec)), -_PHASE1_BIG / 2) + 1.0
    y, _, iters, status = _predictor_corrector(None, c1, g1, h1, x0, max_iter, _GAP_TOL)
    return y[:n], float(y[n]), iters, status


def solve_inequality_program(quad: Optional[np.ndarray], c: np.ndarray,
                             g_mat: np.ndarray, h_vec: np.ndarray,
                             labels: Optional[Sequence[str]] = None,
                             max_iter: int = _MAX_ITER,
                             gap_tol: float = _GAP_TOL) -> SolveReport:
    """Minimize 0.5 x'Qx + c'x subject to Gx <= h (Q = None for an LP).

    A phase-1 solve finds a strictly feasible interior point first; if the
    best achievable worst-violation is not strictly negative the problem is
    reported infeasible, naming the most-violated row.
    """
    c = np.asarray(c, dtype=float)
    g_raw = np.asarray(g_mat, dtype=float).reshape(-1, len(c))
    h_raw = np.asarray(h_vec, dtype=float).ravel()
    if g_raw.shape[0] != h_raw.shape[0]:
        raise ValueError("G and h row counts differ")
    scales = _row_scales(g_raw, h_raw)
    g_s = g_raw / scales[:, None]
    h_s = h_raw / scales

    x1, t_star, iters1, status1 = _phase1_start(g_s, h_s, max_iter)
    if status1 is not SolveStatus.OPTIMAL or t_star >= -_FEAS_TOL:
        viol = g_s @ x1 - h_s
        worst = int(np.argmax(viol))
        label = labels[worst] if labels is not None else f"row[{worst}]"
        return SolveReport(x=x1, objective=float("nan"),
                           max_violation=float(viol.max()),
                           kkt_residual=float("nan"), iterations=iters1,
                           status=SolveStatus.INFEASIBLE, worst_row=label)

    quad_arr = None if quad is None else np.asarray(quad, dtype=float)
    # Normalize the objective magnitude; the minimizer is unaffected and the
    # unit dual start is sensible regardless of the problem's natural units.
    obj_scale = max(float(np.abs(c).max(initial=0.0)),
                    float(np.abs(quad_arr).max(initial=0.0)) if quad_arr is not None else 0.0,
                    1e-300)
    quad_scaled = None if quad_arr is None else quad_arr / obj_scale
    x, _, iters2, status = _predictor_corrector(quad_scaled, c / obj_scale, g_s, h_s,
                                                x1, max_iter, gap_tol)
    objective = float(c @ x) + (0.5 * float(x @ quad_arr @ x) if quad_arr is not None else 0.0)
    viol = g_s @ x - h_s
    resid = kkt_residual((quad_arr, c, g_raw, h_raw), x)
    max_violation = float(max(viol.max(), 0.0))
    if (status is not SolveStatus.OPTIMAL and resid <= 1e-6 and max_violation <= 1e-6):
        # The iteration stalled at its numerical floor but the independent
        # first-order certificate passes, so the point is accepted.
        status = SolveStatus.OPTIMAL
    worst = int(np.argmax(viol))
    label = labels[worst] if labels is not None else f"row[{worst}]"
    return SolveReport(x=x, objective=objective,
                       max_violation=max_violation,
                       kkt_residual=resid, iterations=iters1 + iters2,
                       status=status, worst_row=label if status is not SolveStatus.OPTIMAL else None)


def kkt_residual(problem, x: np.ndarray, active_tol: float = 1e-4) -> float:
    """Scaled first-order optimality residual of ``x`` for the problem.

    Nonnegative least-squares fits multipliers on the (scaled-)active rows;
    the residual is the infinity norm of the remaining Lagrangian gradient,
    divided by max(1, |gradient|).  Zero at an exact optimum; equal to the
    scaled objective-gradient norm at an unconstrained interior point.
    """
    if isinstance(problem, tuple):
        quad, c, g_mat, h_vec = problem
    else:
        quad, c = problem.quadratic_term(), problem.linear_term()
        g_mat, h_vec, _ = problem.constraint_system()
    x = np.asarray(x, dtype=float)
    grad = np.asarray(c, dtype=float) + (quad @ x if quad is not None else 0.0)
    scales = _row_scales(g_mat, h_vec)
    slack = (h_vec - g_mat @ x) / scales
    active = slack <= active_tol
    denom = max(1.0, float(np.abs(grad).max(initial=0.0)))
    if not np.any(active):
        return float(np.abs(grad).max(initial=0.0)) / denom
    g_act = (g_mat / scales[:, None])[active]
    mult, _ = nnls(g_act.T, -grad)
    return float(np.abs(grad + g_act.T @ mult).max()) / denom


# ---------------------------------------------------------------------------
# Mode-specific problems
# ---------------------------------------------------------------------------

def _region_points(scene: Scene, partition: RegionPartition, pitch: float,
                   activity_only: bool) -> np.ndarray:
    pts = plane_grid(scene.room, pitch)
    codes = classify_points(pts, partition)
    if activity_only:
        keep = codes == Region.ACTIVITY.value
    else:
        keep = codes != Region.OUTSIDE.value
    return pts[keep]


@dataclass(frozen=True)
class UniformityQp:
    """SNR-variance QP: minimize p'Qp subject to illuminance and power boxes.

    Q = (1/L) A' M A with A the per-watt SNR coefficients at the receiving
    plane samples and M the centering matrix I - (1/L) 11'.
    """

    samples: np.ndarray            # (L, 2) objective sample points
    snr_coeffs: np.ndarray         # A, (L, M)
    q_matrix: np.ndarray           # (M, M)
    constraint_points: np.ndarray  # (Lc, 2) illuminance constraint samples
    illum_coeffs: np.ndarray       # (Lc, M)
    e_min: float
    e_max: float
    p_min: np.ndarray
    p_max: np.ndarray

    def centering_matrix(self) -> np.ndarray:
        n = len(self.samples)
        return np.eye(n) - np.ones((n, n)) / n

    def quadratic_term(self) -> np.ndarray:
        return 2.0 * self.q_matrix

    def linear_term(self) -> np.ndarray:
        return np.zeros(len(self.p_min))

    def objective(self, p: np.ndarray) -> float:
        return float(p @ self.q_matrix @ p)

    def constraint_system(self):
        m = len(self.p_min)
        eye = np.eye(m)
        g_mat = np.vstack([-self.illum_coeffs, self.illum_coeffs, -eye, eye])
        h_vec = np.concatenate([
            np.full(len(self.illum_coeffs), -self.e_min),
            np.full(len(self.illum_coeffs), self.e_max),
            -self.p_min, self.p_max,
        ])
        labels = ([f"illuminance_min[{i}]" for i in range(len(self.illum_coeffs))]
                  + [f"illuminance_max[{i}]" for i in range(len(self.illum_coeffs))]
                  + [f"power_min[{i}]" for i in range(m)]
                  + [f"power_max[{i}]" for i in range(m)])
        return g_mat, h_vec, labels

    def rows_at(self, scene: Scene, partition: RegionPartition, points: np.ndarray):
        """Illuminance constraint rows evaluated at arbitrary plane points."""
        coeffs = illuminance_coefficients(scene.leds, points, scene.room.plane_z)
        g_mat = np.vstack([-coeffs, coeffs])
        h_vec = np.concatenate([np.full(len(points), -self.e_min),
                                np.full(len(points), self.e_max)])
        return g_mat, h_vec

    def check_points(self, scene: Scene, partition: RegionPartition,
                     pitch: float) -> np.ndarray:
        return _region_points(scene, partition, pitch, activity_only=False)

    def with_extra_points(self, scene: Scene, partition: RegionPartition,
                          points: np.ndarray) -> "UniformityQp":
        coeffs = illuminance_coefficients(scene.leds, points, scene.room.plane_z)
        return replace(self,
                       constraint_points=np.vstack([self.constraint_points, points]),
                       illum_coeffs=np.vstack([self.illum_coeffs, coeffs]))


@dataclass(frozen=True)
class EnhancedLp:
    """Total-power LP: minimize 1'p subject to SNR and illuminance floors on
    the activity area plus power boxes."""

    samples: np.ndarray           # (L, 2) activity-area sample points
    snr_coeffs: np.ndarray        # (L, M)
    illum_coeffs: np.ndarray      # (L, M)
    snr_threshold: float
    e_min: float
    e_max: float
    p_min: np.ndarray
    p_max: np.ndarray

    def quadratic_term(self):
        return None

    def linear_term(self) -> np.ndarray:
        return np.ones(len(self.p_min))

    def objective(self, p: np.ndarray) -> float:
        return float(np.sum(p))

    def constraint_system(self):
        m = len(self.p_min)
        n_s = len(self.samples)
        eye = np.eye(m)
        g_mat = np.vstack([-self.snr_coeffs, -self.illum_coeffs, self.illum_coeffs,
                           -eye, eye])
        h_vec = np.concatenate([
            np.full(n_s, -self.snr_threshold),
            np.full(n_s, -self.e_min),
            np.full(n_s, self.e_max),
            -self.p_min, self.p_max,
        ])
        labels = ([f"snr_min[{i}]" for i in range(n_s)]
                  + [f"illuminance_min[{i}]" for i in range(n_s)]
                  + [f"illuminance_max[{i}]" for i in range(n_s)]
                  + [f"power_min[{i}]" for i in range(m)]
                  + [f"power_max[{i}]" for i in range(m)])
        return g_mat, h_vec, labels

    def rows_at(self, scene: Scene, partition: RegionPartition, points: np.ndarray):
        illum = illuminance_coefficients(scene.leds, points, scene.room.plane_z)
        snr = snr_coefficients(scene.leds, points, scene.room.plane_z,
                               scene.comm_pd, scene.noise)
        g_mat = np.vstack([-snr, -illum, illum])
        h_vec = np.concatenate([
            np.full(len(points), -self.snr_threshold),
            np.full(len(points), -self.e_min),
            np.full(len(points), self.e_max),
        ])
        return g_mat, h_vec

    def check_points(self, scene: Scene, partition: RegionPartition,
                     pitch: float) -> np.ndarray:
        return _region_points(scene, partition, pitch, activity_only=True)

    def with_extra_points(self, scene: Scene, partition: RegionPartition,
                          points: np.ndarray) -> "EnhancedLp":
        illum = illuminance_coefficients(scene.leds, points, scene.room.plane_z)
        snr = snr_coefficients(scene.leds, points, scene.room.plane_z,
                               scene.comm_pd, scene.noise)
        return replace(self,
                       samples=np.vstack([self.samples, points]),
                       snr_coeffs=np.vstack([self.snr_coeffs, snr]),
                       illum_coeffs=np.vstack([self.illum_coeffs, illum]))


def build_uniformity_qp(scene: Scene, partition: RegionPartition,
                        pitch: Optional[float] = None) -> UniformityQp:
    """Assemble the SNR-variance QP on the receiving-plane sample grid."""
    if pitch is None:
        pitch = scene.controller.opt_pitch_m
    pts = _region_points(scene, partition, pitch, activity_only=False)
    if len(pts) == 0:
        raise ValueError("no receiving-plane samples at this pitch")
    a_mat = snr_coefficients(scene.leds, pts, scene.room.plane_z,
                             scene.comm_pd, scene.noise)
    centered = a_mat - a_mat.mean(axis=0, keepdims=True)
    q_matrix = centered.T @ centered / len(pts)
    illum = illuminance_coefficients(scene.leds, pts, scene.room.plane_z)
    p_min, p_max = scene.power_bounds()
    ctl = scene.controller
    return UniformityQp(samples=pts, snr_coeffs=a_mat, q_matrix=q_matrix,
                        constraint_points=pts, illum_coeffs=illum,
                        e_min=ctl.e_uniform_min_lx, e_max=ctl.e_uniform_max_lx,
                        p_min=p_min, p_max=p_max)


def default_snr_threshold(scene: Scene, partition: RegionPartition) -> float:
    """Plane-average simplified SNR at the uniform baseline power."""
    pts = _region_points(scene, partition, scene.controller.field_pitch_m,
                         activity_only=False)
    a_mat = snr_coefficients(scene.leds, pts, scene.room.plane_z,
                             scene.comm_pd, scene.noise)
    p_base = np.full(scene.num_leds, scene.controller.baseline_power_w)
    return float(np.mean(a_mat @ p_base))


def build_enhanced_lp(scene: Scene, partition: RegionPartition,
                      snr_threshold: Optional[float] = None,
                      e_min: Optional[float] = None,
                      e_max: Optional[float] = None,
                      pitch: Optional[float] = None) -> EnhancedLp:
    """Assemble the total-power LP on the activity-area sample grid."""
    if pitch is None:
        pitch = scene.controller.opt_pitch_m
    ctl = scene.controller
    if snr_threshold is None:
        snr_threshold = ctl.snr_threshold
    if snr_threshold is None:
        snr_threshold = default_snr_threshold(scene, partition)
    if snr_threshold < 0:
        raise ValueError(f"SNR threshold must be nonnegative, got {snr_threshold}")
    e_min = ctl.e_enhanced_min_lx if e_min is None else e_min
    e_max = ctl.e_enhanced_max_lx if e_max is None else e_max
    if not 0 <= e_min <= e_max:
        raise ValueError(f"invalid illuminance range [{e_min}, {e_max}]")
    pts = _region_points(scene, partition, pitch, activity_only=True)
    if len(pts) == 0:
        # Tiny activity areas can fall between grid points; sample the center.
        pts = np.array([[partition.mic.center.x, partition.mic.center.y]])
    snr = snr_coefficients(scene.leds, pts, scene.room.plane_z,
                           scene.comm_pd, scene.noise)
    illum = illuminance_coefficients(scene.leds, pts, scene.room.plane_z)
    p_min, p_max = scene.power_bounds()
    return EnhancedLp(samples=pts, snr_coeffs=snr, illum_coeffs=illum,
                      snr_threshold=float(snr_threshold), e_min=float(e_min),
                      e_max=float(e_max), p_min=p_min, p_max=p_max)


def _solve_problem(problem) -> SolveReport:
    g_mat, h_vec, labels = problem.constraint_system()
    report = solve_inequality_program(problem.quadratic_term(), problem.linear_term(),
                                      g_mat, h_vec, labels=labels)
    if report.status is SolveStatus.OPTIMAL:
        report = replace(report, objective=problem.objective(report.x))
    return report


def solve_qp(qp: UniformityQp) -> SolveReport:
    """Solve the uniformity-mode QP; objective reported as p'Qp."""
    return _solve_problem(qp)


def solve_lp(lp: EnhancedLp) -> SolveReport:
    """Solve the enhanced-mode LP; objective reported as total power."""
    return _solve_problem(lp)


def solve_refined(problem, scene: Scene, partition: RegionPartition,
                  fine_pitch: Optional[float] = None, max_rounds: int = 6,
                  max_new_points: int = 200,
                  viol_tol: float = 1e-12):
    """Solve, then re-check the sampled constraints on a fine grid and
    re-solve with violated points appended until the fine grid is clean.

    Returns (problem, report); the returned problem contains any appended
    constraint points.
    """
    if fine_pitch is None:
        fine_pitch = scene.controller.field_pitch_m
    report = _solve_problem(problem)
    check_pts = problem.check_points(scene, partition, fine_pitch)
    for _ in range(max_rounds):
        if report.status is not SolveStatus.OPTIMAL:
            return problem, report
        g_mat, h_vec = problem.rows_at(scene, partition, check_pts)
        viol = (g_mat @ report.x - h_vec) / _row_scales(g_mat, h_vec)
        if viol.max(initial=0.0) <= viol_tol:
            return problem, report
        bad_rows = np.argsort(viol)[::-1][:max_new_points]
        bad_rows = bad_rows[viol[bad_rows] > viol_tol]
        # rows_at stacks equal-length families, so row index mod point count
        # recovers the sample point a violated row belongs to
        bad_points = np.unique(check_pts[bad_rows % len(check_pts)], axis=0)
        problem = problem.with_extra_points(scene, partition, bad_points)
        report = _solve_problem(problem)
    return problem, report
