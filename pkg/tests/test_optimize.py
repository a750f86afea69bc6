import itertools
import math

import numpy as np
import pytest

from isci import optimize as op
from isci.geometry import Region, classify_points
from isci.photometry import plane_grid
from isci.scene import default_scene


def _toy_qp():
    """Two-variable uniformity QP with hand-picked coefficient rows."""
    a_mat = np.array([[2.0, 0.5], [1.0, 1.2], [0.6, 1.8]])
    centered = a_mat - a_mat.mean(axis=0, keepdims=True)
    q = centered.T @ centered / len(a_mat)
    samples = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    illum = np.array([[4.0, 5.0], [5.5, 3.5]])
    return op.UniformityQp(samples=samples, snr_coeffs=a_mat, q_matrix=q,
                           constraint_points=samples[:2], illum_coeffs=illum,
                           e_min=350.0, e_max=900.0,
                           p_min=np.array([10.0, 10.0]), p_max=np.array([80.0, 80.0]))


def _toy_lp(threshold=120.0):
    samples = np.array([[0.0, 0.0], [1.0, 0.0]])
    snr = np.array([[3.0, 1.0], [1.0, 2.5]])
    illum = np.array([[4.0, 5.0], [5.5, 3.5]])
    return op.EnhancedLp(samples=samples, snr_coeffs=snr, illum_coeffs=illum,
                         snr_threshold=threshold, e_min=350.0, e_max=900.0,
                         p_min=np.array([10.0, 10.0]), p_max=np.array([80.0, 80.0]))


def _feasible_mask(problem, pts):
    g_mat, h_vec, _ = problem.constraint_system()
    return (pts @ g_mat.T <= h_vec + 1e-12).all(axis=1)


def _grid_points(lo, hi, n):
    xs = np.linspace(lo, hi, n)
    return np.array(list(itertools.product(xs, xs)))


def _qp_grid_minimum(qp, n=200):
    pts = _grid_points(qp.p_min[0], qp.p_max[0], n)
    pts = pts[_feasible_mask(qp, pts)]
    vals = np.einsum("ij,jk,ik->i", pts, qp.q_matrix, pts)
    k = int(np.argmin(vals))
    return float(vals[k]), pts[k]


def _qp_refined_minimum(qp):
    _, p0 = _qp_grid_minimum(qp, n=200)
    span = 0.5
    xs = np.arange(p0[0] - span, p0[0] + span, 1e-3)
    ys = np.arange(p0[1] - span, p0[1] + span, 1e-3)
    pts = np.array(np.meshgrid(xs, ys, indexing="ij")).reshape(2, -1).T
    pts = np.clip(pts, qp.p_min, qp.p_max)
    pts = pts[_feasible_mask(qp, pts)]
    vals = np.einsum("ij,jk,ik->i", pts, qp.q_matrix, pts)
    k = int(np.argmin(vals))
    return float(vals[k]), pts[k]


# ---------------------------------------------------------------------------
# QP construction
# ---------------------------------------------------------------------------

def test_qp_identity_against_direct_variance(scene, partition, rng):
    qp = op.build_uniformity_qp(scene, partition)
    lo, hi = qp.p_min, qp.p_max
    for _ in range(100):
        p = rng.uniform(lo, hi)
        snr = qp.snr_coeffs @ p
        var = float(np.mean((snr - snr.mean()) ** 2))
        assert abs(float(p @ qp.q_matrix @ p) - var) <= 1e-9 * var


def test_qp_matrix_matches_centering_definition(scene, partition):
    qp = op.build_uniformity_qp(scene, partition)
    m_c = qp.centering_matrix()
    explicit = qp.snr_coeffs.T @ m_c @ qp.snr_coeffs / len(qp.samples)
    np.testing.assert_allclose(qp.q_matrix, explicit, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(qp.q_matrix, qp.q_matrix.T, atol=1e-12)


def test_qp_psd(scene, partition):
    qp = op.build_uniformity_qp(scene, partition)
    eig = np.linalg.eigvalsh(qp.q_matrix)
    assert eig.min() >= -1e-9 * eig.max()


def test_single_source_variance_positive(rng):
    # one LED cannot flatten its own distance profile
    a_mat = np.array([[2.0], [1.0], [0.4]])
    centered = a_mat - a_mat.mean(axis=0, keepdims=True)
    q = centered.T @ centered / len(a_mat)
    for _ in range(10):
        p = rng.uniform(1.0, 80.0, 1)
        assert float(p @ q @ p) > 0.0


def test_qp_samples_are_mec_grid(scene, partition):
    qp = op.build_uniformity_qp(scene, partition, pitch=0.25)
    pts = plane_grid(scene.room, 0.25)
    keep = classify_points(pts, partition) != Region.OUTSIDE.value
    np.testing.assert_allclose(qp.samples, pts[keep])
    assert np.all(qp.snr_coeffs > 0)


def test_quadratic_scaling_law(scene, partition, rng):
    qp = op.build_uniformity_qp(scene, partition)
    p = rng.uniform(qp.p_min, qp.p_max)
    base = float(p @ qp.q_matrix @ p)
    for c in (0.5, 2.0, 7.0):
        scaled = float((c * p) @ qp.q_matrix @ (c * p))
        assert abs(scaled - c * c * base) <= 1e-9 * c * c * base


def test_simplification_precondition_enforced(scene, partition):
    from dataclasses import replace
    steep = replace(scene, leds=tuple(replace(led, half_power_angle_deg=40.0)
                                      for led in scene.leds))
    from isci.photometry import SimplificationError
    with pytest.raises(SimplificationError):
        op.build_uniformity_qp(steep, partition)


# ---------------------------------------------------------------------------
# QP solving
# ---------------------------------------------------------------------------

def test_toy_qp_matches_grid_oracle():
    qp = _toy_qp()
    report = op.solve_qp(qp)
    assert report.status is op.SolveStatus.OPTIMAL
    coarse_obj, _ = _qp_grid_minimum(qp)
    assert report.objective <= coarse_obj + 1e-12
    assert abs(report.objective - coarse_obj) <= 1e-2 * coarse_obj
    refined_obj, _ = _qp_refined_minimum(qp)
    assert abs(report.objective - refined_obj) <= 1e-3 * refined_obj


def test_toy_qp_certificates():
    report = op.solve_qp(_toy_qp())
    assert report.max_violation <= 1e-6
    assert report.kkt_residual <= 1e-6


def test_degenerate_single_sample_qp():
    qp = _toy_qp()
    from dataclasses import replace as dreplace
    single = dreplace(qp, samples=qp.samples[:1], snr_coeffs=qp.snr_coeffs[:1],
                      q_matrix=np.zeros((2, 2)))
    report = op.solve_qp(single)
    assert report.status is op.SolveStatus.OPTIMAL
    assert abs(report.objective) <= 1e-9
    assert report.max_violation <= 1e-6


def test_qp_row_permutation_invariance(rng):
    qp = _toy_qp()
    base = op.solve_qp(qp).objective
    from dataclasses import replace as dreplace
    perm = rng.permutation(len(qp.samples))
    shuffled = dreplace(qp, samples=qp.samples[perm], snr_coeffs=qp.snr_coeffs[perm])
    again = op.solve_qp(shuffled).objective
    assert abs(base - again) <= 1e-8 * max(1.0, base)


def test_default_scene_qp_solves(scene, partition):
    report = op.solve_qp(op.build_uniformity_qp(scene, partition))
    assert report.status is op.SolveStatus.OPTIMAL
    lo, hi = scene.power_bounds()
    assert np.all(report.x >= lo - 1e-9) and np.all(report.x <= hi + 1e-9)


# ---------------------------------------------------------------------------
# LP solving
# ---------------------------------------------------------------------------

def test_single_variable_lp():
    g = np.array([[-1.0], [-1.0], [1.0]])
    h = np.array([-3.0, 0.0, 10.0])
    report = op.solve_inequality_program(None, np.array([1.0]), g, h)
    assert report.status is op.SolveStatus.OPTIMAL
    assert abs(report.x[0] - 3.0) <= 1e-6


def _lp_vertex_oracle(lp):
    g_mat, h_vec, _ = lp.constraint_system()
    best = None
    for i, j in itertools.combinations(range(len(h_vec)), 2):
        a = np.array([g_mat[i], g_mat[j]])
        if abs(np.linalg.det(a)) < 1e-12:
            continue
        x = np.linalg.solve(a, np.array([h_vec[i], h_vec[j]]))
        if np.all(g_mat @ x <= h_vec + 1e-9):
            val = float(np.sum(x))
            if best is None or val < best:
                best = val
    return best


def test_toy_lp_matches_vertex_enumeration():
    lp = _toy_lp()
    report = op.solve_lp(lp)
    assert report.status is op.SolveStatus.OPTIMAL
    oracle = _lp_vertex_oracle(lp)
    assert abs(report.objective - oracle) <= 1e-6 * abs(oracle)


def test_lp_infeasible_reports_worst_row(scene, partition):
    lp = op.build_enhanced_lp(scene, partition, snr_threshold=1e12)
    report = op.solve_lp(lp)
    assert report.status is op.SolveStatus.INFEASIBLE
    assert report.worst_row is not None and report.worst_row.startswith("snr_min")


def test_lp_zero_threshold_hits_power_floor(scene, partition):
    lp = op.build_enhanced_lp(scene, partition, snr_threshold=0.0, e_min=0.0, e_max=1e9)
    report = op.solve_lp(lp)
    assert report.status is op.SolveStatus.OPTIMAL
    np.testing.assert_allclose(report.x, lp.p_min, atol=1e-5)


def test_lp_threshold_monotonicity(scene, partition):
    base = op.default_snr_threshold(scene, partition)
    objectives = []
    for f in (0.4, 0.6, 0.8, 1.0):
        report = op.solve_lp(op.build_enhanced_lp(scene, partition, snr_threshold=f * base))
        assert report.status is op.SolveStatus.OPTIMAL
        objectives.append(report.objective)
    assert all(b >= a - 1e-6 for a, b in zip(objectives, objectives[1:]))


def test_lp_objective_within_power_box(scene, partition):
    report = op.solve_lp(op.build_enhanced_lp(scene, partition))
    lo, hi = scene.power_bounds()
    assert lo.sum() - 1e-6 <= report.objective <= hi.sum() + 1e-6


def test_chebyshev_lp_unit_square():
    from isci.geometry import ConvexPolygon, Point2, max_inscribed_circle
    sq = ConvexPolygon((Point2(0, 0), Point2(1, 0), Point2(1, 1), Point2(0, 1)))
    mic = max_inscribed_circle(sq)
    assert abs(mic.radius - 0.5) < 1e-9
    assert math.hypot(mic.center.x - 0.5, mic.center.y - 0.5) < 1e-9


# ---------------------------------------------------------------------------
# KKT residual
# ---------------------------------------------------------------------------

def test_kkt_residual_small_at_grid_optimum():
    qp = _toy_qp()
    _, p_grid = _qp_refined_minimum(qp)
    assert op.kkt_residual(qp, p_grid) <= 1e-3


def test_kkt_residual_larger_off_optimum():
    qp = _toy_qp()
    report = op.solve_qp(qp)
    at_solution = op.kkt_residual(qp, report.x)
    lo, hi = qp.p_min, qp.p_max
    perturbed = np.clip(report.x + np.array([5.0, -4.0]), lo + 1.0, hi - 1.0)
    assert op.kkt_residual(qp, perturbed) > at_solution


def test_kkt_residual_interior_lp_is_gradient_norm():
    lp = _toy_lp(threshold=10.0)
    interior = np.array([40.0, 40.0])
    g_mat, h_vec, _ = lp.constraint_system()
    assert np.all(g_mat @ interior < h_vec - 1.0)
    # gradient of 1'p is the all-ones vector; scaled norm is exactly 1
    assert op.kkt_residual(lp, interior) == pytest.approx(1.0)


def test_solver_reports_pass_certificates(scene, partition):
    for build in (op.build_uniformity_qp, op.build_enhanced_lp):
        report = (op.solve_qp if build is op.build_uniformity_qp else op.solve_lp)(
            build(scene, partition))
        assert report.status is op.SolveStatus.OPTIMAL
        assert report.max_violation <= 1e-6
        assert report.kkt_residual <= 1e-6


# ---------------------------------------------------------------------------
# fine-grid refinement
# ---------------------------------------------------------------------------

def test_refinement_clears_fine_grid(scene, partition):
    qp = op.build_uniformity_qp(scene, partition)
    problem, report = op.solve_refined(qp, scene, partition)
    assert report.status is op.SolveStatus.OPTIMAL
    pts = problem.check_points(scene, partition, scene.controller.field_pitch_m)
    g_mat, h_vec = problem.rows_at(scene, partition, pts)
    viol = (g_mat @ report.x - h_vec) / np.maximum(1.0, np.abs(h_vec))
    assert viol.max() <= 1e-9


def test_refinement_keeps_objective_samples(scene, partition):
    qp = op.build_uniformity_qp(scene, partition)
    problem, _ = op.solve_refined(qp, scene, partition)
    np.testing.assert_allclose(problem.q_matrix, qp.q_matrix)
    assert len(problem.constraint_points) >= len(qp.constraint_points)
