"""Coefficient-field invariants and sample-plan construction."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from periodiclab import fields as fl
from periodiclab.errors import MissingGradient
from periodiclab.hypotheses import periodicity_defect, symmetry_defect


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-4.0, 4.0))
def test_grad1d_periodicity_pointwise(t, x):
    f = fl.grad1d_field()
    pts = np.array([[x]])
    assert np.allclose(f.q(t, pts), f.q(t + f.period, pts), rtol=1e-12, atol=1e-12)
    assert np.allclose(f.b(t, pts), f.b(t + f.period, pts), rtol=1e-12, atol=1e-12)


def test_periodicity_and_symmetry_on_plans(grad_field, grad_plan, gen_field, gen_plan):
    assert periodicity_defect(grad_field, grad_plan) <= 1e-12
    assert symmetry_defect(grad_field, grad_plan) <= 1e-12
    assert periodicity_defect(gen_field, gen_plan) <= 1e-12
    assert symmetry_defect(gen_field, gen_plan) <= 1e-12


def test_grad1d_values():
    f = fl.grad1d_field()
    pts = np.array([[2.0]])
    # Q(0.25) = 1.25, b(0, 2) = -8 - (1 + 0.5) * 2 = -11
    assert np.isclose(f.q(0.25, pts)[0, 0, 0], 1.25)
    assert np.isclose(f.b(0.0, pts)[0, 0], -11.0)
    jac = f.grad_b(0.5, pts)
    # d/dx b = -3 x^2 - (1 + 0.5 cos(pi)) = -12 - 0.5
    assert np.isclose(jac[0, 0, 0], -12.5)


def test_gen_field_gradq_matches_fd(gen_field):
    t = 0.3
    pts = np.array([[0.7, -0.4], [1.2, 0.1]])
    analytic = np.asarray(gen_field.grad_q(t, pts))
    h = 1e-6
    for k in range(2):
        step = np.zeros_like(pts)
        step[:, k] = h
        fd = (np.asarray(gen_field.q(t, pts + step)) - np.asarray(gen_field.q(t, pts - step))) / (2 * h)
        assert np.allclose(analytic[:, k], fd, atol=1e-7)


def test_grad_b_finite_difference_fallback():
    base = fl.grad1d_field()
    bare = fl.PeriodicCoefficientField(
        dim=1, period=1.0, q=base.q, b=base.b, name="bare")
    pts = np.array([[0.5], [-1.0]])
    fd = bare.grad_b_at(0.2, pts)
    exact = base.grad_b_at(0.2, pts)
    assert np.allclose(fd, exact, atol=1e-8)
    with pytest.raises(MissingGradient):
        bare.grad_b_at(0.2, pts, fd_step=0.0)


def test_plan_shapes_and_refinement():
    plan = fl.build_plan(2, 1.0, r_max=4.0, n_times=8, n_axis=5, n_shells=3, n_shell_dirs=8)
    assert plan.lattice.shape == (25, 2)
    assert plan.shell_points.shape == (3, 8, 2)
    assert np.isclose(plan.shell_radii[-1], 4.0)
    assert np.allclose(np.linalg.norm(plan.directions, axis=1), 1.0)
    fine = plan.refined(2)
    assert len(fine.times) == 16
    assert fine.r_max == plan.r_max
    with pytest.raises(ValueError):
        fl.SamplePlan(times=np.array([]), lattice=plan.lattice,
                      shell_radii=plan.shell_radii, shell_points=plan.shell_points,
                      directions=plan.directions, r_max=4.0)


def test_phase_canonicalization(grad_field):
    assert grad_field.phase(1.25) == grad_field.phase(0.25)
    assert 0.0 <= grad_field.phase(-0.3) < grad_field.period
