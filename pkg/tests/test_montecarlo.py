"""Stochastic engine against exact transition laws and pathwise bounds."""

import math

import numpy as np
import pytest

from periodiclab import diagnostics as dg
from periodiclab import engines as eng
from periodiclab import fields as fl
from periodiclab import montecarlo as mc
from periodiclab import ougaussian as ou
from periodiclab.errors import Blowup, NotDissipative, QNotXIndependent


def brownian_field():
    return fl.polynomial_field(1, 1.0, q_const=0.5, name="bm")


class TestEvolve:
    def test_brownian_variance(self):
        config = mc.SimConfig(n_particles=40000, dt=0.005, seed=7)
        ens = mc.evolve(brownian_field(), mc.point_mass(0.0, 40000), 0.0, 1.0, config)
        var = ens.positions[:, 0].var(ddof=1)
        se = math.sqrt(2.0 / ens.n)  # stderr of the variance of a unit normal
        assert abs(var - 1.0) <= 4 * se

    def test_ou_mean_against_propagator(self, ou_model, ou_field):
        config = mc.SimConfig(n_particles=40000, dt=0.0025, seed=8, antithetic=True)
        ens = mc.evolve(ou_field, mc.point_mass(2.0, 40000), 0.0, 1.0, config)
        mean, se = mc.mean_and_stderr(ens.positions[:, 0], True, config.block_size)
        expected = 2.0 * ou.propagator(ou_model, 1.0, 0.0)[0, 0]
        assert abs(mean - expected) <= 4 * se + 2e-3

    def test_blowup_guard(self):
        field = fl.polynomial_field(1, 1.0, q_const=0.5,
                                    drift_terms=(fl.DriftTerm(3, 1.0),), name="explode")
        config = mc.SimConfig(n_particles=200, dt=0.02, seed=0)
        with pytest.raises(Blowup):
            mc.evolve(field, mc.point_mass(3.0, 200), 0.0, 5.0, config)

    def test_time_stamp_mismatch(self, ou_field):
        config = mc.SimConfig(n_particles=100, dt=0.01, seed=0)
        with pytest.raises(ValueError):
            mc.evolve(ou_field, mc.point_mass(0.0, 100, t=0.5), 0.0, 1.0, config)

    def test_dt_guard(self, ou_field):
        config = mc.SimConfig(n_particles=100, dt=0.05, seed=0)
        with pytest.raises(ValueError):
            mc.evolve(ou_field, mc.point_mass(0.0, 100), 0.0, 1.0, config)

    def test_seeded_determinism(self, ou_field):
        config = mc.SimConfig(n_particles=500, dt=0.01, seed=42)
        a = mc.evolve(ou_field, mc.point_mass(1.0, 500), 0.0, 0.7, config)
        b = mc.evolve(ou_field, mc.point_mass(1.0, 500), 0.0, 0.7, config)
        assert np.array_equal(a.positions, b.positions)

    def test_partial_final_step(self, ou_field):
        config = mc.SimConfig(n_particles=200, dt=0.01, seed=1)
        ens = mc.evolve(ou_field, mc.point_mass(0.0, 200), 0.0, 0.105, config)
        assert ens.t == 0.105


class TestEstimateP:
    def test_constant(self, ou_field):
        config = mc.SimConfig(n_particles=1000, dt=0.01, seed=2)
        value, se = mc.estimate_P(ou_field, lambda X: np.full(len(X), 3.5),
                                  1.0, 0.0, [0.0], config)
        assert value == 3.5 and se == 0.0

    def test_ou_coordinate(self, ou_model, ou_field):
        config = mc.SimConfig(n_particles=30000, dt=0.0025, seed=3, antithetic=True)
        value, se = mc.estimate_P(ou_field, lambda X: X[:, 0], 1.0, 0.0, [1.0], config)
        expected = ou.propagator(ou_model, 1.0, 0.0)[0, 0]
        assert abs(value - expected) <= 4 * se + 2e-3

    def test_ou_exponential(self, ou_model, ou_field):
        config = mc.SimConfig(n_particles=30000, dt=0.0025, seed=4)
        value, se = mc.estimate_P(ou_field, lambda X: np.exp(1j * X[:, 0]),
                                  1.0, 0.0, [0.0], config)
        expected = ou.apply_to_exponential(ou_model, 1.0, 1.0, 0.0, [0.0])
        assert abs(value - expected) <= 4 * se + 2e-3


class TestPeriodicMeasure:
    def test_constant_ou_variance(self):
        model = ou.fourier_matrix_model(1, 1.0, a0=[[-1.0]])
        field = ou.as_field(model)
        config = mc.SimConfig(n_particles=40000, dt=0.005, seed=5, horizon_periods=15)
        ens = mc.sample_periodic_measure(field, 0.0, config)
        var = ens.positions[:, 0].var(ddof=1)
        se = math.sqrt(2.0) * 0.5 / math.sqrt(ens.n)
        assert abs(var - 0.5) <= 5 * se

    def test_period_shift_bit_identity(self, grad_field):
        config = mc.SimConfig(n_particles=1000, dt=0.005, seed=6, horizon_periods=6)
        a = mc.sample_periodic_measure(grad_field, 0.25, config)
        b = mc.sample_periodic_measure(grad_field, 1.25, config)
        assert np.array_equal(a.positions, b.positions)

    def test_moment_bound_certificate(self, grad_field, grad_report):
        lyap = grad_report.lyapunov
        config = mc.SimConfig(n_particles=30000, dt=0.008, seed=7, horizon_periods=12)
        ens = mc.sample_periodic_measure(grad_field, 0.5, config, lyap)
        v = 1.0 + ens.positions[:, 0] ** 2
        se = v.std(ddof=1) / math.sqrt(ens.n)
        assert v.mean() <= lyap.moment_bound() + 4 * se

    def test_refuses_without_certificate(self):
        field = fl.polynomial_field(1, 1.0, q_const=0.5,
                                    drift_terms=(fl.DriftTerm(1, 1.0),), name="bad")
        config = mc.SimConfig(n_particles=200, dt=0.01, seed=0)
        with pytest.raises(NotDissipative):
            mc.sample_periodic_measure(field, 0.0, config)

    def test_horizon_doubling_converged(self, grad_field, grad_report):
        config = mc.SimConfig(n_particles=8000, dt=0.008, seed=9, horizon_periods=10)
        assert mc.horizon_is_converged(grad_field, 0.0, config, grad_report.lyapunov)


class TestLpNorm:
    def test_constant(self):
        ens = mc.ParticleEnsemble(0.0, np.zeros((500, 1)))
        assert mc.lp_norm(ens, lambda X: np.full(len(X), 2.0), 3.0) == 2.0

    def test_standard_normal_second_moment(self):
        rng = np.random.default_rng(11)
        ens = mc.ParticleEnsemble(0.0, rng.standard_normal((40000, 1)))
        val = mc.lp_norm(ens, lambda X: X[:, 0], 2.0)
        assert abs(val - 1.0) <= 4 * math.sqrt(2.0 / ens.n)

    def test_evaluation_error_surfaces(self):
        ens = mc.ParticleEnsemble(0.0, np.zeros((100, 1)))
        with pytest.raises(ValueError):
            mc.lp_norm(ens, lambda X: X @ np.ones(5), 2.0)


class TestTangentFlow:
    def test_constant_gradient_zero(self, ou_field):
        config = mc.SimConfig(n_particles=500, dt=0.01, seed=12)
        grad, se = mc.tangent_gradient(ou_field, lambda X: np.zeros_like(X),
                                       1.0, 0.0, [0.3], config)
        assert np.all(grad == 0.0) and se == 0.0

    def test_ou_linear_jacobian(self, ou_model, ou_field):
        config = mc.SimConfig(n_particles=2000, dt=0.0025, seed=13)
        grad, _ = mc.tangent_gradient(ou_field, lambda X: np.ones((len(X), 1)),
                                      1.0, 0.0, [0.5], config)
        expected = ou.propagator(ou_model, 1.0, 0.0)[0, 0]
        assert abs(grad[0] - expected) < 3e-3  # deterministic Jacobian, Euler bias only

    def test_refuses_x_dependent_diffusion(self, gen_field):
        config = mc.SimConfig(n_particles=200, dt=0.01, seed=0)
        ens = mc.TangentEnsemble.identity(0.0, np.zeros((200, 2)))
        with pytest.raises(QNotXIndependent):
            mc.evolve_tangent(gen_field, ens, 0.0, 0.5, config)

    def test_pointwise_gradient_bound_grad1d(self, grad_field, grad_report):
        config = mc.SimConfig(n_particles=4000, dt=0.008, seed=14, antithetic=True)
        sin_phi = next(p for p in eng.battery(1) if p.fid == "sin")
        rng = np.random.default_rng(15)
        for i in range(5):
            s = float(rng.uniform(0, 1))
            t = s + float(rng.uniform(0.2, 2.0))
            x = rng.uniform(-1.5, 1.5, size=1)
            out = dg.pointwise_gradient_check(grad_field, sin_phi, t, s, x, config,
                                              grad_report.r0_hat, stream=40 + i)
            assert out["holds"], out


class TestEnsembleIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        ens = mc.ParticleEnsemble(0.75, rng.standard_normal((128, 2)))
        path = tmp_path / "cloud.bin"
        ens.save(path, meta={"field": "demo", "seed": 1})
        back = mc.ParticleEnsemble.load(path)
        assert back.t == ens.t
        assert np.array_equal(back.positions, ens.positions)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            mc.ParticleEnsemble(0.0, np.array([[np.nan]]))


class TestAntitheticStats:
    def test_pairing_preserves_mean(self):
        rng = np.random.default_rng(2)
        vals = rng.standard_normal(1000)
        mean, se = mc.mean_and_stderr(vals, True, 256)
        assert abs(mean - vals.mean()) < 1e-12

    def test_odd_function_collapses(self, grad_mc, battery1):
        tanh = next(p for p in battery1 if p.fid == "tanh")
        mean, se = grad_mc.phase_mean(tanh, 0.0)
        assert abs(mean) < 1e-14 and se < 1e-14


class TestTransportChecks:
    def test_contraction_and_invariance_ou(self, ou_mc, battery1):
        phis = [p for p in battery1 if p.fid in ("tanh", "sin", "bump", "coord0")]
        rows = dg.contraction_invariance_report(ou_mc, phis, 0.0, [1.0, 2.0], [1.0, 2.0, 4.0])
        assert all(r["contraction_ok"] for r in rows)
        assert all(r["invariance_ok"] for r in rows)

    def test_fractional_gap_rejected(self, ou_mc, battery1):
        with pytest.raises(ValueError):
            dg.contraction_invariance_report(ou_mc, battery1[:1], 0.0, [0.5], [2.0])

    def test_kernel_positivity(self, grad_field):
        config = mc.SimConfig(n_particles=20000, dt=0.008, seed=16)
        out = dg.kernel_positivity_check(grad_field, 0.0, 0.5, [0.5], config,
                                         half_width=1.5, bins=8)
        assert out["positive"] and out["min_count"] > 0

    def test_positivity_needs_half_period(self, grad_field):
        config = mc.SimConfig(n_particles=200, dt=0.008, seed=0)
        with pytest.raises(ValueError):
            dg.kernel_positivity_check(grad_field, 0.0, 0.1, [0.0], config, 1.0)
