"""Uniform engine interface consumed by the diagnostics layer.

Every engine exposes the same three surfaces:

* ``phase_nodes(phase)``: quadrature nodes and weights for the periodic
  invariant measure at a phase;
* ``phase_mean`` / ``phase_lp``: integrals against that measure;
* ``transfer_profile``: the transition expectation (and optionally its
  pathwise gradient) evaluated at measure-distributed points for a list of
  horizons, with per-point standard errors (zero for the deterministic
  engines).

Profiles always evaluate the transported test function at points distributed
like the measure at the *target* time, which is what the decay norms
integrate against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import grid as gridmod
from . import montecarlo as mc
from . import ougaussian as ou
from .errors import QNotXIndependent
from .fields import PeriodicCoefficientField


@dataclass(frozen=True)
class TestFunction:
    """Vectorized scalar test function with its spatial gradient."""

    fid: str
    fn: object                   # (n, d) -> (n,)
    grad: object                 # (n, d) -> (n, d)
    bounded: bool = True

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(np.atleast_2d(points)))

    def grad_at(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.grad(np.atleast_2d(points)))

    def grad_norm(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.grad_at(points), axis=1)


def battery(dim: int) -> list[TestFunction]:
    """The documented test-function battery (ids are stable report keys)."""
    fns = [
        TestFunction("const", lambda X: np.ones(len(X)), lambda X: np.zeros_like(X)),
        TestFunction(
            "coord0", lambda X: X[:, 0], _coord_grad, bounded=False
        ),
        TestFunction(
            "tanh",
            lambda X: np.tanh(X[:, 0]),
            lambda X: _axis0_grad(X, 1.0 / np.cosh(X[:, 0]) ** 2),
        ),
        TestFunction(
            "sin",
            lambda X: np.sin(X[:, 0]),
            lambda X: _axis0_grad(X, np.cos(X[:, 0])),
        ),
        TestFunction(
            "bump",
            lambda X: np.exp(-0.5 * np.sum(X * X, axis=1)),
            lambda X: -X * np.exp(-0.5 * np.sum(X * X, axis=1))[:, None],
        ),
        TestFunction(
            "ratio",
            lambda X: X[:, 0] / (1.0 + np.sum(X * X, axis=1)),
            _ratio_grad,
        ),
    ]
    return fns


def _coord_grad(X):
    g = np.zeros_like(X)
    g[:, 0] = 1.0
    return g


def _axis0_grad(X, vals):
    g = np.zeros_like(X)
    g[:, 0] = vals
    return g


def _ratio_grad(X):
    r2 = np.sum(X * X, axis=1)
    g = -2.0 * X * (X[:, 0] / (1.0 + r2) ** 2)[:, None]
    g[:, 0] += 1.0 / (1.0 + r2)
    return g


@dataclass
class TransferProfile:
    """Transition expectations over measure-distributed points per horizon."""

    s: float
    horizons: np.ndarray                     # offsets tau, increasing
    outer_points: list                       # per horizon: (M, d)
    outer_weights: list                      # per horizon: (M,), sums to 1
    values: dict                             # fid -> list of (g, se) arrays (M,)
    grads: dict                              # fid -> list of (gvec (M,d), se (M,)) or {}
    target_mean: dict                        # fid -> (n_h,) m_{s+tau} phi
    target_mean_se: dict                     # fid -> (n_h,)
    stochastic: bool = False                 # True when outer points are samples


def debiased_power_mean(g, se, weights, p: float, stochastic: bool = True):
    """Weighted p-th power mean of |g| with inner-noise bias removed.

    For p in {2, 4} the leading Monte Carlo bias of |g_hat|^p is subtracted
    using the per-point standard errors; other exponents use the plain
    estimator.  Returns (value, stderr) with a delta-method stderr; for
    deterministic quadrature data (``stochastic=False``) the stderr is zero
    and no debiasing is applied."""
    g = np.asarray(g, dtype=float)
    se = np.zeros_like(g) if se is None else np.asarray(se, dtype=float)
    if g.ndim == 1:
        sq = g * g
        se_sq = se * se
    else:
        sq = np.sum(g * g, axis=1)
        se_sq = se * se  # se is already the aggregated component norm
    if p == 2:
        y = sq - se_sq
    elif p == 4:
        y = sq * sq - 6.0 * sq * se_sq + 3.0 * se_sq**2
    else:
        base = np.sqrt(sq)
        y = base**p
    mean_y = float(np.dot(weights, y))
    var_y = float(np.dot(weights**2, (y - mean_y) ** 2)) if stochastic else 0.0
    mean_y = max(mean_y, 0.0)
    value = mean_y ** (1.0 / p)
    if not stochastic:
        return value, 0.0
    if mean_y > 0.0:
        stderr = math.sqrt(var_y) / (p * mean_y ** (1.0 - 1.0 / p))
    else:
        stderr = math.sqrt(math.sqrt(var_y)) if var_y > 0 else 0.0
    return value, stderr


class OUExactEngine:
    """Quadrature-grade engine backed by the Gaussian transition law."""

    name = "ou-exact"

    def __init__(self, model: ou.OUModel, n_phases: int = 33, order: int = 60):
        self.model = model
        self.order = order
        self.system = ou.periodic_system(model, n_phases)

    def phase_nodes(self, phase: float):
        return ou.gaussian_nodes(self.system.measure(phase), self.order)

    def phase_mean(self, fn, phase: float):
        pts, w = self.phase_nodes(phase)
        return float(np.dot(w, np.asarray(fn(pts)))), 0.0

    def phase_lp(self, fn, phase: float, p: float):
        pts, w = self.phase_nodes(phase)
        return float(np.dot(w, np.abs(np.asarray(fn(pts))) ** p) ** (1.0 / p)), 0.0

    def transfer_profile(self, phis: Sequence[TestFunction], s: float, horizons, gradients=False):
        horizons = np.asarray(sorted(horizons), dtype=float)
        outer_points, outer_weights = [], []
        values = {phi.fid: [] for phi in phis}
        grads = {phi.fid: [] for phi in phis} if gradients else {}
        target_mean = {phi.fid: np.empty(len(horizons)) for phi in phis}
        for k, tau in enumerate(horizons):
            t = s + tau
            pts, w = self.phase_nodes(t)
            outer_points.append(pts)
            outer_weights.append(w)
            u_mat, sig, shift = ou._transition_ode(self.model, t, s, ou.DEFAULT_TOL)
            z, zw = ou.hermite_nodes(self.model.dim, self.order)
            noise = z @ ou.GaussianMeasure(np.zeros(self.model.dim), sig).sqrt_cov().T
            cloud = pts @ u_mat.T + shift + noise[:, None, :]   # (q, M, d)
            flat = cloud.reshape(-1, self.model.dim)
            for phi in phis:
                vals = np.asarray(phi(flat)).reshape(len(zw), len(pts))
                values[phi.fid].append((zw @ vals, np.zeros(len(pts))))
                target_mean[phi.fid][k] = self.phase_mean(phi, t)[0]
                if gradients:
                    gv = np.asarray(phi.grad_at(flat)).reshape(len(zw), len(pts), -1)
                    inner = np.einsum("q,qmd->md", zw, gv)
                    grads[phi.fid].append((inner @ u_mat, np.zeros(len(pts))))
        return TransferProfile(
            s=s,
            horizons=horizons,
            outer_points=outer_points,
            outer_weights=outer_weights,
            values=values,
            grads=grads,
            target_mean=target_mean,
            target_mean_se={phi.fid: np.zeros(len(horizons)) for phi in phis},
        )


class MonteCarloEngine:
    """Stochastic engine: phase ensembles plus joint inner-replica evolution."""

    name = "montecarlo"

    def __init__(
        self,
        field: PeriodicCoefficientField,
        config: mc.SimConfig,
        n_outer: int = 192,
        n_inner: int = 4096,
        certificate=None,
    ):
        self.field = field
        self.config = config
        self.n_outer = n_outer
        self.n_inner = n_inner
        self.certificate = certificate
        self._phase_cache: dict[float, mc.ParticleEnsemble] = {}

    def _ensemble_config(self) -> mc.SimConfig:
        # one RNG block per ensemble keeps antithetic pairs globally aligned
        from dataclasses import replace
        return replace(self.config, block_size=self.config.n_particles)

    def phase_ensemble(self, phase: float) -> mc.ParticleEnsemble:
        key = self.field.phase(phase)
        if key not in self._phase_cache:
            stream = 1000 + int(round(4096 * key / self.field.period))
            self._phase_cache[key] = mc.sample_periodic_measure(
                self.field, key, self._ensemble_config(), self.certificate, stream=stream
            )
        return self._phase_cache[key]

    def phase_nodes(self, phase: float):
        ens = self.phase_ensemble(phase)
        return ens.positions, np.full(ens.n, 1.0 / ens.n)

    def _stats(self, vals: np.ndarray):
        mean, se = mc.mean_and_stderr(
            vals, self.config.antithetic, self.config.n_particles
        )
        return float(mean), float(se)

    def phase_mean(self, fn, phase: float):
        return self._stats(np.asarray(fn(self.phase_ensemble(phase).positions)))

    def phase_lp(self, fn, phase: float, p: float):
        mean, se = self._stats(np.abs(np.asarray(fn(self.phase_ensemble(phase).positions))) ** p)
        value = max(mean, 0.0) ** (1.0 / p)
        return value, se / (p * max(mean, 1e-300) ** (1.0 - 1.0 / p))

    def outer_sample(self, phase: float, count: int, offset: int = 0) -> np.ndarray:
        ens = self.phase_ensemble(phase)
        idx = (offset + np.arange(count) * (ens.n // count)) % ens.n
        return ens.positions[idx]

    def transfer_profile(self, phis: Sequence[TestFunction], s: float, horizons, gradients=False):
        """Evaluate inner-replica transition means at mu_t-distributed points.

        Horizons are grouped by target phase; each group evolves one joint
        ensemble started at time s from outer points drawn from the ensemble
        of the group's phase, so every decay norm integrates against points
        distributed like the measure at its own target time.
        """
        if gradients and not self.field.q_independent_of_x:
            raise QNotXIndependent("pathwise gradients need x-independent diffusion")
        horizons = np.asarray(sorted(horizons), dtype=float)
        n_h = len(horizons)
        outer_points: list = [None] * n_h
        outer_weights: list = [None] * n_h
        values = {phi.fid: [None] * n_h for phi in phis}
        grads = {phi.fid: [None] * n_h for phi in phis} if gradients else {}
        target_mean = {phi.fid: np.empty(n_h) for phi in phis}
        target_mean_se = {phi.fid: np.empty(n_h) for phi in phis}

        groups: dict[float, list[int]] = {}
        for k, tau in enumerate(horizons):
            groups.setdefault(self.field.phase(s + tau), []).append(k)

        d = self.field.dim
        from dataclasses import replace
        march_config = replace(self.config, block_size=self.n_inner)
        for gi, (phase, idxs) in enumerate(sorted(groups.items())):
            outer = self.outer_sample(phase, self.n_outer, offset=gi)
            x0 = np.repeat(outer, self.n_inner, axis=0)
            jac0 = (
                np.broadcast_to(np.eye(d), (len(x0), d, d)).copy() if gradients else None
            )
            captures = [s + horizons[k] for k in idxs]
            snaps = mc._march(self.field, x0, jac0, s, captures, march_config, stream=53 + gi)
            for (t_snap, pos, jac), k in zip(snaps, idxs):
                outer_points[k] = outer
                outer_weights[k] = np.full(self.n_outer, 1.0 / self.n_outer)
                for phi in phis:
                    vals = np.asarray(phi(pos)).reshape(self.n_outer, self.n_inner)
                    g, se = mc.mean_and_stderr(vals, self.config.antithetic, self.n_inner)
                    values[phi.fid][k] = (g, se)
                    mean, mean_se = self.phase_mean(phi, s + horizons[k])
                    target_mean[phi.fid][k] = mean
                    target_mean_se[phi.fid][k] = mean_se
                    if gradients:
                        pulled = np.einsum("nij,ni->nj", jac, phi.grad_at(pos))
                        pulled = pulled.reshape(self.n_outer, self.n_inner, d)
                        comp_mean = np.empty((self.n_outer, d))
                        comp_var = np.empty((self.n_outer, d))
                        for c in range(d):
                            m_c, se_c = mc.mean_and_stderr(
                                pulled[..., c], self.config.antithetic, self.n_inner
                            )
                            comp_mean[:, c] = m_c
                            comp_var[:, c] = se_c**2
                        grads[phi.fid][k] = (comp_mean, np.sqrt(comp_var.sum(axis=1)))
        return TransferProfile(
            s=s,
            horizons=horizons,
            outer_points=outer_points,
            outer_weights=outer_weights,
            values=values,
            grads=grads,
            target_mean=target_mean,
            target_mean_se=target_mean_se,
            stochastic=True,
        )


class GridEngine:
    """Deterministic engine: Crank-Nicolson slice maps weighted by rho."""

    name = "grid"

    def __init__(
        self,
        field: PeriodicCoefficientField,
        grid: gridmod.SpaceTimeGrid,
        time_scheme: str = "spectral",
        substeps: int = 2,
        generator: gridmod.DiscreteGenerator | None = None,
    ):
        self.field = field
        self.grid = grid
        self.substeps = substeps
        self.gen = generator if generator is not None else gridmod.build_generator(
            field, grid, time_scheme
        )

    def _rho_at(self, phase: float) -> np.ndarray:
        """Slice masses linearly interpolated in phase, normalized."""
        n_t = self.grid.time_slices
        masses = self.gen.rho_slices()
        pos = self.field.phase(phase) / self.grid.period * n_t
        i = int(np.floor(pos)) % n_t
        j = (i + 1) % n_t
        w = pos - np.floor(pos)
        row = (1.0 - w) * masses[i] + w * masses[j]
        return row / row.sum()

    def phase_nodes(self, phase: float):
        return self.grid.nodes(), self._rho_at(phase)

    def phase_mean(self, fn, phase: float):
        pts, w = self.phase_nodes(phase)
        return float(np.dot(w, np.asarray(fn(pts)))), 0.0

    def phase_lp(self, fn, phase: float, p: float):
        pts, w = self.phase_nodes(phase)
        return float(np.dot(w, np.abs(np.asarray(fn(pts))) ** p) ** (1.0 / p)), 0.0

    def _gradient(self, vec: np.ndarray) -> np.ndarray:
        g = self.grid
        shape = (g.points_per_axis,) * g.dim
        vals = vec.reshape(shape)
        out = np.zeros(shape + (g.dim,))
        for axis in range(g.dim):
            padded = np.moveaxis(vals, axis, -1)
            ext = np.concatenate(
                [np.zeros(padded.shape[:-1] + (1,)), padded, np.zeros(padded.shape[:-1] + (1,))],
                axis=-1,
            )
            der = (ext[..., 2:] - ext[..., :-2]) / (2.0 * g.h)
            out[..., axis] = np.moveaxis(der, -1, axis)
        return out.reshape(g.n_space, g.dim)

    def transfer_profile(self, phis: Sequence[TestFunction], s: float, horizons, gradients=False):
        horizons = np.asarray(sorted(horizons), dtype=float)
        nodes = self.grid.nodes()
        n_h = len(horizons)
        values = {phi.fid: [] for phi in phis}
        grads = {phi.fid: [] for phi in phis} if gradients else {}
        target_mean = {phi.fid: np.empty(n_h) for phi in phis}
        outer_points, outer_weights = [], []
        mat = np.eye(self.grid.n_space)
        t_prev = s
        phi_vecs = {phi.fid: np.asarray(phi(nodes)) for phi in phis}
        for k, tau in enumerate(horizons):
            t = s + tau
            step = gridmod.transition_matrix(self.field, self.grid, t_prev, t, self.substeps)
            mat = mat @ step
            t_prev = t
            w = self._rho_at(t)
            outer_points.append(nodes)
            outer_weights.append(w)
            for phi in phis:
                g = mat @ phi_vecs[phi.fid]
                values[phi.fid].append((g, np.zeros_like(g)))
                target_mean[phi.fid][k] = float(np.dot(w, phi_vecs[phi.fid]))
                if gradients:
                    gv = self._gradient(g)
                    grads[phi.fid].append((gv, np.zeros(len(g))))
        return TransferProfile(
            s=s,
            horizons=horizons,
            outer_points=outer_points,
            outer_weights=outer_weights,
            values=values,
            grads=grads,
            target_mean=target_mean,
            target_mean_se={phi.fid: np.zeros(n_h) for phi in phis},
        )
