"""Euler-Maruyama particle realization of the evolution operator.

Particles follow  X <- X + b(r, X) dt + sigma(r, X) sqrt(dt) xi  with
sigma sigma^T = 2 Q (the operator carries Q, not Q/2, on second derivatives).
Noise is drawn from counter-based Philox streams keyed by
(seed, stream, block), so ensembles are bit-reproducible for a fixed
schedule regardless of how particle blocks are traversed; reductions are
plain fixed-order sums.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import Blowup, NonPositiveDefinite, NotDissipative, QNotXIndependent
from .fields import PeriodicCoefficientField
from .hypotheses import LyapunovResult, lyapunov_check
from . import fields as _fields

OVERFLOW_GUARD = 1e8


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo knobs shared by every stochastic operation."""

    n_particles: int = 10000
    dt: float = 0.005
    seed: int = 0
    horizon_periods: int = 20
    antithetic: bool = False
    block_size: int = 16384

    def __post_init__(self):
        if self.n_particles < 100:
            raise ValueError("n_particles must be >= 100")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def validated_for(self, field: PeriodicCoefficientField) -> "SimConfig":
        if self.dt > field.period / 50.0:
            raise ValueError(f"dt={self.dt} exceeds T/50={field.period / 50.0}")
        return self


@dataclass(frozen=True)
class ParticleEnsemble:
    """Equal-weight particle cloud at one time stamp."""

    t: float
    positions: np.ndarray  # (n, d)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2:
            raise ValueError("positions must have shape (n, d)")
        if not np.all(np.isfinite(pos)) or not math.isfinite(self.t):
            raise ValueError("ensemble contains non-finite entries")
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        """Binary column format: little-endian f64 positions plus JSON sidecar."""
        path = Path(path)
        self.positions.astype("<f8").tofile(path)
        sidecar = {"t": self.t, "n": self.n, "dim": self.dim}
        sidecar.update(meta or {})
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "ParticleEnsemble":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        pos = np.fromfile(path, dtype="<f8").reshape(meta["n"], meta["dim"])
        return ParticleEnsemble(meta["t"], pos)


@dataclass(frozen=True)
class TangentEnsemble(ParticleEnsemble):
    """Particles carrying the Jacobian of the stochastic flow."""

    jacobians: np.ndarray = None  # (n, d, d)

    def __post_init__(self):
        super().__post_init__()
        jac = np.asarray(self.jacobians, dtype=float)
        if jac.shape != (self.n, self.dim, self.dim) or not np.all(np.isfinite(jac)):
            raise ValueError("jacobians must be finite with shape (n, d, d)")
        object.__setattr__(self, "jacobians", jac)

    @staticmethod
    def identity(t: float, positions: np.ndarray) -> "TangentEnsemble":
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        n, d = pos.shape
        return TangentEnsemble(t, pos, np.broadcast_to(np.eye(d), (n, d, d)).copy())


def _block_normals(seed: int, stream: int, n: int, dim: int, block_size: int, antithetic: bool):
    """Per-step factory of (n, dim) normals from per-block Philox streams."""
    n_blocks = (n + block_size - 1) // block_size
    gens = [
        np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF,
                                                  ((stream & 0xFFFFFFFF) << 32) | blk]))
        for blk in range(n_blocks)
    ]

    def draw() -> np.ndarray:
        out = np.empty((n, dim))
        for blk, gen in enumerate(gens):
            lo = blk * block_size
            hi = min(lo + block_size, n)
            m = hi - lo
            if antithetic:
                half = (m + 1) // 2
                z = gen.standard_normal((half, dim))
                out[lo : lo + half] = z
                out[lo + half : hi] = -z[: m - half]
            else:
                out[lo:hi] = gen.standard_normal((m, dim))
        return out

    return draw


def _sqrt_spd_batch(mats: np.ndarray) -> np.ndarray:
    """Symmetric square roots of a batch of SPD matrices (continuous in the data)."""
    d = mats.shape[-1]
    if d == 1:
        return np.sqrt(mats)
    if d == 2:
        det = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
        s = np.sqrt(np.maximum(det, 0.0))
        tr = mats[:, 0, 0] + mats[:, 1, 1]
        denom = np.sqrt(np.maximum(tr + 2.0 * s, 1e-300))
        out = mats.copy()
        out[:, 0, 0] += s
        out[:, 1, 1] += s
        return out / denom[:, None, None]
    w, v = np.linalg.eigh(mats)
    return (v * np.sqrt(np.clip(w, 0.0, None))[:, None, :]) @ np.swapaxes(v, -1, -2)


def _noise_increment(field, r, positions, normals, sqrt_dt):
    if field.q_independent_of_x:
        q = np.asarray(field.q(r, np.zeros((1, field.dim))))[0]
        sig = _sqrt_spd_batch((2.0 * q)[None])[0]
        return sqrt_dt * normals @ sig.T
    q = np.asarray(field.q(r, positions))
    sig = _sqrt_spd_batch(2.0 * q)
    return sqrt_dt * np.einsum("nij,nj->ni", sig, normals)


def _check_spd(field, r, positions):
    sample = positions[:: max(1, len(positions) // 16)]
    w = np.linalg.eigvalsh(np.asarray(field.q(r, sample)))
    if w[:, 0].min() <= 0.0:
        bad = int(np.argmin(w[:, 0]))
        raise NonPositiveDefinite(r, sample[bad], float(w[bad, 0]))


def _march(field, positions, jacobians, s, capture_times, config, stream):
    """Shared Euler-Maruyama loop; captures state copies at requested times.

    Full steps use config.dt; a shorter partial step lands on every capture
    time exactly.  Returns [(t, positions, jacobians), ...] in time order.
    """
    captures = sorted(set(float(t) for t in capture_times))
    if captures and captures[0] < s:
        raise ValueError("capture times must be >= start time")
    draw = _block_normals(config.seed, stream, len(positions), field.dim, config.block_size,
                          config.antithetic)
    x = positions.copy()
    jac = None if jacobians is None else jacobians.copy()
    out = []
    r = s
    step_count = 0
    _check_spd(field, s, x)
    for target in captures:
        if target == r:
            out.append((target, x.copy(), None if jac is None else jac.copy()))
            continue
        while r < target - 1e-15:
            dt = min(config.dt, target - r)
            step_count += 1
            if step_count % 64 == 0:
                _check_spd(field, r, x)
            z = draw()
            if jac is not None:
                gb = field.grad_b_at(r, x)
                jac = jac + dt * np.einsum("nij,njk->nik", gb, jac)
            x = x + dt * np.asarray(field.b(r, x)) + _noise_increment(field, r, x, z, math.sqrt(dt))
            r = r + dt
            peak = np.abs(x).max()
            if not np.isfinite(peak) or peak > OVERFLOW_GUARD:
                raise Blowup(r, float(peak))
        r = target
        out.append((target, x.copy(), None if jac is None else jac.copy()))
    return out


def evolve(
    field: PeriodicCoefficientField,
    ensemble: ParticleEnsemble,
    s: float,
    t: float,
    config: SimConfig,
    stream: int = 0,
) -> ParticleEnsemble:
    """Push an ensemble from its time stamp s to t >= s."""
    if not math.isclose(ensemble.t, s, rel_tol=0.0, abs_tol=1e-12):
        raise ValueError(f"ensemble time stamp {ensemble.t} does not match s={s}")
    if t < s:
        raise ValueError("evolve requires t >= s")
    config.validated_for(field)
    (t_out, pos, _), = _march(field, ensemble.positions, None, s, [t], config, stream)
    return ParticleEnsemble(t_out, pos)


def point_mass(x, n: int, t: float = 0.0) -> ParticleEnsemble:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return ParticleEnsemble(t, np.tile(x, (n, 1)))


def estimate_P(
    field: PeriodicCoefficientField,
    phi,
    t: float,
    s: float,
    x,
    config: SimConfig,
    stream: int = 1,
):
    """Monte Carlo transition expectation started from the point mass at x.

    Returns (value, stderr); complex-valued test functions are supported and
    the standard error then combines both components.
    """
    ens = evolve(field, point_mass(x, config.n_particles, s), s, t, config, stream)
    vals = np.asarray(phi(ens.positions))
    value = vals.mean()
    if np.iscomplexobj(vals):
        se = math.sqrt(vals.real.var(ddof=1) + vals.imag.var(ddof=1)) / math.sqrt(len(vals))
        return complex(value), se
    return float(value), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def sample_periodic_measure(
    field: PeriodicCoefficientField,
    s: float,
    config: SimConfig,
    certificate: LyapunovResult | None = None,
    stream: int = 2,
) -> ParticleEnsemble:
    """Far-past approximation of the periodic invariant measure at phase s.

    A point mass at the origin is evolved over ``horizon_periods`` full
    periods ending at the canonical phase of s; dissipativity erases the
    initialization.  A Lyapunov certificate is required (one is computed on a
    default plan when not supplied).
    """
    config.validated_for(field)
    if certificate is None:
        plan = _fields.build_plan(field.dim, field.period, r_max=8.0, n_times=16, n_axis=9)
        certificate = lyapunov_check(field, plan, n=1)
    if not certificate.accepted:
        raise NotDissipative(f"no Lyapunov certificate for field {field.name!r}")
    phase = field.phase(s)
    start = phase - config.horizon_periods * field.period
    (t_out, pos, _), = _march(
        field,
        np.zeros((config.n_particles, field.dim)),
        None,
        start,
        [phase],
        config,
        stream,
    )
    return ParticleEnsemble(t_out, pos)


def antithetic_units(vals: np.ndarray, block_size: int) -> np.ndarray:
    """Collapse antithetically paired samples into independent units.

    Pairs live at (lo + i, lo + half + i) within each RNG block; averaging a
    pair before computing spread gives the honest standard error under the
    mirrored-noise coupling.  ``vals`` is indexed by particle along the last
    axis.
    """
    n = vals.shape[-1]
    units = []
    lo = 0
    while lo < n:
        hi = min(lo + block_size, n)
        m = hi - lo
        half = (m + 1) // 2
        paired = m - half
        a = vals[..., lo : lo + paired]
        b = vals[..., lo + half : hi]
        units.append(0.5 * (a + b))
        if half > paired:
            units.append(vals[..., lo + paired : lo + half])
        lo = hi
    return np.concatenate(units, axis=-1)


def mean_and_stderr(vals: np.ndarray, antithetic: bool, block_size: int):
    """Mean and standard error along the particle axis, pairing-aware."""
    units = antithetic_units(vals, block_size) if antithetic else vals
    mean = units.mean(axis=-1)
    se = units.std(axis=-1, ddof=1) / math.sqrt(units.shape[-1])
    return mean, se


def lp_norm(ensemble: ParticleEnsemble, f, p: float) -> float:
    """Empirical L^p norm of f against the ensemble's equal-weight measure."""
    if p < 1:
        raise ValueError("p must be >= 1")
    vals = np.abs(np.asarray(f(ensemble.positions)))
    return float(np.mean(vals**p) ** (1.0 / p))


def evolve_tangent(
    field: PeriodicCoefficientField,
    ensemble: TangentEnsemble,
    s: float,
    t: float,
    config: SimConfig,
    stream: int = 0,
) -> TangentEnsemble:
    """Joint particle/Jacobian flow; needs x-independent diffusion."""
    if not field.q_independent_of_x:
        raise QNotXIndependent(
            "tangent flow requires diffusion independent of x; use finite differences instead"
        )
    config.validated_for(field)
    (t_out, pos, jac), = _march(field, ensemble.positions, ensemble.jacobians, s, [t], config, stream)
    return TangentEnsemble(t_out, pos, jac)


def tangent_gradient(
    field: PeriodicCoefficientField,
    phi_grad,
    t: float,
    s: float,
    x,
    config: SimConfig,
    stream: int = 3,
):
    """Pathwise gradient of the transition expectation at the point x.

    ``phi_grad(X) -> (n, d)`` is the gradient of the test function; the
    estimator is the mean of J^T grad phi(X_t) along the tangent flow.
    Returns (gradient vector, scalar stderr).
    """
    ens = TangentEnsemble.identity(s, np.tile(np.atleast_1d(x), (config.n_particles, 1)))
    out = evolve_tangent(field, ens, s, t, config, stream)
    pulled = np.einsum("nij,ni->nj", out.jacobians, np.asarray(phi_grad(out.positions)))
    grad = pulled.mean(axis=0)
    se = float(np.linalg.norm(pulled.std(axis=0, ddof=1)) / math.sqrt(out.n))
    return grad, se


def horizon_is_converged(
    field: PeriodicCoefficientField,
    s: float,
    config: SimConfig,
    certificate: LyapunovResult | None = None,
    moments=(1, 2),
) -> bool:
    """Doubling test for the far-past horizon: moments move by < 2 stderr."""
    base = sample_periodic_measure(field, s, config, certificate, stream=2)
    doubled = sample_periodic_measure(
        field, s, replace(config, horizon_periods=2 * config.horizon_periods), certificate, stream=2
    )
    for k in moments:
        for axis in range(field.dim):
            a = base.positions[:, axis] ** k
            b = doubled.positions[:, axis] ** k
            se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
            if abs(a.mean() - b.mean()) >= 2.0 * se:
                return False
    return True
