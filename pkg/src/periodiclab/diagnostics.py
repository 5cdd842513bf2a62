"""Verdict layer: decay curves, fitted rates, and functional-inequality residuals.

Conventions shared by every diagnostic:

* decay values are ``|| P(s+tau, s) phi - m phi ||_{L^p}`` integrated against
  the invariant measure at the target time, with the centering taken at the
  target phase (at whole-period horizons this coincides with the starting
  phase, which is how the shipped scenarios are probed);
* inequality checks are one-sided with a ``5 x stderr`` statistical slack:
  the inequalities must never be violated beyond sampling noise, but they
  are not expected to be tight;
* rate fits run on log values, exclude the transient ``tau < 1`` and points
  within ten standard errors of the noise floor, and refuse to fit when
  fewer than five points survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Sequence

import numpy as np

from . import montecarlo as mc
from .engines import TestFunction, TransferProfile, debiased_power_mean
from .errors import DegenerateWindow, NoiseFloor, NotApplicable, NotDissipative
from .fields import PeriodicCoefficientField

MIN_FIT_POINTS = 5
NOISE_MULTIPLE = 10.0


@dataclass(frozen=True)
class DecayCurve:
    """L^p distance to equilibrium (or gradient norm) per horizon."""

    taus: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray
    p: float
    phi_id: str
    engine_id: str
    kind: str = "value"   # "value" | "gradient"

    def __post_init__(self):
        if np.any(np.diff(self.taus) <= 0):
            raise ValueError("horizons must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("curve values must be nonnegative")

    def eventually_decreasing(self) -> bool:
        """Monotone-envelope flag: values + 2 stderr decrease from some index on."""
        env = self.values + 2.0 * self.stderrs
        for start in range(len(env) - 1):
            if np.all(np.diff(env[start:]) <= 0):
                return True
        return len(env) <= 1

    def rows(self):
        for tau, v, se in zip(self.taus, self.values, self.stderrs):
            yield {"tau": tau, "value": v, "stderr": se, "p": self.p,
                   "phi": self.phi_id, "engine": self.engine_id, "kind": self.kind}


@dataclass(frozen=True)
class RateEstimate:
    """Log-linear fitted decay rate with fit diagnostics."""

    rate: float
    intercept: float
    window: tuple
    r_squared: float
    n_points: int
    references: dict = dc_field(default_factory=dict)

    def to_jsonable(self) -> dict:
        return {
            "rate": self.rate,
            "intercept": self.intercept,
            "window": list(self.window),
            "r_squared": self.r_squared,
            "n_points": self.n_points,
            "references": self.references,
        }


@dataclass(frozen=True)
class InequalityReport:
    """Two sides of a functional inequality plus the verdict material."""

    left: float
    right: float
    stderr: float
    constant: float
    witness: tuple          # (function id, phase of the weakest margin)

    @property
    def residual(self) -> float:
        return self.right - self.left

    def holds(self, slack: float = 5.0) -> bool:
        scale = max(abs(self.left), abs(self.right), 1.0)
        return self.residual >= -(slack * self.stderr + 1e-12 * scale)

    def to_jsonable(self) -> dict:
        return {
            "left": self.left,
            "right": self.right,
            "residual": self.residual,
            "stderr": self.stderr,
            "constant": self.constant,
            "witness": list(self.witness),
        }


def decay_curve(
    engine,
    phi: TestFunction,
    s: float,
    p: float,
    horizons: Sequence[float],
    profile: TransferProfile | None = None,
) -> DecayCurve:
    """Distance-to-equilibrium curve for one test function."""
    if profile is None:
        profile = engine.transfer_profile([phi], s, horizons)
    return _curve_from_profile(profile, phi.fid, p, engine.name, kind="value")


def gradient_decay_curve(
    engine,
    phi: TestFunction,
    s: float,
    p: float,
    horizons: Sequence[float],
    profile: TransferProfile | None = None,
) -> DecayCurve:
    """Gradient-norm decay curve; horizons below one period of separation are
    excluded (the gradient envelope statements start at unit separation)."""
    horizons = [tau for tau in horizons if tau >= 1.0]
    if not horizons:
        raise DegenerateWindow("gradient curves need horizons with tau >= 1")
    if profile is None:
        profile = engine.transfer_profile([phi], s, horizons, gradients=True)
    elif np.any(profile.horizons < 1.0):
        raise DegenerateWindow("provided profile contains sub-unit separations")
    return _curve_from_profile(profile, phi.fid, p, engine.name, kind="gradient")


def _curve_from_profile(profile, fid, p, engine_id, kind) -> DecayCurve:
    values = np.empty(len(profile.horizons))
    errs = np.empty(len(profile.horizons))
    entry = profile.values[fid] if kind == "value" else profile.grads[fid]
    for k in range(len(profile.horizons)):
        g, se = entry[k]
        w = profile.outer_weights[k]
        if kind == "value":
            centered = g - profile.target_mean[fid][k]
            values[k], errs[k] = debiased_power_mean(centered, se, w, p, profile.stochastic)
            errs[k] = math.hypot(errs[k], profile.target_mean_se[fid][k])
        else:
            values[k], errs[k] = debiased_power_mean(g, se, w, p, profile.stochastic)
    return DecayCurve(
        taus=profile.horizons.copy(),
        values=values,
        stderrs=errs,
        p=p,
        phi_id=fid,
        engine_id=engine_id,
        kind=kind,
    )


def max_over_curves(curves: Sequence[DecayCurve]) -> DecayCurve:
    """Pointwise max over a battery of curves (used by the rate fits)."""
    taus = curves[0].taus
    stacked = np.stack([c.values for c in curves])
    errs = np.stack([c.stderrs for c in curves])
    idx = np.argmax(stacked, axis=0)
    return DecayCurve(
        taus=taus.copy(),
        values=stacked[idx, np.arange(len(taus))],
        stderrs=errs[idx, np.arange(len(taus))],
        p=curves[0].p,
        phi_id="max[" + ",".join(c.phi_id for c in curves) + "]",
        engine_id=curves[0].engine_id,
        kind=curves[0].kind,
    )


def fit_rate(
    curve: DecayCurve,
    window: tuple = (1.0, np.inf),
    references: dict | None = None,
    min_points: int = MIN_FIT_POINTS,
) -> RateEstimate:
    """Least-squares slope of log(value) over the window, above the noise floor."""
    lo, hi = window
    in_window = (curve.taus >= lo - 1e-12) & (curve.taus <= hi + 1e-12)
    if in_window.sum() < min_points:
        raise DegenerateWindow(
            f"window [{lo}, {hi}] selects {int(in_window.sum())} < {min_points} points"
        )
    visible = in_window & (curve.values > NOISE_MULTIPLE * curve.stderrs) & (curve.values > 0)
    if visible.sum() < min_points:
        raise NoiseFloor(
            f"only {int(visible.sum())} points above {NOISE_MULTIPLE} stderr in the window"
        )
    t = curve.taus[visible]
    y = np.log(curve.values[visible])
    coeffs = np.polyfit(t, y, 1)
    fitted = np.polyval(coeffs, t)
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return RateEstimate(
        rate=float(coeffs[0]),
        intercept=float(coeffs[1]),
        window=(float(t.min()), float(t.max())),
        r_squared=r2,
        n_points=int(visible.sum()),
        references=references or {},
    )


def envelope_constant(curve: DecayCurve, rate: float) -> float:
    """Smallest M with value(tau) <= M exp(rate * tau) across the curve."""
    return float(np.max(curve.values * np.exp(-rate * curve.taus)))


def rate_equivalence_check(
    engine,
    phis: Sequence[TestFunction],
    s: float,
    p: float,
    horizons: Sequence[float],
    window: tuple = (1.0, np.inf),
    tolerance: float = 0.1,
) -> dict:
    """Fit omega (value decay) and gamma (gradient decay) on the same window.

    Requires bounded diffusion and p >= 2 (the regime where the two decay
    exponents provably coincide); the report flags agreement at the given
    tolerance.
    """
    if p < 2:
        raise NotApplicable("rate equivalence is checked for p >= 2")
    profile = engine.transfer_profile(list(phis), s, horizons, gradients=True)
    value_curves = [decay_curve(engine, phi, s, p, horizons, profile) for phi in phis]
    grad_curves = [gradient_decay_curve(engine, phi, s, p, horizons, profile) for phi in phis]
    omega = fit_rate(max_over_curves(value_curves), window)
    gamma = fit_rate(max_over_curves(grad_curves), window)
    return {
        "omega_hat": omega.rate,
        "gamma_hat": gamma.rate,
        "difference": abs(omega.rate - gamma.rate),
        "agree": abs(omega.rate - gamma.rate) <= tolerance,
        "omega_fit": omega,
        "gamma_fit": gamma,
    }


@dataclass(frozen=True)
class SpaceTimeFunction:
    """Periodic-in-time test function u(s, x) with spatial gradient."""

    fid: str
    u: Callable            # (s, (n,d)) -> (n,)
    grad: Callable         # (s, (n,d)) -> (n,d)

    def __call__(self, s, points):
        return np.asarray(self.u(s, np.atleast_2d(points)))

    def grad_at(self, s, points):
        return np.asarray(self.grad(s, np.atleast_2d(points)))


def st_battery(dim: int, period: float) -> list[SpaceTimeFunction]:
    """Space-time battery for the inequality checks."""
    w = 2.0 * np.pi / period

    def mod(s):
        return 1.0 + 0.5 * math.cos(w * s)

    return [
        SpaceTimeFunction("st-coord", lambda s, X: X[:, 0], lambda s, X: _const_grad(X)),
        SpaceTimeFunction(
            "st-sin-mod",
            lambda s, X: np.sin(X[:, 0]) * mod(s),
            lambda s, X: _axis0(X, np.cos(X[:, 0]) * mod(s)),
        ),
        SpaceTimeFunction(
            "st-bump-mod",
            lambda s, X: np.exp(-0.5 * np.sum(X * X, axis=1)) * (1.0 + 0.5 * math.sin(w * s)),
            lambda s, X: -X
            * (np.exp(-0.5 * np.sum(X * X, axis=1)) * (1.0 + 0.5 * math.sin(w * s)))[:, None],
        ),
    ]


def positive_battery(dim: int) -> list[SpaceTimeFunction]:
    """Strictly positive bounded functions for the entropy inequality."""
    return [
        SpaceTimeFunction("pos-const", lambda s, X: np.full(len(X), 1.5), lambda s, X: np.zeros_like(X)),
        SpaceTimeFunction(
            "pos-bump",
            lambda s, X: 1.0 + 0.5 * np.exp(-np.sum(X * X, axis=1)),
            lambda s, X: -X * np.exp(-np.sum(X * X, axis=1))[:, None],
        ),
        SpaceTimeFunction(
            "pos-sin",
            lambda s, X: 2.0 + np.sin(X[:, 0]),
            lambda s, X: _axis0(X, np.cos(X[:, 0])),
        ),
    ]


def _const_grad(X):
    g = np.zeros_like(X)
    g[:, 0] = 1.0
    return g


def _axis0(X, vals):
    g = np.zeros_like(X)
    g[:, 0] = vals
    return g


@dataclass(frozen=True)
class PhaseMeasures:
    """Phase-indexed quadrature for the space-time invariant measure."""

    period: float
    phases: np.ndarray
    nodes: list          # per phase (m, d)
    weights: list        # per phase (m,), each summing to 1
    stochastic: bool     # True when weights are empirical (stderr meaningful)

    @staticmethod
    def from_engine(engine, n_phases: int) -> "PhaseMeasures":
        period = getattr(engine, "field", getattr(engine, "model", None)).period
        phases = period * np.arange(n_phases) / n_phases
        nodes, weights = [], []
        for ph in phases:
            pts, w = engine.phase_nodes(ph)
            nodes.append(pts)
            weights.append(w)
        return PhaseMeasures(
            period=period,
            phases=phases,
            nodes=nodes,
            weights=weights,
            stochastic=engine.name == "montecarlo",
        )

    def mean_and_se(self, vals: np.ndarray, k: int):
        w = self.weights[k]
        mean = float(np.dot(w, vals))
        se = math.sqrt(float(np.dot(w**2, (vals - mean) ** 2))) if self.stochastic else 0.0
        return mean, se


def poincare_ratio(
    field: PeriodicCoefficientField,
    u: SpaceTimeFunction,
    measures: PhaseMeasures,
    lam: float,
    ell2: float,
) -> InequalityReport:
    """Variance vs gradient-energy comparison with constant Lambda / |ell_2|.

    left  = phase average of int |u - Pi u|^2 d mu_s,
    right = (Lambda / |ell_2|) * phase average of int |grad_x u|^2 d mu_s.
    """
    if ell2 >= 0.0:
        raise NotDissipative(f"Poincare check needs ell_2 < 0, got {ell2}")
    const = lam / abs(ell2)
    lefts, rights, ses = [], [], []
    margins = []
    for k, s in enumerate(measures.phases):
        vals = u(s, measures.nodes[k])
        m, m_se = measures.mean_and_se(vals, k)
        var, var_se = measures.mean_and_se((vals - m) ** 2, k)
        g2 = np.sum(u.grad_at(s, measures.nodes[k]) ** 2, axis=1)
        energy, energy_se = measures.mean_and_se(g2, k)
        lefts.append(var)
        rights.append(const * energy)
        ses.append(math.hypot(var_se, const * energy_se, 2 * abs(m) * m_se))
        margins.append(const * energy - var)
    left = float(np.mean(lefts))
    right = float(np.mean(rights))
    stderr = float(np.linalg.norm(ses) / len(ses))
    worst = int(np.argmin(margins))
    return InequalityReport(
        left=left,
        right=right,
        stderr=stderr,
        constant=const,
        witness=(u.fid, float(measures.phases[worst])),
    )


def logsob_ratio(
    field: PeriodicCoefficientField,
    u: SpaceTimeFunction,
    p: float,
    measures: PhaseMeasures,
    lam: float,
    r0: float,
) -> InequalityReport:
    """Entropy vs gradient comparison with constant p^2 Lambda / (2 |r0|).

    left  = int |u|^p log(|u|^p) d mu,
    right = phase average of (Pi |u|^p) log(Pi |u|^p)
            + p^2 Lambda / (2 |r0|) * int |u|^(p-2) |grad_x u|^2 d mu.
    Signed u is handled through |u| (gradient term clipped away from u = 0).
    """
    if not field.q_independent_of_x:
        raise NotApplicable("entropy inequality needs diffusion independent of x")
    if r0 >= 0.0:
        raise NotDissipative(f"entropy check needs r0 < 0, got {r0}")
    if p < 1.0:
        raise ValueError("p must be >= 1")
    const = p * p * lam / (2.0 * abs(r0))
    ent, proj, grad = [], [], []
    ses = []
    margins = []
    for k, s in enumerate(measures.phases):
        absu = np.abs(u(s, measures.nodes[k]))
        up = absu**p
        ent_vals = np.where(up > 0.0, up * np.log(np.maximum(up, 1e-300)), 0.0)
        a, a_se = measures.mean_and_se(ent_vals, k)
        pi_up, pi_se = measures.mean_and_se(up, k)
        b = pi_up * math.log(max(pi_up, 1e-300))
        b_se = abs(1.0 + math.log(max(pi_up, 1e-300))) * pi_se
        g2 = np.sum(u.grad_at(s, measures.nodes[k]) ** 2, axis=1)
        weight = np.where(absu > 1e-150, absu ** (p - 2.0), 0.0) if p != 2.0 else 1.0
        c, c_se = measures.mean_and_se(weight * g2, k)
        ent.append(a)
        proj.append(b)
        grad.append(const * c)
        ses.append(math.hypot(a_se, b_se, const * c_se))
        margins.append(b + const * c - a)
    left = float(np.mean(ent))
    right = float(np.mean(proj) + np.mean(grad))
    stderr = float(np.linalg.norm(ses) / len(ses))
    worst = int(np.argmin(margins))
    return InequalityReport(
        left=left,
        right=right,
        stderr=stderr,
        constant=const,
        witness=(u.fid, float(measures.phases[worst])),
    )


def pointwise_gradient_check(
    field: PeriodicCoefficientField,
    phi: TestFunction,
    t: float,
    s: float,
    x,
    config: mc.SimConfig,
    r0: float,
    stream: int = 9,
) -> dict:
    """One sample of |grad_x P phi| <= exp(r0 (t-s)) P |grad phi| + 4 stderr.

    Both sides are estimated on the same tangent ensemble, so the pathwise
    inequality transfers to the estimators up to time-discretization error.
    """
    ens = mc.TangentEnsemble.identity(s, np.tile(np.atleast_1d(x), (config.n_particles, 1)))
    out = mc.evolve_tangent(field, ens, s, t, config, stream=stream)
    pulled = np.einsum("nij,ni->nj", out.jacobians, phi.grad_at(out.positions))
    lhs_vec = pulled.mean(axis=0)
    lhs = float(np.linalg.norm(lhs_vec))
    lhs_se = float(np.linalg.norm(pulled.std(axis=0, ddof=1)) / math.sqrt(out.n))
    rhs_vals = phi.grad_norm(out.positions)
    rhs = math.exp(r0 * (t - s)) * float(rhs_vals.mean())
    rhs_se = math.exp(r0 * (t - s)) * float(rhs_vals.std(ddof=1) / math.sqrt(out.n))
    stderr = math.hypot(lhs_se, rhs_se)
    return {
        "t": t, "s": s, "x": np.atleast_1d(x).tolist(), "phi": phi.fid,
        "lhs": lhs, "rhs": rhs, "stderr": stderr,
        "holds": lhs <= rhs + 4.0 * stderr,
    }


def contraction_invariance_report(
    engine,
    phis: Sequence[TestFunction],
    s: float,
    gaps: Sequence[float],
    ps: Sequence[float],
    slack: float = 5.0,
) -> list[dict]:
    """Transport vs measure checks at whole-period separations.

    Per (phi, p, gap): the L^p norm of the transported function against the
    starting measure must not exceed the L^p norm of phi against the target
    measure (contraction), and the two measure means must agree (invariance
    under push-forward), each within ``slack`` combined standard errors.
    """
    period = engine.field.period if hasattr(engine, "field") else engine.model.period
    for gap in gaps:
        if abs((gap / period) - round(gap / period)) > 1e-9:
            raise ValueError("contraction checks use whole-period separations")
    profile = engine.transfer_profile(list(phis), s, gaps)
    rows = []
    for k, gap in enumerate(profile.horizons):
        for phi in phis:
            g, se = profile.values[phi.fid][k]
            w = profile.outer_weights[k]
            mean_p = float(np.dot(w, g))
            mean_p_se = 0.0
            if profile.stochastic:
                mean_p_se = math.sqrt(float(np.dot(w**2, se**2))
                                      + float(np.dot(w**2, (g - mean_p) ** 2)))
            mean_phi, mean_phi_se = engine.phase_mean(phi, s + gap)
            for p in ps:
                lhs, lhs_se = debiased_power_mean(g, se, w, p, profile.stochastic)
                rhs, rhs_se = engine.phase_lp(phi, s + gap, p)
                rows.append({
                    "phi": phi.fid, "p": p, "gap": float(gap),
                    "contraction_lhs": lhs, "contraction_rhs": rhs,
                    "contraction_slack": slack * math.hypot(lhs_se, rhs_se),
                    "contraction_ok": lhs <= rhs + slack * math.hypot(lhs_se, rhs_se),
                    "invariance_gap": abs(mean_p - mean_phi),
                    "invariance_slack": slack * math.hypot(mean_p_se, mean_phi_se),
                    "invariance_ok": abs(mean_p - mean_phi)
                    <= slack * math.hypot(mean_p_se, mean_phi_se),
                })
    return rows


@dataclass(frozen=True)
class BumpWindow:
    """Smooth compactly supported envelope on (lo, hi) with closed-form slope."""

    lo: float
    hi: float

    def _z(self, s):
        mid = 0.5 * (self.lo + self.hi)
        return (np.asarray(s, dtype=float) - mid) / (0.5 * (self.hi - self.lo))

    def __call__(self, s):
        z = self._z(s)
        out = np.zeros_like(z)
        inside = np.abs(z) < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - z[inside] ** 2))
        return out if out.shape else float(out)

    def deriv(self, s):
        z = self._z(s)
        out = np.zeros_like(z)
        inside = np.abs(z) < 1.0
        zi = z[inside]
        out[inside] = np.exp(-1.0 / (1.0 - zi**2)) * (-2.0 * zi / (1.0 - zi**2) ** 2)
        out = out / (0.5 * (self.hi - self.lo))
        return out if out.shape else float(out)


@dataclass(frozen=True)
class CoreTestFunction:
    """Separable core element: envelope times a transported bump.

    ``u(s, x) = alpha(s) g(s, x)`` with ``g(s, .)`` the transition expectation
    of ``chi`` evaluated from time s to the anchor time, extended
    T-periodically; its generator image is ``alpha'(s) g(s, x)``, exposed for
    generator-consistency tests.
    """

    tau: float
    period: float
    alpha: BumpWindow
    transported: Callable        # (s_canonical, (n,d)) -> (n,)

    def _canonical(self, s: float) -> float:
        lo = self.alpha.lo
        return lo + (s - lo) % self.period

    def u(self, s, points):
        sc = self._canonical(s)
        a = float(self.alpha(sc))
        if a == 0.0:
            return np.zeros(len(np.atleast_2d(points)))
        return a * self.transported(sc, points)

    def generator_image(self, s, points):
        sc = self._canonical(s)
        da = float(self.alpha.deriv(sc))
        if da == 0.0:
            return np.zeros(len(np.atleast_2d(points)))
        return da * self.transported(sc, points)


def core_test_function(
    engine,
    tau: float,
    chi: TestFunction,
    alpha: BumpWindow,
    period: float,
) -> CoreTestFunction:
    """Build the separable core element anchored at time tau.

    The envelope must be supported strictly inside a window of one period
    that ends no later than the anchor, so the transported factor is always
    evaluated over a nonnegative separation.  Needs a point-evaluable engine
    (the exact Gaussian one); grid realizations use :func:`core_on_grid`.
    """
    if alpha.hi > tau + 1e-12:
        raise ValueError("envelope support must end at or before the anchor time")
    if alpha.hi - alpha.lo > period:
        raise ValueError("envelope support must fit inside one period")
    if not hasattr(engine, "model"):
        raise NotApplicable("core_test_function needs the exact Gaussian engine")

    def transported(s, points):
        from . import ougaussian as ou
        return np.asarray(ou.apply(engine.model, chi, tau, s, np.atleast_2d(points),
                                    order=engine.order))

    return CoreTestFunction(tau=tau, period=period, alpha=alpha, transported=transported)


def core_on_grid(
    field: PeriodicCoefficientField,
    grid,
    tau: float,
    chi: TestFunction,
    alpha: BumpWindow,
    substeps: int = 2,
):
    """Grid realization of the core element and its generator image.

    One downward sweep from the anchor captures the transported factor at
    every canonical slice phase; returns ``(u, image)`` as grid functions
    with ``image`` the expected generator action (envelope slope times the
    transported factor).
    """
    from . import grid as gridmod

    if alpha.hi > tau + 1e-12:
        raise ValueError("envelope support must end at or before the anchor time")
    nodes = grid.nodes()
    chi_vec = np.asarray(chi(nodes))
    period = grid.period
    canon = [alpha.lo + (s - alpha.lo) % period for s in grid.slice_times()]
    order = np.argsort(canon)[::-1]          # sweep from the anchor downward
    u_vals = np.zeros((grid.time_slices, grid.n_space))
    img_vals = np.zeros_like(u_vals)
    vec = chi_vec.copy()
    t_hi = tau
    for j in order:
        sc = canon[j]
        if sc < t_hi:
            step = gridmod.transition_matrix(field, grid, sc, t_hi, substeps)
            vec = step @ vec
            t_hi = sc
        a = float(alpha(sc))
        da = float(alpha.deriv(sc))
        u_vals[j] = a * vec
        img_vals[j] = da * vec
    return gridmod.GridFunction(grid, u_vals), gridmod.GridFunction(grid, img_vals)


def kernel_positivity_check(
    field: PeriodicCoefficientField,
    s: float,
    t: float,
    x,
    config: mc.SimConfig,
    half_width: float,
    bins: int = 8,
    stream: int = 6,
) -> dict:
    """Histogram spot check that the transition kernel charges every bin
    of a coarse central box for separations of at least half a period."""
    if t - s < field.period / 2.0:
        raise ValueError("positivity spot check needs t - s >= T/2")
    ens = mc.evolve(field, mc.point_mass(x, config.n_particles, s), s, t, config, stream)
    edges = np.linspace(-half_width, half_width, bins + 1)
    counts, _ = np.histogramdd(ens.positions, bins=[edges] * field.dim)
    return {"min_count": int(counts.min()), "positive": bool(counts.min() > 0)}
