"""Scenario files, their validation, and the named experiment suites.

A scenario is a versioned JSON document declaring one coefficient field,
engine sizes, and a list of experiments.  Validation is strict: unknown keys
anywhere are rejected with the JSON path, and experiment/field pairings are
checked up front (the entropy inequality needs x-independent diffusion, the
exact engine needs a linear-drift model, and so on).

Each experiment writes ``<name>.json`` and ``<name>.csv`` into the output
directory and contributes pass/fail check lines; ``summary.json`` aggregates
them.  All artifacts are byte-deterministic for a fixed scenario and seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import engines as eng
from . import fields as fl
from . import grid as gridmod
from . import hypotheses as hyp
from . import montecarlo as mc
from . import ougaussian as ou
from .errors import ConfigError, DegenerateWindow, NoiseFloor
import hashlib

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema", "id", "description", "seed", "field", "plan", "sim", "grid",
             "experiments", "output"}
_FIELD_KEYS = {
    "ou": {"kind", "dim", "period", "a0", "a_sin", "a_cos", "b0", "b_sin", "b_cos",
           "f0", "f_sin", "f_cos"},
    "grad1d": {"kind", "period"},
    "gen": {"kind", "dim", "period", "rate_const", "rate_cos", "q_const", "q_sin", "q_bump"},
    "custom-polynomial": {"kind", "dim", "period", "q_const", "q_sin", "q_cos", "drift_terms"},
}
_PLAN_KEYS = {"r_max", "n_times", "n_axis", "n_shells", "n_shell_dirs"}
_SIM_KEYS = {"particles", "dt", "horizon_periods", "antithetic", "n_outer", "n_inner"}
_GRID_KEYS = {"half_width", "points_per_axis", "time_slices", "time_scheme", "substeps"}
_EXPERIMENT_KEYS = {
    "hypothesis-check": {"name", "moment_phases", "lyapunov_n"},
    "decay": {"name", "engine", "ps", "horizons", "window", "rate_bounds",
              "envelope_rate", "contraction_gaps", "contraction_ps"},
    "gradient-decay": {"name", "engine", "ps", "horizons", "window", "rate_bounds",
                       "pointwise_samples"},
    "rate-equivalence": {"name", "engine", "p", "horizons", "window", "tolerance"},
    "poincare": {"name", "n_phases"},
    "logsob": {"name", "ps", "n_phases"},
    "spectrum": {"name", "k", "cluster_tol", "gap_cap", "refine", "carre", "solvability"},
    "spectral-mapping": {"name", "tol", "substeps"},
    "core-consistency": {"name", "engine", "tol"},
}


def _require(cond: bool, message: str, path: str):
    if not cond:
        raise ConfigError(message, path)


def _check_keys(obj, allowed: set, path: str):
    _require(isinstance(obj, dict), "expected an object", path)
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r}", f"{path}.{key}")


def validate_scenario(doc: dict) -> dict:
    """Strict structural validation; returns the document unchanged."""
    _check_keys(doc, _TOP_KEYS, "$")
    _require(doc.get("schema") == SCHEMA_VERSION, f"schema must be {SCHEMA_VERSION}", "$.schema")
    _require(isinstance(doc.get("id"), str) and doc["id"], "id must be a nonempty string", "$.id")
    field = doc.get("field")
    _require(isinstance(field, dict), "field section required", "$.field")
    kind = field.get("kind")
    _require(kind in _FIELD_KEYS, f"unknown field kind {kind!r}", "$.field.kind")
    _check_keys(field, _FIELD_KEYS[kind], "$.field")
    for section, keys in (("plan", _PLAN_KEYS), ("sim", _SIM_KEYS), ("grid", _GRID_KEYS)):
        if section in doc:
            _check_keys(doc[section], keys, f"$.{section}")
    exps = doc.get("experiments")
    _require(isinstance(exps, list) and exps, "experiments must be a nonempty list", "$.experiments")
    q_varies = kind == "gen"
    for i, spec in enumerate(exps):
        path = f"$.experiments[{i}]"
        _require(isinstance(spec, dict), "experiment entries must be objects", path)
        name = spec.get("name")
        _require(name in _EXPERIMENT_KEYS, f"unknown experiment {name!r}", f"{path}.name")
        _check_keys(spec, _EXPERIMENT_KEYS[name], path)
        if name == "logsob":
            _require(not q_varies,
                     "the entropy inequality needs diffusion independent of x", path)
        if name in ("decay", "gradient-decay", "rate-equivalence", "core-consistency"):
            engine = spec.get("engine", "montecarlo")
            _require(engine in ("montecarlo", "grid", "ou-exact"),
                     f"unknown engine {engine!r}", f"{path}.engine")
            if engine == "ou-exact":
                _require(kind == "ou", "the exact engine needs a linear-drift field",
                         f"{path}.engine")
            if name == "gradient-decay" and engine == "montecarlo":
                _require(not q_varies,
                         "pathwise gradients need diffusion independent of x", path)
    return doc


def build_field(field_spec: dict):
    """Instantiate (field, model-or-None) from the field section."""
    kind = field_spec["kind"]
    if kind == "ou":
        model = ou.fourier_matrix_model(
            dim=field_spec.get("dim", 1),
            period=field_spec.get("period", 1.0),
            a0=field_spec.get("a0"),
            a_sin=field_spec.get("a_sin"),
            a_cos=field_spec.get("a_cos"),
            b0=field_spec.get("b0"),
            b_sin=field_spec.get("b_sin"),
            b_cos=field_spec.get("b_cos"),
            f0=field_spec.get("f0"),
            f_sin=field_spec.get("f_sin"),
            f_cos=field_spec.get("f_cos"),
            name="ou",
        )
        model.check_ellipticity()
        return ou.as_field(model), model
    if kind == "grad1d":
        return fl.grad1d_field(field_spec.get("period", 1.0)), None
    if kind == "gen":
        gen_kwargs = {k: field_spec[k] for k in field_spec if k != "kind"}
        return fl.gen_field(**gen_kwargs), None
    terms = tuple(
        fl.DriftTerm(power=t["power"], const=t.get("const", 0.0),
                     sin=t.get("sin", 0.0), cos=t.get("cos", 0.0))
        for t in field_spec.get("drift_terms", [])
    )
    poly = fl.polynomial_field(
        dim=field_spec.get("dim", 1),
        period=field_spec.get("period", 1.0),
        q_const=field_spec.get("q_const", 1.0),
        q_sin=field_spec.get("q_sin", 0.0),
        q_cos=field_spec.get("q_cos", 0.0),
        drift_terms=terms,
    )
    return poly, None


# ---------------------------------------------------------------------------
# Shared run context
# ---------------------------------------------------------------------------


@dataclass
class RunContext:
    """Lazily built shared state for one scenario run."""

    doc: dict
    seed: int
    _field: object = None
    _model: object = None
    _plan: object = None
    _report: object = None
    _mc_engine: object = None
    _ou_engine: object = None
    _grid_engine: object = None
    _generator: object = None

    def config_hash(self) -> str:
        """Digest of everything that determines the numbers in a report."""
        canon = json.dumps(
            {"field": self.doc.get("field"), "plan": self.doc.get("plan"),
             "sim": self.doc.get("sim"), "grid": self.doc.get("grid"),
             "seed": self.seed},
            sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @property
    def field(self):
        if self._field is None:
            self._field, self._model = build_field(self.doc["field"])
        return self._field

    @property
    def model(self):
        _ = self.field
        return self._model

    @property
    def plan(self):
        if self._plan is None:
            p = self.doc.get("plan", {})
            self._plan = fl.build_plan(
                dim=self.field.dim,
                period=self.field.period,
                r_max=p.get("r_max", 6.0),
                n_times=p.get("n_times", 64),
                n_axis=p.get("n_axis", 21),
                n_shells=p.get("n_shells", 6),
                n_shell_dirs=p.get("n_shell_dirs", 16),
            )
        return self._plan

    @property
    def hypothesis_report(self) -> hyp.HypothesisReport:
        if self._report is None:
            self._report = hyp.check_hypotheses(self.field, self.plan)
        return self._report

    def sim_config(self) -> mc.SimConfig:
        s = self.doc.get("sim", {})
        return mc.SimConfig(
            n_particles=s.get("particles", 20000),
            dt=s.get("dt", 0.004),
            seed=self.seed,
            horizon_periods=s.get("horizon_periods", 16),
            antithetic=s.get("antithetic", False),
        )

    def space_time_grid(self) -> gridmod.SpaceTimeGrid:
        g = self.doc.get("grid", {})
        return gridmod.SpaceTimeGrid(
            half_width=g.get("half_width", 4.5),
            points_per_axis=g.get("points_per_axis", 63),
            time_slices=g.get("time_slices", 33),
            period=self.field.period,
            dim=self.field.dim,
        )

    def engine(self, name: str):
        if name == "montecarlo":
            if self._mc_engine is None:
                s = self.doc.get("sim", {})
                self._mc_engine = eng.MonteCarloEngine(
                    self.field,
                    self.sim_config(),
                    n_outer=s.get("n_outer", 128),
                    n_inner=s.get("n_inner", 2048),
                    certificate=self.hypothesis_report.lyapunov,
                )
            return self._mc_engine
        if name == "ou-exact":
            if self._ou_engine is None:
                if self.model is None:
                    raise ConfigError("ou-exact engine needs a linear-drift field", "$.field")
                self._ou_engine = eng.OUExactEngine(self.model)
            return self._ou_engine
        if name == "grid":
            if self._grid_engine is None:
                g = self.doc.get("grid", {})
                self._grid_engine = eng.GridEngine(
                    self.field,
                    self.space_time_grid(),
                    time_scheme=g.get("time_scheme", "spectral"),
                    substeps=g.get("substeps", 2),
                    generator=self.generator,
                )
            return self._grid_engine
        raise ConfigError(f"unknown engine {name!r}", "$.experiments")

    @property
    def generator(self):
        if self._generator is None:
            g = self.doc.get("grid", {})
            self._generator = gridmod.build_generator(
                self.field, self.space_time_grid(), g.get("time_scheme", "spectral")
            )
        return self._generator


@dataclass
class ExperimentResult:
    name: str
    payload: dict
    csv_header: list
    csv_rows: list
    checks: list                      # [{"rule", "passed", "detail"}]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _check(rule: str, passed: bool, detail: str) -> dict:
    return {"rule": rule, "passed": bool(passed), "detail": detail}


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------


def _run_hypothesis_check(ctx: RunContext, params: dict) -> ExperimentResult:
    report = ctx.hypothesis_report
    checks = [
        _check("hyp-ellipticity", report.eta0_hat > 0.0,
               f"eta0={report.eta0_hat:.6g} Lambda={report.lambda_hat:.6g}"),
        _check("hyp-lyapunov", report.lyapunov is not None and report.lyapunov.accepted,
               f"a={report.lyapunov.a} c={report.lyapunov.c}"),
    ]
    rows = [
        {"metric": "eta0", "value": report.eta0_hat},
        {"metric": "Lambda", "value": report.lambda_hat},
        {"metric": "r0", "value": report.r0_hat},
        {"metric": "ell_2", "value": report.ell_p_hat.get(2.0, float("nan"))},
        {"metric": "lyapunov_a", "value": report.lyapunov.a},
        {"metric": "lyapunov_c", "value": report.lyapunov.c},
    ]
    n_phases = params.get("moment_phases", 8)
    if report.lyapunov.accepted:
        bound = report.lyapunov.moment_bound()
        mc_engine = ctx.engine("montecarlo")
        worst = -math.inf
        ok = True
        for k in range(n_phases):
            phase = ctx.field.period * k / n_phases
            ens = mc_engine.phase_ensemble(phase)
            v = 1.0 + np.sum(ens.positions**2, axis=1) ** report.lyapunov.n
            mean = float(v.mean())
            se = float(v.std(ddof=1) / math.sqrt(len(v)))
            ok = ok and mean <= bound + 4.0 * se
            worst = max(worst, mean - bound)
            rows.append({"metric": f"moment_phase_{k}", "value": mean})
        checks.append(_check("moment-bound", ok,
                             f"bound={bound:.4g} worst_excess={worst:.4g}"))
    payload = json.loads(report.to_json())
    payload["checks"] = checks
    return ExperimentResult("hypothesis-check", payload, ["metric", "value"], rows, checks)


def _curves_payload(curves: list[dg.DecayCurve]) -> list[dict]:
    rows = []
    for curve in curves:
        rows.extend(curve.rows())
    return rows


def _run_decay(ctx: RunContext, params: dict) -> ExperimentResult:
    engine = ctx.engine(params.get("engine", "montecarlo"))
    ps = [float(p) for p in params.get("ps", [2.0])]
    horizons = params.get("horizons", [1, 2, 3, 4, 5, 6, 7, 8])
    window = tuple(params.get("window", [1.0, max(horizons)]))
    phis = [phi for phi in eng.battery(ctx.field.dim) if phi.fid != "const"]
    profile = engine.transfer_profile(phis, 0.0, horizons)
    curves = []
    checks = []
    payload = {"engine": engine.name, "monotone_envelope": {}, "fits": {}}
    for p in ps:
        p_curves = [dg.decay_curve(engine, phi, 0.0, p, horizons, profile) for phi in phis]
        for c in p_curves:
            payload["monotone_envelope"][f"{c.phi_id}:p={p:g}"] = c.eventually_decreasing()
        curves.extend(p_curves)
        combined = dg.max_over_curves(p_curves)
        refs = {"ell_2": ctx.hypothesis_report.ell_p_hat.get(2.0)}
        if ctx.model is not None:
            refs["omega0"] = ou.growth_bound(ctx.model)
        bounds = params.get("rate_bounds", {}).get(f"{p:g}")
        env_rate = params.get("envelope_rate")
        try:
            fit = dg.fit_rate(combined, window, references=refs)
            payload["fits"][f"p={p:g}"] = fit.to_jsonable()
            if bounds is not None:
                lo = -math.inf if bounds[0] is None else bounds[0]
                hi = math.inf if bounds[1] is None else bounds[1]
                checks.append(_check(
                    f"decay-rate-p{p:g}", lo <= fit.rate <= hi,
                    f"omega_hat={fit.rate:.4f} in [{lo}, {hi}] R2={fit.r_squared:.3f}"))
            if env_rate is not None:
                m_env = dg.envelope_constant(combined, env_rate)
                admits = bool(np.all(
                    combined.values <= m_env * np.exp(env_rate * combined.taus) * (1 + 1e-9)))
                payload["fits"][f"p={p:g}"]["envelope_M"] = m_env
                checks.append(_check(
                    f"decay-envelope-p{p:g}", admits,
                    f"M={m_env:.4g} at rate {env_rate}"))
        except (NoiseFloor, DegenerateWindow) as exc:
            payload["fits"][f"p={p:g}"] = {"refused": str(exc)}
            if bounds is not None or env_rate is not None:
                checks.append(_check(f"decay-rate-p{p:g}", False, f"fit refused: {exc}"))
    gaps = params.get("contraction_gaps", [])
    if gaps:
        rows = dg.contraction_invariance_report(
            engine, phis, 0.0, gaps, [float(p) for p in params.get("contraction_ps", [1, 2, 4])]
        )
        payload["contraction"] = rows
        checks.append(_check(
            "contraction", all(r["contraction_ok"] for r in rows),
            f"{sum(r['contraction_ok'] for r in rows)}/{len(rows)} rows"))
        checks.append(_check(
            "invariance", all(r["invariance_ok"] for r in rows),
            f"{sum(r['invariance_ok'] for r in rows)}/{len(rows)} rows"))
    payload["checks"] = checks
    header = ["tau", "value", "stderr", "p", "phi", "engine", "kind"]
    return ExperimentResult("decay", payload, header, _curves_payload(curves), checks)


def _run_gradient_decay(ctx: RunContext, params: dict) -> ExperimentResult:
    engine = ctx.engine(params.get("engine", "montecarlo"))
    ps = [float(p) for p in params.get("ps", [2.0])]
    horizons = [tau for tau in params.get("horizons", [1, 2, 3, 4]) if tau >= 1.0]
    window = tuple(params.get("window", [1.0, max(horizons)]))
    phis = [phi for phi in eng.battery(ctx.field.dim)
            if phi.fid in ("tanh", "sin", "ratio", "coord0")]
    profile = engine.transfer_profile(phis, 0.0, horizons, gradients=True)
    curves = []
    checks = []
    payload = {"engine": engine.name, "fits": {}}
    for p in ps:
        p_curves = [dg.gradient_decay_curve(engine, phi, 0.0, p, horizons, profile)
                    for phi in phis]
        curves.extend(p_curves)
        combined = dg.max_over_curves(p_curves)
        bounds = params.get("rate_bounds", {}).get(f"{p:g}")
        try:
            fit = dg.fit_rate(combined, window)
            payload["fits"][f"p={p:g}"] = fit.to_jsonable()
            if bounds is not None:
                lo = -math.inf if bounds[0] is None else bounds[0]
                hi = math.inf if bounds[1] is None else bounds[1]
                checks.append(_check(
                    f"gradient-rate-p{p:g}", lo <= fit.rate <= hi,
                    f"gamma_hat={fit.rate:.4f} in [{lo}, {hi}]"))
        except (NoiseFloor, DegenerateWindow) as exc:
            payload["fits"][f"p={p:g}"] = {"refused": str(exc)}
            if bounds is not None:
                checks.append(_check(f"gradient-rate-p{p:g}", False, f"fit refused: {exc}"))
    n_point = params.get("pointwise_samples", 0)
    if n_point and ctx.field.q_independent_of_x:
        rng = np.random.default_rng(ctx.seed)
        r0 = ctx.hypothesis_report.r0_hat
        config = replace(ctx.sim_config(), n_particles=4000)
        tanh = next(phi for phi in eng.battery(ctx.field.dim) if phi.fid == "tanh")
        results = []
        for i in range(n_point):
            s = float(rng.uniform(0.0, ctx.field.period))
            t = s + float(rng.uniform(0.1, 3.0))
            x = rng.uniform(-2.0, 2.0, size=ctx.field.dim)
            results.append(dg.pointwise_gradient_check(
                ctx.field, tanh, t, s, x, config, r0, stream=200 + i))
        payload["pointwise"] = results
        checks.append(_check(
            "gradient-pointwise", all(r["holds"] for r in results),
            f"{sum(r['holds'] for r in results)}/{len(results)} samples"))
    payload["checks"] = checks
    header = ["tau", "value", "stderr", "p", "phi", "engine", "kind"]
    return ExperimentResult("gradient-decay", payload, header, _curves_payload(curves), checks)


def _run_rate_equivalence(ctx: RunContext, params: dict) -> ExperimentResult:
    engine = ctx.engine(params.get("engine", "grid" if ctx.model is None else "ou-exact"))
    p = float(params.get("p", 2.0))
    horizons = params.get("horizons", [1, 2, 3, 4, 5, 6])
    window = tuple(params.get("window", [1.0, max(horizons)]))
    tol = params.get("tolerance", 0.1)
    phis = [phi for phi in eng.battery(ctx.field.dim) if phi.fid in ("tanh", "sin", "ratio")]
    report = dg.rate_equivalence_check(engine, phis, 0.0, p, horizons, window, tol)
    payload = {
        "engine": engine.name,
        "omega_hat": report["omega_hat"],
        "gamma_hat": report["gamma_hat"],
        "difference": report["difference"],
        "omega_fit": report["omega_fit"].to_jsonable(),
        "gamma_fit": report["gamma_fit"].to_jsonable(),
    }
    checks = [_check(
        "rate-equivalence", report["agree"],
        f"|omega-gamma|={report['difference']:.4f} <= {tol}")]
    payload["checks"] = checks
    rows = [{"omega_hat": report["omega_hat"], "gamma_hat": report["gamma_hat"],
             "difference": report["difference"], "p": p}]
    return ExperimentResult("rate-equivalence", payload, ["omega_hat", "gamma_hat",
                                                          "difference", "p"], rows, checks)


def _inequality_measures(ctx: RunContext, n_phases: int) -> dg.PhaseMeasures:
    return dg.PhaseMeasures.from_engine(ctx.engine("montecarlo"), n_phases)


def _run_poincare(ctx: RunContext, params: dict) -> ExperimentResult:
    report_h = ctx.hypothesis_report
    measures = _inequality_measures(ctx, params.get("n_phases", 8))
    lam = report_h.lambda_hat
    ell2 = report_h.ell_p_hat[2.0]
    rows, checks = [], []
    payload = {"constant": lam / abs(ell2), "reports": {}}
    for u in dg.st_battery(ctx.field.dim, ctx.field.period):
        rep = dg.poincare_ratio(ctx.field, u, measures, lam, ell2)
        payload["reports"][u.fid] = rep.to_jsonable()
        rows.append({"fid": u.fid, "left": rep.left, "right": rep.right,
                     "residual": rep.residual, "stderr": rep.stderr})
        checks.append(_check(f"poincare-{u.fid}", rep.holds(),
                             f"residual={rep.residual:.4g} stderr={rep.stderr:.3g}"))
    payload["checks"] = checks
    return ExperimentResult("poincare", payload,
                            ["fid", "left", "right", "residual", "stderr"], rows, checks)


def _run_logsob(ctx: RunContext, params: dict) -> ExperimentResult:
    report_h = ctx.hypothesis_report
    measures = _inequality_measures(ctx, params.get("n_phases", 8))
    lam = report_h.lambda_hat
    r0 = report_h.r0_hat
    rows, checks = [], []
    payload = {"reports": {}}
    for p in [float(q) for q in params.get("ps", [1.0, 2.0])]:
        for u in dg.positive_battery(ctx.field.dim):
            rep = dg.logsob_ratio(ctx.field, u, p, measures, lam, r0)
            key = f"{u.fid}:p={p:g}"
            payload["reports"][key] = rep.to_jsonable()
            rows.append({"fid": u.fid, "p": p, "left": rep.left, "right": rep.right,
                         "residual": rep.residual, "stderr": rep.stderr})
            checks.append(_check(f"logsob-{key}", rep.holds(),
                                 f"residual={rep.residual:.4g} stderr={rep.stderr:.3g}"))
    payload["checks"] = checks
    return ExperimentResult("logsob", payload,
                            ["fid", "p", "left", "right", "residual", "stderr"], rows, checks)


def _run_spectrum(ctx: RunContext, params: dict) -> ExperimentResult:
    gen = ctx.generator
    cluster_tol = params.get("cluster_tol", 1e-3)
    report = gridmod.spectrum(gen, k=params.get("k", 40), cluster_tol=cluster_tol,
                              with_residuals=True)
    cluster = {k: z for k, z in report.axis_cluster}
    w0 = 2.0 * math.pi / ctx.field.period
    have_axis = (0 in cluster) and (1 in cluster) and (-1 in cluster)
    axis_err = max(
        abs(cluster.get(0, math.inf)),
        abs(cluster.get(1, 1j * math.inf) - 1j * w0),
        abs(cluster.get(-1, 1j * math.inf) + 1j * w0),
    ) if have_axis else math.inf
    checks = [
        _check("spectrum-axis-cluster", have_axis and axis_err <= cluster_tol,
               f"axis error {axis_err:.2e}"),
        _check("rho-invariance", gen.rho_residual <= 1e-8,
               f"rho residual {gen.rho_residual:.2e}"),
    ]
    gap_cap = params.get("gap_cap")
    if gap_cap is not None:
        checks.append(_check("spectrum-gap", report.gap_estimate <= gap_cap,
                             f"gap {report.gap_estimate:.4f} <= {gap_cap}"))
    payload = {"spectrum": report.to_jsonable(), "rho_residual": gen.rho_residual}
    if params.get("refine", False):
        fine = gridmod.build_generator(ctx.field, gen.grid.refined(2), gen.time_scheme)
        fine_rep = gridmod.spectrum(fine, k=12, cluster_tol=cluster_tol,
                                    dense_cutoff=0)
        drift = abs(fine_rep.gap_estimate - report.gap_estimate)
        payload["refined_gap"] = fine_rep.gap_estimate
        checks.append(_check("spectrum-stability", drift <= 0.05,
                             f"gap drift {drift:.4f} under refinement"))
    if params.get("carre", False):
        bump = dg.BumpWindow(-0.5 * gen.grid.half_width, 0.5 * gen.grid.half_width)
        w = 2.0 * math.pi / ctx.field.period

        def u_fn(s, X):
            prof = np.ones(len(X))
            for axis in range(ctx.field.dim):
                prof = prof * bump(X[:, axis])
            return prof * (1.0 + 0.5 * math.cos(w * s)) / bump(0.0) ** ctx.field.dim

        u_grid = gridmod.GridFunction.sample(gen.grid, u_fn)
        res = gridmod.carre_du_champ_residual(gen, ctx.field, u_grid)
        fine = gridmod.build_generator(ctx.field, gen.grid.refined(2), gen.time_scheme)
        u_fine = gridmod.GridFunction.sample(fine.grid, u_fn)
        res_fine = gridmod.carre_du_champ_residual(fine, ctx.field, u_fine)
        ratio = res / res_fine if res_fine > 0 else math.inf
        payload["carre_residuals"] = [res, res_fine]
        checks.append(_check("carre-du-champ", 3.5 <= ratio <= 4.5,
                             f"halving ratio {ratio:.3f}"))
    if params.get("solvability", False):
        nodes = gen.grid.nodes()
        w = 2.0 * math.pi / ctx.field.period

        def f_raw(s, X):
            return np.sin(X[:, 0]) * (1.0 + 0.5 * math.sin(w * s)) + 0.2 * X[:, 0]

        f_vals = gridmod.GridFunction.sample(gen.grid, f_raw).ravel()
        mean = float(np.dot(gen.rho, f_vals))
        f_zero = f_vals - mean
        res_zero, mean_zero = gridmod.solvability_residual(gen, f_zero)
        f_one = f_zero + 1.0
        res_one, mean_one = gridmod.solvability_residual(gen, f_one)
        scale = float(np.sqrt(np.dot(gen.rho, f_zero**2)))
        ok = res_zero <= 1e-6 * scale and res_one >= abs(mean_one) * (1.0 - 1e-6)
        payload["solvability"] = {"residual_zero_mean": res_zero,
                                  "residual_unit_mean": res_one, "scale": scale}
        checks.append(_check("mean-zero-solvability", ok,
                             f"zero-mean {res_zero:.2e} vs unit-mean {res_one:.6f}"))
    payload["checks"] = checks
    rows = []
    for i, z in enumerate(report.eigenvalues[:50]):
        res = report.residuals[i] if i < len(report.residuals) else ""
        rows.append({"re": z.real, "im": z.imag, "residual": res})
    return ExperimentResult("spectrum", payload, ["re", "im", "residual"], rows, checks)


def _run_spectral_mapping(ctx: RunContext, params: dict) -> ExperimentResult:
    gen = ctx.generator
    report = gridmod.spectrum(gen, k=params.get("k", 40) if "k" in params else 40)
    result = gridmod.spectral_mapping_check(
        gen, ctx.field, gen.grid, substeps=params.get("substeps", 4), report=report
    )
    tol = params.get("tol", 1e-3)
    checks = [_check("spectral-mapping", result["worst_mismatch"] <= tol,
                     f"worst mismatch {result['worst_mismatch']:.2e} <= {tol}")]
    rows = [{"re": r["lambda"].real, "im": r["lambda"].imag, "kind": r["kind"],
             "mismatch": r["mismatch"]} for r in result["rows"]]
    payload = {"worst_mismatch": result["worst_mismatch"],
               "rows": rows, "checks": checks}
    return ExperimentResult("spectral-mapping", payload,
                            ["re", "im", "kind", "mismatch"], rows, checks)


def _run_core_consistency(ctx: RunContext, params: dict) -> ExperimentResult:
    period = ctx.field.period
    alpha = dg.BumpWindow(0.1 * period, 0.9 * period)
    chi = next(phi for phi in eng.battery(ctx.field.dim) if phi.fid == "bump")
    tol = params.get("tol", 5e-2)
    checks = []
    payload = {}
    grid = ctx.space_time_grid()
    u_fn, image = dg.core_on_grid(ctx.field, grid, period, chi, alpha,
                                  substeps=ctx.doc.get("grid", {}).get("substeps", 2))
    gen = ctx.generator
    applied = (gen.matrix @ u_fn.ravel()).reshape(u_fn.values.shape)
    err = float(np.sqrt(np.dot(gen.rho, ((applied - image.values).ravel()) ** 2)))
    scale = float(np.sqrt(np.dot(gen.rho, (image.values.ravel()) ** 2)))
    rel = err / max(scale, 1e-300)
    payload["grid_residual"] = {"abs": err, "rel": rel}
    checks.append(_check("core-generator", rel <= tol, f"relative residual {rel:.3e}"))
    if ctx.model is not None:
        engine = ctx.engine("ou-exact")
        core = dg.core_test_function(engine, period, chi, alpha, period)
        rng = np.random.default_rng(ctx.seed)
        pts = rng.uniform(-1.5, 1.5, size=(16, ctx.field.dim))
        s_probe = 0.5 * period
        direct = float(alpha(s_probe)) * ou.apply(ctx.model, chi, period, s_probe, pts)
        via_core = core.u(s_probe, pts)
        err_pt = float(np.abs(direct - via_core).max())
        payload["value_match"] = err_pt
        checks.append(_check("core-value", err_pt <= 1e-6, f"max error {err_pt:.2e}"))
    payload["checks"] = checks
    rows = [{"metric": "grid_rel_residual", "value": rel}]
    return ExperimentResult("core-consistency", payload, ["metric", "value"], rows, checks)


_RUNNERS = {
    "hypothesis-check": _run_hypothesis_check,
    "decay": _run_decay,
    "gradient-decay": _run_gradient_decay,
    "rate-equivalence": _run_rate_equivalence,
    "poincare": _run_poincare,
    "logsob": _run_logsob,
    "spectrum": _run_spectrum,
    "spectral-mapping": _run_spectral_mapping,
    "core-consistency": _run_core_consistency,
}


# ---------------------------------------------------------------------------
# Scenario execution
# ---------------------------------------------------------------------------


def _unique_names(specs: list[dict]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for spec in specs:
        name = spec["name"]
        seen[name] = seen.get(name, 0) + 1
        out.append(name if seen[name] == 1 else f"{name}-{seen[name]}")
    return out


def _write_csv(path: Path, header: list, rows: list):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(col, "")) for col in header))
    path.write_text("\n".join(lines) + "\n")


class _ComplexEncoder(json.JSONEncoder):
    def default(self, obj):
        if isinstance(obj, complex):
            return [obj.real, obj.imag]
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        if isinstance(obj, (dg.RateEstimate,)):
            return obj.to_jsonable()
        return super().default(obj)


def run_scenario(doc: dict, out_dir: str | Path, jobs: int = 1,
                 overrides: dict | None = None) -> dict:
    """Execute every experiment of a validated scenario; returns the summary."""
    doc = validate_scenario(doc)
    overrides = overrides or {}
    if overrides:
        doc = json.loads(json.dumps(doc))  # deep copy before mutating
        sim = doc.setdefault("sim", {})
        for key, target in (("particles", "particles"), ("dt", "dt"),
                            ("horizon", "horizon_periods")):
            if overrides.get(key) is not None:
                sim[target] = overrides[key]
    seed = overrides.get("seed")
    if seed is None:
        seed = doc.get("seed", 0)
    ctx = RunContext(doc=doc, seed=int(seed))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    specs = doc["experiments"]
    names = _unique_names(specs)
    results: list[ExperimentResult | None] = [None] * len(specs)

    def run_one(i: int):
        spec = specs[i]
        runner = _RUNNERS[spec["name"]]
        results[i] = runner(ctx, spec)

    if jobs > 1:
        # shared lazy state is built eagerly to keep workers read-only
        _ = ctx.hypothesis_report
        if any(s["name"] in ("spectrum", "spectral-mapping", "core-consistency")
               for s in specs):
            _ = ctx.generator
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(run_one, range(len(specs))))
    else:
        for i in range(len(specs)):
            run_one(i)

    summary = {"scenario": doc["id"], "seed": int(seed), "schema": SCHEMA_VERSION,
               "config_hash": ctx.config_hash(), "experiments": {}, "checks": [],
               "pass": True}
    for name, result in zip(names, results):
        result.payload.setdefault("config_hash", ctx.config_hash())
        (out / f"{name}.json").write_text(
            json.dumps(result.payload, indent=2, sort_keys=True, cls=_ComplexEncoder))
        _write_csv(out / f"{name}.csv", result.csv_header, result.csv_rows)
        summary["experiments"][name] = {
            "checks": result.checks,
            "pass": all(c["passed"] for c in result.checks),
        }
        summary["checks"].extend(
            {**c, "experiment": name} for c in result.checks)
        summary["pass"] = summary["pass"] and all(c["passed"] for c in result.checks)
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, cls=_ComplexEncoder))
    return summary


# ---------------------------------------------------------------------------
# Builtin scenarios
# ---------------------------------------------------------------------------


def data_dir() -> Path:
    return Path(__file__).parent / "data"


def builtin_ids() -> list[str]:
    return sorted(p.stem for p in data_dir().glob("*.json"))


def load_scenario(ref: str | Path) -> dict:
    """Load a scenario by builtin id or by file path."""
    path = Path(ref)
    if not path.exists():
        candidate = data_dir() / f"{ref}.json"
        if candidate.exists():
            path = candidate
        else:
            raise ConfigError(f"no scenario file or builtin id {ref!r}", "$")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", str(path)) from exc
    return validate_scenario(doc)
