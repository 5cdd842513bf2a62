"""Finite-difference realization on a truncated box.

Two deterministic engines live here:

* Crank-Nicolson time stepping of the parabolic Cauchy problem
  ``D_t u = L(t) u`` on ``[-L, L]^d`` with homogeneous Dirichlet closure,
  with first-order terms upwinded wherever the cell Peclet number exceeds 2;
* the discrete realization of the periodic space-time generator: per-slice
  spatial operators coupled by a periodic time derivative (spectral
  differencing by default for smooth data, first-order upwind as the
  roughness-robust option), its right-most spectrum, its positive invariant
  mass vector, and the one-period slice propagator used by the
  spectral-mapping diagnostic.

The generator is assembled as spatial part plus time derivative, i.e. the
generator of the semigroup that composes the transition operator with the
periodic time shift; its left Perron vector is the forward-invariant
space-time mass, which is what the stochastic engine samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BoxTooSmall, EigSolverFailure, PerronFailure, SolverDivergence
from .fields import PeriodicCoefficientField


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform periodic-in-time lattice on a symmetric box."""

    half_width: float
    points_per_axis: int
    time_slices: int
    period: float
    dim: int = 1

    def __post_init__(self):
        if self.points_per_axis < 16 or self.time_slices < 16:
            raise ValueError("need at least 16 spatial points per axis and 16 time slices")
        if not 1 <= self.dim <= 3:
            raise ValueError("grid supports 1 <= d <= 3")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.points_per_axis + 1)

    @property
    def dt(self) -> float:
        return self.period / self.time_slices

    @property
    def n_space(self) -> int:
        return self.points_per_axis**self.dim

    def axis(self) -> np.ndarray:
        i = np.arange(1, self.points_per_axis + 1)
        return -self.half_width + i * self.h

    def nodes(self) -> np.ndarray:
        ax = self.axis()
        grids = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def slice_times(self) -> np.ndarray:
        return self.period * np.arange(self.time_slices) / self.time_slices

    def boundary_mask(self) -> np.ndarray:
        """Marks nodes adjacent to the Dirichlet boundary (first/last index)."""
        n = self.points_per_axis
        idx = np.indices((n,) * self.dim).reshape(self.dim, -1)
        return np.any((idx == 0) | (idx == n - 1), axis=0)

    def refined(self, space_factor: int = 2, time_factor: int = 1) -> "SpaceTimeGrid":
        n_t = self.time_slices
        if time_factor > 1:
            # keep parity so the spectral time scheme stays admissible
            n_t = time_factor * (n_t - 1) + 1 if n_t % 2 == 1 else time_factor * n_t
        return SpaceTimeGrid(
            half_width=self.half_width,
            points_per_axis=space_factor * (self.points_per_axis + 1) - 1,
            time_slices=n_t,
            period=self.period,
            dim=self.dim,
        )


@dataclass(frozen=True)
class GridFunction:
    """Values of a T-periodic function on the space-time lattice."""

    grid: SpaceTimeGrid
    values: np.ndarray  # (n_t, n_space)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.time_slices, self.grid.n_space):
            raise ValueError("values must have shape (time_slices, n_space)")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function contains non-finite values")
        object.__setattr__(self, "values", vals)

    @staticmethod
    def sample(grid: SpaceTimeGrid, fn) -> "GridFunction":
        """Sample a callable u(s, X)->(n_space,) on every slice."""
        nodes = grid.nodes()
        vals = np.stack([np.asarray(fn(s, nodes), dtype=float) for s in grid.slice_times()])
        return GridFunction(grid, vals)

    def ravel(self) -> np.ndarray:
        return self.values.ravel()

    def save(self, path) -> None:
        """Same binary column format as particle ensembles: little-endian
        f64 values plus a JSON sidecar describing the lattice."""
        import json as _json
        path = Path(path)
        self.values.astype("<f8").tofile(path)
        sidecar = {
            "half_width": self.grid.half_width,
            "points_per_axis": self.grid.points_per_axis,
            "time_slices": self.grid.time_slices,
            "period": self.grid.period,
            "dim": self.grid.dim,
        }
        path.with_suffix(path.suffix + ".json").write_text(_json.dumps(sidecar, sort_keys=True))

    @staticmethod
    def load(path) -> "GridFunction":
        import json as _json
        path = Path(path)
        meta = _json.loads(path.with_suffix(path.suffix + ".json").read_text())
        grid = SpaceTimeGrid(
            half_width=meta["half_width"], points_per_axis=meta["points_per_axis"],
            time_slices=meta["time_slices"], period=meta["period"], dim=meta["dim"])
        vals = np.fromfile(path, dtype="<f8").reshape(grid.time_slices, grid.n_space)
        return GridFunction(grid, vals)


def spatial_operator(field: PeriodicCoefficientField, t: float, grid: SpaceTimeGrid) -> sp.csr_matrix:
    """Second-order FD discretization of L(t) with hybrid upwinding.

    Interior row sums vanish exactly (diagonals are assembled as the negative
    sum of the off-diagonal couplings), so constants are annihilated away
    from the Dirichlet boundary.
    """
    n = grid.points_per_axis
    d = grid.dim
    h = grid.h
    nodes = grid.nodes()
    q = np.asarray(field.q(t, nodes))        # (m, d, d)
    b = np.asarray(field.b(t, nodes))        # (m, d)
    m = grid.n_space

    strides = [n ** (d - 1 - axis) for axis in range(d)]
    idx = np.indices((n,) * d).reshape(d, -1)

    rows, cols, vals = [], [], []
    diag = np.zeros(m)

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    for axis in range(d):
        qa = q[:, axis, axis]
        ba = b[:, axis]
        pe = np.abs(ba) * h / (2.0 * qa)
        central = pe <= 2.0
        conv_low = np.where(central, -ba / (2.0 * h), np.where(ba < 0.0, -ba / h, 0.0))
        conv_up = np.where(central, ba / (2.0 * h), np.where(ba > 0.0, ba / h, 0.0))
        lower = qa / h**2 + conv_low
        upper = qa / h**2 + conv_up
        has_lower = idx[axis] > 0
        has_upper = idx[axis] < n - 1
        r_all = np.arange(m)
        add(r_all[has_lower], r_all[has_lower] - strides[axis], lower[has_lower])
        add(r_all[has_upper], r_all[has_upper] + strides[axis], upper[has_upper])
        diag -= lower + upper

    # mixed second derivatives 2 q_ab D_ab via the centered 4-point stencil
    for a_ax in range(d):
        for b_ax in range(a_ax + 1, d):
            qab = q[:, a_ax, b_ax]
            if not np.any(qab):
                continue
            coeff = qab / (2.0 * h * h)
            for sa in (-1, 1):
                for sb in (-1, 1):
                    mask = (
                        ((idx[a_ax] > 0) if sa < 0 else (idx[a_ax] < n - 1))
                        & ((idx[b_ax] > 0) if sb < 0 else (idx[b_ax] < n - 1))
                    )
                    shift = sa * strides[a_ax] + sb * strides[b_ax]
                    sign = 1.0 if sa == sb else -1.0
                    r_all = np.arange(m)[mask]
                    add(r_all, r_all + shift, sign * coeff[mask])
            # corner couplings sum to zero, so no diagonal contribution

    add(np.arange(m), np.arange(m), diag)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _cn_step(a_now, a_next, dt: float, u):
    """One Crank-Nicolson step u -> u_next (supports multiple columns)."""
    m = a_now.shape[0]
    eye = sp.identity(m, format="csr")
    rhs = (eye + 0.5 * dt * a_now) @ u
    out = spla.spsolve(sp.csc_matrix(eye - 0.5 * dt * a_next), rhs)
    if not np.all(np.isfinite(out)):
        raise SolverDivergence("Crank-Nicolson produced non-finite values")
    return out


def step_forward(
    field: PeriodicCoefficientField,
    u0: np.ndarray,
    s: float,
    t: float,
    grid: SpaceTimeGrid,
    substeps: int = 1,
    check_boundary: bool = True,
) -> np.ndarray:
    """Integrate the Cauchy problem D_t u = L(t) u from the slice u0 at s to t.

    Raises :class:`BoxTooSmall` when the initial slice carries non-negligible
    boundary values (relative to its max norm).
    """
    u0 = np.asarray(u0, dtype=float).ravel()
    if u0.shape != (grid.n_space,):
        raise ValueError("initial slice has wrong size")
    if check_boundary and np.abs(u0).max() > 0:
        edge = np.abs(u0[grid.boundary_mask()]).max()
        if edge > 1e-6 * np.abs(u0).max():
            raise BoxTooSmall(f"initial slice boundary magnitude {edge:.2e} is not negligible")
    if t < s:
        raise ValueError("step_forward requires t >= s")
    if t == s:
        return u0.copy()
    n_steps = max(1, math.ceil((t - s) / (grid.dt / substeps)))
    dt = (t - s) / n_steps
    u = u0.copy()
    a_now = spatial_operator(field, s, grid)
    for k in range(n_steps):
        a_next = spatial_operator(field, s + (k + 1) * dt, grid)
        u = _cn_step(a_now, a_next, dt, u)
        a_now = a_next
    return u


def transition_matrix(
    field: PeriodicCoefficientField,
    grid: SpaceTimeGrid,
    s: float,
    t: float,
    substeps: int = 2,
) -> np.ndarray:
    """Dense matrix of the transition operator slice map phi -> E[phi(X_t) | X_s = .].

    The map solves the terminal-value problem for phi given at time t, which
    is a forward Crank-Nicolson sweep with the coefficient clock running from
    t down to s.
    """
    m = grid.n_space
    n_steps = max(1, math.ceil((t - s) / (grid.dt / substeps)))
    dt = (t - s) / n_steps
    mat = np.eye(m)
    a_now = spatial_operator(field, t, grid)
    for k in range(n_steps):
        a_next = spatial_operator(field, t - (k + 1) * dt, grid)
        mat = _cn_step(a_now, a_next, dt, mat)
        a_now = a_next
    return mat


def time_derivative_matrix(n_t: int, period: float, scheme: str = "spectral") -> np.ndarray:
    """Periodic differentiation matrix on n_t uniform slices.

    ``spectral`` is exact for resolvable trigonometric polynomials;
    ``upwind`` is the first-order one-sided difference whose circulant
    spectrum lies in the closed left half-plane.  Row sums are forced to
    vanish so constants-in-time are annihilated exactly.
    """
    if scheme == "spectral":
        if n_t % 2 == 0:
            # even counts carry a sawtooth null vector that duplicates the
            # whole time-constant spectral branch
            raise ValueError("spectral time differencing needs an odd slice count")
        j = np.arange(n_t)
        diff = j[:, None] - j[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            mat = (np.pi / period) * (-1.0) ** diff / np.sin(np.pi * diff / n_t)
        np.fill_diagonal(mat, 0.0)
        np.fill_diagonal(mat, -mat.sum(axis=1))
        return mat
    if scheme == "upwind":
        dt = period / n_t
        mat = (-np.eye(n_t) + np.roll(np.eye(n_t), -1, axis=1)) / dt
        return mat
    raise ValueError(f"unknown time scheme {scheme!r}")


@dataclass(frozen=True)
class DiscreteGenerator:
    """Sparse space-time generator with its invariant mass vector."""

    grid: SpaceTimeGrid
    matrix: sp.csr_matrix
    rho: np.ndarray                 # (n_t * n_space,), nonnegative, sums to 1
    field_name: str
    time_scheme: str
    rho_residual: float             # ||rho^T G||_2 / ||G||_fro

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def rho_slices(self) -> np.ndarray:
        return self.rho.reshape(self.grid.time_slices, self.grid.n_space)

    def slice_density(self, j: int) -> np.ndarray:
        """Per-slice spatial density estimate of the measure at phase j."""
        masses = self.rho_slices()[j]
        return masses / masses.sum() / self.grid.h**self.grid.dim

    def export_triplets(self, path: str | Path) -> None:
        coo = self.matrix.tocoo()
        with open(path, "w") as fh:
            fh.write(f"% {self.size} {self.size} {coo.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {float(v)!r}\n")


def build_generator(
    field: PeriodicCoefficientField,
    grid: SpaceTimeGrid,
    time_scheme: str = "spectral",
) -> DiscreteGenerator:
    """Assemble the periodic space-time generator and its Perron mass vector.

    The invariant vector is computed by inverse iteration on the adjoint (the
    truncated problem is nonsingular because mass leaks through the Dirichlet
    boundary, so the eigenvalue nearest zero is a well-defined target).
    Raises :class:`PerronFailure` when the computed vector changes sign beyond
    rounding, which signals a discretization too coarse for positivity.
    """
    if grid.dim > 2:
        raise ValueError("generator assembly is limited to d <= 2")
    n_t = grid.time_slices
    blocks = [spatial_operator(field, s, grid) for s in grid.slice_times()]
    a_part = sp.block_diag(blocks, format="csr")
    d_time = sp.csr_matrix(time_derivative_matrix(n_t, grid.period, time_scheme))
    g_mat = (a_part + sp.kron(d_time, sp.identity(grid.n_space, format="csr"), format="csr")).tocsr()

    gt = sp.csc_matrix(g_mat.T)
    try:
        lu = spla.splu(gt)
    except RuntimeError as exc:  # exactly singular: shift by a tiny multiple
        shift = 1e-12 * abs(g_mat.diagonal()).max()
        lu = spla.splu(sp.csc_matrix(gt - shift * sp.identity(gt.shape[0])))
    v = np.full(g_mat.shape[0], 1.0 / g_mat.shape[0])
    for _ in range(200):
        w = lu.solve(v)
        w = w / np.abs(w).sum()
        if np.abs(w - v).max() <= 1e-14 or np.abs(w + v).max() <= 1e-14:
            v = w
            break
        v = w
    if v.sum() < 0:
        v = -v
    neg_mass = -v[v < 0].sum()
    if neg_mass > 1e-4 or v.min() < -1e-3 * v.max():
        raise PerronFailure(
            f"invariant vector has sign changes (negative mass {neg_mass:.2e}, "
            f"min {v.min():.2e} vs max {v.max():.2e})"
        )
    v = np.clip(v, 0.0, None)
    v = v / v.sum()
    residual = float(np.linalg.norm(g_mat.T @ v) / spla.norm(g_mat))
    return DiscreteGenerator(
        grid=grid,
        matrix=g_mat,
        rho=v,
        field_name=field.name,
        time_scheme=time_scheme,
        rho_residual=residual,
    )


@dataclass(frozen=True)
class SpectrumReport:
    """Right-most spectrum of the discrete generator."""

    eigenvalues: np.ndarray          # sorted by real part, descending
    axis_cluster: list               # [(k, eigenvalue), ...] matched to 2 pi i k / T
    gap_estimate: float              # max Re over eigenvalues outside the cluster
    residuals: np.ndarray            # residual norms of the reported leading pairs
    cluster_tol: float
    method: str

    def leading(self, m: int) -> np.ndarray:
        return self.eigenvalues[:m]

    def to_jsonable(self) -> dict:
        return {
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "axis_cluster": [[int(k), z.real, z.imag] for k, z in self.axis_cluster],
            "gap_estimate": self.gap_estimate,
            "residuals": self.residuals.tolist(),
            "method": self.method,
        }


def _eig_residuals(g_mat: sp.csr_matrix, eigs: np.ndarray, n: int) -> np.ndarray:
    """Residual norms via one shifted inverse iteration per reported eigenvalue."""
    out = np.empty(len(eigs))
    eye = sp.identity(n, format="csc", dtype=complex)
    scale = spla.norm(g_mat)
    for i, lam in enumerate(eigs):
        shift = lam + 1e-8 * (1.0 + abs(lam))
        try:
            lu = spla.splu(sp.csc_matrix(g_mat.astype(complex) - shift * eye))
            v = lu.solve(np.random.default_rng(7).standard_normal(n) + 0j)
            for _ in range(2):
                v = lu.solve(v / np.linalg.norm(v))
            v = v / np.linalg.norm(v)
            out[i] = np.linalg.norm(g_mat @ v - lam * v) / scale
        except RuntimeError:
            out[i] = np.nan
    return out


def spectrum(
    gen: DiscreteGenerator,
    k: int = 25,
    cluster_tol: float = 1e-3,
    dense_cutoff: int = 4500,
    sigma_targets: tuple = (),
    with_residuals: bool = False,
) -> SpectrumReport:
    """Right-most eigenvalues of the generator and the axis-cluster split.

    Dense solves below ``dense_cutoff`` unknowns; otherwise shift-inverted
    Arnoldi around 0, +-2 pi i / T, and any extra ``sigma_targets``.  The
    cluster is matched against the expected axis points ``2 pi i k / T`` for
    every resolvable k; the spectral-gap estimate is the largest real part
    outside the matched cluster.
    """
    g_mat = gen.matrix
    n = gen.size
    if n <= dense_cutoff:
        try:
            eigs = scipy.linalg.eigvals(g_mat.toarray())
        except Exception as exc:
            raise EigSolverFailure(str(exc)) from exc
        method = "dense"
    else:
        w = 2.0 * np.pi / gen.grid.period
        targets = [0.25, 0.25 + 1j * w, 0.25 - 1j * w, *sigma_targets]
        found = []
        for sigma in targets:
            try:
                vals = spla.eigs(
                    g_mat.astype(complex), k=min(k, n - 2), sigma=sigma,
                    return_eigenvectors=False,
                )
            except Exception as exc:
                raise EigSolverFailure(f"shift-invert at {sigma}: {exc}") from exc
            found.append(vals)
        eigs = np.concatenate(found)
        keep = []
        for z in eigs:
            if not any(abs(z - y) < 1e-9 * (1 + abs(z)) for y in keep):
                keep.append(z)
        eigs = np.array(keep)
        method = "shift-invert"

    # rounded-Re descending, then |Im| ascending: ladder bases come first
    order = np.lexsort((eigs.imag, np.abs(eigs.imag), -np.round(eigs.real, 3)))
    eigs = eigs[order]

    n_t = gen.grid.time_slices
    max_k = (n_t - 1) // 2 if n_t % 2 == 1 else n_t // 2 - 1
    w0 = 2.0 * np.pi / gen.grid.period
    cluster = []
    used = np.zeros(len(eigs), dtype=bool)
    for kk in range(-max_k, max_k + 1):
        target = 1j * w0 * kk
        dist = np.abs(eigs - target)
        dist[used] = np.inf
        j = int(np.argmin(dist))
        if dist[j] <= cluster_tol:
            cluster.append((kk, complex(eigs[j])))
            used[j] = True
    outside = eigs[~used]
    gap = float(outside.real.max()) if len(outside) else -np.inf

    leading = eigs[: min(k, len(eigs))]
    residuals = (
        _eig_residuals(g_mat, leading[: min(5, len(leading))], n)
        if with_residuals
        else np.zeros(0)
    )
    return SpectrumReport(
        eigenvalues=eigs,
        axis_cluster=cluster,
        gap_estimate=gap,
        residuals=residuals,
        cluster_tol=cluster_tol,
        method=method,
    )


def one_period_propagator(
    field: PeriodicCoefficientField,
    grid: SpaceTimeGrid,
    start_phase: float = 0.0,
    substeps: int = 2,
) -> np.ndarray:
    """Dense one-period transition slice map starting at the given phase."""
    return transition_matrix(field, grid, start_phase, start_phase + grid.period, substeps)


def spectral_mapping_check(
    gen: DiscreteGenerator,
    field: PeriodicCoefficientField,
    grid: SpaceTimeGrid,
    m_leading: int = 5,
    m_nonaxis: int = 3,
    substeps: int = 4,
    report: SpectrumReport | None = None,
) -> dict:
    """Compare exp(T * lambda_j) against the one-period propagator spectrum.

    Checks the ``m_leading`` right-most generator eigenvalues plus the
    ``m_nonaxis`` right-most eigenvalues outside the axis cluster (the axis
    points all map to the multiplier 1, so the non-axis rows carry the
    information).  Returns the worst relative mismatch and per-row details.
    """
    if report is None:
        report = spectrum(gen)
    mono = one_period_propagator(field, grid, float(grid.slice_times()[0]), substeps)
    mults = np.linalg.eigvals(mono)
    cluster_set = [z for _, z in report.axis_cluster]

    def mismatch(lam: complex) -> float:
        target = np.exp(grid.period * lam)
        return float(np.abs(mults - target).min() / max(abs(target), 1e-12))

    rows = []
    for lam in report.leading(m_leading):
        rows.append({"lambda": complex(lam), "kind": "leading", "mismatch": mismatch(lam)})
    # only low-frequency ladder members test the mapping: near-Nyquist
    # collocation modes carry the time-discretization phase error instead
    w0 = 2.0 * np.pi / grid.period
    nonaxis = [
        z for z in report.eigenvalues
        if not any(abs(z - c) < 1e-12 for c in cluster_set)
        and abs(z.imag) <= (m_nonaxis // 2 + 1) * w0
    ]
    for lam in nonaxis[:m_nonaxis]:
        rows.append({"lambda": complex(lam), "kind": "non-axis", "mismatch": mismatch(lam)})
    worst = max(r["mismatch"] for r in rows) if rows else np.nan
    return {"worst_mismatch": worst, "rows": rows}


def discrete_projection(u: GridFunction, gen: DiscreteGenerator) -> GridFunction:
    """Replace every slice by its invariant-weighted spatial average.

    Idempotent by construction: slices that are already constant are returned
    unchanged, so applying the projection twice is exact.
    """
    masses = gen.rho_slices()
    out = np.empty_like(u.values)
    for j in range(u.grid.time_slices):
        row = u.values[j]
        if row.max() == row.min():
            out[j] = row
            continue
        w = masses[j]
        out[j] = float(np.dot(w, row) / w.sum())
    return GridFunction(u.grid, out)


def gradient_slices(u: GridFunction) -> np.ndarray:
    """Centered spatial gradient per slice with Dirichlet zero padding: (n_t, n_sp, d)."""
    g = u.grid
    n = g.points_per_axis
    shape = (g.time_slices,) + (n,) * g.dim
    vals = u.values.reshape(shape)
    out = np.zeros(shape + (g.dim,))
    for axis in range(g.dim):
        padded = np.moveaxis(vals, 1 + axis, -1)
        ext = np.concatenate(
            [np.zeros(padded.shape[:-1] + (1,)), padded, np.zeros(padded.shape[:-1] + (1,))], axis=-1
        )
        der = (ext[..., 2:] - ext[..., :-2]) / (2.0 * g.h)
        out[..., axis] = np.moveaxis(der, -1, 1 + axis)
    return out.reshape(g.time_slices, g.n_space, g.dim)


def carre_du_champ_residual(
    gen: DiscreteGenerator, field: PeriodicCoefficientField, u: GridFunction
) -> float:
    """|sum rho (u G u) + sum rho <Q grad_h u, grad_h u>| for a grid function.

    Both terms are evaluated with the generator's own mass vector, so the
    exact space-time integration-by-parts identity holds up to the
    discretization defect, which is second order for smooth compactly
    supported data.
    """
    g_u = (gen.matrix @ u.ravel()).reshape(u.values.shape)
    grads = gradient_slices(u)
    nodes = u.grid.nodes()
    rho = gen.rho_slices()
    total = 0.0
    for j, s in enumerate(u.grid.slice_times()):
        q = np.asarray(field.q(s, nodes))
        qgrad = np.einsum("mij,mj->mi", q, grads[j])
        total += np.dot(rho[j], u.values[j] * g_u[j] + np.einsum("mi,mi->m", qgrad, grads[j]))
    return abs(float(total))


def mass_outside_box(grid: SpaceTimeGrid, positions: np.ndarray) -> float:
    """Empirical measure mass outside the truncation box (tightness check)."""
    outside = np.any(np.abs(np.asarray(positions)) > grid.half_width, axis=1)
    return float(outside.mean())


def solvability_residual(gen: DiscreteGenerator, f: np.ndarray, rcond: float = 1e-10):
    """Least-squares residual of G u = f in the invariant-mass geometry.

    The invariant functional is the one direction the range of G cannot
    reach: it is deflated explicitly (its unit left vector in the weighted
    frame is sqrt(rho), since rho^T G vanishes), the orthogonal complement is
    solved by truncated least squares, and the residual recombines both
    parts.  Mean-zero data is solvable up to discretization roundoff, while
    data with rho-mean m leaves a residual pinned at |m|.

    Returns ``(residual, mean)`` with both quantities in the L^2(rho) frame.
    """
    f = np.asarray(f, dtype=float).ravel()
    w = np.sqrt(gen.rho)
    a_mat = gen.matrix.toarray() * w[:, None]
    b_vec = w * f
    nu = w / np.linalg.norm(w)
    coef = float(nu @ b_vec)
    b_perp = b_vec - coef * nu
    sol, _, _, _ = np.linalg.lstsq(a_mat, b_perp, rcond=rcond)
    r_perp = float(np.linalg.norm(a_mat @ sol - b_perp))
    mean = float(np.dot(gen.rho, f))
    return math.hypot(r_perp, coef), mean
