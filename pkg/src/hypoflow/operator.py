"""Discrete sub-Laplacian, heat semigroup and heat-kernel harnesses.

Horizontal derivatives are skew-symmetrised central differences
``D_i = 1/2 sum_c (A_i^c D^c + D^c A_i^c)``, so ``L = sum_i D_i D_i`` is
symmetric negative semidefinite by construction whenever the frame is
divergence free.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, DataError, RangeError, SolverError
from .manifold import SubRiemannianFixture, Wrap, coordinate_divergence, horizontal_drift

# one-sided stencil weights (offset -> weight * h); the negative side is antisymmetric
STENCILS = {
    2: {1: 1.0 / 2.0},
    4: {1: 8.0 / 12.0, 2: -1.0 / 12.0},
}
DEFAULT_ORDER = 4
CG_RTOL = 1e-10
EPS_MONO = 1e-8
DRIFT_TOL = 1e-12
DEFAULT_HEAT_DT = 5e-5
MAX_HEAT_STEPS = 2000


class RangeWarning(UserWarning):
    pass


def central_difference(grid, axis: int, order: int = DEFAULT_ORDER) -> sp.csr_matrix:
    """Periodic central difference along ``axis`` honouring the grid's wrap rule."""
    if order not in STENCILS:
        raise AssemblyError(f"unsupported difference order {order}")
    n_axis = grid.dims[axis]
    reach = max(STENCILS[order])
    if n_axis <= 2 * reach:
        raise AssemblyError(f"axis {axis} has {n_axis} nodes, too few for order {order}")
    if grid.wrap is Wrap.TWIST and grid.dims[1] != grid.dims[2]:
        raise AssemblyError("twisted wrap requires dims_y == dims_z")
    h = grid.spacing[axis]
    N = grid.size
    rows, cols, vals = [], [], []
    for off, w in STENCILS[order].items():
        for s in (off, -off):
            rows.append(np.arange(N))
            cols.append(grid.shift(axis, s))
            vals.append(np.full(N, np.sign(s) * w / h))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    return mat.tocsr()


def _skew_field_operator(coeffs: np.ndarray, diffs) -> sp.csr_matrix:
    """``1/2 sum_c (A^c D^c + D^c A^c)`` for sampled coefficients ``coeffs`` of shape (3, N)."""
    N = coeffs.shape[1]
    out = sp.csr_matrix((N, N))
    for c in range(3):
        a = coeffs[c]
        if not np.any(a):
            continue
        A = sp.diags(a)
        out = out + 0.5 * (A @ diffs[c] + diffs[c] @ A)
    return out.tocsr()


def _plain_field_operator(coeffs: np.ndarray, diffs) -> sp.csr_matrix:
    N = coeffs.shape[1]
    out = sp.csr_matrix((N, N))
    for c in range(3):
        if np.any(coeffs[c]):
            out = out + sp.diags(coeffs[c]) @ diffs[c]
    return out.tocsr()


def _coordinate_differences(fixture, order):
    return [central_difference(fixture.grid, c, order) for c in range(3)]


def assemble_horizontal_derivatives(fixture: SubRiemannianFixture, order: int = DEFAULT_ORDER):
    """Skew-symmetric discretisations ``D_i`` of the horizontal frame fields."""
    diffs = _coordinate_differences(fixture, order)
    return [_skew_field_operator(a, diffs) for a in fixture.samples["horizontal"]]


def assemble_vertical_derivatives(fixture: SubRiemannianFixture, order: int = DEFAULT_ORDER):
    diffs = _coordinate_differences(fixture, order)
    return [_skew_field_operator(a, diffs) for a in fixture.samples["vertical"]]


@dataclass
class SparseOperator:
    """Sub-Laplacian matrix on grid nodes with uniform volume weight ``h^3``."""

    matrix: sp.csr_matrix
    weight: float
    symmetric: bool
    derivatives: list = field(repr=False)
    vertical: list = field(repr=False)
    drift: bool = False
    _rho: float | None = field(default=None, repr=False)
    _solvers: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def spectral_radius(self, iterations: int = 60, seed: int = 0) -> float:
        """Power-iteration estimate of ``rho(L)``."""
        if self._rho is None:
            rng = np.random.default_rng(seed)
            v = rng.standard_normal(self.size)
            v -= v.mean()
            lam = 0.0
            for _ in range(iterations):
                w = self.matrix @ v
                lam = float(np.linalg.norm(w) / np.linalg.norm(v))
                v = w / np.linalg.norm(w)
            # power iteration underestimates; pad by 5%
            self._rho = 1.05 * lam
        return self._rho

    def explicit_dt_limit(self) -> float:
        return 0.9 * 2.0 / self.spectral_radius()

    def implicit_solver(self, dt: float, method: str = "cg"):
        key = (float(dt), method)
        if key not in self._solvers:
            self._solvers[key] = ImplicitSolver(self, dt, method)
        return self._solvers[key]

    def horizontal_gradient_norm(self, values: np.ndarray) -> np.ndarray:
        """``|nabla^H u|`` per node for scalar (N,) or vector-valued (N, K) fields."""
        sq = 0.0
        for D in self.derivatives:
            g = D @ values
            sq = sq + (g * g if g.ndim == 1 else np.sum(g * g, axis=1))
        return np.sqrt(sq)


def assemble_sub_laplacian(fixture: SubRiemannianFixture, order: int = DEFAULT_ORDER) -> SparseOperator:
    """Assemble ``L = sum_i D_i D_i - drift``.

    Divergence-free frames (both shipped fixtures) give the symmetric form.
    A frame with nonzero drift ``b = sum_i nabla^B_{e_i} e_i + zeta`` is
    discretised as ``sum_i P_i P_i - sum_k b_k P_k`` with plain directional
    differences ``P_i``; the skew ``D_i`` would carry a spurious half
    divergence there.
    """
    Ds = assemble_horizontal_derivatives(fixture, order)
    Vs = assemble_vertical_derivatives(fixture, order)
    b = horizontal_drift(fixture)
    div = coordinate_divergence(fixture)[: fixture.frame.m]
    has_drift = bool(np.abs(b).max() > DRIFT_TOL or np.abs(div).max() > DRIFT_TOL)
    if not has_drift:
        L = sum((D @ D for D in Ds), sp.csr_matrix(Ds[0].shape))
        L = (0.5 * (L + L.T)).tocsr()
        return SparseOperator(L, fixture.h3, True, Ds, Vs)
    diffs = _coordinate_differences(fixture, order)
    Ps = [_plain_field_operator(a, diffs) for a in fixture.samples["horizontal"]]
    L = sum((P @ P for P in Ps), sp.csr_matrix(Ps[0].shape))
    for k, P in enumerate(Ps):
        L = L - sp.diags(b[k]) @ P
    return SparseOperator(L.tocsr(), fixture.h3, False, Ps, Vs, drift=True)


class ImplicitSolver:
    """Solves ``(I - dt L) x = b`` column by column.

    ``cg`` starts from ``x0 = b`` so every Krylov correction has zero sum and
    the mass ``sum(x) h^3`` matches ``sum(b) h^3`` up to rounding.
    """

    def __init__(self, op: SparseOperator, dt: float, method: str = "cg"):
        self.dt = float(dt)
        self.method = method
        N = op.size
        self.A = (sp.identity(N, format="csr") - self.dt * op.matrix).tocsr()
        if method == "direct":
            self._lu = spla.splu(self.A.tocsc())
        elif method == "cg":
            if not op.symmetric:
                self.method = "bicgstab"
        else:
            raise ValueError(f"unknown solver {method!r}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.method == "direct":
            return self._lu.solve(rhs)
        if rhs.ndim == 2:
            return np.column_stack([self._solve1(rhs[:, k]) for k in range(rhs.shape[1])])
        return self._solve1(rhs)

    def _solve1(self, b):
        if not np.any(b):
            return np.zeros_like(b)
        routine = spla.cg if self.method == "cg" else spla.bicgstab
        x, info = routine(self.A, b, x0=b.copy(), rtol=CG_RTOL, atol=0.0, maxiter=10 * b.size)
        if info != 0:
            raise SolverError(f"{self.method} did not converge (info={info})")
        return x


def _heat_steps(t, dt):
    if dt is None:
        nsteps = min(max(math.ceil(t / DEFAULT_HEAT_DT - 1e-9), 1), MAX_HEAT_STEPS)
    else:
        nsteps = max(math.ceil(t / dt - 1e-9), 1)
    return nsteps, t / nsteps


def heat_apply(op: SparseOperator, values: np.ndarray, t: float, scheme: str = "SemiImplicitSteps",
               dt: float | None = None, solver: str = "cg") -> np.ndarray:
    """Approximate ``exp(t L) values``."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DataError("heat_apply received non-finite input")
    if t < 0:
        raise RangeError(f"t must be >= 0, got {t}")
    if t == 0:
        return values.copy()
    if scheme == "KrylovExp":
        return spla.expm_multiply(op.matrix * t, values)
    if scheme != "SemiImplicitSteps":
        raise ValueError(f"unknown heat scheme {scheme!r}")
    nsteps, step = _heat_steps(t, dt)
    S = op.implicit_solver(step, solver)
    u = values
    for _ in range(nsteps):
        u = S.solve(u)
    return u


@dataclass
class KernelColumn:
    source: int
    t: float
    values: np.ndarray = field(repr=False)
    mass: float
    min: float
    gradient: np.ndarray = field(repr=False)


def delta(op: SparseOperator, source: int) -> np.ndarray:
    d = np.zeros(op.size)
    d[source] = 1.0 / op.weight
    return d


def heat_kernel_column(op: SparseOperator, source: int, t: float, scheme: str = "SemiImplicitSteps",
                       dt: float | None = None, solver: str = "direct") -> KernelColumn:
    """``K(source, ., t)`` from a unit-mass discrete delta."""
    if t <= 0:
        raise RangeError(f"heat kernel needs t > 0, got {t}")
    vals = heat_apply(op, delta(op, source), t, scheme, dt, solver)
    return KernelColumn(
        source=int(source),
        t=float(t),
        values=vals,
        mass=float(vals.sum() * op.weight),
        min=float(vals.min()),
        gradient=op.horizontal_gradient_norm(vals),
    )


@dataclass
class KernelReport:
    rows: list  # dicts: t, mass, min, diag_product, grad_integral
    max_product: float
    product_variation: float
    grad_exponent: float
    spectral: dict

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.max_product))


def kernel_bound_check(op: SparseOperator, distances: np.ndarray, t_grid, source: int = 0,
                       dt: float = 2.5e-4, solver: str = "direct") -> KernelReport:
    """Diagonal-bound and gradient-integral diagnostics for one source node.

    ``distances`` are CC distances from ``source`` (see ``ccgeom``); the
    ball volume ``w(x, sqrt t)`` is their sub-level count times ``h^3``.
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    if t_grid[0] <= 0:
        raise RangeError("t grid must be positive")
    if t_grid[-1] >= 1.0:
        warnings.warn("heat kernel bounds are only asserted for t < 1", RangeWarning, stacklevel=2)
    S = op.implicit_solver(dt, solver)
    u = delta(op, source)
    t_now, integral = 0.0, 0.0
    g_prev = float(op.horizontal_gradient_norm(u).sum() * op.weight)
    rows = []
    for target in t_grid:
        while t_now < target - 1e-12:
            step = min(dt, target - t_now)
            solver_k = S if abs(step - dt) < 1e-15 else op.implicit_solver(step, solver)
            u = solver_k.solve(u)
            g_now = float(op.horizontal_gradient_norm(u).sum() * op.weight)
            integral += 0.5 * step * (g_prev + g_now)
            g_prev = g_now
            t_now += step
        w = float(np.count_nonzero(distances < math.sqrt(target)) * op.weight)
        rows.append({
            "t": float(target),
            "mass": float(u.sum() * op.weight),
            "min": float(u.min()),
            "diag_product": float(u[source] * w),
            "grad_integral": integral,
        })
    window = [r for r in rows if r["t"] <= 0.5 * t_grid[-1]] or rows
    products = np.array([r["diag_product"] for r in window])
    positive = products[products > 0]
    variation = float(positive.max() / positive.min()) if positive.size else math.inf
    tt = np.array([r["t"] for r in rows])
    gi = np.array([r["grad_integral"] for r in rows])
    slope = float(np.polyfit(np.log(tt), np.log(gi), 1)[0]) if len(rows) > 1 else math.nan
    return KernelReport(rows, float(products.max()), variation, slope, spectral_report(op))


def spectral_report(op: SparseOperator) -> dict:
    """Two smallest eigenvalues of ``-L`` and the spectral-radius estimate."""
    A = -op.matrix
    if op.symmetric:
        lo = np.sort(spla.eigsh(A, k=2, which="SA", tol=1e-12, return_eigenvectors=False))
    elif op.size <= 1500:
        lo = np.sort(np.linalg.eigvals(A.toarray()).real)[:2]
    else:
        lo = np.sort(spla.eigs(A, k=2, which="SR", return_eigenvectors=False).real)
    return {"lambda0": float(lo[0]), "lambda1": float(lo[1]), "rho": op.spectral_radius()}


@dataclass
class MaximumPrincipleReport:
    times: np.ndarray
    sups: np.ndarray
    sup_initial: float
    worst_excess: float  # max_t sup phi(t) - sup phi0
    worst_step_increase: float
    mean_value_product: float | None
    passed: bool


def maximum_principle_check(op: SparseOperator, phi0: np.ndarray, T: float, dt: float = 1e-3,
                            drive=None, Q: int = 4, eps: float = EPS_MONO,
                            solver: str = "cg") -> MaximumPrincipleReport:
    """Evolve ``phi_t = L phi - drive(x, t)`` semi-implicitly and audit its supremum.

    ``drive`` (nonnegative) turns the solution into a strict subsolution of
    ``(L - d/dt) phi >= 0``.
    """
    if T <= 0:
        raise RangeError("T must be positive")
    nsteps, step = _heat_steps(T, dt)
    S = op.implicit_solver(step, solver)
    phi = np.asarray(phi0, dtype=float).copy()
    sup0 = float(phi.max())
    times, sups = [0.0], [sup0]
    for n in range(1, nsteps + 1):
        rhs = phi if drive is None else phi - step * drive(n * step)
        phi = S.solve(rhs)
        times.append(n * step)
        sups.append(float(phi.max()))
    times, sups = np.array(times), np.array(sups)
    excess = float((sups - sup0).max())
    step_inc = float(np.diff(sups).max()) if len(sups) > 1 else 0.0
    mvp = None
    mass0 = float(np.sum(phi0) * op.weight)
    if np.all(np.asarray(phi0) >= 0) and mass0 > 0:
        mvp = float(np.max(sups[1:] * times[1:] ** (Q / 2.0)) / mass0)
    return MaximumPrincipleReport(times, sups, sup0, excess, step_inc, mvp,
                                  passed=excess <= eps and step_inc <= eps)
