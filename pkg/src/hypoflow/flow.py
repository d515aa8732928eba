"""Subelliptic harmonic map heat flow ``u_t = L u - sum_i Pi''(D_i u, D_i u)`` and its diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, HomotopyError, RangeError
from .manifold import SubRiemannianFixture, Wrap
from .operator import EPS_MONO, SparseOperator, assemble_sub_laplacian, heat_apply
from .target import (
    CurvatureClass,
    TargetManifold,
    angles,
    from_angles,
    geodesic_distance,
    hessian_contraction,
    projection_jacobian,
    on_manifold,
    project,
    tube_defect,
    winding_numbers,
    wrap_angle,
)

TWO_PI = 2.0 * np.pi
SCHEMES = ("ExplicitProjected", "SemiImplicitProjected", "AmbientUnprojected")
BLOWUP_FACTOR = 1e6
DEFAULT_IMPLICIT_DT = 1e-3


@dataclass
class MapField:
    fixture: SubRiemannianFixture = field(repr=False)
    target: TargetManifold
    values: np.ndarray = field(repr=False)
    op: SparseOperator | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.fixture.grid.size, self.target.K):
            raise ConfigurationError(
                f"map values must have shape {(self.fixture.grid.size, self.target.K)}, got {self.values.shape}"
            )
        if self.op is None:
            self.op = assemble_sub_laplacian(self.fixture)

    @property
    def on_manifold(self) -> bool:
        return on_manifold(self.target, self.values)

    def with_values(self, values) -> "MapField":
        return MapField(self.fixture, self.target, values, self.op)


@dataclass(frozen=True)
class Perturbation:
    amplitude: float
    mode: tuple = (0, 1, 0)
    phase: float = 0.0
    seed: int | None = None

    def resolved(self) -> "Perturbation":
        """Draw wavevector and phase from ``seed`` when ``mode == 'random'``."""
        if self.mode != "random":
            return self
        rng = np.random.default_rng(self.seed)
        k = tuple(int(v) for v in rng.integers(-2, 3, size=2)) + (0,)
        if k == (0, 0, 0):
            k = (0, 1, 0)
        return Perturbation(self.amplitude, k, float(rng.uniform(0, TWO_PI)), self.seed)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        p = self.resolved()
        k = np.asarray(p.mode, dtype=float)
        return p.amplitude * np.sin(TWO_PI * pts @ k + p.phase)


def _check_periodic(fixture, windings, pert):
    if fixture.grid.wrap is Wrap.TWIST:
        if any(w[2] != 0 for w in windings):
            raise ConfigurationError(
                "a z-winding is not well defined on the Heisenberg quotient; only (a, b) windings are supported"
            )
        if pert is not None and pert.resolved().mode[2] != 0:
            raise ConfigurationError("perturbation modes on the Heisenberg quotient must have zero z-frequency")


def affine_angles(fixture: SubRiemannianFixture, windings) -> np.ndarray:
    """``2 pi (a x + b y + c z)`` per circle factor, shape (N, factors)."""
    pts = fixture.samples["points"]
    return np.column_stack([TWO_PI * pts @ np.asarray(w, dtype=float) for w in windings])


def _normalise_windings(target, windings):
    w = np.atleast_2d(np.asarray(windings, dtype=int))
    if w.shape[1] != 3:
        raise ConfigurationError("windings must be (a, b, c) triples")
    need = max(target.circle_factors, 1)
    if w.shape[0] != need:
        raise ConfigurationError(f"{target.kind} needs {need} winding triple(s), got {w.shape[0]}")
    return [tuple(int(v) for v in row) for row in w]


def initial_angles(fixture, target, windings, perturbation: Perturbation | None = None) -> np.ndarray:
    """Lifted angles of a winding map plus an optional perturbation (same for every factor)."""
    windings = _normalise_windings(target, windings)
    _check_periodic(fixture, windings, perturbation)
    theta = affine_angles(fixture, windings)
    if perturbation is not None:
        theta = theta + perturbation(fixture.samples["points"])[:, None]
    return theta


def winding_map(fixture, target, windings, perturbation: Perturbation | None = None,
                op: SparseOperator | None = None) -> MapField:
    """Circle/torus: ``e^{i theta}`` per factor. Sphere2: equator loop tilted by the perturbation."""
    theta = initial_angles(fixture, target, windings, perturbation if target.kind != "Sphere2" else None)
    if target.kind == "Sphere2":
        psi = np.zeros(fixture.grid.size) if perturbation is None else perturbation(fixture.samples["points"])
        phi = theta[:, 0]
        vals = np.column_stack([np.cos(phi) * np.cos(psi), np.sin(phi) * np.cos(psi), np.sin(psi)])
    else:
        vals = from_angles(target, theta)
    return MapField(fixture, target, vals, op)


def constant_map(fixture, target, point, op: SparseOperator | None = None) -> MapField:
    p = project(target, np.asarray(point, dtype=float))
    return MapField(fixture, target, np.tile(p, (fixture.grid.size, 1)), op)


def _nonlinearity(u: MapField, values=None):
    """``sum_i Pi''(g_i, g_i)`` with ``g_i = Pi'(u) D_i u``.

    The chain rule ``nabla u = Pi'(u) nabla u`` holds exactly for maps into
    ``N``; feeding the raw difference quotients instead lets their small
    normal part act as a tangential anti-diffusion that destabilises
    discrete harmonic maps.
    """
    values = u.values if values is None else values
    J = projection_jacobian(u.target, values)
    total = 0.0
    for D in u.op.derivatives:
        g = np.einsum("nab,nb->na", J, D @ values)
        total = total + hessian_contraction(u.target, values, g, g)
    return total


def tension_field(u: MapField) -> np.ndarray:
    """``L u^a - Pi^a_bc sum_i D_i u^b D_i u^c`` per node (ambient form of the flow's right side)."""
    return u.op.matrix @ u.values - _nonlinearity(u)


def intrinsic_tension(u: MapField) -> np.ndarray:
    """Tangential part ``Pi'(u)`` of the ambient tension: the image of ``tau_H`` in ``R^K``."""
    J = projection_jacobian(u.target, u.values)
    return np.einsum("nab,nb->na", J, tension_field(u))


def energy_densities(u: MapField):
    eH = 0.5 * sum(np.sum((D @ u.values) ** 2, axis=1) for D in u.op.derivatives)
    eV = 0.5 * sum(np.sum((V @ u.values) ** 2, axis=1) for V in u.op.vertical)
    return eH, eV, eH + eV


def energies(u: MapField):
    eH, eV, e = energy_densities(u)
    h3 = u.fixture.h3
    EH, EV = float(eH.sum() * h3), float(eV.sum() * h3)
    return (EH, EV, EH + EV), (eH, eV, e)


@dataclass
class FlowConfig:
    scheme: str = "SemiImplicitProjected"
    dt: float | str = "auto"
    T_max: float = 50.0
    tol_stop: float | None = None  # default 1e-10 * node count
    stride: int = 1
    min_steps: int = 0
    solver: str = "cg"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.tol_stop is not None and self.tol_stop <= 0:
            raise ConfigurationError("tol_stop must be positive")
        if self.stride < 1:
            raise ConfigurationError("stride must be >= 1")
        if self.T_max < 0:
            raise ConfigurationError("T_max must be >= 0")

    def tolerance(self, n_nodes: int) -> float:
        return 1e-10 * n_nodes if self.tol_stop is None else float(self.tol_stop)

    def resolve_dt(self, op: SparseOperator) -> float:
        explicit = self.scheme != "SemiImplicitProjected"
        limit = op.explicit_dt_limit()
        if self.dt == "auto":
            return 0.5 * limit if explicit else DEFAULT_IMPLICIT_DT
        dt = float(self.dt)
        if dt <= 0:
            raise RangeError("dt must be positive")
        if explicit and dt > limit:
            raise RangeError(f"dt={dt:.3g} exceeds the explicit stability limit {limit:.3g}")
        return dt


def step(u: MapField, dt: float, scheme: str, solver: str = "cg") -> MapField:
    if scheme == "SemiImplicitProjected":
        rhs = u.values - dt * _nonlinearity(u)
        new = u.op.implicit_solver(dt, solver).solve(rhs)
        return u.with_values(project(u.target, new))
    new = u.values + dt * tension_field(u)
    if scheme == "ExplicitProjected":
        new = project(u.target, new)
    elif scheme != "AmbientUnprojected":
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    return u.with_values(new)


@dataclass
class DiagnosticsRecord:
    t: float
    E_H: float
    E_V: float
    E: float
    tension_norm2: float
    sup_e: float
    sup_ut2: float
    tube_defect: float
    windings: tuple

    CSV_COLUMNS = ("t", "E_H", "E_V", "E", "tension_norm2", "sup_e", "sup_ut2", "tube_defect",
                   "winding_a", "winding_b", "winding_c")

    def row(self) -> list:
        w = list(self.windings[:3]) + [0] * (3 - len(self.windings[:3]))
        return [self.t, self.E_H, self.E_V, self.E, self.tension_norm2, self.sup_e, self.sup_ut2,
                self.tube_defect] + w


def diagnostics(u: MapField, t: float, sup_ut2: float) -> DiagnosticsRecord:
    (EH, EV, _), (_, _, e) = energies(u)
    tau = intrinsic_tension(u)
    return DiagnosticsRecord(
        t=float(t),
        E_H=EH,
        E_V=EV,
        E=EH + EV,
        tension_norm2=float(np.sum(tau * tau) * u.fixture.h3),
        sup_e=float(e.max()),
        sup_ut2=float(sup_ut2),
        tube_defect=tube_defect(u.target, u.values, u.fixture.h3),
        windings=winding_numbers(u.target, u.values, u.fixture.grid),
    )


@dataclass
class FlowTrajectory:
    records: list
    final: MapField = field(repr=False)
    stop_reason: str
    dt: float
    config: FlowConfig
    steps: int
    harmonic: bool = False
    reference_distance: float | None = None

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


def run_flow(u0: MapField, config: FlowConfig, reference: MapField | None = None,
             observer=None) -> FlowTrajectory:
    """Step until ``tension_norm2 < tol`` or ``t >= T_max``; record every ``stride`` steps.

    ``sup_ut2`` is a backward difference of stored slices; the record at
    ``t = 0`` borrows the first forward difference.
    """
    if config.scheme != "AmbientUnprojected" and not u0.on_manifold:
        raise RangeError("initial map is not on the target")
    dt = config.resolve_dt(u0.op)
    tol = config.tolerance(u0.fixture.grid.size)
    u, t, steps = u0, 0.0, 0
    pending = diagnostics(u0, 0.0, math.nan)
    sup_e0 = pending.sup_e
    guard = BLOWUP_FACTOR * max(sup_e0, 1e-300)
    records: list[DiagnosticsRecord] = []
    reason = None

    def done(rec):
        if steps >= config.min_steps and rec.tension_norm2 < tol:
            return "tension_tol"
        if t >= config.T_max - 1e-12:
            return "t_max"
        if rec.sup_e > guard:
            return "blowup"
        return None

    reason = done(pending)
    if reason is not None:
        pending.sup_ut2 = 0.0
        records.append(pending)
    while reason is None:
        prev = u
        u = step(u, dt, config.scheme, config.solver)
        steps += 1
        t = steps * dt
        ut2 = float(np.max(np.sum((u.values - prev.values) ** 2, axis=1)) / dt**2)
        if pending is not None:
            pending.sup_ut2 = ut2
            records.append(pending)
            pending = None
        if observer is not None:
            observer(steps, t, u)
        rec = diagnostics(u, t, ut2)
        reason = done(rec)
        if steps % config.stride == 0 or reason is not None:
            records.append(rec)
    traj = FlowTrajectory(records, u, reason, dt, config, steps, harmonic=reason == "tension_tol")
    if reference is not None:
        traj.reference_distance = float(np.max(geodesic_distance(u.target, u.values, reference.values)))
    return traj


def lift_in_time(previous: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Continue lifted angles ``previous`` to the wrapped angles ``current``."""
    return previous + wrap_angle(current - previous)


def linear_angle_flow(u0: MapField, theta0: np.ndarray, windings, t: float, dt: float,
                      solver: str = "cg") -> np.ndarray:
    """Heat evolution of the lifted angle: affine part is fixed, the periodic part diffuses."""
    aff = affine_angles(u0.fixture, _normalise_windings(u0.target, windings))
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.ndim == 1:
        aff = aff[:, 0]
    return aff + heat_apply(u0.op, theta0 - aff, t, dt=dt, solver=solver)


# --- Picard successive approximation -------------------------------------------------

PICARD_T_MAX = 0.01


@dataclass
class PicardResult:
    t: float
    slices: np.ndarray
    iterates: list = field(repr=False)  # u_k at time t
    X: list = field(default_factory=list)  # X_k for k >= 1
    ratios: list = field(default_factory=list)
    diverged: bool = False

    @property
    def limit(self) -> np.ndarray:
        return self.iterates[-1]


def picard_short_time(u0: MapField, t: float, iterations: int = 8, n_slices: int = 20) -> PicardResult:
    """Duhamel iteration ``u_k = e^{tL} phi - int_0^t e^{(t-s)L} F_{k-1}(s) ds``.

    The time integral uses the trapezoid rule on uniform slices through the
    exact recursion ``I_j = e^{ds L}(I_{j-1} + ds/2 F_{j-1}) + ds/2 F_j``.
    ``X_k`` is the sup over slices and nodes of ``|u_k - u_{k-1}| + |nabla^H (u_k - u_{k-1})|``.
    """
    if t <= 0 or t > PICARD_T_MAX:
        raise RangeError(f"picard mode needs 0 < t <= {PICARD_T_MAX}, got {t}")
    op = u0.op
    s = np.linspace(0.0, t, n_slices + 1)
    ds = s[1] - s[0]
    A = op.matrix * ds
    # free evolution u_0(s_j)
    free = [u0.values]
    for _ in range(n_slices):
        free.append(spla.expm_multiply(A, free[-1]))
    prev = np.array(free)
    iterates = [prev[-1].copy()]
    X, ratios, rising = [], [], 0
    diverged = False
    for _ in range(iterations):
        F = np.array([_nonlinearity(u0, prev[j]) for j in range(n_slices + 1)])
        cur = np.empty_like(prev)
        integral = np.zeros_like(u0.values)
        cur[0] = u0.values
        for j in range(1, n_slices + 1):
            integral = spla.expm_multiply(A, integral + 0.5 * ds * F[j - 1]) + 0.5 * ds * F[j]
            cur[j] = free[j] - integral
        diff = cur - prev
        xk = max(
            float(np.max(np.linalg.norm(diff[j], axis=1) + op.horizontal_gradient_norm(diff[j])))
            for j in range(n_slices + 1)
        )
        if X:
            ratios.append(xk / X[-1] if X[-1] > 0 else 0.0)
            rising = rising + 1 if xk > X[-1] else 0
        X.append(xk)
        iterates.append(cur[-1].copy())
        prev = cur
        if rising >= 3:
            diverged = True
            break
        if xk == 0.0:
            break
    return PicardResult(t, s, iterates, X, ratios, diverged)


# --- monotonicity ledger ---------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    detail: str = ""


@dataclass
class MonotonicityReport:
    refused: bool
    reason: str
    checks: list
    lemma_constant: float | None = None

    @property
    def passed(self) -> bool:
        return not self.refused and all(c.passed for c in self.checks)

    def verdicts(self) -> dict:
        return {c.name: c.passed for c in self.checks}


def monotonicity_report(traj: FlowTrajectory, eps_mono: float = EPS_MONO) -> MonotonicityReport:
    """Checks (a)-(f) on the recorded series.

    ``eps_mono`` for ``sup_ut2`` is relative to its first value.
    """
    u = traj.final
    if u.target.curvature_class is not CurvatureClass.NONPOSITIVE:
        return MonotonicityReport(True, f"target {u.target.kind} has positive curvature; "
                                        "nonpositive-curvature hypothesis violated", [])
    recs = traj.records
    if len(recs) < 3:
        raise RangeError("monotonicity report needs at least 3 records")
    t = traj.series("t")
    EH, EV, E = traj.series("E_H"), traj.series("E_V"), traj.series("E")
    tn = traj.series("tension_norm2")
    ut2 = traj.series("sup_ut2")
    sup_e = traj.series("sup_e")
    dt = np.diff(t)
    scale = max(EH[0], 1e-300)
    checks = []

    inc = np.diff(EH)
    checks.append(Check("E_H_nonincreasing", bool(np.all(inc <= 1e-8 * scale)), float(max(inc.max(), 0.0))))

    # dissipation: -dE_H/dt vs midpoint tension norm; absolute floor is double rounding of E_H
    lhs = -inc / dt
    rhs = 0.5 * (tn[1:] + tn[:-1])
    floor = 1e-12 * scale / dt
    err = np.abs(lhs - rhs) - 0.1 * rhs - floor
    checks.append(Check("dissipation_identity", bool(np.all(err <= 0)), float(err.max()),
                        "max relative mismatch %.3g" % float(np.max(np.abs(lhs - rhs) / np.maximum(rhs, floor)))))

    if len(EH) >= 3:
        second = EH[2:] - 2 * EH[1:-1] + EH[:-2]
        checks.append(Check("E_H_convex", bool(np.all(second >= -1e-6 * scale)), float(min(second.min(), 0.0))))

    rise = np.diff(ut2)
    slack = eps_mono * max(ut2[0], 1e-300)
    checks.append(Check("sup_ut2_nonincreasing", bool(np.all(rise <= slack)), float(max(rise.max(), 0.0))))
    if traj.harmonic:
        # decay to zero is asymptotic, so it is only audited on converged runs
        decay_ok = ut2[-1] < 1e-6 * ut2[0] if ut2[0] > 0 else True
        checks.append(Check("sup_ut2_decays", bool(decay_ok), float(ut2[-1] / ut2[0]) if ut2[0] > 0 else 0.0))

    lemma_c = None
    fix = u.fixture
    flags = fix.foliation_flags or {}
    if flags.get("is_riemannian_foliation") and flags.get("is_tense"):
        rise_v = np.diff(EV)
        checks.append(Check("E_V_nonincreasing", bool(np.all(rise_v <= 1e-8 * max(EV[0], scale))),
                            float(max(rise_v.max(), 0.0))))
    elif fix.eta_min > 0:
        # fitted differential inequality dE/dt + eta_min/4 E_V <= C E_H
        dEdt = np.diff(E) / dt
        mid_V = 0.5 * (EV[1:] + EV[:-1])
        mid_H = np.maximum(0.5 * (EH[1:] + EH[:-1]), 1e-300)
        lemma_c = float(max(np.max((dEdt + 0.25 * fix.eta_min * mid_V) / mid_H), 0.0))
        bound = EV[0] + 4.0 / fix.eta_min * (tn[0] + lemma_c * EH[0])
        excess = EV[1:] - bound
        checks.append(Check("E_V_bounded", bool(np.all(excess <= 1e-8 * scale)), float(max(excess.max(), 0.0)),
                            f"C={lemma_c:.6g}"))

    finite = np.all(np.isfinite(sup_e))
    checks.append(Check("sup_e_bounded", bool(finite and sup_e.max() <= BLOWUP_FACTOR * max(sup_e[0], 1e-300)),
                        float(sup_e.max())))
    return MonotonicityReport(False, "", checks, lemma_c)


def tube_defect_series_check(traj: FlowTrajectory, slack: float = 1e-8) -> Check:
    d = traj.series("tube_defect")
    rise = np.diff(d)
    return Check("tube_defect_nonincreasing", bool(np.all(rise <= slack)), float(max(rise.max(initial=0.0), 0.0)))


# --- Hartman homotopy family -------------------------------------------------------------


@dataclass
class HartmanResult:
    t: np.ndarray
    lambdas: np.ndarray
    Q_sup: np.ndarray  # (records, lambdas)
    d_tilde: np.ndarray
    d_inf: np.ndarray
    windings: tuple
    finals: list = field(repr=False)

    CSV_COLUMNS = ("t", "d_tilde", "d_inf")


def _lambda_derivative(theta, dl):
    """Second-order d/dlambda along axis 0: central inside, one-sided at the ends."""
    g = np.empty_like(theta)
    g[1:-1] = (theta[2:] - theta[:-2]) / (2 * dl)
    g[0] = (-3 * theta[0] + 4 * theta[1] - theta[2]) / (2 * dl)
    g[-1] = (3 * theta[-1] - 4 * theta[-2] + theta[-3]) / (2 * dl)
    return g


def hartman_run(u0: MapField, u1: MapField, config: FlowConfig, n_lambda: int = 9) -> HartmanResult:
    """Flow the geodesic homotopy between ``u0`` and ``u1`` slice by slice in lockstep."""
    target = u0.target
    if target.kind not in ("Circle", "FlatTorus2"):
        raise ConfigurationError("hartman runs need a circle or torus target")
    if n_lambda < 3:
        raise ConfigurationError("need at least 3 lambda slices")
    grid = u0.fixture.grid
    w0 = winding_numbers(target, u0.values, grid)
    w1 = winding_numbers(target, u1.values, grid)
    if w0 != w1:
        raise HomotopyError(f"maps are not homotopic: windings {w0} vs {w1}")
    th0 = angles(target, u0.values)
    th1 = th0 + wrap_angle(angles(target, u1.values) - th0)
    lambdas = np.linspace(0.0, 1.0, n_lambda)
    dl = lambdas[1] - lambdas[0]
    lifted = np.array([(1 - lam) * th0 + lam * th1 for lam in lambdas])  # (L, N, factors)
    fields = [u0.with_values(from_angles(target, th)) for th in lifted]
    dt = config.resolve_dt(u0.op)
    nsteps = max(int(math.ceil(config.T_max / dt - 1e-9)), 0)

    ts, Qs, dts, dis = [], [], [], []

    def record(t):
        dth = _lambda_derivative(lifted, dl)
        Q = np.sum(dth * dth, axis=2)  # (L, N)
        seg = np.sqrt(np.sum(np.diff(lifted, axis=0) ** 2, axis=2))  # exact polyline length in lambda
        ts.append(t)
        Qs.append(Q.max(axis=1))
        dts.append(float(np.max(seg.sum(axis=0))))
        dis.append(float(np.max(geodesic_distance(target, fields[0].values, fields[-1].values))))

    record(0.0)
    for k in range(1, nsteps + 1):
        for j in range(n_lambda):
            fields[j] = step(fields[j], dt, config.scheme, config.solver)
            lifted[j] = lift_in_time(lifted[j], angles(target, fields[j].values))
        if k % config.stride == 0 or k == nsteps:
            record(k * dt)
    wins = winding_numbers(target, fields[0].values, grid)
    return HartmanResult(np.array(ts), lambdas, np.array(Qs), np.array(dts), np.array(dis), wins, fields)
