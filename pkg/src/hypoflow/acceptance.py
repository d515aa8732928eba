"""Runnable acceptance criteria. Each ``criterion_k`` returns a :class:`CriterionResult`."""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import ccgeom, flow, manifold, operator, oracles
from .target import angles, build_target, wrap_angle

PI2 = math.pi**2


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    runtime: float = 0.0
    budget: float | None = None

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] criterion {self.number:2d} {self.name} ({self.runtime:.1f}s)"


def _timed(number, name, budget=None):
    def deco(fn):
        def run(**kw):
            t0 = time.perf_counter()
            try:
                passed, details = fn(**kw)
            except Exception as exc:  # a crash is a failed criterion, not an aborted suite
                passed, details = False, {"error": f"{type(exc).__name__}: {exc}"}
            dt = time.perf_counter() - t0
            if budget is not None:
                details["within_budget"] = dt <= budget
                passed = passed and dt <= budget
            return CriterionResult(number, name, bool(passed), details, dt, budget)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return deco


@lru_cache(maxsize=None)
def _fixture(kind, n):
    return manifold.build_fixture(kind, n)


@lru_cache(maxsize=None)
def _op(kind, n, order=operator.DEFAULT_ORDER):
    return operator.assemble_sub_laplacian(_fixture(kind, n), order)


STEP2 = ("ContactTorus", "HeisenbergNilmanifold")


@_timed(1, "structural algebra", budget=10.0)
def criterion_1(sizes=(9, 15, 21), samples=100, seed=0):
    rng = np.random.default_rng(seed)
    rows, ok = [], True
    for kind in STEP2:
        for n in sizes:
            op = operator.assemble_sub_laplacian(manifold.build_fixture(kind, n))
            skew = max(abs(D + D.T).max() for D in op.derivatives)
            sym = abs(op.matrix - op.matrix.T).max()
            U = rng.standard_normal((op.size, samples))
            quad = np.einsum("ns,ns->s", U, op.matrix @ U)
            spec = operator.spectral_report(op)
            good = (skew == 0 and sym == 0 and quad.max() <= 0
                    and abs(spec["lambda0"]) <= 1e-10 and spec["lambda1"] > 0)
            ok &= good
            rows.append({"fixture": kind, "n": n, "skew": float(skew), "asym": float(sym),
                         "max_quadratic": float(quad.max()), **spec, "passed": bool(good)})
    return ok, {"rows": rows}


@_timed(2, "consistency order", budget=5.0)
def criterion_2(sizes=(9, 15, 21, 27), min_order=1.8):
    errs = []
    for n in sizes:
        f = manifold.build_fixture("ContactTorus", n)
        op = operator.assemble_sub_laplacian(f)
        u = np.sin(2 * np.pi * f.samples["points"][:, 2])
        errs.append(float(np.abs(op.matrix @ u + 4 * PI2 * u).max()))
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(sizes[i + 1] / sizes[i]) for i in range(len(sizes) - 1)]
    return min(orders) >= min_order, {"sizes": list(sizes), "errors": errs, "orders": orders}


@_timed(3, "heat kernel suite", budget=30.0)
def criterion_3(n=9, t=0.01, dt=2.5e-4, limit_times=(0.05, 0.2, 0.5, 1.0, 2.0, 4.0)):
    out, ok = {}, True
    for kind in STEP2:
        op = operator.assemble_sub_laplacian(manifold.build_fixture(kind, n))
        x, y = 0, op.size // 2 + 3
        kx = operator.heat_kernel_column(op, x, t, dt=dt)
        ky = operator.heat_kernel_column(op, y, t, dt=dt)
        mass_err = max(abs(kx.mass - 1), abs(ky.mass - 1))
        sym_err = abs(kx.values[y] - ky.values[x])
        # semigroup against the dense product of the same stepper's kernel matrix
        steps = int(round(t / dt))
        Kt = oracles.dense_implicit_heat(op, t, steps) / op.weight
        k2 = operator.heat_kernel_column(op, x, 2 * t, dt=dt)
        semi = float(np.abs((Kt @ Kt)[:, x] * op.weight - k2.values).max())
        diag = [float(operator.heat_kernel_column(op, x, s, dt=1e-3).values[x]) for s in limit_times]
        dev = np.abs(np.array(diag) - 1.0)
        # late-time approach to the mean is governed by the spectral gap
        gap = operator.spectral_report(op)["lambda1"]
        # (fit on the last two times still above the rounding floor)
        above = np.flatnonzero(dev > 1e-9)[-2:]
        rate = float(-np.log(dev[above[1]] / dev[above[0]]) / (limit_times[above[1]] - limit_times[above[0]]))
        limit_ok = bool(np.all(np.diff(dev) < 0) and dev[-1] < 1e-4 and abs(rate / gap - 1) < 0.1)
        good = mass_err <= 1e-10 and sym_err <= 1e-10 and semi <= 1e-6 and limit_ok
        ok &= good
        out[kind] = {"mass_error": mass_err, "symmetry_error": sym_err, "semigroup_error": semi,
                     "diagonal": dict(zip(map(str, limit_times), diag)), "decay_rate": rate, "gap": gap,
                     "kernel_min": kx.min,
                     "passed": bool(good)}
    return ok, out


@_timed(4, "volume growth and NSW polynomial", budget=120.0)
def criterion_4(n=21, window=(0.08, 0.25), slope_range=(3.6, 4.4)):
    out, ok = {}, True
    exact = {"ContactTorus": 12 * math.pi, "HeisenbergNilmanifold": 6.0}
    for kind in STEP2:
        f = manifold.build_fixture(kind, n)
        d = ccgeom.cc_distance_field(f, 0)
        radii = np.geomspace(0.04, 0.5, 30)
        vp = ccgeom.volume_profile_and_exponent(d, radii, f.h3, window)
        nsw = ccgeom.nsw_polynomial(f, 0, sample_nodes=range(0, f.grid.size, 37))
        brute = oracles.nsw_bruteforce(f.frame, f.samples["points"][0])
        keys = set(nsw.coefficients) | set(brute)
        nsw_err = max(abs(nsw.coefficients.get(k, 0.0) - brute.get(k, 0.0)) for k in keys)
        lam_err = max(abs(nsw.coefficients.get(4, 0.0) - exact[kind]),
                      max((abs(v) for k, v in nsw.coefficients.items() if k != 4), default=0.0))
        slope_ok = slope_range[0] <= vp.slope <= slope_range[1]
        good = slope_ok and nsw_err <= 1e-10 and lam_err <= 1e-10 and nsw.q_pointwise == 4
        ok &= good
        out[kind] = {"slope": vp.slope, "slope_ok": slope_ok, "nsw_vs_bruteforce": nsw_err,
                     "nsw_vs_closed_form": lam_err, "Q": nsw.q_pointwise, "Q_local": nsw.q_local,
                     "doubling": [r for _, r in vp.doubling], "passed": bool(good)}
    return ok, out


@_timed(5, "fixture tensors")
def criterion_5(n=9):
    ct = manifold.build_fixture("ContactTorus", n)
    he = manifold.build_fixture("HeisenbergNilmanifold", n)
    co = manifold.build_fixture("CommutingTorus", n)
    d = {
        "eta_min_contact": ct.eta_min, "eta_min_heisenberg": he.eta_min, "eta_min_commuting": co.eta_min,
        "zeta_max": float(max(np.abs(ct.zeta).max(), np.abs(he.zeta).max())),
        "step2_contact": manifold.verify_bracket_generating(ct).step2,
        "step2_heisenberg": manifold.verify_bracket_generating(he).step2,
        "step2_commuting": manifold.verify_bracket_generating(co).step2,
    }
    ok = (abs(ct.eta_min - 4 * PI2) <= 1e-8 and abs(he.eta_min - 1) <= 1e-10 and d["zeta_max"] <= 1e-10
          and d["step2_contact"] and d["step2_heisenberg"] and co.eta_min == 0 and not d["step2_commuting"])
    return ok, d


@_timed(6, "energy fixtures")
def criterion_6(sizes=(9, 15, 21)):
    circle = build_target("Circle")
    ct = []
    for n in sizes:
        u = flow.winding_map(_fixture("ContactTorus", n), circle, [(1, 0, 0)], op=_op("ContactTorus", n))
        (EH, EV, _), _ = flow.energies(u)
        ct.append((EH, EV))
    errH = [abs(e[0] - PI2) for e in ct]
    orders = [math.log(errH[i] / errH[i + 1]) / math.log(sizes[i + 1] / sizes[i]) for i in range(len(sizes) - 1)]
    n = sizes[-1]
    hu = flow.winding_map(_fixture("HeisenbergNilmanifold", n), circle, [(1, 0, 0)],
                          op=_op("HeisenbergNilmanifold", n))
    (hEH, hEV, _), _ = flow.energies(hu)
    relH, relV = abs(ct[-1][0] / PI2 - 1), abs(ct[-1][1] / PI2 - 1)
    ok = (relH <= 0.02 and relV <= 0.02 and min(orders) >= 1.8
          and abs(hEH / (2 * PI2) - 1) <= 0.01 and hEV <= 1e-10)
    return ok, {"contact_E_H": [e[0] for e in ct], "contact_E_V": [e[1] for e in ct], "orders": orders,
                "heisenberg_E_H": hEH, "heisenberg_E_V": hEV}


# --- flow experiments -----------------------------------------------------------------


def perturbed_winding(kind, n, amplitude=0.3, mode=(0, 1, 0), windings=((1, 0, 0),), seed=7):
    f = _fixture(kind, n)
    pert = flow.Perturbation(amplitude, tuple(mode), 0.0, seed)
    return flow.winding_map(f, build_target("Circle"), [tuple(w) for w in windings], pert, op=_op(kind, n)), pert


@lru_cache(maxsize=None)
def eells_sampson_run(kind, n=21, T_max=10.0):
    u0, pert = perturbed_winding(kind, n)
    traj = flow.run_flow(u0, flow.FlowConfig(T_max=T_max))
    return u0, pert, traj


def _winding_series_ok(traj, expected):
    return all(tuple(r.windings) == tuple(expected) for r in traj.records)


@_timed(7, "Eells-Sampson convergence", budget=240.0)
def criterion_7(n=21, T_max=10.0):
    out, ok = {}, True
    targets = {"ContactTorus": PI2, "HeisenbergNilmanifold": 2 * PI2}
    for kind, E_ref in targets.items():
        t0 = time.perf_counter()
        u0, pert, traj = eells_sampson_run(kind, n, T_max)
        f = u0.fixture
        theta = angles(u0.target, traj.final.values)[:, 0]
        aff = flow.affine_angles(f, [(1, 0, 0)])[:, 0]
        mean_p = float(np.mean(pert(f.samples["points"])))
        dev = float(np.abs(wrap_angle(theta - aff - mean_p)).max())
        h = f.grid.spacing[0]
        tol = max(1e-4, h * h)
        rel = abs(traj.records[-1].E_H / E_ref - 1)
        good = (traj.stop_reason == "tension_tol" and traj.records[-1].t <= 10.0 and rel <= 0.02
                and dev <= tol and _winding_series_ok(traj, (1, 0, 0)))
        ok &= good
        out[kind] = {"stop_reason": traj.stop_reason, "t_final": traj.records[-1].t, "E_H_final": traj.records[-1].E_H,
                     "E_H_rel_error": rel, "angle_deviation": dev, "angle_tolerance": tol,
                     "runtime": time.perf_counter() - t0, "passed": bool(good)}
    return ok, out


@_timed(8, "monotonicity ledger")
def criterion_8(n=21, ambient_n=15, ambient_T=0.2):
    out, ok = {}, True
    for kind in STEP2:
        _, _, traj = eells_sampson_run(kind, n)
        rep = flow.monotonicity_report(traj)
        ok &= rep.passed
        out[kind] = {c.name: {"passed": c.passed, "worst": c.worst, "detail": c.detail} for c in rep.checks}
        out[kind]["lemma_constant"] = rep.lemma_constant
    u0, _ = perturbed_winding("ContactTorus", ambient_n)
    amb = flow.run_flow(u0, flow.FlowConfig(scheme="AmbientUnprojected", T_max=ambient_T, tol_stop=1e-300))
    chk = flow.tube_defect_series_check(amb)
    ok &= chk.passed
    out["ambient_tube_defect"] = {"passed": chk.passed, "worst_increase": chk.worst}
    return ok, out


@_timed(9, "Picard contraction")
def criterion_9(n=15, t=0.005, iterations=6, amplitude=0.3, flow_dt=1e-4):
    u0, _ = perturbed_winding("ContactTorus", n, amplitude=amplitude, windings=((0, 0, 0),))
    pr = flow.picard_short_time(u0, t, iterations)
    traj = flow.run_flow(u0, flow.FlowConfig(T_max=t, dt=flow_dt, tol_stop=1e-300))
    gap = float(np.abs(pr.limit - traj.final.values).max())
    ok = all(r < 1 for r in pr.ratios) and not pr.diverged and gap <= 1e-3
    return ok, {"X": pr.X, "ratios": pr.ratios, "limit_vs_flow": gap}


@_timed(10, "Hartman homotopy suite")
def criterion_10(n=15, T_max=0.5, stride=10, amplitude=0.4):
    f = _fixture("ContactTorus", n)
    circle = build_target("Circle")
    u0 = flow.winding_map(f, circle, [(1, 0, 0)], op=_op("ContactTorus", n))
    u1 = flow.winding_map(f, circle, [(1, 0, 0)], flow.Perturbation(amplitude, (0, 1, 0)), op=u0.op)
    hr = flow.hartman_run(u0, u1, flow.FlowConfig(T_max=T_max, stride=stride))
    q_rise = float(np.diff(hr.Q_sup, axis=0).max())
    d_rise = float(np.diff(hr.d_tilde).max())
    gap = float((hr.d_inf - hr.d_tilde).max())
    ok = q_rise <= 1e-8 and d_rise <= 1e-8 and gap <= 1e-10 and hr.Q_sup.shape[1] == 9
    return ok, {"Q_sup_max_increase": q_rise, "d_tilde_max_increase": d_rise, "d_inf_minus_d_tilde": gap,
                "d_tilde": hr.d_tilde.tolist(), "d_inf": hr.d_inf.tolist()}


@_timed(11, "flat-target equivalence")
def criterion_11(n=15, T_max=10.0, check_every=10, tol=1e-6):
    u0, pert = perturbed_winding("ContactTorus", n)
    theta0 = flow.initial_angles(u0.fixture, u0.target, [(1, 0, 0)], pert)[:, 0]
    state = {"lift": theta0.copy(), "worst": 0.0}
    dt = flow.DEFAULT_IMPLICIT_DT

    def observe(k, t, v):
        state["lift"] = flow.lift_in_time(state["lift"], angles(v.target, v.values)[:, 0])
        if k % check_every == 0:
            lin = flow.linear_angle_flow(u0, theta0, [(1, 0, 0)], t, dt=dt)
            state["worst"] = max(state["worst"], float(np.abs(lin - state["lift"]).max()))

    traj = flow.run_flow(u0, flow.FlowConfig(T_max=T_max, dt=dt), observer=observe)
    lin = flow.linear_angle_flow(u0, theta0, [(1, 0, 0)], traj.records[-1].t, dt=dt)
    worst = max(state["worst"], float(np.abs(lin - state["lift"]).max()))
    return worst <= tol, {"sup_difference": worst, "tolerance": tol, "t_final": traj.records[-1].t}


@_timed(12, "positive-curvature negative control")
def criterion_12(n=9, T_max=0.5):
    f = _fixture("ContactTorus", n)
    sphere = build_target("Sphere2")
    u0 = flow.winding_map(f, sphere, [(1, 0, 0)], flow.Perturbation(0.3, (0, 1, 0)), op=_op("ContactTorus", n))
    traj = flow.run_flow(u0, flow.FlowConfig(T_max=T_max, min_steps=3))
    rep = flow.monotonicity_report(traj)
    const = flow.run_flow(flow.constant_map(f, sphere, (0, 0, 1), op=u0.op), flow.FlowConfig(T_max=T_max))
    ok = rep.refused and len(traj.records) >= 1 and const.records[0].tension_norm2 == 0.0
    return ok, {"refused": rep.refused, "reason": rep.reason, "stop_reason": traj.stop_reason,
                "records": len(traj.records), "constant_map_tension": const.records[0].tension_norm2}


@_timed(13, "determinism")
def criterion_13(config: dict | None = None):
    from .cli import run_experiment

    config = config or {
        "experiment": "flow", "fixture": {"name": "ContactTorus", "n": 9}, "target": "Circle",
        "initial": {"type": "winding_perturbed", "windings": [[1, 0, 0]], "amplitude": 0.3,
                    "mode": "random", "seed": 7},
        "flow": {"T_max": 0.2, "stride": 1},
    }
    digests = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            run_experiment(config, out)
            digests.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "timing.json"})
    same = digests[0] == digests[1] and len(digests[0]) >= 2
    return same, {"files": sorted(digests[0])}


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 14)}


def run_criteria(numbers=None, overrides: dict | None = None, echo=None) -> list[CriterionResult]:
    """Run the numbered criteria in order; ``echo`` receives each result as it finishes."""
    overrides = overrides or {}
    results = []
    for k in numbers or sorted(CRITERIA):
        results.append(CRITERIA[k](**overrides.get(k, {})))
        if echo is not None:
            echo(results[-1])
    return results


def invariant_suite(fixture, samples: int = 20, seed: int = 0) -> list[dict]:
    """Manifold and operator invariants for one fixture (the ``verify`` default)."""
    rng = np.random.default_rng(seed)
    checks = []

    def add(name, value, passed):
        checks.append({"name": name, "value": float(value), "passed": bool(passed)})

    add("frame_orthonormal", manifold.gram_deviation(fixture), manifold.gram_deviation(fixture) <= 1e-12)
    pts = fixture.samples["points"][rng.choice(fixture.grid.size, size=min(samples, fixture.grid.size), replace=False)]
    eta_ref = oracles.oracle_eta(fixture.frame, pts).min()
    add("eta_min_vs_oracle", abs(fixture.eta_min - eta_ref), abs(fixture.eta_min - eta_ref) <= 1e-8 * max(1, eta_ref))
    zeta_ref = oracles.oracle_zeta(fixture.frame, pts)
    idx = fixture.grid.nearest_node(pts)
    zerr = float(np.abs(fixture.zeta[:, idx] - zeta_ref).max())
    add("zeta_vs_oracle", zerr, zerr <= 1e-8)
    verdict = manifold.verify_bracket_generating(fixture).step2
    add("bracket_verdict_matches_claim", float(verdict), verdict == fixture.step2_claimed)
    op = operator.assemble_sub_laplacian(fixture)
    skew = max(abs(D + D.T).max() for D in op.derivatives)
    add("derivatives_skew", skew, skew == 0)
    if op.symmetric:
        asym = abs(op.matrix - op.matrix.T).max()
        add("laplacian_symmetric", asym, asym == 0)
        U = rng.standard_normal((op.size, samples))
        q = np.einsum("ns,ns->s", U, op.matrix @ U).max()
        add("laplacian_nonpositive", q, q <= 0)
    const = float(np.abs(op.matrix @ np.ones(op.size)).max())
    add("constants_in_kernel", const, const <= 1e-10)
    if verdict and op.symmetric:
        spec = operator.spectral_report(op)
        add("kernel_is_constants", spec["lambda1"], abs(spec["lambda0"]) <= 1e-10 and spec["lambda1"] > 0)
    phi = rng.standard_normal(op.size)
    mass = abs(operator.heat_apply(op, phi, 0.01).sum() - phi.sum()) * op.weight
    add("heat_mass_conserved", mass, mass <= 1e-10)
    return checks
