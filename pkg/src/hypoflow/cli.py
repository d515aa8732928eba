"""Config-driven experiment runner: ``hypoflow <subcommand> --config FILE [--out DIR] [--seed N]``.

Exit status: 0 on success, 2 when an invariant or ``expect`` assertion fails,
1 on configuration or data errors.
"""

from __future__ import annotations

import argparse
import copy
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import acceptance, ccgeom, flow, io, manifold, operator
from .errors import HypoflowError
from .target import TARGET_KINDS, build_target

log = logging.getLogger("hypoflow")

EXPERIMENTS = ("fixture", "ccvolume", "kernel", "flow", "hartman", "verify")
OUT_ENV = "HYPOFLOW_OUT"


class InvariantFailure(Exception):
    def __init__(self, invariant: str, detail: str = ""):
        super().__init__(f"invariant failed: {invariant}" + (f" ({detail})" if detail else ""))
        self.invariant = invariant


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as exc:
        raise HypoflowError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise HypoflowError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise HypoflowError(f"config {path} must be a mapping")
    return cfg


def _fixture(cfg):
    spec = cfg.get("fixture") or {}
    if "name" not in spec:
        raise HypoflowError("config needs fixture.name")
    return manifold.build_fixture(spec["name"], spec.get("n", 15))


def _target(cfg):
    name = cfg.get("target", "Circle")
    if name not in TARGET_KINDS:
        raise HypoflowError(f"unknown target {name!r}; registry: {', '.join(TARGET_KINDS)}")
    return build_target(name, cfg.get("r_tube", 0.9))


def build_initial(spec: dict, fixture, target, op=None) -> flow.MapField:
    kind = spec.get("type", "winding")
    if kind == "constant":
        return flow.constant_map(fixture, target, spec["point"], op=op)
    windings = [tuple(w) for w in spec.get("windings", [[0, 0, 0]])]
    pert = None
    if kind == "winding_perturbed":
        mode = spec.get("mode", [0, 1, 0])
        pert = flow.Perturbation(float(spec["amplitude"]), "random" if mode == "random" else tuple(mode),
                                 float(spec.get("phase", 0.0)), spec.get("seed"))
    elif kind != "winding":
        raise HypoflowError(f"unknown initial map type {kind!r}; use constant, winding or winding_perturbed")
    return flow.winding_map(fixture, target, windings, pert, op=op)


def _flow_config(cfg) -> flow.FlowConfig:
    spec = dict(cfg.get("flow") or {})
    known = {"scheme", "dt", "T_max", "tol_stop", "stride", "min_steps", "solver"}
    extra = set(spec) - known
    if extra:
        raise HypoflowError(f"unknown flow keys {sorted(extra)}")
    return flow.FlowConfig(**spec)


# --- experiments: each returns (csv columns, csv rows, summary payload) -----------------


def exp_fixture(cfg):
    f = _fixture(cfg)
    nsw = ccgeom.nsw_polynomial(f, 0, sample_nodes=range(0, f.grid.size, max(f.grid.size // 64, 1)))
    rows = [[i, float(f.eta_field[0, i]), *(float(z) for z in f.zeta[:, i])] for i in range(f.grid.size)]
    cols = ["node", "eta_xi"] + [f"zeta_{k + 1}" for k in range(f.frame.m)]
    payload = {"fixture": manifold.fixture_summary(f),
               "nsw": {"coefficients": {str(k): v for k, v in nsw.coefficients.items()},
                       "Q_pointwise": nsw.q_pointwise, "Q_local": nsw.q_local,
                       "bracket_generating": nsw.bracket_generating}}
    return cols, rows, payload


def exp_ccvolume(cfg):
    f = _fixture(cfg)
    spec = cfg.get("ccvolume") or {}
    d = ccgeom.cc_distance_field(f, spec.get("source", 0), spec.get("delta"), spec.get("substeps", 2))
    r = spec.get("radii", {})
    radii = np.geomspace(r.get("min", 0.04), r.get("max", 0.5), r.get("count", 30))
    window = tuple(spec.get("window", ccgeom.DEFAULT_WINDOW))
    vp = ccgeom.volume_profile_and_exponent(d, radii, f.h3, window)
    nsw = ccgeom.nsw_polynomial(f, spec.get("source", 0), sample_nodes=range(0, f.grid.size, 37))
    lam = nsw.polynomial(radii)
    rows = [[float(a), float(v), float(lv), float(v / lv) if lv > 0 else math.nan]
            for a, v, lv in zip(radii, vp.volumes, lam)]
    payload = {"slope": vp.slope, "window": list(window), "Q": nsw.q_pointwise, "Q_local": nsw.q_local,
               "eta_min": f.eta_min, "doubling": [list(p) for p in vp.doubling]}
    return ["r", "volume", "lambda_of_r", "ratio"], rows, payload


def exp_kernel(cfg):
    f = _fixture(cfg)
    spec = cfg.get("kernel") or {}
    op = operator.assemble_sub_laplacian(f)
    src = spec.get("source", 0)
    d = ccgeom.cc_distance_field(f, src)
    rep = operator.kernel_bound_check(op, d, spec.get("t_grid", [0.005, 0.01, 0.02, 0.05, 0.1, 0.2]), src,
                                      spec.get("dt", 2.5e-4))
    cols = ["t", "mass", "min", "diag_product", "grad_integral"]
    rows = [[r[c] for c in cols] for r in rep.rows]
    payload = {"max_product": rep.max_product, "product_variation": rep.product_variation,
               "grad_exponent": rep.grad_exponent, "spectral": rep.spectral}
    return cols, rows, payload


def exp_flow(cfg):
    f = _fixture(cfg)
    target = _target(cfg)
    u0 = build_initial(cfg.get("initial") or {}, f, target)
    traj = flow.run_flow(u0, _flow_config(cfg))
    rows = [r.row() for r in traj.records]
    rep = flow.monotonicity_report(traj) if len(traj.records) >= 3 else None
    final = traj.records[-1]
    payload = {
        "fixture_name": f.name, "target_name": target.kind, "stop_reason": traj.stop_reason,
        "harmonic": traj.harmonic, "steps": traj.steps, "dt": traj.dt, "record_count": len(traj.records),
        "t_final": final.t, "E_H_final": final.E_H, "E_V_final": final.E_V,
        "tension_norm2_final": final.tension_norm2, "windings_initial": list(traj.records[0].windings),
        "windings_final": list(final.windings),
        "monotonicity": None if rep is None else {
            "refused": rep.refused, "reason": rep.reason, "verdicts": rep.verdicts(),
            "lemma_constant": rep.lemma_constant,
            "worst": {c.name: c.worst for c in rep.checks}},
    }
    if rep is not None and not rep.refused and not rep.passed:
        failed = [c.name for c in rep.checks if not c.passed]
        payload["failed_invariants"] = failed
    return list(flow.DiagnosticsRecord.CSV_COLUMNS), rows, payload


def exp_hartman(cfg):
    f = _fixture(cfg)
    target = _target(cfg)
    spec = cfg.get("hartman") or {}
    op = operator.assemble_sub_laplacian(f)
    u0 = build_initial(spec.get("initial0", {"type": "winding", "windings": [[1, 0, 0]]}), f, target, op)
    u1 = build_initial(spec["initial1"], f, target, op)
    hr = flow.hartman_run(u0, u1, _flow_config(cfg), spec.get("lambdas", 9))
    cols = ["t", "d_tilde", "d_inf"] + [f"Q_sup_{j}" for j in range(len(hr.lambdas))]
    rows = [[t, a, b, *q] for t, a, b, q in zip(hr.t, hr.d_tilde, hr.d_inf, hr.Q_sup)]
    q_rise = float(np.diff(hr.Q_sup, axis=0).max()) if len(hr.t) > 1 else 0.0
    d_rise = float(np.diff(hr.d_tilde).max()) if len(hr.t) > 1 else 0.0
    payload = {"lambdas": hr.lambdas.tolist(), "windings": list(hr.windings), "Q_sup_max_increase": q_rise,
               "d_tilde_max_increase": d_rise, "d_inf_minus_d_tilde_max": float((hr.d_inf - hr.d_tilde).max())}
    failed = [name for name, bad in (("Q_nonincreasing", q_rise > 1e-8), ("d_tilde_nonincreasing", d_rise > 1e-8),
                                     ("d_inf_le_d_tilde", payload["d_inf_minus_d_tilde_max"] > 1e-10)) if bad]
    if failed:
        payload["failed_invariants"] = failed
    return cols, rows, payload


def exp_verify(cfg):
    spec = cfg.get("verify") or {}
    crit = spec.get("criteria")
    if crit:
        overrides = {int(k): v for k, v in (spec.get("overrides") or {}).items()}
        results = acceptance.run_criteria([int(c) for c in crit], overrides,
                                          echo=lambda r: print(r.line(), flush=True))
        rows = [[r.number, r.name, "pass" if r.passed else "fail", r.runtime] for r in results]
        payload = {"criteria": {str(r.number): {"name": r.name, "passed": r.passed, "details": r.details}
                                for r in results}}
        failed = [f"criterion {r.number} ({r.name})" for r in results if not r.passed]
        cols = ["criterion", "name", "verdict", "runtime_s"]
    else:
        f = _fixture(cfg)
        checks = acceptance.invariant_suite(f)
        rows = [[c["name"], "pass" if c["passed"] else "fail", c["value"]] for c in checks]
        payload = {"fixture_name": f.name, "checks": checks}
        failed = [c["name"] for c in checks if not c["passed"]]
        cols = ["check", "verdict", "value"]
    if failed:
        payload["failed_invariants"] = failed
    return cols, rows, payload


RUNNERS = {"fixture": exp_fixture, "ccvolume": exp_ccvolume, "kernel": exp_kernel, "flow": exp_flow,
           "hartman": exp_hartman, "verify": exp_verify}


def _check_expect(expect: dict, payload: dict):
    for key, want in (expect or {}).items():
        if key not in payload:
            raise InvariantFailure(f"expect.{key}", "quantity not produced by this experiment")
        got = payload[key]
        if isinstance(want, dict):
            value = float(want["value"])
            tol = float(want.get("rel_tol", 0.0)) * abs(value) + float(want.get("abs_tol", 0.0))
            if not abs(float(got) - value) <= tol:
                raise InvariantFailure(f"expect.{key}", f"got {got!r}, want {value!r} +- {tol:.3g}")
        elif got != want:
            raise InvariantFailure(f"expect.{key}", f"got {got!r}, want {want!r}")


def _echo(cfg: dict) -> dict:
    echo = copy.deepcopy(cfg)
    echo.pop("output", None)
    return echo


def run_experiment(cfg: dict, out_dir) -> dict:
    """Run one experiment, write ``<kind>.csv``, ``summary.json`` and ``timing.json`` into ``out_dir``."""
    kind = cfg.get("experiment")
    if kind not in RUNNERS:
        raise HypoflowError(f"unknown experiment {kind!r}; choose from {', '.join(EXPERIMENTS)}")
    if cfg.get("target") == "Circle" and (cfg.get("fixture") or {}).get("name") == "HeisenbergNilmanifold":
        for w in (cfg.get("initial") or {}).get("windings", []):
            if len(w) == 3 and w[2] != 0:
                raise HypoflowError("winding c is not allowed for HeisenbergNilmanifold with a Circle target")
    t0 = time.perf_counter()
    cols, rows, payload = RUNNERS[kind](cfg)
    out = Path(out_dir)
    io.write_csv(out / f"{kind}.csv", cols, rows)
    payload.setdefault("record_count", len(rows))
    io.write_summary(out / "summary.json", kind, _echo(cfg), payload)
    io.write_timing(out / "timing.json", time.perf_counter() - t0)
    if payload.get("failed_invariants"):
        raise InvariantFailure(", ".join(payload["failed_invariants"]))
    _check_expect(cfg.get("expect"), payload)
    return payload


def _parser():
    p = argparse.ArgumentParser(prog="hypoflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name, help=f"run a {name} experiment")
        s.add_argument("--config", required=True, help="YAML experiment file")
        s.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        s.add_argument("--seed", type=int, help="perturbation seed override")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        cfg.setdefault("experiment", args.command)
        if cfg["experiment"] != args.command:
            raise HypoflowError(f"config is a {cfg['experiment']!r} experiment, not {args.command!r}")
        if args.seed is not None:
            cfg.setdefault("initial", {})["seed"] = args.seed
        out = args.out or os.environ.get(OUT_ENV) or (cfg.get("output") or {}).get("dir") or "out"
        payload = run_experiment(cfg, out)
    except InvariantFailure as exc:
        print(f"hypoflow: {exc}", file=sys.stderr)
        return 2
    except (HypoflowError, ValueError, KeyError, TypeError) as exc:
        print(f"hypoflow: error: {exc}", file=sys.stderr)
        return 1
    log.info("wrote outputs to %s", out)
    print(f"{args.command}: ok ({payload.get('record_count', 0)} rows) -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
