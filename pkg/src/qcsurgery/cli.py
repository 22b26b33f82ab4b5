"""Command line entry point.

Configuration comes from built-in defaults, then an optional JSON file
(``--config``), then flags.  The resolved configuration is echoed into
every JSON output so a run can be repeated from its own report.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import dilatation as dl
from . import dynamics as dy
from . import hyperbolic as hy
from . import straightening as st
from . import verify
from .tiling import Tiling, TilingError

DEFAULTS = {
    "diameters": [2, 4, 2, 8],
    "window": [-16.0, 4.0, -8.0, 8.0],
    "resolution": [513, 513],
    "cap": 8,
    "threads": 1,
    "out": "out",
    "eps": None,
    "solver": {"window": [-10.0, 3.0, -5.0, 5.0], "resolution": [512, 512], "tol": 1e-10,
               "max_iter": 400, "taper": 8.0, "normalization": "pm1"},
    "planner": {"stages": 3, "rhat_radius": 2.0, "margin_floor": 1e-3,
                "window": [-12.0, 12.0, -12.0, 12.0], "resolution": [512, 512]},
    "check": {"samples": 10000, "membership": 100000},
    "hyper": {"L": 4.0, "n_max": 4, "points": [[2.0, 0.0], [-1.0, 0.0], [0.5, 0.0], [0.5, 1.0], [-3.0, 2.0]]},
}


class ConfigError(ValueError):
    pass


def _floats(text, n=None):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma separated numbers, got {text!r}")
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _resolution(text):
    v = [int(x) for x in _floats(text)]
    if len(v) == 1:
        v = v * 2
    if len(v) != 2:
        raise ConfigError("resolution is N or NX,NY")
    return v


def _merge(base, extra):
    for k, v in extra.items():
        if k not in base:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {k!r} must be an object")
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def validate(cfg):
    d = cfg["diameters"]
    if not isinstance(d, list) or not d:
        raise ConfigError("diameters must be a non-empty list")
    try:
        Tiling(d)
    except TilingError as e:
        raise ConfigError(str(e))
    for key in ("window",):
        w = cfg[key]
        if len(w) != 4 or not (w[0] < w[1] and w[2] < w[3]):
            raise ConfigError(f"{key} must be [xmin, xmax, ymin, ymax] with xmin < xmax, ymin < ymax")
    for res in (cfg["resolution"], cfg["solver"]["resolution"], cfg["planner"]["resolution"]):
        if len(res) != 2 or min(res) < 8:
            raise ConfigError("resolutions need two entries of at least 8")
    if int(cfg["cap"]) < 1:
        raise ConfigError("cap must be at least 1")
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be at least 1")
    if int(cfg["planner"]["stages"]) < 1:
        raise ConfigError("planner stages must be at least 1")
    if cfg["eps"] is not None and float(cfg["eps"]) <= 0:
        raise ConfigError("eps must be positive")
    if cfg["solver"]["normalization"] not in ("pm1", "01"):
        raise ConfigError("solver normalization is 'pm1' or '01'")
    return cfg


def build_parser():
    p = argparse.ArgumentParser(prog="qcsurgery", description="Model map, straightening and dynamics experiments.")
    p.add_argument("command", choices=["build", "check", "mu", "solve", "render", "plan", "hyper", "report"])
    p.add_argument("--config", help="JSON config file (a report's config block is accepted too)")
    p.add_argument("--diameters", help="comma separated even diameters, e.g. 2,4,2,8")
    p.add_argument("--window", help="xmin,xmax,ymin,ymax for mu and render")
    p.add_argument("--resolution", help="N or NX,NY for mu and render")
    p.add_argument("--cap", type=int, help="orbit cap for render")
    p.add_argument("--stages", type=int, help="planner stages")
    p.add_argument("--eps", type=float, help="Whyburn spherical-diameter threshold")
    p.add_argument("--solver-resolution", help="N or NX,NY for the Beltrami solver")
    p.add_argument("--solver-window", help="xmin,xmax,ymin,ymax for the Beltrami solver")
    p.add_argument("--planner-resolution", help="N or NX,NY for planner solves")
    p.add_argument("--tol", type=float, help="solver fixed-point tolerance")
    p.add_argument("--threads", type=int, help="worker cap for grid sweeps and FFTs")
    p.add_argument("--out", help="output directory")
    return p


def resolve_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}")
        if isinstance(doc, dict) and "config" in doc and isinstance(doc["config"], dict):
            doc = doc["config"]
        _merge(cfg, doc)
    if args.diameters:
        try:
            cfg["diameters"] = [int(v) for v in args.diameters.split(",")]
        except ValueError:
            raise ConfigError(f"bad diameters {args.diameters!r}")
    if args.window:
        cfg["window"] = _floats(args.window, 4)
    if args.resolution:
        cfg["resolution"] = _resolution(args.resolution)
    if args.cap is not None:
        cfg["cap"] = args.cap
    if args.stages is not None:
        cfg["planner"]["stages"] = args.stages
    if args.eps is not None:
        cfg["eps"] = args.eps
    if args.solver_resolution:
        cfg["solver"]["resolution"] = _resolution(args.solver_resolution)
    if args.solver_window:
        cfg["solver"]["window"] = _floats(args.solver_window, 4)
    if args.planner_resolution:
        cfg["planner"]["resolution"] = _resolution(args.planner_resolution)
    if args.tol is not None:
        cfg["solver"]["tol"] = args.tol
    if args.threads is not None:
        cfg["threads"] = args.threads
    if args.out:
        cfg["out"] = args.out
    return validate(cfg)


def _echo(cfg):
    """Config as echoed into outputs; threads and out are left out so results do not depend on them."""
    c = copy.deepcopy(cfg)
    c.pop("threads")
    c.pop("out")
    return c


def _dump(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _solver_config(cfg):
    s = cfg["solver"]
    return st.SolverConfig(window=tuple(s["window"]), resolution=tuple(s["resolution"]), tol=s["tol"],
                           max_iter=s["max_iter"], taper=s["taper"], normalization=s["normalization"],
                           workers=cfg["threads"])


def _planner_config(cfg):
    p, s = cfg["planner"], cfg["solver"]
    return st.SolverConfig(window=tuple(p["window"]), resolution=tuple(p["resolution"]), tol=s["tol"],
                           max_iter=s["max_iter"], taper=s["taper"], normalization="pm1",
                           workers=cfg["threads"])


class CheckFailed(RuntimeError):
    pass


def _require(results):
    bad = [r.name for r in results if not r.passed]
    if bad:
        raise CheckFailed("failing check(s): " + "; ".join(bad))


# ------------------------------------------------------------- commands
def cmd_build(cfg, out):
    t = Tiling(cfg["diameters"])
    with open(os.path.join(out, "tiling.json"), "w") as fh:
        fh.write(t.to_json() + "\n")
    print(f"tiling: {len(t.diamonds)} diamonds, {t.n_strips} strips, vertices {[int(v) for v in t.vertices()]}")


def cmd_check(cfg, out):
    t = Tiling(cfg["diameters"])
    res = verify.property_suite(t, cfg["check"]["samples"], cfg["check"]["membership"])
    lines = [r.line() for r in res]
    print("\n".join(lines))
    with open(os.path.join(out, "check.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _require(res)


def cmd_mu(cfg, out):
    t = Tiling(cfg["diameters"])
    g = dl.mu_grid(t, cfg["window"], tuple(cfg["resolution"]))
    g.save(os.path.join(out, "mu.bin"))
    s = dl.dilatation_stats(g, certify=True)
    doc = {"config": _echo(cfg), "max_abs_mu": s.max_abs_mu, "K": s.K, "per_class": s.per_class,
           "diamond_max_by_diameter": {str(k): v for k, v in s.d_independence.items()}}
    _dump(os.path.join(out, "mu_stats.json"), doc)
    print(f"max |mu| = {s.max_abs_mu:.6f}  K = {s.K:.4f}")
    res = [verify.CheckResult("sampled max |mu|", s.max_abs_mu < 1, s.max_abs_mu, 1.0)]
    _require(res)


def cmd_solve(cfg, out):
    t = Tiling(cfg["diameters"])
    sc = _solver_config(cfg)
    sol = st.straighten(t, sc)
    sol.grid().save(os.path.join(out, "psi.bin"))
    jac = sol.cell_jacobians()
    rep = st.dbar_residual(t, sol, resolution=128)
    doc = {"config": _echo(cfg), "iterations": sol.iterations, "residual_max": sol.residual_max,
           "psi_minus_one": [sol(-1.0).real, sol(-1.0).imag], "psi_one": [sol(1.0).real, sol(1.0).imag],
           "min_cell_jacobian": float(jac.min()), "mu_digest": sol.mu_digest,
           "median_dbar_E": rep.median_dbar_E, "median_dbar_F": rep.median_dbar_F,
           "improvement": rep.improvement}
    _dump(os.path.join(out, "solve.json"), doc)
    print(f"solved in {sol.iterations} iterations, residual {sol.residual_max:.3e}, "
          f"dbar improvement {rep.improvement:.1f}x")
    _require([verify.CheckResult("solver residual", sol.residual_max <= 10 * sc.tol, sol.residual_max, 10 * sc.tol),
              verify.CheckResult("positive cell Jacobians", jac.min() > 0, float(jac.min()), 0.0)])


def cmd_render(cfg, out):
    t = Tiling(cfg["diameters"])
    img = dy.render_basin(t, cfg["window"], tuple(cfg["resolution"]), cfg["cap"], threads=cfg["threads"])
    img.write_ppm(os.path.join(out, "basin.ppm"))
    comps = dy.component_metrics(img)
    dy.write_components_csv(os.path.join(out, "components.csv"), comps)
    counts = np.bincount(img.status.ravel(), minlength=3)
    print(f"{len(comps)} components; converged {counts[0]}, escaping {counts[1]}, undecided {counts[2]} pixels")


def _plan(cfg):
    p = cfg["planner"]
    return dy.plan_diameters(p["stages"], _planner_config(cfg), rhat_radius=p["rhat_radius"],
                             margin_floor=p["margin_floor"])


def _plan_checks(state):
    res = [verify.CheckResult(f"stage {c.stage} certificates", c.ok(), min(c.margin_a, c.margin_b), 0.0,
                              f"d = 2^{c.log2_diameter:g}, {c.pullbacks} pullback(s)")
           for c in state.certificates]
    if state.failed_stage is not None:
        res.append(verify.CheckResult(f"stage {state.failed_stage} certificates", False, np.nan, 0.0,
                                      "doubling budget exhausted"))
    return res


def cmd_plan(cfg, out):
    state = _plan(cfg)
    doc = {"config": _echo(cfg), **state.to_dict()}
    _dump(os.path.join(out, "plan.json"), doc)
    res = _plan_checks(state)
    print(f"R_hat = {state.R_hat:.6f}")
    print("\n".join(r.line() for r in res))
    _require(res)


def cmd_hyper(cfg, out):
    h = cfg["hyper"]
    fmap = hy.square_double()
    lines = ["kind,n,x,y,value_agm,value_qseries"]
    for x, y in h["points"]:
        z = complex(x, y)
        lines.append(f"density,,{x!r},{y!r},{hy.density_X(z, 'agm')!r},{hy.density_X(z, 'qseries')!r}")
    prev = np.inf
    res = []
    for n in range(h["n_max"] + 1):
        w = hy.contraction_witness(fmap, h["L"], n, check=False)
        lines.append(f"pullback_length,{n},,,{w.hyp_length!r},")
        lines.append(f"pullback_diameter,{n},,,{w.diameter!r},")
        res.append(verify.CheckResult(f"pullback {n} does not lengthen", w.hyp_length <= prev * (1 + 1e-5),
                                      w.hyp_length, prev))
        prev = w.hyp_length
    with open(os.path.join(out, "hyper.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    n_small, _ = hy.first_small_pullback(fmap, h["L"])
    print(f"first pullback with Euclidean diameter < 1: n = {n_small}")
    _require(res)


def cmd_report(cfg, out):
    state = _plan(cfg)
    comps = dy.planner_components(state)
    eps = cfg["eps"] if cfg["eps"] is not None else dy.whyburn_eps(state.R_hat)
    wb = dy.whyburn_report(comps, eps)
    t = Tiling(cfg["diameters"])
    model = dy.diamond_components(t)
    tol = {"solver_tol": cfg["solver"]["tol"], "margin_floor": cfg["planner"]["margin_floor"],
           "eps": eps, "monotone_b_max_drop": max(state.monotone_b) if state.monotone_b else 0.0,
           "coordinates": "planner components in psi coordinates; model components in model space"}
    doc = json.loads(dy.report_json(_echo(cfg), state, comps + model, wb, tol))
    doc["plan"] = state.to_dict()
    _dump(os.path.join(out, "report.json"), doc)
    print(wb.verdict)
    res = _plan_checks(state)
    res.append(verify.CheckResult("Whyburn witnesses", len(wb.witnesses) >= len(state.certificates),
                                  len(wb.witnesses), len(state.certificates)))
    _require(res)


COMMANDS = {"build": cmd_build, "check": cmd_check, "mu": cmd_mu, "solve": cmd_solve, "render": cmd_render,
            "plan": cmd_plan, "hyper": cmd_hyper, "report": cmd_report}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on unknown flags
    try:
        cfg = resolve_config(args)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"qcsurgery: error: {e}", file=sys.stderr)
        return 2
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    try:
        COMMANDS[args.command](cfg, out)
    except CheckFailed as e:
        print(f"qcsurgery: {e}", file=sys.stderr)
        return 1
    except (ValueError, OverflowError) as e:
        # bad inputs that only show up once a command runs (e.g. a window beyond the model)
        print(f"qcsurgery: error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
