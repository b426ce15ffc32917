"""Command line front end.

Usage::

    contactlab COMMAND SPEC [--grid N] [--tol X] [--horizon T] [--out DIR] [--json] [--csv]

``SPEC`` is a JSON pair spec (a path, or the name of a built-in spec such as
``saddle_slab``). Exit status is 0 when every requested check passes, 1 when
a mathematical check fails and 2 on input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CheckFailure, ContactLabError, InputError

COMMANDS = ("analyze", "sigma", "frame", "converge", "liouville", "skeleton", "reeb", "certify",
            "cylinder", "seed-to-pair")
THREADS_ENV = "CONTACTLAB_THREADS"


# -- spec loading -------------------------------------------------------------------

def builtin_specs() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("contactlab").joinpath("specs").iterdir()
                  if p.name.endswith(".json"))


def resolve_spec(path: str) -> Path:
    p = Path(path)
    if p.is_file():
        return p
    stem = p.name
    for suffix in (".json", ".pair"):
        if stem.endswith(suffix):
            stem = stem[:-len(suffix)]
    if stem in builtin_specs():
        return Path(str(resources.files("contactlab").joinpath("specs", stem + ".json")))
    raise InputError(f"spec file {path!r} not found")


def load_spec(path: str) -> dict:
    p = resolve_spec(path)
    try:
        spec = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(spec, dict):
        raise InputError(f"{p}: spec must be a JSON object")
    spec.setdefault("name", p.stem)
    return spec


class Context:
    """Lazily built objects shared by the commands."""

    def __init__(self, spec: dict, grid: int | None, tol: float | None, horizon: float | None):
        self.spec = spec
        self.n = int(grid or spec.get("grid", 8))
        self.tol = float(tol or spec.get("tol", 1e-10))
        self.horizon = horizon
        self._cache = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def chart(self):
        from .geometry import chart_from_dict
        if "chart" not in self.spec:
            raise InputError("spec has no chart")
        return self._get("chart", lambda: chart_from_dict(self.spec["chart"]))

    @property
    def constants(self) -> dict:
        return {k: float(v) for k, v in self.spec.get("constants", {}).items()}

    def form(self, texts, degree=1):
        from .geometry import Form
        if not isinstance(texts, list) or len(texts) != 3:
            raise InputError(f"a {degree}-form needs 3 coefficient strings")
        return Form.from_strings(degree, texts, self.chart, self.constants)

    def field(self, texts):
        from .geometry import VectorField
        return VectorField.from_strings(texts, self.chart, self.constants)

    @property
    def grid(self):
        from .geometry import Grid
        return self._get("grid", lambda: Grid(self.chart, self.n))

    @property
    def pair(self):
        from .contact_pair import ContactPair
        for key in ("alpha_minus", "alpha_plus"):
            if key not in self.spec:
                raise InputError(f"spec has no {key}")
        return self._get("pair", lambda: ContactPair(self.form(self.spec["alpha_minus"]),
                                                     self.form(self.spec["alpha_plus"])))

    @property
    def balanced(self):
        from .contact_pair import balance
        return self._get("bp", lambda: balance(self.pair, self.grid))

    @property
    def scalars(self):
        from .contact_pair import pair_scalars
        return self._get("sc", lambda: pair_scalars(self.balanced))

    def samples(self, k: int | None = None) -> np.ndarray:
        """Deterministic random sample of grid points (all of them if the grid is small)."""
        k = int(k or self.spec.get("sample_points", 16))
        pts = self.grid.points
        if len(pts) <= k:
            return pts
        rng = np.random.default_rng(0)
        return pts[np.sort(rng.choice(len(pts), size=k, replace=False))]


def _stats(v) -> dict:
    v = np.asarray(v, dtype=float).ravel()
    return {"min": float(np.min(v)), "max": float(np.max(v))}


# -- commands ----------------------------------------------------------------------

def cmd_analyze(ctx: Context):
    from .contact_pair import (check_lie_identities, connection_graph, pair_singular_set,
                               positivity_test)
    from .exprlang import to_source
    bp, sc, grid = ctx.balanced, ctx.scalars, ctx.grid
    vals = sc.sample(ctx.chart, grid.points)
    lie = check_lie_identities(bp, sc, grid)
    pos = positivity_test(bp, grid)
    sing, notes = pair_singular_set(bp, sc, grid)
    graph = connection_graph(bp.X, sing, horizon=ctx.horizon or 50.0) if sing else None
    res = {
        "X": [to_source(c) for c in bp.X.coeffs],
        "scalars": {k: _stats(np.broadcast_to(v, (grid.size,))) for k, v in vals.items()},
        "lie": {"residual_minus": lie.residual_minus, "residual_plus": lie.residual_plus,
                "passed": lie.passed},
        "positivity": {"verdict": pos.verdict, "delta_plus": int(len(pos.delta_plus)),
                       "delta_minus": int(len(pos.delta_minus))},
        "singular": [s.to_dict() for s in sing],
        "singular_notes": notes,
        "connections": [r.to_dict() for r in graph.records] if graph else [],
        "broken_triple": bool(graph.broken_triple) if graph else False,
    }
    csv_rows = {"scalars": (grid.points, {k: np.broadcast_to(v, (grid.size,)) for k, v in vals.items()})}
    return res, lie.passed, csv_rows


def cmd_sigma(ctx: Context):
    from .bounded_ode import sigma_fields
    sf = sigma_fields(ctx.balanced, ctx.scalars, ctx.grid, ctx.tol, residuals=True)
    ok = ~np.isnan(sf.residual_u)
    res = {"sigma_u": _stats(sf.sigma_u), "sigma_s": _stats(sf.sigma_s),
           "missing": int(np.sum(sf.missing)), "frozen": int(np.sum(sf.frozen)),
           "width_max": float(max(np.max(sf.width_u), np.max(sf.width_s))),
           "residual_u": float(np.max(sf.residual_u[ok], initial=0.0)),
           "residual_s": float(np.max(sf.residual_s[ok], initial=0.0))}
    return res, not np.any(sf.missing), {"sigma": (sf.points, {"sigma_u": sf.sigma_u, "sigma_s": sf.sigma_s})}


def cmd_frame(ctx: Context):
    from .contact_pair import positivity_test
    from .plane_fields import cone_and_vanishing_checks, frame_at
    fr = frame_at(ctx.balanced, ctx.scalars, ctx.grid.points, ctx.tol, normalize=True)
    inv = fr.invariants()
    cone = cone_and_vanishing_checks(fr, ctx.balanced, positivity_test(ctx.balanced, ctx.grid), ctx.scalars)
    passed = (inv["rate_gap_min"] >= 2 - 1e-6 and cone.passed
              and max(inv["alpha_u"], inv["alpha_s"], inv["normalization"]) < 1e-9)
    res = {"invariants": inv, "r_u": _stats(fr.r_u), "r_s": _stats(fr.r_s), "cone": cone.to_dict()}
    cols = {"sigma_u": fr.sigma_u, "sigma_s": fr.sigma_s, "r_u": fr.r_u, "r_s": fr.r_s}
    for name, arr in (("alpha_u", fr.alpha_u), ("alpha_s", fr.alpha_s)):
        for i in range(3):
            cols[f"{name}_{i}"] = arr[:, i]
    return res, passed, {"frame": (fr.points, cols)}


def cmd_converge(ctx: Context):
    from .plane_fields import plane_transport_convergence
    T = ctx.horizon or float(ctx.spec.get("horizon", 5.0))
    rep = plane_transport_convergence(ctx.balanced, ctx.scalars, ctx.samples(8), T)
    return {"T_max": T, "samples": [s.to_dict() for s in rep.samples]}, rep.passed, {}


def cmd_liouville(ctx: Context):
    from .liouville import anosov_liouville_check, liouville_check
    v = liouville_check(ctx.balanced, ctx.scalars, ctx.grid)
    res = {"pair": v.to_dict()}
    passed = v.liouville
    if ctx.spec.get("anosov_check"):
        _, flipped = anosov_liouville_check(ctx.balanced, ctx.grid)
        res["flipped"] = flipped.to_dict()
        passed = passed and flipped.liouville
    return res, passed, {}


def cmd_skeleton(ctx: Context):
    from .liouville import skeleton
    horizon = ctx.horizon or 10.0
    sk = skeleton(ctx.balanced, ctx.scalars, ctx.samples(), horizon=horizon, tol=ctx.tol)
    return sk.to_dict(), sk.passed, {"skeleton": (sk.points, {"sigma": sk.sigma,
                                                             "graph_code": sk.graph_codes})}


def cmd_reeb(ctx: Context):
    from .liouville import reeb_transversality
    rd = reeb_transversality(ctx.balanced, ctx.scalars, ctx.samples(), ctx.spec.get("sigma", "0"),
                             tol=ctx.tol)
    d = rd.to_dict()
    return d, rd.signs_ok and rd.agreement < 1e-4, {
        "reeb": (rd.points, {"alpha_s_R_plus": rd.numeric_plus, "alpha_s_R_minus": rd.numeric_minus})}


def cmd_certify(ctx: Context):
    from .certificates import (hypertaut_certificate, strong_tightness_certificate, taut_certificate,
                               volume_preserving_transversal)
    w = ctx.spec.get("witnesses")
    if not w:
        raise InputError("spec has no witnesses")
    out = {}
    g = ctx.grid
    if "taut" in w:
        out["taut"] = taut_certificate(ctx.form(w["taut"]["omega"], 2), ctx.form(w["taut"]["eta"]), g,
                                       raise_on_failure=False)
    if "strong_tight" in w:
        out["strong_tight"] = strong_tightness_certificate(
            ctx.pair, ctx.form(w["strong_tight"]["omega"], 2), g,
            orientation=w["strong_tight"].get("orientation", "contact"), raise_on_failure=False)
    if "hypertaut" in w:
        out["hypertaut"] = hypertaut_certificate(ctx.form(w["hypertaut"]["beta"]),
                                                 ctx.form(w["hypertaut"]["eta"]), g, raise_on_failure=False)
    if "transversal" in w:
        out["transversal"] = volume_preserving_transversal(ctx.field(w["transversal"]["v"]), ctx.pair, g,
                                                           raise_on_failure=False)
    return {k: c.to_dict() for k, c in out.items()}, all(c.verdict for c in out.values()), {}


def cmd_cylinder(ctx: Context):
    from .cylinder import (CylinderField, circle_foliation_approx, closed_orbits, closed_transversal,
                           return_map)
    cy = ctx.spec.get("cylinder")
    if not cy or "F" not in cy:
        raise InputError("spec has no cylinder field")
    consts = {k: float(v) for k, v in cy.get("constants", {}).items()}
    F = CylinderField.from_expr(str(cy["F"]), consts)
    lo, hi = cy.get("range", [-1.0, 1.0])
    xs = np.linspace(lo, hi, 2 * ctx.n + 1)
    rm = return_map(F, xs)
    loops = closed_orbits(F, (lo, hi))
    tr = closed_transversal(F, tuple(cy.get("transversal_range", [lo, hi])))
    res = {"order_preserved": rm.order_preserved,
           "fixed_points": [lp.x0 for lp in loops],
           "loop_residual": max((lp.residual for lp in loops), default=0.0),
           "transversal": None if tr is None else {"margin": tr.margin, "sign": tr.sign, "band": list(tr.band),
                                                    "x0": tr.x0, "N": tr.N, "closing_error": tr.closing_error}}
    passed = rm.order_preserved and (tr is None or tr.margin > 0)
    if "band" in cy:
        cf = circle_foliation_approx(F, tuple(cy["band"]))
        res["circle_foliation"] = {"band": list(cf.band), "distance": cf.distance, "residual": cf.residual,
                                   "monotone": cf.monotone}
        passed = passed and cf.residual < 1e-6
    cols = {"P": rm.P, "d": rm.displacement}
    return res, passed, {"return_map": (xs[:, None], cols)}


def cmd_seed_to_pair(ctx: Context):
    from .exprlang import to_source
    from .liouville import liouville_pair_from_foliation
    seed = ctx.spec.get("seed")
    if not seed:
        raise InputError("spec has no seed")
    kw = {"eps_grid": tuple(seed["eps_grid"])} if "eps_grid" in seed else {}
    fp = liouville_pair_from_foliation(ctx.form(seed["alpha"]), ctx.form(seed["beta"]), ctx.grid, **kw)
    res = fp.to_dict()
    res["alpha_minus"] = [to_source(c) for c in fp.pair.alpha_minus.coeffs]
    res["alpha_plus"] = [to_source(c) for c in fp.pair.alpha_plus.coeffs]
    return res, fp.min_f0 > -2, {}


HANDLERS = {"analyze": cmd_analyze, "sigma": cmd_sigma, "frame": cmd_frame, "converge": cmd_converge,
            "liouville": cmd_liouville, "skeleton": cmd_skeleton, "reeb": cmd_reeb, "certify": cmd_certify,
            "cylinder": cmd_cylinder, "seed-to-pair": cmd_seed_to_pair}


# -- output ------------------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if np.isfinite(o) else repr(o)
    return o


def write_csv(path: Path, points: np.ndarray, columns: dict):
    names = ["x", "y", "z"][:points.shape[1]] + list(columns)
    data = np.column_stack([points] + [np.asarray(v, dtype=float).ravel() for v in columns.values()])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(names)
        for row in data:
            wr.writerow([repr(float(v)) for v in row])


def run(command: str, spec_path: str, grid: int | None = None, tol: float | None = None,
        horizon: float | None = None, out: str | None = None, as_json: bool = False,
        dump_csv: bool = False, stream=None) -> int:
    """Execute one command; returns the exit status."""
    stream = stream or sys.stdout
    report = {"tool": {"name": "contactlab", "version": __version__}, "command": command,
              "config": {"spec": spec_path, "grid": grid, "tol": tol, "horizon": horizon,
                         "threads": os.environ.get(THREADS_ENV)}}
    t0 = time.perf_counter()
    csv_rows = {}
    try:
        if command not in HANDLERS:
            raise InputError(f"unknown command {command!r}")
        spec = load_spec(spec_path)
        report["spec"] = spec
        ctx = Context(spec, grid, tol, horizon)
        results, passed, csv_rows = HANDLERS[command](ctx)
        report["results"] = results
        report["passed"] = bool(passed)
        code = 0 if passed else 1
    except InputError as exc:
        report["error"] = {"type": type(exc).__name__, "operation": command, "message": str(exc)}
        report["passed"] = False
        code = 2
    except CheckFailure as exc:
        report["error"] = {"type": type(exc).__name__, "operation": command, "message": str(exc),
                           "worst_point": exc.worst_point, "value": exc.value}
        report["passed"] = False
        code = 1
    except ContactLabError as exc:
        report["error"] = {"type": type(exc).__name__, "operation": command, "message": str(exc)}
        report["passed"] = False
        code = 1
    report["timing"] = {"total_seconds": time.perf_counter() - t0}
    report = _jsonable(report)
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        name = report.get("spec", {}).get("name", Path(spec_path).stem)
        (d / f"{name}_{command}.json").write_text(text + "\n", encoding="utf-8")
        if dump_csv:
            for key, (pts, cols) in csv_rows.items():
                write_csv(d / f"{name}_{command}_{key}.csv", np.asarray(pts), cols)
    if as_json:
        stream.write(text + "\n")
    else:
        status = {0: "PASS", 1: "FAIL", 2: "ERROR"}[code]
        msg = report.get("error", {}).get("message", "")
        stream.write(f"{command}: {status}" + (f" ({msg})" if msg else "") + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contactlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("spec", help="JSON spec path or built-in spec name")
    p.add_argument("--grid", type=int, help="samples per axis")
    p.add_argument("--tol", type=float, help="bounded-solution tolerance")
    p.add_argument("--horizon", type=float, help="integration horizon")
    p.add_argument("--out", help="directory for the JSON report and CSV dumps")
    p.add_argument("--json", action="store_true", help="print the JSON report")
    p.add_argument("--csv", action="store_true", help="write CSV grid dumps (needs --out)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    return run(args.command, args.spec, args.grid, args.tol, args.horizon, args.out, args.json, args.csv)


if __name__ == "__main__":
    sys.exit(main())
