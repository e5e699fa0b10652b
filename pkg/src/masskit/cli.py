"""Command line interface: ``masskit <command> --config FILE``.

The configuration is an INI file::

    [domain]
    type = round_ball        ; boundary of a flat ball
    radius = 1.0

    [extension]
    type = schwarzschild     ; flat | schwarzschild | quasi_spherical | snapshot
    mass = 0.4
    ; u0 = 1.2, u0_cos2 = 0.1 for quasi_spherical (u0 / (1 - u0_cos2 cos^2 theta))
    ; path = ext.snap for snapshot

    [params]
    epsilon = 0.1
    s0 = 0.1
    delta0 = 0.05
    grid = 8x16
    rho_max = 400
"""

import argparse
import configparser
import csv
import json
import logging
import sys

import numpy as np

from . import snapshot
from .conformal import (
    EllipticProblem,
    ExteriorManifold,
    conformal_constant,
    conformal_transform,
    energy_identity_A,
    interpolate_conformal,
    solve_elliptic,
    static_descent,
    tilt_metric,
)
from .errors import MasskitError
from .geometry import SphereGrid, slice_mean_curvature
from .models import flat_foliation
from .mollifier import CornerMetric, curvature_concentration_profile, mollify_corner
from .pipeline import (
    DomainBoundaryData,
    PipelineParams,
    minimizing_sequence_experiment,
    penrose_check,
    run_mass_reduction,
    validate_corner_pmt,
)
from .quasispherical import bridge_report, build_bridge

log = logging.getLogger("masskit")

DEFAULTS = {
    "domain": {"type": "round_ball", "radius": "1.0"},
    "extension": {"type": "schwarzschild", "mass": "0.4"},
    "params": {"epsilon": "0.1", "s0": "0.1", "delta0": "0.05", "grid": "8x16",
               "rho_max": "400", "ratio": "1.0125", "sigma_init": "0.5"},
}


class Config:
    def __init__(self, path=None):
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.read_dict(DEFAULTS)
        if path is not None:
            with open(path) as fh:
                cp.read_file(fh)
        self.cp = cp
        p = cp["params"]
        nt, _, nphi = p["grid"].lower().partition("x")
        self.grid = SphereGrid(int(nt), int(nphi or 2 * int(nt)))
        self.epsilon = p.getfloat("epsilon")
        self.rho_max = p.getfloat("rho_max")
        self.ratio = p.getfloat("ratio")
        self.params = PipelineParams(s0=p.getfloat("s0"), delta0=p.getfloat("delta0"),
                                     sigma_init=p.getfloat("sigma_init"))

    @property
    def radius(self):
        d = self.cp["domain"]
        if d["type"] != "round_ball":
            raise MasskitError(f"unsupported domain type {d['type']!r}")
        return d.getfloat("radius")

    def domain(self):
        return DomainBoundaryData.round_ball(self.grid, self.radius)

    def extension(self):
        e = self.cp["extension"]
        kind, r0 = e["type"], self.radius
        kw = dict(r0=r0, r_max=self.rho_max, ratio=self.ratio)
        if kind == "flat":
            return ExteriorManifold.flat(self.grid, **kw)
        if kind == "schwarzschild":
            return ExteriorManifold.schwarzschild(self.grid, e.getfloat("mass"), **kw)
        if kind == "quasi_spherical":
            th, _ = self.grid.mesh()
            u0 = e.getfloat("u0", 1.0) / (1.0 - e.getfloat("u0_cos2", 0.0) * np.cos(th) ** 2)
            return ExteriorManifold.quasi_spherical(self.grid, u0, **kw)
        if kind == "snapshot":
            obj = snapshot.load(e["path"])
            if not isinstance(obj, ExteriorManifold):
                raise MasskitError("snapshot does not hold an exterior manifold")
            return obj
        raise MasskitError(f"unsupported extension type {kind!r}")


def _emit_json(obj, path):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def _range(a):
    a = np.asarray(a, float)
    return {"min": float(a.min()), "max": float(a.max())}


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist() if o.size <= 16 else _range(o)
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def _load_exterior(args, cfg):
    if getattr(args, "input", None):
        obj = snapshot.load(args.input)
        if not isinstance(obj, ExteriorManifold):
            raise MasskitError("input snapshot does not hold an exterior manifold")
        return obj
    return cfg.extension()


# commands -----------------------------------------------------------------


def cmd_run(args, cfg):
    eps = args.epsilon if args.epsilon is not None else cfg.epsilon
    report = run_mass_reduction(cfg.domain(), cfg.extension(), eps, cfg.params)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(report.to_csv())
    if args.out:
        snapshot.save(args.out, report.final)
    _emit_json(report.to_dict(), args.json)
    return 0 if all(report.verdict.values()) else 1


def cmd_validate(args, cfg):
    ext = cfg.extension()
    diag = validate_corner_pmt(cfg.domain(), ext)
    if args.penrose:
        diag["penrose"] = penrose_check(ext)
    _emit_json(diag, args.json)
    ok = diag["passes"] and (not args.penrose or diag["penrose"]["passes"])
    return 0 if ok else 1


def cmd_sequence(args, cfg):
    eps = [cfg.epsilon / 2**i for i in range(args.iterations)]
    rows = minimizing_sequence_experiment(cfg.domain(), cfg.extension(), eps, cfg.params)
    if args.csv:
        with open(args.csv, "w") as fh:
            w = csv.DictWriter(fh, [k for k in rows[0] if k != "verdict"],
                               extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    _emit_json(rows, args.json)
    masses = [r["mass"] for r in rows]
    return 0 if all(b <= a for a, b in zip(masses, masses[1:])) else 1


def cmd_bridge(args, cfg):
    dom, ext = cfg.domain(), cfg.extension()
    fm = ext.metric
    t = fm.slices
    k = int(np.searchsorted(t, t[0] + cfg.params.sigma_init + 1e-12)) - 1
    collar = fm.restrict(0, k)
    bridge = build_bridge(dom.H_minus, collar, sigma_init=cfg.params.sigma_init)
    rep = bridge_report(bridge, dom.H_minus.values, collar)
    Hc = slice_mean_curvature(bridge).values
    ks = bridge.meta["sigma_index"]
    rep.update(H_inner=_range(Hc[0]), H_outer=_range(Hc[ks]),
               H_extension_outer=_range(slice_mean_curvature(collar, ks).values))
    if args.out:
        snapshot.save(args.out, bridge)
    _emit_json(rep, args.json)
    return 0


def _reference_corner(cfg, half_width):
    """Flat collar inside the domain boundary joined to the extension."""
    ext = cfg.extension().metric
    r0 = cfg.radius
    t = ext.slices
    k = int(np.searchsorted(t, t[0] + 2 * half_width - 1e-12))
    outer = ext.restrict(0, k)
    h = outer.slices[1] - outer.slices[0]
    n_in = max(int(np.ceil(2 * half_width / h)), 8)
    inner = flat_foliation(cfg.grid, np.linspace(r0 - 2 * half_width, r0, n_in + 1))
    return CornerMetric(inner, outer)


def cmd_mollify(args, cfg):
    corner = _reference_corner(cfg, args.width)
    g_delta = mollify_corner(corner, args.delta)
    if args.out:
        snapshot.save(args.out, g_delta)
    out = {"delta": args.delta, "band": g_delta.meta["band"], "n_slices": g_delta.n_slices}
    if args.report_concentration:
        I = curvature_concentration_profile(corner, args.delta).values
        jump = corner.jump().values
        th, ph = cfg.grid.mesh()
        if args.csv:
            with open(args.csv, "w") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["theta", "phi", "I_delta", "H_minus_minus_H_plus"])
                for row in zip(th.ravel(), ph.ravel(), I.ravel(), jump.ravel()):
                    w.writerow([repr(float(v)) for v in row])
        out.update(I_min=I.min(), I_max=I.max(), jump_min=jump.min(), jump_max=jump.max(),
                   ratio_mean=float(np.mean(I / jump)))
    _emit_json(out, args.json)
    return 0


def _conformal_diag(before, after, sol, extra=None):
    d = {
        "A_fit": sol.A.A if sol is not None else 0.0,
        "A_identity": energy_identity_A(sol) if sol is not None else 0.0,
        "dH_boundary": _range(after.boundary_H().values - before.boundary_H().values),
        "mass_before": before.mass(),
        "mass_after": after.mass(),
    }
    d.update(extra or {})
    return d


def cmd_tilt(args, cfg):
    ext = _load_exterior(args, cfg)
    out = tilt_metric(ext, args.s)
    psi = out.meta["tilt"]["psi"]
    diag = _conformal_diag(ext, out, psi, {"s": args.s,
                                           "dpsi_dn": _range(out.meta["tilt"]["dpsi_dn"].values)})
    if args.out:
        snapshot.save(args.out, out)
    _emit_json(diag, args.json)
    return 0


def cmd_annihilate(args, cfg):
    ext = _load_exterior(args, cfg)
    q = -conformal_constant(ext.n) * np.minimum(ext.scalar_curvature, 0.0)
    sol = solve_elliptic(EllipticProblem(ext, q, 1.0, 1.0))
    out = conformal_transform(ext, sol)
    if args.out:
        snapshot.save(args.out, out)
    _emit_json(_conformal_diag(ext, out, sol), args.json)
    return 0


def cmd_leveldown(args, cfg):
    ext = _load_exterior(args, cfg)
    q = -conformal_constant(ext.n) * np.maximum(ext.scalar_curvature, 0.0)
    sol = solve_elliptic(EllipticProblem(ext, q, 1.0, 1.0))
    out = interpolate_conformal(ext, sol, args.t)
    if args.out:
        snapshot.save(args.out, out)
    _emit_json(_conformal_diag(ext, out, sol, {"t": args.t}), args.json)
    return 0


def cmd_static_descent(args, cfg):
    ext = _load_exterior(args, cfg)
    d = static_descent(ext)
    sol = d.pop("solution")
    d["dudn"] = _range(d["dudn"].values)
    d["mass_before"] = d["mass"][0]
    d["mass_after"] = d["mass"][-1]
    d["A_fit"] = d.pop("A")
    if sol is not None:
        out = conformal_transform(ext, sol)
        d["dH_boundary"] = _range(out.boundary_H().values - ext.boundary_H().values)
        if args.out:
            snapshot.save(args.out, out)
    _emit_json(d, args.json)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="masskit", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--json", help="also write the JSON output to this file")
        p.set_defaults(fn=fn)
        return p

    p = add("run", cmd_run, "full mass-reduction pipeline")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--csv", help="CSV of stage rows")
    p.add_argument("--out", help="snapshot of the final exterior")
    p = add("validate", cmd_validate, "positive-mass-with-corners check")
    p.add_argument("--penrose", action="store_true", help="also run the minimal-area check")
    p = add("sequence", cmd_sequence, "minimizing-sequence experiment")
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--csv")
    p = add("bridge", cmd_bridge, "scalar-flat bridge from the domain boundary data")
    p.add_argument("--out", help="snapshot of the bridge metric")
    p = add("mollify", cmd_mollify, "smooth the domain/extension corner")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--width", type=float, default=0.05, help="collar half width on each side")
    p.add_argument("--report-concentration", action="store_true")
    p.add_argument("--csv", help="CSV of (theta, phi, I_delta, jump)")
    p.add_argument("--out")
    for name, fn, help_ in (("tilt", cmd_tilt, "conformal tilt of the extension"),
                            ("annihilate", cmd_annihilate, "remove negative scalar curvature"),
                            ("leveldown", cmd_leveldown, "trade positive scalar curvature for mass"),
                            ("static-descent", cmd_static_descent, "conformal descent path")):
        p = add(name, fn, help_)
        p.add_argument("--input", help="exterior snapshot (default: build from config)")
        p.add_argument("--out", help="output snapshot")
        if name == "tilt":
            p.add_argument("--s", type=float, default=0.1)
        if name == "leveldown":
            p.add_argument("--t", type=float, default=1.0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config(args.config)
        return args.fn(args, cfg)
    except (MasskitError, OSError, ValueError, KeyError) as exc:
        print(f"masskit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
