"""Config-driven batch runner.

Usage::

    symphom alpha --config run.ini --out results/
    symphom check --config battery.ini --out results/ --tolerance-scale 1.5

The config is an INI file.  ``[hamiltonian]`` defines H either by ``expr``
(closed-form expression in t, q1.., p1..) or by ``grid`` (path to a grid
file, relative to the config).  Each scenario reads its own section; see
README.md for the keys and the CSV schemas.

Exit codes: 0 success, 1 configuration or runtime error, 2 failed checks.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import platform
import re
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, catalog
from .geometry import CohomologyClass, from_expression
from .gfqi import export_grid
from .gridio import GridFileError, hamiltonian_from_grid
from .quasimorphism import (Battery, MuParams, PropertyReport, RouteUnavailable, check_axioms,
                            cross_check_alpha_vs_gfqi, gfqi_spectra, homogenized_hamiltonian)
from .svg import diagram_plot, line_plot
from .variational import AlphaRow, MinimizeConfig, alpha_profile

log = logging.getLogger("symphom")

SCENARIOS = ("alpha", "homogenize", "gfqi-spectra", "check", "cross-check")
CATALOG = {"kinetic": catalog.kinetic, "pendulum": catalog.pendulum, "quartic": catalog.quartic,
           "zero": catalog.zero, "product": catalog.product_kinetic_pendulum}


class ConfigError(ValueError):
    """Raised with a message naming the offending section, key and line."""


# ----------------------------------------------------------------- config

class _Config:
    def __init__(self, path: Path, text: str | None = None):
        self.path = path
        self.text = path.read_text() if text is None else text
        self.parser = configparser.ConfigParser(interpolation=None)
        try:
            self.parser.read_string(self.text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def line_of(self, section, key=None):
        sec = None
        for i, line in enumerate(self.text.splitlines(), 1):
            s = line.strip()
            m = re.match(r"\[(.+)\]$", s)
            if m:
                sec = m.group(1).strip()
                if key is None and sec == section:
                    return i
            elif key is not None and sec == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
                return i
        return None

    def error(self, section, key, msg):
        line = self.line_of(section, key)
        where = f"{self.path}:{line}" if line else str(self.path)
        field = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigError(f"{where}: {field}: {msg}")

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def get(self, section, key, default=None, required=False):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        if required:
            if not self.parser.has_section(section):
                raise self.error(section, None, f"missing section (required field {key!r})")
            raise self.error(section, key, "missing required field")
        return default

    def number(self, section, key, default, kind=float, positive=False):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            v = kind(raw)
        except ValueError:
            raise self.error(section, key, f"expected {kind.__name__}, got {raw!r}") from None
        if positive and not v > 0:
            raise self.error(section, key, f"must be positive, got {raw!r}")
        return v

    def boolean(self, section, key, default):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise self.error(section, key, f"expected a boolean, got {raw!r}") from None

    def values(self, section, key, default, kind=float):
        """Comma list, or ``lo:hi:n`` for n evenly spaced points."""
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            if ":" in raw:
                lo, hi, n = raw.split(":")
                # 12 significant digits drop linspace round-off such as 0.40000000000000036
                return tuple(kind(float(f"{x:.12g}")) for x in np.linspace(float(lo), float(hi), int(n)))
            return tuple(kind(x) for x in raw.replace(";", ",").split(",") if x.strip())
        except ValueError:
            raise self.error(section, key, f"cannot parse {raw!r} as a list of {kind.__name__}") from None

    def classes(self, section, key, default, dim):
        """Classes in R^dim; for dim > 1 entries are ``a1 a2`` separated by commas."""
        raw = self.get(section, key)
        if raw is None:
            return default
        out = []
        try:
            if dim == 1:
                return tuple((x,) for x in self.values(section, key, ()))
            for item in raw.split(","):
                v = tuple(float(x) for x in item.split())
                if len(v) != dim:
                    raise ValueError
                out.append(v)
        except ValueError:
            raise self.error(section, key, f"expected classes of dimension {dim}") from None
        return tuple(out)

    def echo(self):
        return {s: dict(self.parser.items(s)) for s in self.parser.sections()}


def _hamiltonian(cfg: _Config):
    sec = "hamiltonian"
    if not cfg.parser.has_section(sec):
        raise ConfigError(f"{cfg.path}: [hamiltonian]: missing section (define expr, grid or catalog)")
    expr, grid, cat = cfg.get(sec, "expr"), cfg.get(sec, "grid"), cfg.get(sec, "catalog")
    given = [x for x in (expr, grid, cat) if x]
    if len(given) != 1:
        raise cfg.error(sec, None, "exactly one of expr, grid, catalog is required")
    tonelli = cfg.boolean(sec, "tonelli", False)
    name = cfg.get(sec, "name")
    if cat:
        if cat not in CATALOG:
            raise cfg.error(sec, "catalog", f"unknown entry {cat!r}; choose from {sorted(CATALOG)}")
        return CATALOG[cat]()
    radius = cfg.number(sec, "fiber_radius", 4.0, positive=True)
    if expr:
        dim = cfg.number(sec, "dim", 1, int, positive=True)
        try:
            return from_expression(expr, dim, tonelli=tonelli, fiber_radius=radius, name=name or "")
        except ValueError as exc:
            raise cfg.error(sec, "expr", str(exc)) from None
    path = (cfg.path.parent / grid).resolve()
    if not path.exists():
        raise cfg.error(sec, "grid", f"file {str(path)!r} does not exist")
    interp = cfg.get(sec, "interpolation", "cubic")
    if interp not in ("cubic", "linear"):
        raise cfg.error(sec, "interpolation", f"expected cubic or linear, got {interp!r}")
    try:
        return hamiltonian_from_grid(path, tonelli=tonelli, fiber_radius=radius if cfg.has(sec, "fiber_radius") else None,
                                     name=name, interpolation=interp)
    except GridFileError as exc:
        raise cfg.error(sec, "grid", str(exc)) from None


def _params(cfg: _Config, seed: int) -> MuParams:
    sec = "params"
    ks = cfg.values(sec, "k_schedule", MuParams().k_schedule, int)
    if not ks or min(ks) < 1:
        raise cfg.error(sec, "k_schedule", "horizons must be positive integers")
    spp = cfg.number(sec, "steps_per_period", 8, int, positive=True)
    if spp < 8:
        raise cfg.error(sec, "steps_per_period", "must be at least 8")
    gtol = cfg.number(sec, "gtol", 1e-8, positive=True)
    gk = cfg.values(sec, "gfqi_k", MuParams().gfqi_k, int)
    minimize = MinimizeConfig(gtol=gtol, seed=seed)
    return MuParams(k_schedule=tuple(ks), steps_per_period=spp, minimize=minimize, gfqi_k=tuple(gk))


# ---------------------------------------------------------------- helpers

def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _r(x) -> str:
    return repr(float(x))


class _Run:
    def __init__(self, out: Path):
        self.out = out
        self.files = []
        self.timings = {}

    def write(self, name, text):
        p = self.out / name
        p.write_text(text)
        self.files.append(name)

    def timed(self, label):
        run = self

        class _T:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                run.timings[label] = round(1e3 * (time.perf_counter() - self.t), 3)
        return _T()


# -------------------------------------------------------------- scenarios

def _scenario_alpha(cfg, run, args):
    H = _hamiltonian(cfg)
    if not H.tonelli:
        raise cfg.error("hamiltonian", "tonelli", "the alpha scenario needs a Tonelli Hamiltonian (tonelli = true)")
    params = _params(cfg, args.seed)
    grid = cfg.classes("alpha", "a_grid", None, H.dim)
    if not grid:
        raise cfg.error("alpha", "a_grid", "missing required field")
    rows = []
    with run.timed("alpha_profile"):
        prof = alpha_profile(H, grid, params.k_schedule, params.steps_per_period, params.minimize,
                             jobs=args.jobs, rows=rows)
    run.row_times = {f"{';'.join(map(repr, r.a))}|k={r.k}": round(r.wall_time_ms, 3) for r in rows}
    run.write("alpha_rows.csv", _csv([r.csv_fields() for r in rows], AlphaRow.CSV_HEADER))
    table = [(";".join(_r(x) for x in a), _r(e.extrapolated), _r(e.fekete_bound), _r(e.uncertainty), e.model)
             for a, e in prof]
    run.write("alpha_profile.csv", _csv(table, ("a", "alpha", "fekete_bound", "uncertainty", "model")))
    if H.dim == 1:
        xs = [a[0] for a, _ in prof]
        svg = line_plot([("alpha", xs, [e.extrapolated for _, e in prof]),
                         ("Fekete bound", xs, [e.fekete_bound for _, e in prof])],
                        title=f"alpha profile of {H.name}", xlabel="a", ylabel="alpha(a)")
        run.write("alpha_profile.svg", svg)
    return 0


def _scenario_homogenize(cfg, run, args):
    H = _hamiltonian(cfg)
    params = _params(cfg, args.seed)
    grid = cfg.classes("homogenize", "p_grid", None, H.dim)
    if not grid:
        raise cfg.error("homogenize", "p_grid", "missing required field")
    route = cfg.get("homogenize", "route", "auto")
    if route not in ("auto", "variational", "gfqi"):
        raise cfg.error("homogenize", "route", f"unknown route {route!r}")
    with run.timed("homogenize"):
        try:
            prof = homogenized_hamiltonian(H, grid, route, params)
        except RouteUnavailable as exc:
            raise cfg.error("homogenize", "route", str(exc)) from None
    table = [(";".join(_r(x) for x in p), _r(v), _r(u)) for p, v, u in prof]
    run.write("hbar.csv", _csv(table, ("p", "hbar", "uncertainty")))
    if H.dim == 1:
        run.write("hbar.svg", line_plot([("Hbar", [p[0] for p, _, _ in prof], [v for _, v, _ in prof])],
                                        title=f"homogenized {H.name}", xlabel="p", ylabel="Hbar(p)"))
    return 0


def _scenario_gfqi(cfg, run, args):
    H = _hamiltonian(cfg)
    params = _params(cfg, args.seed)
    ks = cfg.values("gfqi", "k", (1,), int)
    a = cfg.number("gfqi", "a", 0.0)
    export = cfg.boolean("gfqi", "export_grid", False)
    rows = []
    for k in ks:
        with run.timed(f"gfqi k={k}"):
            try:
                S, rep = gfqi_spectra(H, CohomologyClass([a]), k, params)
            except RouteUnavailable as exc:
                raise cfg.error("gfqi", "k", str(exc)) from None
        for level, lo, hi in rep.levels:
            rows.append((str(k), _r(a), level, _r(lo), _r(hi), "", ""))
        rows.append((str(k), _r(a), "final", _r(rep.ell_minus), _r(rep.ell_plus), _r(rep.refinement_error),
                     str(S.neg_index)))
        run.write(f"diagram_k{k}.csv", rep.diagram.to_csv())
        run.write(f"diagram_k{k}.svg", diagram_plot(rep.diagram.canonical(), title=f"{H.name} k={k}"))
        if export:
            export_grid(S, run.out / f"gf_k{k}.grid")
            run.files.append(f"gf_k{k}.grid")
    run.write("spectra.csv", _csv(rows, ("k", "a", "grid", "ell_minus", "ell_plus", "refinement_error",
                                         "neg_index")))
    return 0


def _battery(cfg) -> Battery:
    sec, b = "check", Battery()
    kw = {}
    for key in ("pendulum_classes", "kinetic_classes", "quartic_classes", "covering_classes"):
        if cfg.has(sec, key):
            kw[key] = cfg.values(sec, key, ())
    if cfg.has(sec, "covering_degrees"):
        kw["covering_degrees"] = cfg.values(sec, "covering_degrees", (), int)
    if cfg.has(sec, "lipschitz_pair"):
        pair = cfg.values(sec, "lipschitz_pair", ())
        if len(pair) != 2:
            raise cfg.error(sec, "lipschitz_pair", "expected two classes")
        kw["lipschitz_pair"] = pair
    for key in ("plateau_value",):
        kw[key] = cfg.number(sec, key, getattr(b, key))
    for key in ("rel_tol", "route_tol"):
        kw[key] = cfg.number(sec, key, getattr(b, key), positive=True)
    for key in ("include_zero", "include_negative", "include_cross_route"):
        kw[key] = cfg.boolean(sec, key, getattr(b, key))
    if "pendulum_classes" in kw and not kw["pendulum_classes"]:
        raise cfg.error(sec, "pendulum_classes", "needs at least one class")
    return replace(b, **kw)


def _scenario_check(cfg, run, args):
    battery = _battery(cfg)
    params = _params(cfg, args.seed)
    with run.timed("check_axioms"):
        rep = check_axioms(battery, params, tolerance_scale=args.tolerance_scale)
    run.write("properties.csv", rep.to_csv())
    summary = rep.summary()
    run.write("summary.txt", summary)
    sys.stdout.write(summary)
    return 0 if rep.passed else 2


def _scenario_cross(cfg, run, args):
    H = _hamiltonian(cfg)
    if H.dim != 1 or not H.tonelli:
        raise cfg.error("hamiltonian", None, "cross-check needs a Tonelli Hamiltonian on T^1")
    params = _params(cfg, args.seed)
    ks = cfg.values("cross-check", "k", (1, 2), int)
    a = cfg.number("cross-check", "a", 0.0)
    tol = cfg.number("cross-check", "rel_tol", 0.03, positive=True)
    rep = PropertyReport()
    for k in ks:
        with run.timed(f"cross-check k={k}"):
            for rec in cross_check_alpha_vs_gfqi(H, k, a, params, rel_tol=tol * args.tolerance_scale):
                rep.add(rec)
    run.write("cross_check.csv", rep.to_csv())
    sys.stdout.write(rep.summary())
    return 0 if rep.passed else 2


HANDLERS = {"alpha": _scenario_alpha, "homogenize": _scenario_homogenize, "gfqi-spectra": _scenario_gfqi,
            "check": _scenario_check, "cross-check": _scenario_cross}


def _versions():
    import numba
    import scipy
    return {"symphom": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "platform": platform.platform()}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="symphom", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="scenario", required=True)
    for name in SCENARIOS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, default=None, help="INI file (optional for check)")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized starts")
        sp.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply all check tolerances")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if not args.tolerance_scale > 0:
            raise ConfigError("--tolerance-scale must be positive")
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.config is None:
            if args.scenario != "check":
                raise ConfigError(f"{args.scenario}: --config is required")
            cfg_path = None
            cfg = None
        else:
            cfg_path = args.config
            if not cfg_path.exists():
                raise ConfigError(f"config file {str(cfg_path)!r} does not exist")
            cfg = _Config(cfg_path)
        if cfg is None:
            cfg = _Config(Path("<defaults>"), "")
        args.out.mkdir(parents=True, exist_ok=True)
        r = _Run(args.out)
        r.row_times = {}
        status = HANDLERS[args.scenario](cfg, r, args)
    except ConfigError as exc:
        print(f"symphom: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # reported, not raised, so batch drivers see an exit status
        log.debug("failure", exc_info=True)
        print(f"symphom: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    manifest = {
        "scenario": args.scenario,
        "config_path": str(cfg_path) if cfg_path else None,
        "config_text": cfg.text,
        "config": cfg.echo(),
        "seed": args.seed,
        "jobs": args.jobs,
        "tolerance_scale": args.tolerance_scale,
        "versions": _versions(),
        "outputs": sorted(r.files),
        "exit_status": status,
        "wall_time_ms": {"total": round(1e3 * (time.perf_counter() - t0), 3), **r.timings},
        "row_wall_time_ms": r.row_times,
    }
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
