"""Command line interface: ``plhom {cell,micro,macro,converge,validate}``.

Configuration files are INI style with the sections ``[geometry]``,
``[problem]``, ``[nonlinearity]``, ``[discretization]`` and ``[study]``;
see ``docs/config.md`` for the schema.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import re
import sys
import time

import numpy as np

from . import __version__
from .cell_problem import build_flux_table, effective_tensor_p2
from .errors import BadConfig, PlhomError
from .geometry import build_cell, build_domain_mesh, build_perforated_mesh, build_periodic_cell_mesh, mesh_statistics
from .harness import StudyConfig, homogenized_flux, run_convergence_study, run_measure_checks
from .macro import MacroRunConfig, run_macro
from .micro import MicroRunConfig, run_micro
from .nonlinearity import check_nonlinearity, cubic, linear, polynomial, validate_exponents, zero
from .output import RunManifest, _plain, diagnostics_csv, write_vtk

logger = logging.getLogger(__name__)

SECTIONS = ("geometry", "problem", "nonlinearity", "discretization", "study")

# keys that must be present (section, key); everything else has a documented default
REQUIRED = {
    "micro": [("geometry", "hole"), ("geometry", "epsilon"), ("problem", "p"), ("problem", "kappa"),
              ("problem", "T"), ("problem", "initial"), ("nonlinearity", "f"), ("nonlinearity", "g"),
              ("discretization", "dt"), ("discretization", "h")],
    "macro": [("geometry", "hole"), ("problem", "p"), ("problem", "kappa"), ("problem", "T"),
              ("problem", "initial"), ("nonlinearity", "f"), ("nonlinearity", "g"),
              ("discretization", "dt"), ("discretization", "h")],
    "converge": [("geometry", "hole"), ("problem", "p"), ("problem", "kappa"), ("problem", "T"),
                 ("problem", "initial"), ("nonlinearity", "f"), ("nonlinearity", "g"),
                 ("discretization", "dt"), ("discretization", "h"), ("study", "epsilons")],
    "validate": [("problem", "p"), ("nonlinearity", "f"), ("nonlinearity", "g")],
}


class Config:
    """Parsed config file with typed, line-aware accessors."""

    def __init__(self, text, path="<config>"):
        self.path = path
        self.lines = text.splitlines()
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=path)
        except configparser.MissingSectionHeaderError as exc:
            raise BadConfig("key outside any section", line=exc.lineno) from None
        except configparser.ParsingError as exc:
            lineno = exc.errors[0][0] if exc.errors else None
            raise BadConfig("unparsable line", line=lineno) from None
        except configparser.DuplicateOptionError as exc:
            raise BadConfig("duplicate key", field=f"{exc.section}.{exc.option}", line=exc.lineno) from None
        except configparser.DuplicateSectionError as exc:
            raise BadConfig("duplicate section", field=exc.section, line=exc.lineno) from None
        for sec in parser.sections():
            if sec not in SECTIONS:
                raise BadConfig(f"unknown section [{sec}]", field=sec, line=self._line(sec))
        self.parser = parser

    @classmethod
    def read(cls, path):
        try:
            with open(path) as fh:
                return cls(fh.read(), path)
        except OSError as exc:
            raise BadConfig(f"cannot read config: {exc.strerror}", field=str(path)) from None

    def _line(self, section, key=None):
        in_sec = False
        for i, raw in enumerate(self.lines, 1):
            s = raw.strip()
            if s.startswith("["):
                in_sec = s == f"[{section}]"
                if in_sec and key is None:
                    return i
            elif in_sec and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
                return i
        return None

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def raw(self, section, key, default=None, required=False):
        if self.has(section, key):
            return self.parser.get(section, key).strip()
        if required:
            raise BadConfig("missing required key", field=f"{section}.{key}")
        return default

    def _typed(self, section, key, conv, default, required):
        v = self.raw(section, key, None, required)
        if v is None:
            return default
        try:
            return conv(v)
        except (ValueError, TypeError) as exc:
            raise BadConfig(f"invalid value {v!r}: {exc}", field=f"{section}.{key}",
                            line=self._line(section, key)) from None

    def float(self, section, key, default=None, required=False):
        return self._typed(section, key, _float, default, required)

    def int(self, section, key, default=None, required=False):
        return self._typed(section, key, int, default, required)

    def bool(self, section, key, default=False):
        return self._typed(section, key, _bool, default, False)

    def floats(self, section, key, default=None, required=False):
        return self._typed(section, key, lambda s: tuple(_float(x) for x in s.split(",") if x.strip()),
                           default, required)

    def nonlinearity(self, key):
        spec = self.raw("nonlinearity", key, required=True)
        exponent = self.float("nonlinearity", f"{key}_exponent")
        try:
            return parse_nonlinearity(spec, exponent)
        except ValueError as exc:
            raise BadConfig(str(exc), field=f"nonlinearity.{key}",
                            line=self._line("nonlinearity", key)) from None

    def require(self, command):
        for sec, key in REQUIRED[command]:
            self.raw(sec, key, required=True)


def _float(s):
    s = s.strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


def _bool(s):
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def parse_nonlinearity(spec, exponent=None):
    """``zero``, ``linear[:slope]``, ``cubic[:a,b]`` (a s^3 + b s) or ``poly:c0,c1,...``."""
    name, _, args = spec.partition(":")
    name = name.strip().lower()
    vals = [_float(a) for a in args.split(",") if a.strip()]
    if name == "zero" and not vals:
        nl = zero()
    elif name == "linear" and len(vals) <= 1:
        nl = linear(*vals)
    elif name == "cubic" and len(vals) <= 2:
        nl = cubic(*vals)
    elif name == "poly" and vals:
        nl = polynomial(vals)
    else:
        raise ValueError(f"cannot parse nonlinearity {spec!r}")
    if exponent is not None:
        nl = polynomial(nl.coeffs, exponent, nl.name)
    return nl


def _hole(cfg):
    spec = cfg.raw("geometry", "hole", "square")
    if spec.startswith("rect:") or spec.startswith("disk:"):
        kind, _, args = spec.partition(":")
        vals = [_float(v) for v in args.split(",")]
        dim = cfg.int("geometry", "dim", 2)
        if kind == "rect":
            return {"kind": "rect", "lo": vals[:dim], "hi": vals[dim:]}
        return {"kind": "disk", "center": vals[:2], "radius": vals[2]}
    return spec


def study_config(cfg):
    d = StudyConfig()
    kw = dict(
        hole=_hole(cfg), dim=cfg.int("geometry", "dim", 2),
        p=cfg.float("problem", "p", required=True), kappa=cfg.float("problem", "kappa", required=True),
        T=cfg.float("problem", "T", required=True), initial=cfg.raw("problem", "initial", required=True),
        f=cfg.nonlinearity("f"), g=cfg.nonlinearity("g"),
        dt=cfg.float("discretization", "dt", required=True),
        micro_h=cfg.float("discretization", "h", required=True),
        epsilons=cfg.floats("study", "epsilons", d.epsilons),
        n_samples=cfg.int("study", "n_samples", d.n_samples),
        n_directions=cfg.int("discretization", "n_directions", d.n_directions),
        newton_tol=cfg.float("discretization", "newton_tol", d.newton_tol),
        newton_max_iter=cfg.int("discretization", "newton_max_iter", d.newton_max_iter),
        cell_tol=cfg.float("discretization", "cell_tol", d.cell_tol),
        delta=cfg.float("discretization", "delta", d.delta),
        flux_table_tol=cfg.float("discretization", "flux_table_tol", d.flux_table_tol),
        ratio_bound=cfg.float("study", "ratio_bound", d.ratio_bound),
        override_exponents=cfg.bool("study", "override_exponents", False))
    kw["macro_h"] = cfg.float("discretization", "macro_h", kw["micro_h"])
    kw["cell_h"] = cfg.float("discretization", "cell_h", d.cell_h)
    return StudyConfig(**kw)


def _outdir(args, cfg=None):
    out = args.out or (cfg.raw("study", "output", ".") if cfg is not None else ".")
    os.makedirs(out, exist_ok=True)
    return out


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)
    print(f"wrote {path}")


# ---------------------------------------------------------------- subcommands

def cmd_cell(args):
    cfg = Config.read(args.config) if args.config else None
    p = args.p if args.p is not None else (cfg.float("problem", "p", required=True) if cfg else 2.0)
    hole = args.hole or (_hole(cfg) if cfg else "square")
    dim = cfg.int("geometry", "dim", 2) if cfg else 2
    h = args.h or (cfg.float("discretization", "cell_h", 1 / 64) if cfg else 1 / 64)
    t0 = time.perf_counter()
    cell = build_cell(dim, hole)
    mesh = build_periodic_cell_mesh(cell, h)
    out = _outdir(args)
    stem = args.name or f"flux_table_p{p:g}_{hole if isinstance(hole, str) else 'custom'}"
    manifest = RunManifest("cell", {"p": p, "hole": cell.describe(), "cell_h": h,
                                    "n_directions": args.directions},
                           mesh=mesh_statistics(mesh), tolerances={"cell_tol": args.tol}, delta=1e-8)
    if dim == 2:
        table = build_flux_table(mesh, p, args.directions, args.tol)
        table.metadata["manifest"] = stem + ".manifest.json"
        manifest.results = {"interpolation_error": table.interpolation_error,
                            "monotonicity_violation": table.monotonicity_violation()}
        if p == 2.0:
            manifest.results["A_hom"] = effective_tensor_p2(mesh, args.tol).tolist()
        _write(os.path.join(out, stem + ".csv"), table.to_csv())
        _write(os.path.join(out, stem + ".json"), table.to_json() + "\n")
    else:
        A = effective_tensor_p2(mesh, args.tol, p=p)
        manifest.results = {"A_hom": A.tolist()}
    manifest.timing = {"total_s": time.perf_counter() - t0}
    manifest.write(os.path.join(out, stem + ".manifest.json"))
    print(json.dumps(_plain(manifest.results), indent=2))
    return 0


def cmd_micro(args):
    cfg = Config.read(args.config)
    cfg.require("micro")
    s = study_config(cfg)
    eps = cfg.float("geometry", "epsilon", required=True)
    t0 = time.perf_counter()
    cell = build_cell(s.dim, s.hole)
    mesh = build_perforated_mesh(cell, epsilon=eps, target_h=s.micro_h)
    mc = MicroRunConfig(s.p, s.kappa, eps, s.dt, s.T, s.f, s.g, s.initial, s.newton_tol, s.newton_max_iter,
                        s.delta)
    traj = run_micro(mesh, mc)
    out = _outdir(args, cfg)
    stem = args.name or f"micro_eps{eps:g}"
    manifest = RunManifest("micro", mc.describe() | {"hole": cell.describe()}, mesh=mesh_statistics(mesh),
                           tolerances={"newton_tol": s.newton_tol}, delta=s.delta,
                           admissibility=_admissibility(s),
                           results={"final_h_norm": float(traj.h_norm[-1]),
                                    "dissipation_checked": traj.dissipation_checked,
                                    "dissipation_ok": traj.dissipation_ok,
                                    "max_energy_residual": float(np.nanmax(np.abs(traj.energy_residual)))},
                           timing={"total_s": time.perf_counter() - t0})
    _write(os.path.join(out, stem + ".csv"), diagnostics_csv(traj, stem + ".manifest.json"))
    if args.vtk:
        write_vtk(os.path.join(out, stem + ".vtk"), mesh, {"u": traj.states[-1].bulk})
    manifest.write(os.path.join(out, stem + ".manifest.json"))
    return 0


def cmd_macro(args):
    cfg = Config.read(args.config)
    cfg.require("macro")
    s = study_config(cfg)
    t0 = time.perf_counter()
    cell = build_cell(s.dim, s.hole)
    flux = homogenized_flux(s, cell)
    mesh = build_domain_mesh(s.dim, s.macro_h)
    mc = MacroRunConfig(s.p, s.kappa, s.dt, s.T, cell.theta, cell.sigma, flux, s.f, s.g, s.initial,
                        s.newton_tol, s.newton_max_iter, s.flux_table_tol)
    traj = run_macro(mesh, mc)
    out = _outdir(args, cfg)
    stem = args.name or "macro"
    manifest = RunManifest("macro", mc.describe() | {"hole": cell.describe()}, mesh=mesh_statistics(mesh),
                           tolerances={"newton_tol": s.newton_tol, "cell_tol": s.cell_tol}, delta=s.delta,
                           admissibility=_admissibility(s),
                           results={"final_h_norm": float(traj.h_norm[-1])},
                           timing={"total_s": time.perf_counter() - t0})
    _write(os.path.join(out, stem + ".csv"), diagnostics_csv(traj, stem + ".manifest.json"))
    if args.vtk:
        write_vtk(os.path.join(out, stem + ".vtk"), mesh, {"u": traj.states[-1].bulk})
    manifest.write(os.path.join(out, stem + ".manifest.json"))
    return 0


def cmd_converge(args):
    cfg = Config.read(args.config)
    cfg.require("converge")
    s = study_config(cfg)
    study = run_convergence_study(s)
    out = _outdir(args, cfg)
    stem = args.name or "convergence"
    meas = run_measure_checks(s.hole, s.epsilons, dim=s.dim, h=s.micro_h) if s.dim == 2 else None
    _write(os.path.join(out, stem + ".csv"), study.to_csv(stem + ".manifest.json"))
    if meas is not None:
        _write(os.path.join(out, stem + "_measures.csv"), meas.to_csv(stem + ".manifest.json"))
    study.manifest.write(os.path.join(out, stem + ".manifest.json"))
    print(f"max errors: {', '.join(f'{e:.6g}' for e in study.max_errors)}")
    print(f"verdict: {'PASS' if study.passed else 'FAIL'} (ratio {study.error_ratio:.4g})")
    return 0 if study.passed else 1


def _admissibility(s, l=None):
    chk = validate_exponents(s.p, s.dim, s.f.exponent, s.g.exponent)
    return {"exponents": chk.describe(), "f": check_nonlinearity(s.f, l), "g": check_nonlinearity(s.g, l)}


def cmd_validate(args):
    cfg = Config.read(args.config)
    cfg.require("validate")
    p = cfg.float("problem", "p", required=True)
    dim = cfg.int("geometry", "dim", 2)
    f, g = cfg.nonlinearity("f"), cfg.nonlinearity("g")
    l = cfg.float("nonlinearity", "l")
    chk = validate_exponents(p, dim, f.exponent, g.exponent)
    report = {"exponents": chk.describe(), "f": check_nonlinearity(f, l), "g": check_nonlinearity(g, l)}
    print(json.dumps(_plain(report), indent=2, sort_keys=True))
    return 0 if chk.admissible_theorem else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="plhom", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    c = sub.add_parser("cell", help="solve cell problems and write the effective flux table")
    c.add_argument("--config")
    c.add_argument("--p", type=float)
    c.add_argument("--hole")
    c.add_argument("--directions", type=int, default=32)
    c.add_argument("--h", type=float)
    c.add_argument("--tol", type=float, default=1e-12)
    for name, helptext in (("micro", "run the perforated problem"), ("macro", "run the homogenised problem"),
                           ("converge", "epsilon sweep against the homogenised solution"),
                           ("validate", "check exponents and nonlinearities only")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        if name in ("micro", "macro"):
            s.add_argument("--vtk", action="store_true", help="also dump the final field as VTK")
        if name != "validate":
            s.add_argument("--out")
            s.add_argument("--name")
    c.add_argument("--out")
    c.add_argument("--name")
    return ap


COMMANDS = {"cell": cmd_cell, "micro": cmd_micro, "macro": cmd_macro, "converge": cmd_converge,
            "validate": cmd_validate}


def cli_main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except BadConfig as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2
    except PlhomError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(cli_main())
