"""Command-line front end: configuration, dispatch, caching and manifests.

Configuration files are INI-style (``[section]`` then ``key = value``).  The
recognised sections and keys for each command are listed in ``SCHEMA`` and
``COMMAND_SECTIONS``; unknown keys are rejected with the line number and the
closest valid key.  Obstacle presets take their parameters as extra keys of
the ``[obstacle]`` section, checked against the preset's signature.

Every run writes into ``<out>/<command>-<digest>/`` a ``manifest.json`` with
the configuration echo, the SHA-256 of every output file and a verdict
block.  A second run with the same configuration digest returns the cached
manifest unless ``--force`` is given.
"""
from __future__ import annotations

import argparse
import configparser
import difflib
import functools
import hashlib
import inspect
import json
import math
import re
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, shapes
from .acceptance import CRITERIA, DETERMINISM_ID, run_criteria
from .cap_limit import LimitStudyError, run_limit_study
from .field_core import Grid, RegionMask, StudyTable, dump_field, load_field, measure
from .hull_solver import DomainTooSmallError, HullSolver, SolverFailure
from .isoperimetry import dini_comparison, isoperimetric_profile
from .p_laplace import PLaplaceConfig, imcf_from_potential, solve_potential
from .symmetrization import EigenStagnationError, faber_krahn_check, first_eigenvalue, polya_szego_campaign
from .warped_radial import (
    PRESETS as PROFILES,
    avr,
    flat_ball_capacity,
    radial_hull,
    radial_imcf,
    radial_p_capacity,
)

_echo = functools.partial(print, flush=True)

__all__ = ["ConfigError", "RunConfig", "parse_config", "parse_config_text", "run", "main",
           "EXIT_OK", "EXIT_USAGE", "EXIT_SOLVER", "EXIT_VERIFY"]

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3
COMMANDS = ("hull", "pcap", "limit", "radial", "iso-profile", "symmetrize", "eigen", "verify")

# key -> (type, default); types: int, float, bool, str, floats
SCHEMA = {
    "run": {"seed": ("int", 0), "deterministic": ("bool", False), "out": ("str", "hullcap-out"),
            "threads": ("int", 1)},
    "grid": {"n": ("int", 2), "lower": ("float", -1.0), "upper": ("float", 1.0),
             "cells": ("int", 256)},
    "obstacle": {"preset": ("str", "star"), "mask_file": ("str", "")},
    "profile": {"name": ("str", "cigar"), "n": ("int", 2), "a": ("float", 0.5),
                "rho0": ("float", 1.0)},
    "verify": {"criteria": ("str", "all"), "reference": ("str", "")},
}
SOLVER_SCHEMA = {
    "hull": {"max_iters": ("int", 20000), "gap_tol": ("float", 1e-4), "step_ratio": ("float", 10.0),
             "box_padding": ("int", 0), "threshold": ("float", 1e-6), "dump_fields": ("bool", True)},
    "pcap": {"p": ("float", 1.5), "radii": ("floats", (0.9,)), "centre": ("floats", ()),
             "epsilon_schedule": ("floats", ()), "inner_tol": ("float", 1e-8),
             "max_outer": ("int", 60), "dump_potential": ("bool", False), "imcf": ("bool", False)},
    "limit": {"p_schedule": ("floats", tuple(1 + 2.0 ** -k for k in range(1, 7))),
              "radii": ("floats", (0.9,)), "centre": ("floats", ()), "tol": ("float", 0.02),
              "oracle": ("str", "none"), "oracle_radius": ("float", 0.5)},
    "radial": {"p_values": ("floats", (1.2, 1.5, 2.0))},
    "iso-profile": {"volumes": ("floats", (0.1, 0.3, 0.5, 0.7)), "relative": ("bool", True),
                    "W": ("float", 0.0), "sigmas": ("floats", (6.0, 4.0, 3.0, 2.0, 1.5))},
    "symmetrize": {"trials": ("int", 100), "cells": ("int", 512), "t_count": ("int", 2048),
                   "C_g": ("float", 1.0)},
    "eigen": {"avr": ("float", 1.0)},
    "verify": {},
}
COMMAND_SECTIONS = {
    "hull": ("run", "grid", "obstacle", "solver"),
    "pcap": ("run", "grid", "obstacle", "solver"),
    "limit": ("run", "grid", "obstacle", "solver"),
    "radial": ("run", "profile", "solver"),
    "iso-profile": ("run", "grid", "obstacle", "solver"),
    "symmetrize": ("run", "solver"),
    "eigen": ("run", "grid", "obstacle", "solver"),
    "verify": ("run", "verify"),
}
# keys that do not change results: kept out of the digest and the manifest echo
VOLATILE = {("run", "out"), ("run", "threads"), ("verify", "reference")}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- values


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _convert(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(x) for x in re.split(r"[,\s]+", raw) if x)
        if kind == "coeffs":
            pairs = []
            for item in re.split(r"[,\s]+", raw):
                if item:
                    k, _, a = item.partition(":")
                    pairs.append((int(k), float(a)))
            return tuple(pairs)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind}") from None


def _preset_schema(preset: str) -> dict:
    """Parameter schema of a shape preset, typed from its defaults."""
    try:
        factory = shapes.PRESETS[preset]
    except KeyError:
        raise ConfigError(f"unknown obstacle preset {preset!r}; "
                          f"choose from {sorted(shapes.PRESETS)}") from None
    out = {}
    for name, par in inspect.signature(factory).parameters.items():
        d = par.default
        if name == "coeffs":
            out[name] = ("coeffs", d)
        elif isinstance(d, tuple):
            out[name] = ("floats", d)
        elif isinstance(d, int):
            out[name] = ("int", d)
        else:
            out[name] = ("float", d)
    return out


# ---------------------------------------------------------------- RunConfig


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: the command plus every section with defaults filled."""

    command: str
    sections: tuple  # ((section, ((key, value), ...)), ...) sorted

    def get(self, section: str, key: str):
        return dict(dict(self.sections)[section])[key]

    def section(self, section: str) -> dict:
        return dict(dict(self.sections).get(section, ()))

    def as_dict(self, stable: bool = False) -> dict:
        out = {sec: {k: _clean(v) for k, v in items if not (stable and (sec, k) in VOLATILE)}
               for sec, items in self.sections}
        return {"command": self.command, "sections": out}

    def digest(self) -> str:
        text = json.dumps(self.as_dict(stable=True), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def emit(self) -> str:
        lines = []
        for sec, items in self.sections:
            lines.append(f"[{sec}]")
            if sec == "run":
                lines.append(f"command = {self.command}")
            lines.extend(f"{k} = {_fmt(v)}" for k, v in items)
            lines.append("")
        return "\n".join(lines)

    @property
    def deterministic(self) -> bool:
        return bool(self.get("run", "deterministic"))

    @property
    def seed(self) -> int:
        return int(self.get("run", "seed"))


def _line_map(text: str) -> dict:
    """(section, key) -> line number, plus (section, None) for headers."""
    where = {}
    sec = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            sec = m.group(1).strip()
            where.setdefault((sec, None), no)
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
        where.setdefault((sec, key), no)
    return where


def _nearest(name: str, options) -> str:
    options = sorted(options)
    best = difflib.get_close_matches(name, options, n=1, cutoff=0.0)
    return best[0] if best else ""


def parse_config_text(text: str, command: Optional[str] = None, source: str = "<config>") -> RunConfig:
    """Validate INI text and return a RunConfig with defaults filled."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _line_map(text)

    def loc(sec, key=None):
        no = lines.get((sec, key)) or lines.get((sec, None))
        return f"{source}:{no}" if no else source

    run_items = dict(parser.items("run")) if parser.has_section("run") else {}
    file_command = run_items.pop("command", None)
    if command is None:
        command = file_command
    elif file_command is not None and file_command != command:
        raise ConfigError(f"{loc('run', 'command')}: config is for {file_command!r}, "
                          f"not {command!r}")
    if command not in COMMANDS:
        raise ConfigError(f"{source}: unknown command {command!r}; choose from {list(COMMANDS)}")
    allowed = COMMAND_SECTIONS[command]
    for sec in parser.sections():
        if sec not in allowed:
            raise ConfigError(f"{loc(sec)}: section [{sec}] is not used by {command!r}; "
                              f"nearest valid section is [{_nearest(sec, allowed)}]")
    preset = None
    if "obstacle" in allowed:
        preset = parser.get("obstacle", "preset", fallback=SCHEMA["obstacle"]["preset"][1]).strip()
        mask_file = parser.get("obstacle", "mask_file", fallback="").strip()
        if mask_file:
            preset = ""
    sections = []
    for sec in allowed:
        schema = dict(SOLVER_SCHEMA[command]) if sec == "solver" else dict(SCHEMA[sec])
        if sec == "obstacle" and preset:
            schema.update(_preset_schema(preset))
        given = dict(parser.items(sec)) if parser.has_section(sec) else {}
        if sec == "run":
            given.pop("command", None)
        values = {}
        for key, raw in given.items():
            if key not in schema:
                raise ConfigError(f"{loc(sec, key)}: unknown key {key!r} in [{sec}]; "
                                  f"nearest valid key is {_nearest(key, schema)!r}")
            values[key] = _convert(schema[key][0], raw, loc(sec, key))
        for key, (kind, default) in schema.items():
            values.setdefault(key, default)
        sections.append((sec, tuple(sorted(values.items()))))
    cfg = RunConfig(command, tuple(sorted(sections)))
    _validate(cfg, loc)
    return cfg


def _validate(cfg: RunConfig, loc):
    secs = dict(cfg.sections)
    if "grid" in secs:
        g = cfg.section("grid")
        if g["n"] not in (2, 3):
            raise ConfigError(f"{loc('grid', 'n')}: n must be 2 or 3")
        if not g["upper"] > g["lower"] or g["cells"] < 8:
            raise ConfigError(f"{loc('grid')}: need upper > lower and cells >= 8")
    if "obstacle" in secs:
        mf = cfg.get("obstacle", "mask_file")
        if mf and not Path(mf).is_file():
            raise ConfigError(f"{loc('obstacle', 'mask_file')}: mask file {mf!r} does not exist")
    if cfg.command == "radial" and cfg.get("profile", "name") not in PROFILES:
        raise ConfigError(f"{loc('profile', 'name')}: unknown profile; "
                          f"choose from {sorted(PROFILES)}")
    if cfg.command == "verify":
        crit = cfg.get("verify", "criteria")
        if crit != "all":
            try:
                ids = [int(x) for x in re.split(r"[,\s]+", crit) if x]
            except ValueError:
                raise ConfigError(f"{loc('verify', 'criteria')}: expected 'all' or ids") from None
            bad = [i for i in ids if i not in CRITERIA]
            if bad:
                raise ConfigError(f"{loc('verify', 'criteria')}: unknown criteria {bad}")


def parse_config(path, command: Optional[str] = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, command, str(p))


def default_config(command: str) -> RunConfig:
    return parse_config_text("", command, "<defaults>")


def with_overrides(cfg: RunConfig, section: str, **values) -> RunConfig:
    secs = dict(cfg.sections)
    items = dict(secs[section])
    items.update(values)
    secs[section] = tuple(sorted(items.items()))
    return RunConfig(cfg.command, tuple(sorted(secs.items())))


# ---------------------------------------------------------------- builders


def _grid(cfg: RunConfig) -> Grid:
    g = cfg.section("grid")
    return Grid.box(g["lower"], g["upper"], g["cells"], n=g["n"])


def _obstacle(cfg: RunConfig):
    """(grid, mask, input digests)."""
    ob = cfg.section("obstacle")
    if ob["mask_file"]:
        data = Path(ob["mask_file"]).read_bytes()
        mask = load_field(ob["mask_file"])
        if not isinstance(mask, RegionMask):
            raise ConfigError(f"{ob['mask_file']}: expected a mask dump")
        return mask.grid, mask, {"mask_file": hashlib.sha256(data).hexdigest()}
    grid = _grid(cfg)
    params = {k: v for k, v in ob.items() if k not in ("preset", "mask_file")}
    mask = shapes.make_shape(ob["preset"], **params).mask(grid)
    if not mask.indicator.any():
        raise ConfigError("obstacle preset does not cover any cell of the grid")
    return grid, mask, {}


def _clean(x):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


class _Outputs:
    def __init__(self, folder: Path):
        self.folder = folder
        self.digests = {}

    def text(self, name: str, text: str):
        data = text.encode()
        (self.folder / name).write_bytes(data)
        self.digests[name] = hashlib.sha256(data).hexdigest()

    def table(self, name: str, table: StudyTable):
        self.text(name, table.to_csv())

    def field(self, name: str, obj):
        self.digests[name] = dump_field(obj, self.folder / name)


# ---------------------------------------------------------------- commands


def _cmd_hull(cfg, out: _Outputs, ctx):
    grid, mask, inputs = _obstacle(cfg)
    s = cfg.section("solver")
    solver = HullSolver(max_iters=s["max_iters"], gap_tol=s["gap_tol"], step_ratio=s["step_ratio"],
                        box_padding=s["box_padding"], threshold=s["threshold"],
                        raise_on_failure=True)
    solver.fit(mask)
    if s["dump_fields"]:
        out.field("hull.field", solver.hull_)
        out.field("relaxed.field", solver.relaxed_)
    p = measure(mask)["perimeter"]
    verdict = {"hull_perimeter": solver.hull_perimeter_, "hull_volume": solver.hull_volume_,
               "obstacle_perimeter": p, "outward_gap": (p - solver.hull_perimeter_) / p,
               "report": solver.report_.as_dict()}
    verdict["report"].pop("residuals", None)
    return verdict, inputs, True


def _pcap_config(s, p=None) -> PLaplaceConfig:
    kw = {"inner_tol": s["inner_tol"], "max_outer": s["max_outer"]}
    if s["epsilon_schedule"]:
        kw["epsilon_schedule"] = tuple(s["epsilon_schedule"])
    return PLaplaceConfig(s["p"] if p is None else p, tuple(s["radii"]), **kw)


def _cmd_pcap(cfg, out, ctx):
    grid, mask, inputs = _obstacle(cfg)
    s = cfg.section("solver")
    res = solve_potential(grid, mask, _pcap_config(s), centre=s["centre"] or None)
    out.table("per_radius.csv", res.per_radius)
    if s["dump_potential"]:
        out.field("potential.field", res.potential)
    verdict = {"capacity": res.capacity, "converged": res.report.converged,
               "iterations": res.report.iterations, "notes": res.report.notes}
    if s["imcf"]:
        est = imcf_from_potential(res.potential, s["p"], obstacle=mask)
        verdict["imcf"] = {"flagged": est.flagged, "message": est.message, "level": est.level}
        if est.hull is not None:
            out.field("imcf_hull.field", est.hull)
            verdict["imcf"]["hull_volume"] = est.hull.volume
    return verdict, inputs, True


def _cmd_limit(cfg, out, ctx):
    grid, mask, inputs = _obstacle(cfg)
    s = cfg.section("solver")
    oracle = None
    if s["oracle"] == "flat_ball":
        r0, R = s["oracle_radius"], max(s["radii"])
        oracle = lambda p: flat_ball_capacity(grid.n, p, r0, R)  # noqa: E731
    elif s["oracle"] != "none":
        raise ConfigError("solver.oracle must be 'none' or 'flat_ball'")
    try:
        study = run_limit_study(grid, mask, s["p_schedule"], radii=s["radii"],
                                centre=s["centre"] or None, oracle=oracle, tol=s["tol"],
                                n_jobs=ctx["threads"])
    except LimitStudyError as exc:
        out.table("limit.csv", exc.study.capacities)
        raise
    out.table("limit.csv", study.capacities)
    return study.as_dict(), inputs, True


def _cmd_radial(cfg, out, ctx):
    pr = cfg.section("profile")
    factory = PROFILES[pr["name"]]
    params = inspect.signature(factory).parameters
    kw = {k: pr[k] for k in ("n", "a") if k in params}
    prof = factory(**kw)
    rho0 = pr["rho0"]
    table = StudyTable(("p", "capacity", "parabolic"), metadata={"profile": prof.name})
    for p in cfg.get("solver", "p_values"):
        cap = radial_p_capacity(prof, rho0, p)
        table.add(p, cap.capacity, cap.parabolic)
    out.table("radial.csv", table)
    hull_v = radial_hull(prof, rho0)
    verdict = {"profile": prof.name, "n": prof.n, "avr": avr(prof), "hull": hull_v.kind,
               "hull_witness": hull_v.witness}
    try:
        flow = radial_imcf(prof, rho0)
        verdict["imcf"] = {"sup": flow.sup, "proper_but_bounded": flow.proper_but_bounded}
    except ValueError as exc:
        verdict["imcf"] = {"breakdown": str(exc)}
    return verdict, {}, True


def _cmd_iso(cfg, out, ctx):
    grid, mask, inputs = _obstacle(cfg)
    s = cfg.section("solver")
    vols = np.asarray(s["volumes"], float) * (mask.volume if s["relative"] else 1.0)
    prof = isoperimetric_profile(mask, vols, sigmas=tuple(s["sigmas"]))
    table = StudyTable(("v", "I", "multiplier"))
    for row in zip(prof.volumes, prof.areas, prof.multipliers):
        table.add(*(float(x) for x in row))
    out.table("profile.csv", table)
    dini = dini_comparison(prof, s["W"] or None)
    verdict = {"monotone_ok": dini.monotone_ok, "increments": dini.increments.tolist(),
               "tolerance": dini.tolerance, "starts": [r["start"] for r in prof.reports]}
    return verdict, inputs, dini.monotone_ok


def _cmd_symmetrize(cfg, out, ctx):
    s = cfg.section("solver")
    table = polya_szego_campaign(s["trials"], s["cells"], seed=cfg.seed, t_count=s["t_count"],
                                 C_g=s["C_g"])
    out.table("campaign.csv", table)
    holds = int(np.sum(table.column("holds")))
    verdict = {"trials": s["trials"], "holds": holds,
               "max_l2_defect": float(np.max(table.column("l2_defect")))}
    return verdict, {}, holds == s["trials"]


def _cmd_eigen(cfg, out, ctx):
    grid, mask, inputs = _obstacle(cfg)
    res = first_eigenvalue(mask)
    fk = faber_krahn_check(mask, avr=cfg.get("solver", "avr"), lambda1=res.lambda1)
    out.field("eigenfield.field", res.eigenfield)
    verdict = {"lambda1": res.lambda1, "iterations": res.iterations, "bound": fk.bound,
               "faber_krahn_holds": fk.holds}
    return verdict, inputs, fk.holds


def _cmd_verify(cfg, out, ctx):
    crit = cfg.get("verify", "criteria")
    ids = None if crit == "all" else [int(x) for x in re.split(r"[,\s]+", crit) if x]
    echo = ctx.get("echo", _echo)
    results = run_criteria(ids, progress=lambda r: echo(r.summary_line()))
    det = cfg.deterministic
    records = [r.as_dict(include_runtime=not det) for r in results]
    ctx["timings"] = {str(r.id): r.runtime for r in results}
    ctx["verify_results"] = results
    out.text("criteria.json", json.dumps(_clean(records), indent=2, sort_keys=True) + "\n")
    rows = ["id,title,passed"] + [f"{r.id},\"{r.title}\",{r.passed}" for r in results]
    out.text("criteria.csv", "\n".join(rows) + "\n")
    verdict = {"passed": [r.id for r in results if r.passed],
               "failed": [r.id for r in results if not r.passed]}
    return verdict, {}, not verdict["failed"]


DISPATCH = {"hull": _cmd_hull, "pcap": _cmd_pcap, "limit": _cmd_limit, "radial": _cmd_radial,
            "iso-profile": _cmd_iso, "symmetrize": _cmd_symmetrize, "eigen": _cmd_eigen,
            "verify": _cmd_verify}
SOLVER_ERRORS = (SolverFailure, DomainTooSmallError, LimitStudyError, EigenStagnationError,
                 ArithmeticError, RuntimeError)


# ---------------------------------------------------------------- run


def _write_manifest(folder: Path, manifest: dict) -> bytes:
    data = (json.dumps(_clean(manifest), indent=2, sort_keys=True) + "\n").encode()
    (folder / "manifest.json").write_bytes(data)
    return data


def run(cfg: RunConfig, out: Optional[str] = None, force: bool = False,
        threads: Optional[int] = None, echo=_echo) -> tuple:
    """Execute ``cfg``; returns (manifest dict, exit code).

    Outputs land in ``<out>/<command>-<digest[:12]>``.  With an existing
    manifest there and ``force`` unset, the cached manifest is returned.
    """
    digest = cfg.digest()
    root = Path(out if out is not None else cfg.get("run", "out"))
    folder = root / f"{cfg.command}-{digest[:12]}"
    cached = folder / "manifest.json"
    if cached.is_file() and not force:
        manifest = json.loads(cached.read_text())
        echo(f"cache hit: {cached}")
        code = EXIT_OK if manifest.get("status") == "pass" else (
            EXIT_VERIFY if manifest.get("status") == "fail" else EXIT_SOLVER)
        return manifest, code
    folder.mkdir(parents=True, exist_ok=True)
    nthreads = 1 if cfg.deterministic else int(threads or cfg.get("run", "threads"))
    ctx = {"threads": nthreads, "echo": echo}
    outputs = _Outputs(folder)
    manifest = {"tool": "hullcap", "version": __version__, "command": cfg.command,
                "config": cfg.as_dict(stable=True)["sections"], "config_digest": digest,
                "deterministic": cfg.deterministic, "seed": cfg.seed}
    np.random.seed(cfg.seed % 2 ** 32)
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        with threadpool_limits(limits=nthreads):
            verdict, inputs, ok = DISPATCH[cfg.command](cfg, outputs, ctx)
        manifest.update(status="pass" if ok else "fail", authoritative=True, inputs=inputs,
                        verdict=verdict)
        if not ok and cfg.command == "verify":
            code = EXIT_VERIFY
    except ConfigError:
        raise
    except SOLVER_ERRORS as exc:
        manifest.update(status="error", authoritative=False, error=f"{type(exc).__name__}: {exc}",
                        inputs={}, verdict={})
        code = EXIT_SOLVER
    wall = time.perf_counter() - t0
    manifest["outputs"] = dict(sorted(outputs.digests.items()))
    timing = {"wall_time_s": wall, **({"criteria_s": ctx["timings"]} if "timings" in ctx else {})}
    if cfg.deterministic:
        (folder / "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    else:
        manifest["wall_time_s"] = wall
    data = _write_manifest(folder, manifest)
    if cfg.command == "verify":
        ref = cfg.get("verify", "reference")
        if ref:
            same = Path(ref).read_bytes() == data
            echo(f"[{'PASS' if same else 'FAIL'}] criterion {DETERMINISM_ID:2d}: "
                 f"{CRITERIA[DETERMINISM_ID][0]}")
            if not same:
                code = EXIT_VERIFY
        else:
            echo(f"[SKIP] criterion {DETERMINISM_ID:2d}: needs --reference <manifest of an "
                 "earlier deterministic run>")
    echo(f"manifest: {folder / 'manifest.json'}")
    return manifest, code


# ---------------------------------------------------------------- main


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hullcap", description="Hull, capacity and isoperimetry "
                                 "experiments on grids and warped products.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", help="INI configuration file")
        sp_.add_argument("--force", action="store_true", help="ignore a cached result")
        sp_.add_argument("--out", help="output root directory")
        sp_.add_argument("--threads", type=int, help="worker threads")
        sp_.add_argument("--deterministic", action="store_true",
                         help="bit-reproducible outputs; timings go to timing.json")
        if name == "verify":
            sp_.add_argument("--only", help="comma-separated criterion ids")
            sp_.add_argument("--reference", help="manifest of an earlier deterministic run")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = (parse_config(args.config, args.command) if args.config
               else default_config(args.command))
        if args.deterministic:
            cfg = with_overrides(cfg, "run", deterministic=True)
        if args.command == "verify":
            if args.only:
                cfg = with_overrides(cfg, "verify", criteria=args.only)
            if args.reference:
                cfg = with_overrides(cfg, "verify", reference=args.reference)
            _validate(cfg, lambda *a: "<command line>")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        _, code = run(cfg, out=args.out, force=args.force, threads=args.threads)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
