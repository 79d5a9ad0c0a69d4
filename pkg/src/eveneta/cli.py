"""Run eta-invariant experiments described by YAML files.

    eveneta run --config exp.yaml --out results/
    eveneta sweep --config exp.yaml --param a --values 1,2,4 --routes cylinder
    eveneta toeplitz --config exp.yaml
    eveneta conjecture --config exp.yaml

Exit codes: 0 success, 1 configuration error, 2 route failure or disagreement.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from importlib import metadata
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .cylinder import CutoffProfile, CylinderBVP, LagrangianSpec, conjecture_experiment
from .dirac import FamilyHandle, MappingTorusProblem
from .eta import ROUTE_ORDER, ROUTE_WINDOW, EtaResult, spectral_flow, synthetic_family
from .holonomy import HolonomyMismatchError, compare_holonomy, mapping_torus_eta, route_eta
from .toeplitz import ToeplitzProblem, verify_toeplitz
from .torus import TorusSpec, UnitaryMapSpec, maurer_cartan, read_map_file

SCHEMA_VERSION = "1.0"
ETA_ROUTES = ("thm34", "cylinder", "mapping-torus")
Route = Literal["thm34", "cylinder", "mapping-torus", "toeplitz", "conjecture"]

log = logging.getLogger("eveneta")


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ManifoldBlock(_Strict):
    dim: Literal[2] = 2
    spin: tuple[float, float] = (0.5, 0.5)
    twist: tuple[float, float] = (0.0, 0.0)

    @field_validator("spin")
    @classmethod
    def _spin(cls, v):
        for e in v:
            if e not in (0.0, 0.5):
                raise ValueError(f"spin structure entries must be 0 or 1/2, got {e}")
        return v

    @field_validator("twist")
    @classmethod
    def _twist(cls, v):
        for e in v:
            if not 0.0 <= e < 1.0:
                raise ValueError(f"twist entries must lie in [0, 1), got {e}")
        return v


class MapBlock(_Strict):
    character: list[int] | None = None
    file: str | None = None
    N: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _one_source(self):
        if (self.character is None) == (self.file is None):
            raise ValueError("give exactly one of 'character' or 'file'")
        if self.character is not None and self.N not in (None, 1):
            raise ValueError("a character has N = 1")
        return self


class TruncationBlock(_Strict):
    cutoff: int = Field(default=16, ge=1)
    x_density: float = Field(default=80.0, gt=0)
    a: float = Field(default=1.0, gt=0)
    profile_eps: float = Field(default=0.1, gt=0, lt=1 / 3)
    circle_points: int = Field(default=38, ge=2)
    circle_cutoff: int = Field(default=9, ge=1)
    circle_spin: Literal["periodic", "antiperiodic"] = "periodic"
    lagrangian_phase: float | None = None


class EtaBlock(_Strict):
    window: list[float] = Field(default_factory=lambda: list(ROUTE_WINDOW), min_length=2)
    order: int = Field(default=ROUTE_ORDER, ge=0, le=3)

    @field_validator("window")
    @classmethod
    def _positive(cls, v):
        if any(t <= 0 for t in v):
            raise ValueError("smoothing times must be positive")
        return v


class ToeplitzBlock(_Strict):
    characters: list[int] = Field(default_factory=lambda: [1])
    file: str | None = None
    cutoff: int = Field(default=64, ge=2)
    theta: float = Field(default=0.0, ge=0.0, lt=1.0)


class ExperimentConfig(_Strict):
    manifold: ManifoldBlock = Field(default_factory=ManifoldBlock)
    map: MapBlock
    truncation: TruncationBlock = Field(default_factory=TruncationBlock)
    eta: EtaBlock = Field(default_factory=EtaBlock)
    routes: list[Route] = Field(default_factory=lambda: list(ETA_ROUTES), min_length=1)
    toeplitz: ToeplitzBlock = Field(default_factory=ToeplitzBlock)


class Experiment:
    """Validated configuration with resolved maps; files are parsed eagerly."""

    def __init__(self, config: ExperimentConfig, base_dir: Path):
        self.config = config
        self.base_dir = base_dir
        m = config.manifold
        self.spec = TorusSpec(m.dim, tuple(m.spin), tuple(m.twist))
        self.g = self._load_map()
        self.toeplitz_maps = self._load_toeplitz()

    def _path(self, name: str) -> Path:
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    def _load_map(self) -> UnitaryMapSpec:
        block = self.config.map
        if block.character is not None:
            if len(block.character) != self.spec.dim:
                raise ConfigError(f"map.character needs {self.spec.dim} entries")
            return UnitaryMapSpec.from_character(block.character)
        g = read_map_file(self._path(block.file))
        if g.dim != self.spec.dim:
            raise ConfigError(f"map.file has dimension {g.dim}, manifold has {self.spec.dim}")
        if block.N is not None and block.N != g.N:
            raise ConfigError(f"map.N = {block.N} but the file declares N = {g.N}")
        maurer_cartan(g)  # unitarity check before any computation
        return g

    def _load_toeplitz(self) -> list[UnitaryMapSpec]:
        block = self.config.toeplitz
        if block.file is not None:
            g = read_map_file(self._path(block.file))
            if g.dim != 1:
                raise ConfigError("toeplitz.file must describe a map on the circle")
            return [g]
        return [UnitaryMapSpec.from_character((k,)) for k in block.characters]

    def with_truncation(self, **changes) -> "Experiment":
        data = self.config.model_dump()
        data["truncation"].update(changes)
        return Experiment(ExperimentConfig.model_validate(data), self.base_dir)

    def with_window(self, window) -> "Experiment":
        data = self.config.model_dump()
        data["eta"]["window"] = list(window)
        return Experiment(ExperimentConfig.model_validate(data), self.base_dir)

    # problem builders

    def handle(self) -> FamilyHandle:
        method = "character" if self.g.character is not None else "galerkin"
        return FamilyHandle(self.spec, self.g, method=method, cutoff=self.config.truncation.cutoff)

    def bvp(self) -> CylinderBVP:
        t = self.config.truncation
        lag = None if t.lagrangian_phase is None else LagrangianSpec(
            np.exp(1j * t.lagrangian_phase) * np.eye(self.g.N))
        return CylinderBVP(self.spec, self.g, cutoff=t.cutoff, a=t.a,
                           profile=CutoffProfile(t.profile_eps), lagrangian=lag,
                           x_density=t.x_density, window=tuple(self.config.eta.window))

    def mapping_torus(self) -> MappingTorusProblem:
        t = self.config.truncation
        return MappingTorusProblem(self.spec, self.g, circle_points=t.circle_points,
                                   cutoff=t.circle_cutoff, circle_spin=t.circle_spin)


def load_config(path) -> Experiment:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines)) from exc
    try:
        return Experiment(cfg, path.parent)
    except ConfigError:
        raise
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------------
# route runners


def run_eta_route(exp: Experiment, route: str) -> EtaResult:
    order = exp.config.eta.order
    if route == "thm34":
        return route_eta(exp.handle())
    if route == "cylinder":
        return route_eta(exp.bvp(), order=order)
    if route == "mapping-torus":
        return mapping_torus_eta(exp.mapping_torus(), window=tuple(exp.config.eta.window), order=order)
    raise ValueError(f"{route} is not an eta route")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return dict(re=obj.real, im=obj.imag)
    return obj


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("scipy", "pydantic", "pyyaml", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


def run_experiment(exp: Experiment, routes=None, seed: int | None = None) -> tuple[dict, dict, int]:
    """Execute routes; returns ``(report, csv tables, exit code)``."""
    routes = list(routes or exp.config.routes)
    report = dict(schema_version=SCHEMA_VERSION, config=exp.config.model_dump(mode="json"),
                  routes={}, failures={})
    timing = {}
    tables: dict = {}
    code = 0
    eta_results = {}
    for route in routes:
        t0 = time.perf_counter()
        try:
            if route in ETA_ROUTES:
                res = run_eta_route(exp, route)
                eta_results[route] = res
                report["routes"][route] = res.as_dict()
            elif route == "toeplitz":
                t = exp.config.toeplitz
                reports = [verify_toeplitz(ToeplitzProblem(g, t.cutoff, t.theta)).as_dict()
                           for g in exp.toeplitz_maps]
                report["routes"]["toeplitz"] = reports
            elif route == "conjecture":
                report["routes"]["conjecture"] = conjecture_experiment(exp.bvp())
        except Exception as exc:  # a failed route is reported, not fatal to the others
            log.error("route %s failed: %s", route, exc)
            report["failures"][route] = f"{type(exc).__name__}: {exc}"
            code = 2
        timing[route] = time.perf_counter() - t0
    if len(eta_results) >= 2:
        try:
            report["holonomy"] = compare_holonomy(eta_results).as_dict()
        except HolonomyMismatchError as exc:
            report["failures"]["holonomy"] = str(exc)
            code = 2
    if seed is not None:
        fam = synthetic_family(seed)
        sf = spectral_flow(fam)
        report["synthetic_spectral_flow"] = dict(seed=seed, value=sf.value, upward=sf.upward,
                                                 downward=sf.downward, injected=fam.expected_flow)
        if sf.value != fam.expected_flow:
            code = 2
    thm = report["routes"].get("thm34")
    if thm:
        reg = thm["regularization"]
        tables["eta_form_density.csv"] = (["s", "density"], list(zip(reg["density_nodes"], reg["density"])))
    rows = []
    for name in ("cylinder", "mapping-torus"):
        if name in report["routes"]:
            rows += [(name, i, v) for i, v in enumerate(report["routes"][name]["regularization"]["smallest"])]
    if rows:
        tables["spectra.csv"] = (["route", "index", "eigenvalue"], rows)
    report["provenance"] = dict(versions=_versions(), timing_seconds=timing)
    return _jsonable(report), tables, code


SWEEP_PARAMS = ("cutoff", "a", "profile_eps", "x_density", "circle_points", "circle_cutoff", "window")


def sweep(exp: Experiment, param: str, values, route: str) -> list[dict]:
    """One row per value: ``eta-bar``, its error estimate and the change from the previous row."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep '{param}'; choose from {', '.join(SWEEP_PARAMS)}")
    if route not in ETA_ROUTES:
        raise ConfigError(f"sweeps run one eta route, got '{route}'")
    rows = []
    prev = None
    for v in values:
        if param == "window":
            e = exp.with_window(np.asarray(ROUTE_WINDOW) * float(v))
        else:
            cast = int if param in ("cutoff", "circle_points", "circle_cutoff") else float
            e = exp.with_truncation(**{param: cast(v)})
        res = run_eta_route(e, route)
        val = res.reduced_eta
        delta = None if prev is None else abs(((val - prev) + 0.5) % 1.0 - 0.5)
        rows.append(dict(parameter=param, value=float(v), reduced_eta=val,
                         error_estimate=res.error_estimate, delta=delta))
        prev = val
    return rows


# ----------------------------------------------------------------------------
# argument handling


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eveneta", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML experiment file")
        sp.add_argument("--out", default=None, help="output directory (default: print JSON)")
        sp.add_argument("--routes", default=None, help="comma-separated subset of routes")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed for a synthetic spectral-flow check")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("run", help="run the configured routes"))
    sw = sub.add_parser("sweep", help="convergence sweep of one parameter")
    common(sw)
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sw.add_argument("--values", required=True, help="comma-separated values")
    common(sub.add_parser("toeplitz", help="Toeplitz index against the odd Chern pairing"))
    common(sub.add_parser("conjecture", help="boundary-condition conjecture evidence"))
    return p


def _emit(report: dict, tables: dict, out: str | None, name: str):
    text = json.dumps(report, indent=2, sort_keys=True)
    if out is None:
        print(text)
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / name).write_text(text + "\n")
    for fname, (header, rows) in tables.items():
        _write_csv(d / fname, header, rows)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = load_config(args.config)
        routes = None
        if args.routes:
            routes = [r.strip() for r in args.routes.split(",") if r.strip()]
            bad = [r for r in routes if r not in (*ETA_ROUTES, "toeplitz", "conjecture")]
            if bad:
                raise ConfigError(f"unknown routes: {', '.join(bad)}")
        if args.command == "sweep":
            route = (routes or [r for r in exp.config.routes if r in ETA_ROUTES] or ["thm34"])[0]
            values = [v for v in args.values.split(",") if v.strip()]
            try:
                rows = sweep(exp, args.param, [float(v) for v in values], route)
            except ConfigError:
                raise
            except Exception as exc:
                print(f"error: sweep failed: {exc}", file=sys.stderr)
                return 2
            header = ["parameter", "value", "reduced_eta", "error_estimate", "delta"]
            table = [[r[h] if r[h] is not None else "" for h in header] for r in rows]
            report = dict(schema_version=SCHEMA_VERSION, route=route, rows=rows)
            _emit(_jsonable(report), {"convergence.csv": (header, table)}, args.out, "sweep.json")
            return 0
        if args.command == "toeplitz":
            routes = ["toeplitz"]
        elif args.command == "conjecture":
            routes = ["conjecture"]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report, tables, code = run_experiment(exp, routes, args.seed)
    _emit(report, tables, args.out, "report.json")
    for route, msg in report["failures"].items():
        print(f"error: {route}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
