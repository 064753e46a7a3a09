"""Run configuration: flat ``section.key = value`` documents (TOML syntax, # comments).

Every accepted key is listed in ``KEYS`` with its default. Per-population
overrides for ``solve-multi`` use a ``popN.`` prefix in front of any model or
``init`` key, e.g. ``pop2.cost.target = [-1.0, 0.0]``.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import numpy as np
import tomli

from .core import DensityField, Grid2D, ParticleCloud, TimeGrid
from .hjb import HjbOptions
from .mfgsolve import Grids, SolveConfig, atoms_cloud, gaussian_density, uniform_box_density
from .model import CostParams, KernelParams, ModelParams


logger = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


_POINT = "point"
_POINTS = "points"
_MATRIX = "matrix"

KEYS: dict[str, tuple[type | str, object]] = {
    "grid.L": (float, 4.0),
    "grid.n": (int, 96),
    "time.T": (float, 1.0),
    "time.n_t": (int, 80),
    "kernel.kappa": (float, 0.5),
    "kernel.R": (float, 1.0),
    "kernel.r_o": (float, 0.2),
    "kernel.w_moll": (float, 0.1),
    "cost.eps_run": (float, 0.1),
    "cost.c_cong": (float, 0.0),
    "cost.sigma_cong": (float, 0.3),
    "cost.terminal": (str, "soft_target"),
    "cost.target": (_POINT, (0.0, 0.0)),
    "cost.c_T": (float, 1.0),
    "cost.c_cong_T": (float, 0.0),
    "model.M_tot": (float, 1.0),
    "control.A_max": (float, None),
    "control.n_r": (int, 8),
    "control.n_theta": (int, 16),
    "hjb.scheme": (str, "corrected"),
    "hjb.exit_penalty": (float, 10.0),
    "hjb.refine": (bool, True),
    "solve.theta": (float, 0.5),
    "solve.tol_fp": (float, 5e-3),
    "solve.max_iter": (int, 40),
    "solve.n_particles": (int, 40_000),
    "solve.seed": (int, 0),
    "solve.support_cap": (float, 2.5),
    "solve.density_cap": (float, 50.0),
    "solve.eps_nash_abs": (float, 0.05),
    "solve.eps_nash_rel": (float, 0.05),
    "solve.verify": (bool, True),
    "solve.nash": (bool, True),
    "solve.nash_starts": (int, 20),
    "solve.n_dirs": (int, 64),
    "init.kind": (str, "gaussian"),
    "init.center": (_POINT, (0.0, 0.0)),
    "init.sigma": (float, 0.5),
    "init.lo": (_POINT, (-1.0, -1.0)),
    "init.hi": (_POINT, (1.0, 1.0)),
    "init.atoms": (_POINTS, ()),
    "output.dir": (str, "out"),
    "output.every": (int, 1),
    "multi.count": (int, 1),
    "multi.coupling": (_MATRIX, None),
    "traj.starts": (_POINTS, ((0.0, 0.0),)),
}

POP_SECTIONS = ("kernel", "cost", "model", "init")
INIT_KINDS = ("gaussian", "uniform_box", "atoms")
_POP_RE = re.compile(r"^pop(\d+)\.(.+)$")


@dataclass(frozen=True)
class InitSpec:
    kind: str = "gaussian"
    center: tuple = (0.0, 0.0)
    sigma: float = 0.5
    lo: tuple = (-1.0, -1.0)
    hi: tuple = (1.0, 1.0)
    atoms: tuple = ()

    def build(self, grid: Grid2D, cfg: SolveConfig, M_tot: float = 1.0) -> DensityField | ParticleCloud:
        if self.kind == "gaussian":
            return gaussian_density(grid, self.center, self.sigma, M_tot)
        if self.kind == "uniform_box":
            return uniform_box_density(grid, self.lo, self.hi, M_tot)
        return atoms_cloud(self.atoms, cfg.n_particles)


@dataclass
class Population:
    model: ModelParams
    init: InitSpec


@dataclass
class RunConfig:
    grids: Grids
    model: ModelParams
    solve: SolveConfig
    init: InitSpec
    output_dir: str
    output_every: int
    populations: list[Population]
    coupling: np.ndarray | None
    traj_starts: np.ndarray
    values: dict = field(repr=False, default_factory=dict)

    @property
    def grid(self) -> Grid2D:
        return self.grids.grid

    @property
    def tgrid(self) -> TimeGrid:
        return self.grids.tgrid


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _line_of(text: str, key: str) -> int | None:
    last = key.rsplit(".", 1)[-1]
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=|^\s*{re.escape(last)}\s*=")
    for no, line in enumerate(text.splitlines(), 1):
        if pat.search(line):
            return no
    return None


def _base_key(key: str) -> str:
    m = _POP_RE.match(key)
    return m.group(2) if m else key


def _coerce(key: str, value, text: str):
    kind = KEYS[_base_key(key)][0]

    def bad(why):
        line = _line_of(text, key)
        where = f" (line {line})" if line else ""
        return ParseError(f"{key}{where}: {why}")

    try:
        if kind is bool:
            if not isinstance(value, bool):
                raise bad("expected true or false")
            return value
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise bad(f"expected an integer, got {value!r}")
            return value
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise bad(f"expected a number, got {value!r}")
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                raise bad(f"expected a string, got {value!r}")
            return value
        arr = np.asarray(value, dtype=float)
        if kind == _POINTS and arr.size == 0:
            return ()
        if kind == _POINT and arr.shape != (2,):
            raise bad("expected a pair [x, y]")
        if kind == _POINTS and (arr.ndim != 2 or arr.shape[1] != 2):
            raise bad("expected a list of pairs [[x, y], ...]")
        if kind == _MATRIX and (arr.ndim != 2 or arr.shape[0] != arr.shape[1]):
            raise bad("expected a square matrix [[...], ...]")
        if kind == _POINT:
            return tuple(float(v) for v in arr)
        return tuple(tuple(float(v) for v in row) for row in arr)
    except (TypeError, ValueError) as exc:
        raise bad(str(exc)) from None


def _model_from(v: dict) -> ModelParams:
    kernel = KernelParams(v["kernel.kappa"], v["kernel.R"], v["kernel.r_o"], v["kernel.w_moll"])
    cost = CostParams(
        v["cost.eps_run"], v["cost.c_cong"], v["cost.sigma_cong"], v["cost.terminal"],
        v["cost.target"], v["cost.c_T"], v["cost.c_cong_T"],
    )
    return ModelParams(kernel, cost, v["model.M_tot"])


def _init_from(v: dict) -> InitSpec:
    kind = v["init.kind"]
    if kind not in INIT_KINDS:
        raise ValueError(f"init.kind must be one of {INIT_KINDS}, got {kind!r}")
    if kind == "atoms" and not v["init.atoms"]:
        raise ValueError("init.kind = 'atoms' needs a non-empty init.atoms list")
    if kind == "uniform_box" and not all(a < b for a, b in zip(v["init.lo"], v["init.hi"])):
        raise ValueError("init.lo must lie below init.hi in both coordinates")
    return InitSpec(kind, v["init.center"], v["init.sigma"], v["init.lo"], v["init.hi"], v["init.atoms"])


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config document; ``overrides`` replaces keys after parsing."""
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(str(exc)) from None
    flat = _flatten(raw)
    values = {k: d for k, (_, d) in KEYS.items()}
    pops: dict[int, dict] = {}
    for key, val in flat.items():
        m = _POP_RE.match(key)
        if m:
            base = m.group(2)
            if base not in KEYS or base.split(".")[0] not in POP_SECTIONS:
                line = _line_of(text, key)
                raise ParseError(f"unknown key {key!r}" + (f" (line {line})" if line else ""))
            pops.setdefault(int(m.group(1)), {})[base] = _coerce(key, val, text)
            continue
        if key not in KEYS:
            line = _line_of(text, key)
            raise ParseError(f"unknown key {key!r}" + (f" (line {line})" if line else ""))
        values[key] = _coerce(key, val, text)
    if overrides:
        values.update(overrides)

    try:
        grid = Grid2D(values["grid.L"], values["grid.n"])
        tgrid = TimeGrid(values["time.T"], values["time.n_t"])
        model = _model_from(values)
        hjb = HjbOptions(values["hjb.scheme"], values["hjb.exit_penalty"], values["control.A_max"],
                         values["control.n_r"], values["control.n_theta"], values["hjb.refine"])
        solve = SolveConfig(
            theta=values["solve.theta"], tol_fp=values["solve.tol_fp"], max_iter=values["solve.max_iter"],
            n_particles=values["solve.n_particles"], seed=values["solve.seed"],
            support_cap=values["solve.support_cap"], density_cap=values["solve.density_cap"],
            eps_nash_abs=values["solve.eps_nash_abs"], eps_nash_rel=values["solve.eps_nash_rel"],
            verify=values["solve.verify"], nash=values["solve.nash"], nash_starts=values["solve.nash_starts"],
            n_dirs=values["solve.n_dirs"], hjb=hjb,
        )
        init = _init_from(values)
        if values["output.every"] < 1:
            raise ValueError("output.every must be >= 1")
        count = values["multi.count"]
        if count < 1:
            raise ValueError("multi.count must be >= 1")
        bad = [p for p in pops if not 1 <= p <= count]
        if bad:
            raise ValueError(f"population override pop{bad[0]} outside 1..multi.count={count}")
        populations = []
        for p in range(1, count + 1):
            pv = dict(values)
            pv.update(pops.get(p, {}))
            populations.append(Population(_model_from(pv), _init_from(pv)))
        coupling = values["multi.coupling"]
        if coupling is not None:
            coupling = np.asarray(coupling, dtype=float)
            if coupling.shape != (count, count):
                raise ValueError(f"multi.coupling must be {count}x{count}")
            for j, pop in enumerate(populations):
                if coupling[j, j] != pop.model.kernel.kappa:
                    raise ValueError(f"multi.coupling[{j}][{j}] must equal the kernel.kappa of pop{j + 1}")
            if np.any(coupling < 0):
                raise ValueError("multi.coupling entries must be >= 0")
    except ValueError as exc:
        raise ValidationError(str(exc)) from None

    for pop in populations:
        k = pop.model.kernel
        if k.kappa > 0 and grid.L <= solve.support_cap + k.R:
            logger.warning("box half-width L=%g does not exceed support_cap + R = %g", grid.L, solve.support_cap + k.R)
            break
    for p, pv in pops.items():
        for k, v in pv.items():
            values[f"pop{p}.{k}"] = v
    return RunConfig(
        Grids(grid, tgrid), model, solve, init, values["output.dir"], values["output.every"],
        populations, coupling, np.asarray(values["traj.starts"], dtype=float).reshape(-1, 2), values,
    )


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return "[" + ", ".join(_fmt(x) for x in v) + "]"


def effective_config_text(rc: RunConfig) -> str:
    """Every key with its effective value, sorted; omitted optional keys are commented out."""
    lines = []
    for key in sorted(rc.values):
        v = rc.values[key]
        if v is None:
            lines.append(f"# {key} = (unset)")
        elif isinstance(v, np.ndarray):
            lines.append(f"{key} = {_fmt(v.tolist())}")
        else:
            lines.append(f"{key} = {_fmt(v)}")
    return "\n".join(lines) + "\n"
