"""Gaussian-mixture initial data, scenario configuration and named presets.

Scenario files are JSON with a ``schema`` tag. Numbers may be written as
arithmetic strings in ``pi`` (``"4*pi"``, ``"3.9*pi"``); they are evaluated
by a small whitelist evaluator, never by ``eval``.
"""

from __future__ import annotations

import ast
import json
import math
import operator
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fields as fc
from .dynamics import Mode, SimState, StepperConfig
from .fields import GridSpec
from .species import CouplingModel

SCHEMA = "mspks.scenario/1"
PI = math.pi
TRUNCATION_TOL = 1e-8

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_NAMES = {"pi": math.pi, "e": math.e}


def parse_number(value) -> float:
    """Float from a number or an arithmetic string such as ``"3.9*pi"``."""
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ValueError(f"expected a number, got {value!r}")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        raise ValueError(f"unsupported expression in {value!r}")

    try:
        tree = ast.parse(value.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse number {value!r}") from exc
    out = ev(tree)
    if not math.isfinite(out):
        raise ValueError(f"non-finite number {value!r}")
    return out


@dataclass(frozen=True)
class GaussianBlob:
    mass: float
    center: tuple[float, float]
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.mass <= 0 or self.sigma <= 0:
            raise ValueError(f"blob needs mass > 0 and sigma > 0, got {self}")
        if len(self.center) != 2:
            raise ValueError("blob center must have two coordinates")

    def evaluate(self, x, y):
        r2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        s2 = self.sigma**2
        return self.mass / (2 * np.pi * s2) * np.exp(-0.5 * r2 / s2)

    def inside(self, half: float) -> bool:
        """3-sigma support within ``[-half, half]^2``."""
        return all(abs(c) + 3 * self.sigma <= half for c in self.center)


@dataclass(frozen=True)
class ScenarioConfig:
    grid: GridSpec
    model: CouplingModel
    initial: tuple[tuple[GaussianBlob, ...], ...]
    t_end: float
    sample_dt: float
    stepper: StepperConfig = field(default_factory=StepperConfig)
    mode: Mode = Mode.PHYSICAL
    snapshot_times: tuple[float, ...] = ()
    epsilon: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "initial", tuple(tuple(b) for b in self.initial))
        object.__setattr__(self, "snapshot_times", tuple(float(s) for s in self.snapshot_times))
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.sample_dt <= 0:
            raise ValueError("sample_dt must be > 0")
        if len(self.initial) != self.model.species_count:
            raise ValueError(f"{len(self.initial)} initial blob lists for "
                             f"{self.model.species_count} species")
        for a, blobs in enumerate(self.initial):
            if not blobs:
                raise ValueError(f"species {a} has no initial blobs")
            total = sum(b.mass for b in blobs)
            if abs(total - self.model.M[a]) > 1e-10 * self.model.M[a]:
                raise ValueError(f"species {a}: blob masses sum to {total}, model declares "
                                 f"{self.model.M[a]}")

    def initial_state(self) -> SimState:
        return build_initial(self)

    def with_mass(self, species: int, mass: float) -> "ScenarioConfig":
        """Same scenario with one species' mass changed; its blobs scale along."""
        M = self.model.M.copy()
        ratio = mass / M[species]
        M[species] = mass
        model = CouplingModel(self.model.B, M, self.model.chi)
        initial = list(self.initial)
        initial[species] = tuple(replace(b, mass=b.mass * ratio) for b in initial[species])
        return replace(self, model=model, initial=tuple(initial))


def build_initial(config: ScenarioConfig) -> SimState:
    """Sum the blobs per species and rescale each species to its declared mass."""
    grid = config.grid
    half = 0.5 * grid.half_width
    x, y = grid.mesh()
    arrays = []
    for a, blobs in enumerate(config.initial):
        for b in blobs:
            if not b.inside(half):
                raise ValueError(f"species {a}: blob {b} reaches outside [-{half}, {half}]^2")
        v = sum(b.evaluate(x, y) for b in blobs)
        v = v * (config.model.M[a] / (grid.h**2 * v.sum()))
        arrays.append(v)
    return SimState.from_arrays(0.0, grid, arrays, config.mode)


def truncation_fraction(state: SimState) -> float:
    """Largest per-species mass fraction outside ``[-L/2, L/2]^2``."""
    grid = state.grid
    c = np.abs(grid.centers) <= 0.5 * grid.half_width
    window = c[:, None] & c[None, :]
    worst = 0.0
    for v in state.arrays():
        total = np.abs(v).sum()
        if total > 0:
            worst = max(worst, float(np.abs(v[~window]).sum() / total))
    return worst


def validate(config: ScenarioConfig) -> SimState:
    """Build the initial state and enforce the truncation tolerance."""
    state = build_initial(config)
    frac = truncation_fraction(state)
    if frac > TRUNCATION_TOL:
        raise ValueError(f"{frac:.2e} of the mass lies outside the central half of the box "
                         f"(limit {TRUNCATION_TOL:g}); enlarge the box or narrow the blobs")
    return state


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def to_dict(config: ScenarioConfig) -> dict:
    return {
        "schema": SCHEMA,
        "name": config.name,
        "grid": {"n": config.grid.n, "half_width": config.grid.half_width},
        "model": {
            "B": config.model.B.tolist(),
            "M": config.model.M.tolist(),
            "chi": config.model.chi.tolist(),
        },
        "initial": [[{"mass": b.mass, "center": list(b.center), "sigma": b.sigma} for b in blobs]
                    for blobs in config.initial],
        "t_end": config.t_end,
        "sample_dt": config.sample_dt,
        "mode": config.mode.value,
        "epsilon": config.epsilon,
        "snapshot_times": list(config.snapshot_times),
        "stepper": {
            "cfl": config.stepper.cfl,
            "dt_min": config.stepper.dt_min,
            "dt_max": config.stepper.dt_max,
            "blowup_linf_factor": config.stepper.blowup_linf_factor,
            "blowup_tail_fraction": config.stepper.blowup_tail_fraction,
            "negativity_tolerance": config.stepper.negativity_tolerance,
        },
    }


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ValueError(f"{where}: missing field '{key}'")
    return d[key]


def _numbers(seq, where: str):
    if not isinstance(seq, list):
        raise ValueError(f"{where}: expected a list")
    try:
        return [parse_number(v) for v in seq]
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None


def model_from_dict(d: dict, where: str = "model") -> CouplingModel:
    B = _need(d, "B", where)
    if not isinstance(B, list):
        raise ValueError(f"{where}.B: expected a list of rows")
    rows = [_numbers(r, f"{where}.B[{i}]") for i, r in enumerate(B)]
    M = _numbers(_need(d, "M", where), f"{where}.M")
    chi = _numbers(d["chi"], f"{where}.chi") if "chi" in d else None
    try:
        return CouplingModel(np.array(rows, dtype=float), np.array(M), chi)
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None


def from_dict(d: dict) -> ScenarioConfig:
    schema = d.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ValueError(f"unsupported schema {schema!r} (expected {SCHEMA!r})")
    g = _need(d, "grid", "scenario")
    grid = GridSpec(int(_need(g, "n", "grid")), parse_number(_need(g, "half_width", "grid")))
    model = model_from_dict(_need(d, "model", "scenario"))
    initial = []
    for a, blobs in enumerate(_need(d, "initial", "scenario")):
        row = []
        for j, b in enumerate(blobs):
            where = f"initial[{a}][{j}]"
            row.append(GaussianBlob(parse_number(_need(b, "mass", where)),
                                    tuple(_numbers(_need(b, "center", where), where + ".center")),
                                    parse_number(_need(b, "sigma", where))))
        initial.append(tuple(row))
    st = d.get("stepper", {})
    stepper = StepperConfig(**{k: parse_number(v) for k, v in st.items()})
    try:
        mode = Mode(d.get("mode", "Physical"))
    except ValueError:
        raise ValueError(f"scenario.mode: unknown mode {d.get('mode')!r}") from None
    return ScenarioConfig(
        grid=grid, model=model, initial=tuple(initial),
        t_end=parse_number(_need(d, "t_end", "scenario")),
        sample_dt=parse_number(_need(d, "sample_dt", "scenario")),
        stepper=stepper, mode=mode,
        snapshot_times=tuple(_numbers(d.get("snapshot_times", []), "snapshot_times")),
        epsilon=parse_number(d.get("epsilon", 0.0)),
        name=str(d.get("name", "custom")),
    )


def load(path) -> ScenarioConfig:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return from_dict(d)


def save(config: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(config), indent=2) + "\n")


# --------------------------------------------------------------------------
# presets
# --------------------------------------------------------------------------

DEFAULT_GRID = GridSpec(256, 8.0)


def _scenario(name, B, M, blobs, t_end, sample_dt, chi=None, **kw) -> ScenarioConfig:
    model = CouplingModel(np.array(B, dtype=float), np.array(M, dtype=float), chi)
    initial = tuple(tuple(GaussianBlob(m, c, s) for m, c, s in row) for row in blobs)
    return ScenarioConfig(DEFAULT_GRID, model, initial, t_end, sample_dt, name=name, **kw)


def _competition(name, m1, m2, sigma=0.5, t_end=0.5):
    return _scenario(name, [[0, 1], [1, 0]], [m1, m2],
                     [[(m1, (0, 0), sigma)], [(m2, (0, 0), sigma)]], t_end, 0.025)


def _single(name, mass, sigma, t_end, sample_dt):
    return _scenario(name, [[1]], [mass], [[(mass, (0, 0), sigma)]], t_end, sample_dt)


PRESETS = {
    "competition_subcritical": lambda: _competition("competition_subcritical", 3.9 * PI, 12 * PI),
    "competition_supercritical": lambda: _competition("competition_supercritical", 5 * PI, 100 * PI,
                                                      t_end=0.2),
    # chi_1 / chi_2 within (1/2, 2) and (M1+M2)^2 / (M1/chi1 + M2/chi2) = 4.8 pi
    "cooperation": lambda: _scenario(
        "cooperation", [[1, 1], [1, 1]], [2 * PI, 2 * PI],
        [[(2 * PI, (-0.5, 0), 0.5)], [(2 * PI, (0.5, 0), 0.5)]], 0.5, 0.025, chi=[1.0, 1.5]),
    "single_subcritical": lambda: _single("single_subcritical", 4 * PI, 0.5, 1.0, 0.025),
    "single_supercritical": lambda: _single("single_supercritical", 16 * PI, 0.25, 0.1, 0.001),
    "chasing_escaping": lambda: _scenario(
        "chasing_escaping", [[0, 1], [-1, 0]], [4 * PI, 4 * PI],
        [[(4 * PI, (-1, 0), 0.5)], [(4 * PI, (1, 0), 0.5)]], 2.0, 0.05),
    "tridiagonal_nonsymmetric": lambda: _scenario(
        "tridiagonal_nonsymmetric", [[0, 2, 0], [1, 0, 6], [0, 3, 0]], [PI, PI, PI],
        [[(PI, (-1, 0), 0.5)], [(PI, (0, 0), 0.5)], [(PI, (1, 0), 0.5)]], 0.5, 0.05),
}

PRESET_CLASS = {
    "competition_subcritical": "Subcritical",
    "competition_supercritical": "Supercritical",
    "cooperation": "Subcritical",
    "single_subcritical": "Subcritical",
    "single_supercritical": "Supercritical",
    "chasing_escaping": "EssentiallyDissipative",
    "tridiagonal_nonsymmetric": "Symmetrizable",
}


def preset(name: str) -> ScenarioConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None


def preset_names() -> list[str]:
    return sorted(PRESETS)
