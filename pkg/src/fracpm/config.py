"""Run configurations: JSON parsing, validation and the bundled presets."""

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .fem import CoefficientSet, make_coefficients

_A_KEYS = {"identity": (), "diag": ("a11", "a22")}
_Q_KEYS = {"zero": (), "quadratic": ("coef",), "step": ("hi", "lo"), "const": ("q",)}


@dataclass(frozen=True)
class InitialComponent:
    """One bump of the initial density.

    gaussian: ``amplitude * exp(-|x - center|^2 / sigma)``
    blob:     ``amplitude * max(0, 1 - |x - center|^2 / sigma)``
    """

    kind: str
    center: tuple
    sigma: float
    amplitude: float = 1.0

    def __call__(self, x, y):
        r2 = (np.asarray(x) - self.center[0]) ** 2 + (np.asarray(y) - self.center[1]) ** 2
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-r2 / self.sigma)
        return self.amplitude * np.maximum(0.0, 1.0 - r2 / self.sigma)


@dataclass(frozen=True)
class SolverSettings:
    fp_tol: float = 1e-10
    fp_maxiter: int = 200
    omega: float = 1.0
    rational_tol: float = 1e-9
    max_degree: int = 30
    mass: str = "consistent"
    linear_solver: str = "auto"


@dataclass(frozen=True)
class SimConfig:
    name: str
    domain: tuple
    nx: int
    ny: int
    s: float
    mu: float
    dt: float
    t_final: float
    A: dict
    Q: dict
    initial: tuple
    delta: object = "auto"
    L_cutoff: object = "auto"
    normalize_mass: bool = False
    snapshot_times: tuple = ()
    force: bool = False
    solver: SolverSettings = field(default_factory=SolverSettings)
    notes: str = ""

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def coefficients(self) -> CoefficientSet:
        a = (self.A["kind"],) + tuple(self.A[k] for k in _A_KEYS[self.A["kind"]])
        q = (self.Q["kind"],) + tuple(self.Q[k] for k in _Q_KEYS[self.Q["kind"]])
        return make_coefficients(a, q)

    def rho0(self):
        comps = self.initial

        def f(x, y):
            return sum(c(x, y) for c in comps)
        return f

    def replace(self, **changes) -> "SimConfig":
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg

    def override(self, **changes) -> "SimConfig":
        """Like ``replace`` but drops snapshot times beyond a shortened run."""
        t_final = changes.get("t_final", self.t_final)
        snaps = changes.get("snapshot_times", self.snapshot_times)
        changes["snapshot_times"] = tuple(t for t in snaps if t <= t_final * (1 + 1e-12))
        return self.replace(**changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["domain"] = list(self.domain)
        d["initial"] = [dict(dataclasses.asdict(c), center=list(c.center)) for c in self.initial]
        d["snapshot_times"] = list(self.snapshot_times)
        return d


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return None


def _take(d: dict, allowed, where: str, text: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}", line=_line_of(text, unknown[0]))


def _coef_spec(d, table, what, text):
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{what} must be an object with a 'kind' field", line=_line_of(text, what))
    kind = d["kind"]
    if kind not in table:
        raise ConfigError(f"unknown {what} preset {kind!r}", line=_line_of(text, kind))
    _take(d, ("kind",) + table[kind], what, text)
    missing = [k for k in table[kind] if k not in d]
    if missing:
        raise ConfigError(f"{what} preset {kind!r} needs {missing}", line=_line_of(text, what))
    return {"kind": kind, **{k: float(d[k]) for k in table[kind]}}


def from_dict(raw: dict, text: str = "") -> SimConfig:
    """Build and validate a SimConfig from decoded JSON."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", line=1)
    names = [f.name for f in dataclasses.fields(SimConfig)]
    _take(raw, names, "config", text)
    required = ("name", "domain", "nx", "ny", "s", "mu", "dt", "t_final", "A", "Q", "initial")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigError(f"missing required key {missing[0]!r}")

    solver_raw = raw.get("solver", {})
    if not isinstance(solver_raw, dict):
        raise ConfigError("solver must be an object", line=_line_of(text, "solver"))
    _take(solver_raw, [f.name for f in dataclasses.fields(SolverSettings)], "solver", text)

    initial = []
    for comp in raw["initial"]:
        if not isinstance(comp, dict):
            raise ConfigError("initial entries must be objects", line=_line_of(text, "initial"))
        _take(comp, ("kind", "center", "sigma", "amplitude"), "initial", text)
        try:
            initial.append(InitialComponent(str(comp["kind"]), tuple(float(v) for v in comp["center"]),
                                            float(comp["sigma"]), float(comp.get("amplitude", 1.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad initial component {comp}: {exc}",
                              line=_line_of(text, "initial")) from None

    def auto_or_float(v):
        return v if v == "auto" else float(v)

    try:
        cfg = SimConfig(
            name=str(raw["name"]),
            domain=tuple(float(v) for v in raw["domain"]),
            nx=raw["nx"], ny=raw["ny"],
            s=float(raw["s"]), mu=float(raw["mu"]), dt=float(raw["dt"]),
            t_final=float(raw["t_final"]),
            A=_coef_spec(raw["A"], _A_KEYS, "A", text),
            Q=_coef_spec(raw["Q"], _Q_KEYS, "Q", text),
            initial=tuple(initial),
            delta=auto_or_float(raw.get("delta", "auto")),
            L_cutoff=auto_or_float(raw.get("L_cutoff", "auto")),
            normalize_mass=raw.get("normalize_mass", False),
            snapshot_times=tuple(float(t) for t in raw.get("snapshot_times", ())),
            force=raw.get("force", False),
            solver=SolverSettings(**solver_raw),
            notes=str(raw.get("notes", "")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value: {exc}") from None
    validate(cfg)
    return cfg


def validate(cfg: SimConfig) -> None:
    """Raise ConfigError if ``cfg`` violates a constraint."""
    def bad(msg, key=None):
        raise ConfigError(msg, key=key)

    if len(cfg.domain) != 4 or not (cfg.domain[1] > cfg.domain[0] and cfg.domain[3] > cfg.domain[2]):
        bad("domain must be [x0, x1, y0, y1] with x1 > x0 and y1 > y0", "domain")
    for k in ("nx", "ny"):
        v = getattr(cfg, k)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            bad(f"{k} must be a positive integer", k)
    if not isinstance(cfg.force, bool) or not isinstance(cfg.normalize_mass, bool):
        bad("force and normalize_mass must be booleans")
    lo_s = 0.0 if cfg.force else 0.5
    if not lo_s < cfg.s < 1.0:
        bad(f"s = {cfg.s} outside ({lo_s:g}, 1); set \"force\": true to explore", "s")
    if not cfg.mu >= 0:
        bad("mu must be nonnegative", "mu")
    if not (cfg.dt > 0 and cfg.t_final > 0):
        bad("dt and t_final must be positive", "dt")
    n = cfg.t_final / cfg.dt
    if abs(n - round(n)) > 1e-9 * max(1.0, n) or round(n) < 1:
        bad(f"t_final / dt = {n} is not a positive integer", "t_final")
    if cfg.delta != "auto" and not (isinstance(cfg.delta, float) and 0 < cfg.delta < 1):
        bad(f"delta must be 'auto' or lie in (0, 1), got {cfg.delta}", "delta")
    if cfg.L_cutoff != "auto" and not (isinstance(cfg.L_cutoff, float) and 1 < cfg.L_cutoff < math.inf):
        bad(f"L_cutoff must be 'auto' or exceed 1, got {cfg.L_cutoff}", "L_cutoff")
    if not cfg.initial:
        bad("initial needs at least one component", "initial")
    for c in cfg.initial:
        if c.kind not in ("gaussian", "blob"):
            bad(f"initial kind must be gaussian or blob, got {c.kind!r}", "initial")
        if len(c.center) != 2 or not c.sigma > 0 or not c.amplitude >= 0:
            bad("initial components need a 2-D center, sigma > 0 and amplitude >= 0", "initial")
    if any(t < 0 or t > cfg.t_final * (1 + 1e-12) for t in cfg.snapshot_times):
        bad("snapshot times must lie in [0, t_final]", "snapshot_times")
    sv = cfg.solver
    if not (sv.fp_tol > 0 and isinstance(sv.fp_maxiter, int) and sv.fp_maxiter >= 1):
        bad("solver.fp_tol must be positive and solver.fp_maxiter a positive integer", "solver")
    if not 0 < sv.omega <= 1:
        bad("solver.omega must lie in (0, 1]", "solver")
    if not (0 < sv.rational_tol < 1 and isinstance(sv.max_degree, int) and sv.max_degree >= 1):
        bad("solver.rational_tol must lie in (0, 1), max_degree >= 1", "solver")
    if sv.mass not in ("consistent", "lumped"):
        bad("solver.mass must be 'consistent' or 'lumped'", "solver")
    if sv.linear_solver not in ("auto", "direct", "cg"):
        bad("solver.linear_solver must be 'auto', 'direct' or 'cg'", "solver")
    try:
        cfg.coefficients()
    except ValueError as exc:
        bad(str(exc), "A")


def parse_config(path) -> SimConfig:
    """Read and validate a JSON run description.

    Raises
    ------
    ConfigError
        On malformed JSON (with its line number), unknown keys or violated
        constraints.
    """
    text = Path(path).read_text()
    if not text.strip():
        raise ConfigError(f"{path}: empty configuration file", line=1)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc.msg}", line=exc.lineno) from None
    return from_dict(raw, text)


def dumps(cfg: SimConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"


def write_config(cfg: SimConfig, path) -> None:
    Path(path).write_text(dumps(cfg))


def bundled_names() -> list:
    root = resources.files("fracpm") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled preset, e.g. ``bundled_path("experiment_I")``."""
    p = resources.files("fracpm") / "configs" / f"{name.removesuffix('.json')}.json"
    if not p.is_file():
        raise ConfigError(f"no bundled config named {name!r}; have {bundled_names()}")
    return Path(str(p))


def load_bundled(name: str) -> SimConfig:
    return parse_config(bundled_path(name))
