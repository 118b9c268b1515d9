"""Experiment configuration: flat key/value config files and validation.

Schema (one `key = value` per line, `#` comments, blank lines ignored):

    system       fhn | rossler
    params       comma-separated system parameters (fhn: a,b,c; rossler: ah,bh,ch)
    u0           comma-separated initial state
    t0, tmax     integration window
    slices       time-slice count J
    fine_order   1 | 2 | 4        coarse_order   1 | 2 | 4
    nf, ng       total fine/coarse steps over the window (divisible by slices)
    tol          stopping tolerance (> 0)
    workers      parallel worker bound
    executor     serial | thread | process
    mode         fine | parareal | gparareal
    legacy_in    optional path to a residual archive to pre-condition on
    legacy_out   optional path to write this run's acquisition archive
    out_dir      output directory
    grid_min, grid_max, grid_count   optional per-dimension sweep grid

CLI flags override file values, which override per-system defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "default_config",
    "parse_config",
    "render_config",
    "load_config",
    "save_config",
]

_MODES = ("fine", "parareal", "gparareal")
_EXECUTORS = ("serial", "thread", "process")
_ORDERS = (1, 2, 4)


class ConfigError(ValueError):
    """Invalid configuration; message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "fhn"
    params: tuple[float, ...] = (0.2, 0.2, 3.0)
    u0: tuple[float, ...] = (-1.0, 1.0)
    t0: float = 0.0
    tmax: float = 40.0
    slices: int = 40
    fine_order: int = 4
    coarse_order: int = 2
    nf: int = 160_000
    ng: int = 160
    tol: float = 1e-6
    workers: int = 1
    executor: str = "thread"
    mode: str = "gparareal"
    legacy_in: str | None = None
    legacy_out: str | None = None
    out_dir: str = "runs/out"
    grid_min: tuple[float, ...] | None = None
    grid_max: tuple[float, ...] | None = None
    grid_count: tuple[int, ...] | None = None

    def validate(self) -> "ExperimentConfig":
        if self.system not in ("fhn", "rossler"):
            raise ConfigError(f"system: unknown system {self.system!r}")
        if self.mode not in _MODES:
            raise ConfigError(f"mode: must be one of {_MODES}, got {self.mode!r}")
        if self.executor not in _EXECUTORS:
            raise ConfigError(f"executor: must be one of {_EXECUTORS}")
        if not self.tmax > self.t0:
            raise ConfigError(f"tmax: need tmax > t0, got [{self.t0}, {self.tmax}]")
        if self.slices < 1:
            raise ConfigError(f"slices: must be positive, got {self.slices}")
        if self.fine_order not in _ORDERS or self.coarse_order not in _ORDERS:
            raise ConfigError(f"fine_order/coarse_order: must be one of {_ORDERS}")
        if self.nf % self.slices != 0:
            raise ConfigError(f"nf: {self.nf} not divisible by slices={self.slices}")
        if self.ng % self.slices != 0:
            raise ConfigError(f"ng: {self.ng} not divisible by slices={self.slices}")
        if not self.tol > 0:
            raise ConfigError(f"tol: must be > 0, got {self.tol}")
        if self.workers < 1:
            raise ConfigError(f"workers: must be positive, got {self.workers}")
        dim = 2 if self.system == "fhn" else 3
        if len(self.u0) != dim:
            raise ConfigError(f"u0: system {self.system!r} needs {dim} components")
        if len(self.params) != 3:
            raise ConfigError(f"params: system {self.system!r} takes 3 parameters")
        grid = (self.grid_min, self.grid_max, self.grid_count)
        if any(g is not None for g in grid):
            if any(g is None for g in grid):
                raise ConfigError("grid: grid_min, grid_max, grid_count must all be set")
            if not len(self.grid_min) == len(self.grid_max) == len(self.grid_count):
                raise ConfigError("grid: grid_min/grid_max/grid_count lengths differ")
            if any(c < 1 for c in self.grid_count):
                raise ConfigError(f"grid_count: counts must be >= 1, got {self.grid_count}")
            if any(lo > hi for lo, hi in zip(self.grid_min, self.grid_max)):
                raise ConfigError("grid: grid_min must not exceed grid_max")
        return self


def default_config(system: str = "fhn") -> ExperimentConfig:
    """Desk-scale defaults per system: fine step counts are the published
    setups shrunk by 1000x; coarse steps, slices and tolerance unchanged."""
    if system == "fhn":
        return ExperimentConfig()
    if system == "rossler":
        return ExperimentConfig(
            system="rossler",
            params=(0.2, 0.2, 5.7),
            u0=(0.0, -6.78, 0.02),
            t0=0.0,
            tmax=340.0,
            slices=40,
            fine_order=4,
            coarse_order=1,
            nf=450_000,
            ng=90_000,
        )
    raise ConfigError(f"system: unknown system {system!r}")


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config: ExperimentConfig) -> str:
    """Serialize to the flat key/value format; parse(render(c)) == c."""
    lines = ["# gparareal experiment configuration"]
    for f in fields(config):
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def _parse_floats(text: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as floats") from exc


def _parse_ints(text: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as integers") from exc


_FLOAT_KEYS = ("t0", "tmax", "tol")
_INT_KEYS = ("slices", "fine_order", "coarse_order", "nf", "ng", "workers")
_STR_KEYS = ("system", "executor", "mode", "out_dir")
_OPT_STR_KEYS = ("legacy_in", "legacy_out")
_FLOAT_TUPLE_KEYS = ("params", "u0", "grid_min", "grid_max")
_INT_TUPLE_KEYS = ("grid_count",)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse the flat key/value format, overlaying values onto `base`.

    When no base is given, per-system defaults are used (the file's `system`
    key, if any, picks which defaults).
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        raw[key] = value.strip()

    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    if base is None:
        base = default_config(raw.get("system", "fhn"))

    updates: dict[str, object] = {}
    for key, value in raw.items():
        if key in _STR_KEYS:
            updates[key] = value
        elif key in _OPT_STR_KEYS:
            updates[key] = value or None
        elif key in _FLOAT_KEYS:
            try:
                updates[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {value!r} as float") from exc
        elif key in _INT_KEYS:
            try:
                updates[key] = int(value)
            except ValueError as exc:
                raise ConfigError(f"{key}: cannot parse {value!r} as integer") from exc
        elif key in _FLOAT_TUPLE_KEYS:
            updates[key] = _parse_floats(value, key) if value else None
        elif key in _INT_TUPLE_KEYS:
            updates[key] = _parse_ints(value, key) if value else None
    if "params" in updates and updates["params"] is None:
        del updates["params"]
    if "u0" in updates and updates["u0"] is None:
        del updates["u0"]
    return replace(base, **updates)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), base=base)


def save_config(config: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(render_config(config))
