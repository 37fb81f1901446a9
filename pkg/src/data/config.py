"""
运行配置加载与校验

JSON config (``schema: 1``) → frozen dataclasses. Every schema problem raises
ConfigError naming the field path; physics problems (non-Hermitian H, bad ρ0)
surface later as PhysicsError when the objects are built.
"""

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from src.core.evolve import initial_state, validate_density_matrix
from src.core.spinsys import RateConstants, SpinSystem, from_matrices, minimal_two_level
from src.core.superop import Kind
from src.core.trajectory import TrajectoryConfig, max_stable_dt
from src.utils.errors import ConfigError

SCHEMA_VERSION = 1
OUT_ENV = "RADPAIR_OUT"
APPROACH_CHOICES = ("haberkorn", "measurement", "both")
RHO0_NAMES = ("singlet", "triplet", "mixed")


def _default_out_dir() -> str:
    return os.environ.get(OUT_ENV, "").strip() or "save"


# ---------- scalar helpers ----------

def _number(value: Any, path: str, minimum: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum:g}, got {value:g}")
    return value


def _integer(value: Any, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {value}")
    return value


def _mapping(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(block: dict, allowed: set, path: str) -> None:
    unknown = sorted(set(block) - allowed)
    if unknown:
        prefix = f"{path}." if path else ""
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown field")


def _complex_matrix(value: Any, path: str) -> np.ndarray:
    """[[ [re, im], … ], …] (plain reals are accepted as well)."""
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a non-empty list of rows")
    rows = []
    for i, row in enumerate(value):
        if not isinstance(row, list) or len(row) != len(value):
            raise ConfigError(f"{path}[{i}]", f"expected a row of length {len(value)}")
        entries = []
        for j, entry in enumerate(row):
            where = f"{path}[{i}][{j}]"
            if isinstance(entry, list):
                if len(entry) != 2:
                    raise ConfigError(where, "complex entries are [re, im] pairs")
                entries.append(complex(_number(entry[0], where), _number(entry[1], where)))
            else:
                entries.append(complex(_number(entry, where), 0.0))
        rows.append(entries)
    return np.array(rows, dtype=complex)


def matrix_to_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m, dtype=complex)]


# ---------- blocks ----------

@dataclass(frozen=True)
class SystemConfig:
    kind: str
    omega: float = 1.0
    hamiltonian: np.ndarray | None = field(default=None, repr=False)
    q_singlet: np.ndarray | None = field(default=None, repr=False)

    def build(self) -> SpinSystem:
        if self.kind == "two_level":
            return minimal_two_level(self.omega)
        return from_matrices(self.hamiltonian, self.q_singlet)

    def to_dict(self) -> dict:
        if self.kind == "two_level":
            return {"two_level": {"omega": self.omega}}
        return {
            "explicit": {
                "hamiltonian": matrix_to_json(self.hamiltonian),
                "q_singlet": matrix_to_json(self.q_singlet),
            }
        }


@dataclass(frozen=True)
class TimeGrid:
    start: float = 0.0
    stop: float = 20.0
    count: int = 401
    explicit: tuple | None = None

    def values(self) -> np.ndarray:
        if self.explicit is not None:
            return np.array(self.explicit, dtype=float)
        return np.linspace(self.start, self.stop, self.count)

    def to_dict(self):
        if self.explicit is not None:
            return list(self.explicit)
        return {"start": self.start, "stop": self.stop, "count": self.count}


@dataclass(frozen=True)
class TrajectoryBlock:
    dt: float | None = None
    t_max: float | None = None
    n_traj: int = 10000
    seed: int = 0
    n_out: int = 101

    def to_dict(self) -> dict:
        return {"dt": self.dt, "t_max": self.t_max, "n_traj": self.n_traj, "seed": self.seed, "n_out": self.n_out}


@dataclass(frozen=True)
class SweepBlock:
    log10_kt_min: float = -2.0
    log10_kt_max: float = 3.0
    kt_count: int = 51
    include_zero: bool = False
    t_omega_max: float = 20.0
    t_count: int = 401

    def kt_grid(self) -> np.ndarray:
        grid = np.logspace(self.log10_kt_min, self.log10_kt_max, self.kt_count)
        return np.concatenate([[0.0], grid]) if self.include_zero else grid

    def t_omega_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_omega_max, self.t_count)

    def to_dict(self) -> dict:
        return {
            "log10_kt_min": self.log10_kt_min,
            "log10_kt_max": self.log10_kt_max,
            "kt_count": self.kt_count,
            "include_zero": self.include_zero,
            "t_omega_max": self.t_omega_max,
            "t_count": self.t_count,
        }


@dataclass(frozen=True)
class OutputBlock:
    directory: str = field(default_factory=_default_out_dir)
    prefix: str = "radpair"
    excel: bool = False

    def to_dict(self) -> dict:
        return {"directory": self.directory, "prefix": self.prefix, "excel": self.excel}


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig
    rates: RateConstants = field(default_factory=RateConstants)
    rho0: str | np.ndarray = "singlet"
    times: TimeGrid = field(default_factory=TimeGrid)
    approach: str = "both"
    trajectory: TrajectoryBlock | None = None
    sweep: SweepBlock = field(default_factory=SweepBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    schema: int = SCHEMA_VERSION

    @property
    def approaches(self) -> tuple[Kind, ...]:
        if self.approach == "both":
            return (Kind.HABERKORN, Kind.MEASUREMENT)
        return (Kind.parse(self.approach),)

    def build_system(self) -> SpinSystem:
        return self.system.build()

    def build_rho0(self, sys: SpinSystem) -> np.ndarray:
        if isinstance(self.rho0, str):
            return initial_state(sys, self.rho0)
        return validate_density_matrix(self.rho0, sys.dim)

    def time_values(self) -> np.ndarray:
        return self.times.values()

    def trajectory_config(self, sys: SpinSystem, scheme: Kind) -> TrajectoryConfig:
        if self.trajectory is None:
            raise ConfigError("trajectory", "block is required for this command")
        block = self.trajectory
        dt = block.dt if block.dt is not None else max_stable_dt(sys, self.rates)
        if not math.isfinite(dt):
            raise ConfigError("trajectory.dt", "cannot be derived when H = 0 and both rates vanish; set it explicitly")
        t_max = block.t_max if block.t_max is not None else float(self.time_values()[-1])
        return TrajectoryConfig(dt=dt, t_max=t_max, n_traj=block.n_traj, seed=block.seed, scheme=scheme, n_out=block.n_out)

    def with_overrides(self, out_dir: str | None = None, excel: bool | None = None, approach: str | None = None) -> "RunConfig":
        output = OutputBlock(
            directory=out_dir if out_dir is not None else self.output.directory,
            prefix=self.output.prefix,
            excel=self.output.excel if excel is None else excel,
        )
        return RunConfig(
            system=self.system,
            rates=self.rates,
            rho0=self.rho0,
            times=self.times,
            approach=approach or self.approach,
            trajectory=self.trajectory,
            sweep=self.sweep,
            output=output,
            schema=self.schema,
        )

    def to_dict(self) -> dict:
        """Resolved effective config; feeding it back to parse_config reproduces this object."""
        return {
            "schema": self.schema,
            "system": self.system.to_dict(),
            "rates": {"k_s": self.rates.k_s, "k_t": self.rates.k_t},
            "rho0": self.rho0 if isinstance(self.rho0, str) else matrix_to_json(self.rho0),
            "times": self.times.to_dict(),
            "approach": self.approach,
            "trajectory": None if self.trajectory is None else self.trajectory.to_dict(),
            "sweep": self.sweep.to_dict(),
            "output": self.output.to_dict(),
        }


# ---------- parsing ----------

def _parse_system(raw: Any) -> SystemConfig:
    block = _mapping(raw, "system")
    if len(block) != 1 or next(iter(block)) not in ("two_level", "explicit"):
        raise ConfigError("system", "expected exactly one of 'two_level' or 'explicit'")
    if "two_level" in block:
        inner = _mapping(block["two_level"], "system.two_level")
        _reject_unknown(inner, {"omega"}, "system.two_level")
        if "omega" not in inner:
            raise ConfigError("system.two_level.omega", "is required")
        return SystemConfig("two_level", omega=_number(inner["omega"], "system.two_level.omega"))
    inner = _mapping(block["explicit"], "system.explicit")
    _reject_unknown(inner, {"hamiltonian", "q_singlet"}, "system.explicit")
    for key in ("hamiltonian", "q_singlet"):
        if key not in inner:
            raise ConfigError(f"system.explicit.{key}", "is required")
    h = _complex_matrix(inner["hamiltonian"], "system.explicit.hamiltonian")
    q_s = _complex_matrix(inner["q_singlet"], "system.explicit.q_singlet")
    if h.shape != q_s.shape:
        raise ConfigError("system.explicit.q_singlet", f"shape {q_s.shape} does not match hamiltonian {h.shape}")
    return SystemConfig("explicit", hamiltonian=h, q_singlet=q_s)


def _parse_rates(raw: Any) -> RateConstants:
    block = _mapping(raw, "rates")
    _reject_unknown(block, {"k_s", "k_t"}, "rates")
    return RateConstants(
        k_s=_number(block.get("k_s", 0.0), "rates.k_s", minimum=0.0),
        k_t=_number(block.get("k_t", 0.0), "rates.k_t", minimum=0.0),
    )


def _parse_times(raw: Any) -> TimeGrid:
    if isinstance(raw, list):
        values = tuple(_number(v, f"times[{i}]", minimum=0.0) for i, v in enumerate(raw))
        if len(values) < 2:
            raise ConfigError("times", "needs at least 2 points")
        if any(b < a for a, b in zip(values, values[1:])):
            raise ConfigError("times", "explicit time list must be sorted")
        return TimeGrid(explicit=values)
    block = _mapping(raw, "times")
    _reject_unknown(block, {"start", "stop", "count"}, "times")
    start = _number(block.get("start", 0.0), "times.start", minimum=0.0)
    stop = _number(block.get("stop", 20.0), "times.stop", minimum=0.0)
    count = _integer(block.get("count", 401), "times.count", minimum=2)
    if stop <= start:
        raise ConfigError("times.stop", f"must exceed times.start ({start:g})")
    return TimeGrid(start=start, stop=stop, count=count)


def _parse_rho0(raw: Any):
    if isinstance(raw, str):
        name = raw.strip().lower()
        if name not in RHO0_NAMES:
            raise ConfigError("rho0", f"expected one of {RHO0_NAMES} or a matrix, got {raw!r}")
        return name
    return _complex_matrix(raw, "rho0")


def _parse_trajectory(raw: Any) -> TrajectoryBlock | None:
    if raw is None:
        return None
    block = _mapping(raw, "trajectory")
    _reject_unknown(block, {"dt", "t_max", "n_traj", "seed", "n_out"}, "trajectory")
    dt = block.get("dt")
    t_max = block.get("t_max")
    seed = _integer(block.get("seed", 0), "trajectory.seed", minimum=0)
    if seed >= 2**64:
        raise ConfigError("trajectory.seed", "must fit in 64 bits")
    if dt is not None:
        dt = _number(dt, "trajectory.dt")
        if dt <= 0:
            raise ConfigError("trajectory.dt", "must be positive")
    return TrajectoryBlock(
        dt=dt,
        t_max=None if t_max is None else _number(t_max, "trajectory.t_max", minimum=0.0),
        n_traj=_integer(block.get("n_traj", 10000), "trajectory.n_traj", minimum=1),
        seed=seed,
        n_out=_integer(block.get("n_out", 101), "trajectory.n_out", minimum=2),
    )


def _parse_sweep(raw: Any) -> SweepBlock:
    if raw is None:
        return SweepBlock()
    block = _mapping(raw, "sweep")
    allowed = {"log10_kt_min", "log10_kt_max", "kt_count", "include_zero", "t_omega_max", "t_count"}
    _reject_unknown(block, allowed, "sweep")
    defaults = SweepBlock()
    include_zero = block.get("include_zero", defaults.include_zero)
    if not isinstance(include_zero, bool):
        raise ConfigError("sweep.include_zero", "expected true or false")
    sweep = SweepBlock(
        log10_kt_min=_number(block.get("log10_kt_min", defaults.log10_kt_min), "sweep.log10_kt_min"),
        log10_kt_max=_number(block.get("log10_kt_max", defaults.log10_kt_max), "sweep.log10_kt_max"),
        kt_count=_integer(block.get("kt_count", defaults.kt_count), "sweep.kt_count", minimum=1),
        include_zero=include_zero,
        t_omega_max=_number(block.get("t_omega_max", defaults.t_omega_max), "sweep.t_omega_max", minimum=0.0),
        t_count=_integer(block.get("t_count", defaults.t_count), "sweep.t_count", minimum=2),
    )
    if sweep.log10_kt_max < sweep.log10_kt_min:
        raise ConfigError("sweep.log10_kt_max", "must not be below sweep.log10_kt_min")
    if sweep.t_omega_max <= 0:
        raise ConfigError("sweep.t_omega_max", "must be positive")
    return sweep


def _parse_output(raw: Any) -> OutputBlock:
    if raw is None:
        return OutputBlock()
    block = _mapping(raw, "output")
    _reject_unknown(block, {"directory", "prefix", "excel"}, "output")
    defaults = OutputBlock()
    directory = block.get("directory", defaults.directory)
    prefix = block.get("prefix", defaults.prefix)
    excel = block.get("excel", defaults.excel)
    if not isinstance(directory, str) or not directory:
        raise ConfigError("output.directory", "expected a non-empty string")
    if not isinstance(prefix, str) or not prefix or any(c in prefix for c in "/\\"):
        raise ConfigError("output.prefix", "expected a non-empty file-name prefix")
    if not isinstance(excel, bool):
        raise ConfigError("output.excel", "expected true or false")
    return OutputBlock(directory=directory, prefix=prefix, excel=excel)


def parse_config(raw: Any) -> RunConfig:
    """
    校验并解析配置字典

    Args:
        raw: json.load 得到的字典

    Returns:
        RunConfig: 填好默认值的配置
    """
    raw = _mapping(raw, "config")
    _reject_unknown(
        raw,
        {"schema", "system", "rates", "rho0", "times", "approach", "trajectory", "sweep", "output"},
        "",
    )
    if "schema" not in raw:
        raise ConfigError("schema", "is required")
    if raw["schema"] != SCHEMA_VERSION:
        raise ConfigError("schema", f"unsupported version {raw['schema']!r} (expected {SCHEMA_VERSION})")
    if "system" not in raw:
        raise ConfigError("system", "is required")

    approach = raw.get("approach", "both")
    if approach not in APPROACH_CHOICES:
        raise ConfigError("approach", f"expected one of {APPROACH_CHOICES}, got {approach!r}")

    return RunConfig(
        system=_parse_system(raw["system"]),
        rates=_parse_rates(raw.get("rates", {})),
        rho0=_parse_rho0(raw.get("rho0", "singlet")),
        times=_parse_times(raw.get("times", {})),
        approach=approach,
        trajectory=_parse_trajectory(raw.get("trajectory")),
        sweep=_parse_sweep(raw.get("sweep")),
        output=_parse_output(raw.get("output")),
    )


def load_config(file_path: str | Path) -> RunConfig:
    """
    从 JSON 文件读取配置

    Args:
        file_path: 配置文件路径

    Returns:
        RunConfig: 校验后的配置
    """
    path = Path(file_path)
    if not path.exists():
        raise ConfigError("--config", f"file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError("--config", f"invalid JSON ({e.msg} at line {e.lineno})")
    return parse_config(raw)
