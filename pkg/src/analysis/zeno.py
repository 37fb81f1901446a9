"""
Zeno-regime analysis of the singlet population.

For k_S = 0 and k_T ≫ ω the singlet population decays almost exponentially,
at 2ω²/k_T under the measurement scheme and 4ω²/k_T under Haberkorn.
"""

import enum
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.stats

from src.core.evolve import initial_state, propagate
from src.core.spinsys import RateConstants, minimal_two_level
from src.core.superop import APPROACHES, Kind, Superoperator, kinetic_superop
from src.utils.errors import PhysicsError
from src.utils.parallel import map_ordered

FIT_WINDOW = (0.05, 0.5)
GOOD_FIT_R2 = 0.999

# regime classifier constants
MAXIMUM_FLOOR = 1e-3
MONOTONE_TOL = 1e-6
MIN_SAMPLES = 100
ZENO_RATE_FACTOR = 0.5

# decay rates below this are treated as no decay
NO_DECAY_RATE = 1e-12
FIT_HORIZON_LIFETIMES = 4.0
FIT_POINTS = 801

DEFAULT_LOG10_KT = (-2.0, 3.0, 51)
DEFAULT_T_OMEGA = (0.0, 20.0, 401)


class Regime(str, enum.Enum):
    OSCILLATORY = "oscillatory"
    MONOTONE_DECAY = "monotone_decay"
    ZENO = "zeno"


@dataclass(frozen=True)
class RateFit:
    rate: float
    r_squared: float
    window: tuple[float, float]
    n_points: int

    @property
    def flagged(self) -> bool:
        """True when the log-linear fit is not convincingly exponential."""
        return self.r_squared < GOOD_FIT_R2


def zeno_limit_rate(omega: float, k_t: float, kind) -> float:
    """Large-k_T singlet decay rate: 2ω²/k_T (measurement) or 4ω²/k_T (haberkorn)."""
    kind = Kind.parse(kind)
    if k_t <= 0:
        raise PhysicsError("the Zeno limit needs k_T > 0")
    factor = {Kind.MEASUREMENT: 2.0, Kind.HABERKORN: 4.0}.get(kind)
    if factor is None:
        raise PhysicsError(f"no Zeno limit for kind {kind.value}")
    return factor * omega * omega / k_t


def slowest_decay_rate(superop: Superoperator) -> float:
    """Smallest real part among the eigenvalues of L (the long-time decay rate)."""
    return float(np.min(np.linalg.eigvals(superop.matrix).real))


def zeno_rate_fit(times, pop_s) -> RateFit:
    """
    Least-squares fit of ln(pop_s) against t over the points with pop_s in [0.05, 0.5].

    Raises:
        PhysicsError: when no more than one point falls in the window.
    """
    times = np.asarray(times, dtype=float)
    pop_s = np.asarray(pop_s, dtype=float)
    lo, hi = FIT_WINDOW
    mask = (pop_s >= lo) & (pop_s <= hi)
    if np.count_nonzero(mask) < 2:
        raise PhysicsError(f"population never enters the fit window [{lo}, {hi}]")
    t_fit = times[mask]
    fit = scipy.stats.linregress(t_fit, np.log(pop_s[mask]))
    r_squared = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else 1.0
    return RateFit(
        rate=max(0.0, -float(fit.slope)),
        r_squared=min(1.0, max(0.0, r_squared)),
        window=(float(t_fit[0]), float(t_fit[-1])),
        n_points=int(mask.sum()),
    )


def _strict_maxima(pop_s: np.ndarray) -> np.ndarray:
    interior = pop_s[1:-1]
    is_max = (interior > pop_s[:-2]) & (interior > pop_s[2:]) & (interior > MAXIMUM_FLOOR)
    return np.flatnonzero(is_max) + 1


def classify_regime(times, pop_s, omega: float | None = None, k_total: float | None = None) -> Regime:
    """
    oscillatory:    at least two strict interior maxima above 1e−3
    zeno:           monotone within 1e−6 and decay rate < 0.5·min(k_S + k_T, ω)
    monotone_decay: everything else

    The decay rate is the fitted window rate when the population reaches the
    fit window, else the mean log-decay rate over the whole record. Without
    omega and k_total the zeno branch cannot be taken.
    """
    times = np.asarray(times, dtype=float)
    pop_s = np.asarray(pop_s, dtype=float)
    if len(times) < MIN_SAMPLES or len(times) != len(pop_s):
        raise PhysicsError(f"classification needs at least {MIN_SAMPLES} matching samples, got {len(times)}")

    if len(_strict_maxima(pop_s)) >= 2:
        return Regime.OSCILLATORY

    monotone = bool(np.all(np.diff(pop_s) <= MONOTONE_TOL))
    if monotone and omega is not None and k_total is not None:
        try:
            rate = zeno_rate_fit(times, pop_s).rate
        except PhysicsError:
            span = times[-1] - times[0]
            rate = -np.log(max(pop_s[-1], 1e-300) / pop_s[0]) / span if span > 0 else np.inf
        if rate < ZENO_RATE_FACTOR * min(k_total, abs(omega)):
            return Regime.ZENO
    return Regime.MONOTONE_DECAY


@dataclass(eq=False)
class SweepResult:
    omega: float
    kt_over_omega_grid: np.ndarray
    time_grid: np.ndarray
    surfaces: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)

    @property
    def log10_kt_over_omega(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log10(self.kt_over_omega_grid)

    @property
    def t_omega(self) -> np.ndarray:
        return self.time_grid * abs(self.omega)

    def fitted_rates(self, kind) -> np.ndarray:
        """Fitted rates in units of ω, NaN where no fit exists."""
        kind = Kind.parse(kind)
        return np.array([np.nan if f is None else f.rate / abs(self.omega) for f in self.fits[kind]])

    def surface_difference(self) -> np.ndarray:
        return self.surfaces[Kind.MEASUREMENT] - self.surfaces[Kind.HABERKORN]

    def max_difference_location(self) -> tuple[float, float]:
        """(log10(k_T/ω), t·ω) of the largest |measurement − haberkorn| surface difference."""
        diff = np.abs(self.surface_difference())
        i, j = np.unravel_index(np.argmax(diff), diff.shape)
        return float(self.log10_kt_over_omega[i]), float(self.t_omega[j])

    def surface_frame(self) -> pd.DataFrame:
        frames = []
        for kind, surface in self.surfaces.items():
            log_kt, t_omega = np.meshgrid(self.log10_kt_over_omega, self.t_omega, indexing="ij")
            frames.append(
                pd.DataFrame(
                    {
                        "log10_kt_over_omega": log_kt.ravel(),
                        "t_omega": t_omega.ravel(),
                        "pop_s": surface.ravel(),
                        "approach": kind.value,
                    }
                )
            )
        return pd.concat(frames, ignore_index=True)

    def rates_frame(self) -> pd.DataFrame:
        rows = []
        for i, kt in enumerate(self.kt_over_omega_grid):
            for kind, fits in self.fits.items():
                fit = fits[i]
                if fit is None:
                    continue
                rows.append(
                    {
                        "log10_kt_over_omega": float(np.log10(kt)),
                        "approach": kind.value,
                        "rate": fit.rate / abs(self.omega),
                        "r_squared": fit.r_squared,
                        "predicted_rate": zeno_limit_rate(1.0, float(kt), kind),
                    }
                )
        return pd.DataFrame(rows, columns=["log10_kt_over_omega", "approach", "rate", "r_squared", "predicted_rate"])


def _sweep_cell(omega: float, kt_over_omega: float, times: np.ndarray, kind: Kind):
    sys = minimal_two_level(omega)
    rates = RateConstants(0.0, kt_over_omega * abs(omega))
    superop = kinetic_superop(sys, rates, kind)
    rho0 = initial_state(sys, "singlet")
    surface = propagate(superop, rho0, times).pop_s

    decay = slowest_decay_rate(superop)
    if decay <= NO_DECAY_RATE:
        return surface, None
    horizon = max(float(times[-1]), FIT_HORIZON_LIFETIMES / decay)
    fit_times = np.linspace(0.0, horizon, FIT_POINTS)
    try:
        fit = zeno_rate_fit(fit_times, propagate(superop, rho0, fit_times).pop_s)
    except PhysicsError:
        fit = None
    return surface, fit


def figure2_sweep(omega: float = 1.0, kt_grid=None, time_grid=None, approaches=APPROACHES) -> SweepResult:
    """
    Singlet-population surfaces over (k_T/ω, t) for k_S = 0 and a singlet-born pair.

    Args:
        omega: singlet–triplet mixing frequency; must be non-zero.
        kt_grid: k_T/ω values (default 51 log-spaced points, 10⁻² … 10³).
        time_grid: times in units of 1/ω (default 401 points on [0, 20]).
        approaches: superoperator kinds to evaluate.
    """
    if not np.isfinite(omega) or omega == 0:
        raise PhysicsError("figure2_sweep needs a finite, non-zero omega")
    if kt_grid is None:
        kt_grid = np.logspace(*DEFAULT_LOG10_KT)
    if time_grid is None:
        time_grid = np.linspace(*DEFAULT_T_OMEGA)
    kt_grid = np.asarray(kt_grid, dtype=float)
    t_omega = np.asarray(time_grid, dtype=float)
    if kt_grid.size == 0 or t_omega.size == 0:
        raise PhysicsError("sweep grids must be non-empty")
    if np.any(kt_grid < 0):
        raise PhysicsError("k_T/ω values must be non-negative")
    times = t_omega / abs(omega)

    kinds = [Kind.parse(a) for a in approaches]
    cells = [(kind, kt) for kind in kinds for kt in kt_grid]
    outputs = map_ordered(lambda cell: _sweep_cell(omega, cell[1], times, cell[0]), cells, desc="Sweep")

    result = SweepResult(omega=float(omega), kt_over_omega_grid=kt_grid, time_grid=times)
    n = len(kt_grid)
    for index, kind in enumerate(kinds):
        chunk = outputs[index * n:(index + 1) * n]
        result.surfaces[kind] = np.vstack([surface for surface, _ in chunk])
        result.fits[kind] = [fit for _, fit in chunk]
    return result
