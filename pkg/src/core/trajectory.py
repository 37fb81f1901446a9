"""
Stochastic pure-state unravelings of both master equations.

measurement: every step, a singlet measurement fires with probability k_S·dt.
    The pair then reacts with probability ⟨Q_S⟩, otherwise the state is
    projected onto the complement Q̄_S = E − Q_S. Triplet measurements work the
    same way with k_T·dt and Q̄_T.
haberkorn: every step, the pair reacts with probability dt·(k_S⟨Q_S⟩ + k_T⟨Q_T⟩),
    the channel chosen in proportion; survivors follow the no-jump evolution
    exp((−iH − ½(k_S Q_S + k_T Q_T))dt), renormalized.

Averages of alive·⟨ψ|Q|ψ⟩ over the ensemble estimate the unnormalized
populations of the corresponding master equation.
"""

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg

from src.core import linalg
from src.core.evolve import validate_density_matrix
from src.core.spinsys import RateConstants, SpinSystem
from src.core.superop import Kind
from src.utils.errors import PhysicsError
from src.utils.parallel import map_ordered

# trajectories simulated together; each one draws from its own stream seeded by (seed, index)
BLOCK_SIZE = 4096
# steps of uniforms buffered per trajectory stream
DRAW_CHUNK = 64
STEP_FACTOR = 0.01

ALIVE, SINGLET, TRIPLET = 0, 1, 2

CSV_COLUMNS = ["t", "surviving_fraction", "pop_s_est", "pop_s_stderr", "pop_t_est", "pop_t_stderr"]


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float
    t_max: float
    n_traj: int
    seed: int = 0
    scheme: Kind = Kind.MEASUREMENT
    n_out: int = 101

    def __post_init__(self):
        object.__setattr__(self, "scheme", Kind.parse(self.scheme))
        if self.scheme not in (Kind.MEASUREMENT, Kind.HABERKORN):
            raise PhysicsError(f"trajectory scheme must be measurement or haberkorn, got {self.scheme.value}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise PhysicsError(f"dt must be positive, got {self.dt}")
        if not (np.isfinite(self.t_max) and self.t_max >= self.dt):
            raise PhysicsError(f"t_max must be at least dt, got {self.t_max}")
        if int(self.n_traj) < 1:
            raise PhysicsError(f"n_traj must be at least 1, got {self.n_traj}")
        if not 0 <= int(self.seed) < 2**64:
            raise PhysicsError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.n_out) < 2:
            raise PhysicsError(f"n_out must be at least 2, got {self.n_out}")

    @property
    def n_steps(self) -> int:
        return int(np.ceil(self.t_max / self.dt - 1e-9))

    def record_steps(self) -> np.ndarray:
        return np.unique(np.round(np.linspace(0, self.n_steps, self.n_out)).astype(int))


def max_stable_dt(sys: SpinSystem, rates: RateConstants) -> float:
    """0.01·min(1/‖H‖₂, 1/(k_S + k_T)), ignoring vanishing denominators."""
    limits = []
    h_norm = float(np.linalg.norm(sys.hamiltonian, 2))
    if h_norm > 0:
        limits.append(1.0 / h_norm)
    if rates.total > 0:
        limits.append(1.0 / rates.total)
    return STEP_FACTOR * min(limits) if limits else np.inf


@dataclass(eq=False)
class TrajectoryEnsemble:
    times: np.ndarray
    surviving_fraction: np.ndarray
    pop_s_est: np.ndarray
    pop_s_stderr: np.ndarray
    pop_t_est: np.ndarray
    pop_t_stderr: np.ndarray
    n_traj: int
    n_singlet: int
    n_triplet: int
    reaction_times: np.ndarray = field(repr=False)
    reaction_channels: np.ndarray = field(repr=False)
    scheme: Kind = Kind.MEASUREMENT
    seed: int = 0

    @property
    def n_surviving(self) -> int:
        return self.n_traj - self.n_singlet - self.n_triplet

    @property
    def yield_s_final(self) -> float:
        return self.n_singlet / self.n_traj

    @property
    def yield_t_final(self) -> float:
        return self.n_triplet / self.n_traj

    @property
    def yield_s_stderr(self) -> float:
        return _proportion_stderr(self.n_singlet, self.n_traj)

    @property
    def yield_t_stderr(self) -> float:
        return _proportion_stderr(self.n_triplet, self.n_traj)

    def histogram(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-channel reaction-time counts on the output grid bins."""
        edges = self.times
        singlet, _ = np.histogram(self.reaction_times[self.reaction_channels == SINGLET], bins=edges)
        triplet, _ = np.histogram(self.reaction_times[self.reaction_channels == TRIPLET], bins=edges)
        return edges, singlet, triplet

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t": self.times,
                "surviving_fraction": self.surviving_fraction,
                "pop_s_est": self.pop_s_est,
                "pop_s_stderr": self.pop_s_stderr,
                "pop_t_est": self.pop_t_est,
                "pop_t_stderr": self.pop_t_stderr,
            },
            columns=CSV_COLUMNS,
        )

    def histogram_frame(self) -> pd.DataFrame:
        edges, singlet, triplet = self.histogram()
        return pd.DataFrame({"t_lo": edges[:-1], "t_hi": edges[1:], "singlet": singlet, "triplet": triplet})

    def summary(self) -> dict:
        def _clean(x: float):
            return None if not np.isfinite(x) else float(x)

        return {
            "scheme": self.scheme.value,
            "seed": int(self.seed),
            "n_traj": int(self.n_traj),
            "n_singlet": int(self.n_singlet),
            "n_triplet": int(self.n_triplet),
            "n_surviving": int(self.n_surviving),
            "yield_s_final": self.yield_s_final,
            "yield_s_stderr": _clean(self.yield_s_stderr),
            "yield_t_final": self.yield_t_final,
            "yield_t_stderr": _clean(self.yield_t_stderr),
            "surviving_final": self.n_surviving / self.n_traj,
        }


def _proportion_stderr(count: int, n: int) -> float:
    if n < 2:
        return float("nan")
    p = count / n
    return float(np.sqrt(p * (1.0 - p) / (n - 1)))


def _expect(q: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """⟨ψ|Q|ψ⟩ for each row of psi."""
    return np.einsum("ij,ij->i", psi.conj(), psi @ q.T).real


def _normalize(psi: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(psi, axis=1)
    return psi / norms[:, None]


@dataclass
class _BlockTally:
    alive: np.ndarray
    s1_pop_s: np.ndarray
    s2_pop_s: np.ndarray
    s1_pop_t: np.ndarray
    s2_pop_t: np.ndarray
    reaction_times: np.ndarray
    reaction_channels: np.ndarray


class _TrajectoryStreams:
    """
    One generator per trajectory, seeded from (seed, global trajectory index).

    Every trajectory consumes one uniform for its initial state, then `width`
    uniforms per step, whether it is still alive or not. Its draws therefore
    never depend on which other trajectories share its block.
    """

    def __init__(self, seed: int, first: int, count: int, width: int):
        self.rngs = [np.random.default_rng([seed, i]) for i in range(first, first + count)]
        self.width = width
        self._buffer = np.empty((0, count, width))
        self._pos = 0

    def initial(self) -> np.ndarray:
        return np.array([rng.random() for rng in self.rngs])

    def step(self) -> np.ndarray:
        """Uniforms of shape (width, count) for the next step."""
        if self._pos == len(self._buffer):
            self._buffer = np.stack([rng.random((DRAW_CHUNK, self.width)) for rng in self.rngs], axis=1)
            self._pos = 0
        draws = self._buffer[self._pos]
        self._pos += 1
        return draws.T


class _Unraveling:
    """Shared per-run state for simulating blocks of trajectories."""

    def __init__(self, sys: SpinSystem, rates: RateConstants, rho0: np.ndarray, cfg: TrajectoryConfig):
        self.sys = sys
        self.rates = rates
        self.cfg = cfg
        self.q_s = np.asarray(sys.q_singlet)
        self.q_t = np.asarray(sys.q_triplet)
        self.q_s_bar = sys.identity - self.q_s
        self.q_t_bar = sys.identity - self.q_t
        self.unitary = linalg.expm(-1j * sys.hamiltonian * cfg.dt)
        kinetic = rates.k_s * self.q_s + rates.k_t * self.q_t
        self.no_jump = linalg.expm((-1j * sys.hamiltonian - 0.5 * kinetic) * cfg.dt)

        weights, vectors = scipy.linalg.eigh(0.5 * (rho0 + rho0.conj().T))
        weights = np.clip(weights, 0.0, None)
        self.weights = weights / weights.sum()
        self.vectors = vectors.T  # rows are eigenstates

        self.record_steps = cfg.record_steps()

    def block_sizes(self) -> list[tuple[int, int]]:
        n = int(self.cfg.n_traj)
        return [(start, min(BLOCK_SIZE, n - start)) for start in range(0, n, BLOCK_SIZE)]

    def run_block(self, block: tuple[int, int]) -> _BlockTally:
        first, count = block
        width = 4 if self.cfg.scheme is Kind.MEASUREMENT else 2
        streams = _TrajectoryStreams(int(self.cfg.seed), first, count, width)
        picks = np.searchsorted(np.cumsum(self.weights), streams.initial(), side="right")
        psi = self.vectors[np.minimum(picks, len(self.weights) - 1)].astype(complex)

        channel = np.full(count, ALIVE, dtype=np.int8)
        react_time = np.full(count, np.nan)
        n_rec = len(self.record_steps)
        tally = _BlockTally(
            alive=np.zeros(n_rec, dtype=np.int64),
            s1_pop_s=np.zeros(n_rec),
            s2_pop_s=np.zeros(n_rec),
            s1_pop_t=np.zeros(n_rec),
            s2_pop_t=np.zeros(n_rec),
            reaction_times=react_time,
            reaction_channels=channel,
        )

        step_fn = self._measurement_step if self.cfg.scheme is Kind.MEASUREMENT else self._haberkorn_step
        rec = 0
        for step in range(self.cfg.n_steps + 1):
            if step > 0:
                psi = step_fn(psi, channel, react_time, step * self.cfg.dt, streams.step())
            if rec < n_rec and step == self.record_steps[rec]:
                self._record(tally, rec, psi, channel == ALIVE)
                rec += 1
        return tally

    def _record(self, tally: _BlockTally, rec: int, psi: np.ndarray, alive: np.ndarray) -> None:
        pop_s = np.where(alive, _expect(self.q_s, psi), 0.0)
        pop_t = np.where(alive, _expect(self.q_t, psi), 0.0)
        tally.alive[rec] = int(alive.sum())
        tally.s1_pop_s[rec] = pop_s.sum()
        tally.s2_pop_s[rec] = (pop_s * pop_s).sum()
        tally.s1_pop_t[rec] = pop_t.sum()
        tally.s2_pop_t[rec] = (pop_t * pop_t).sum()

    def _measure(self, psi, channel, react_time, t, fire_draw, react_draw, q, q_bar, rate, code):
        fire = (channel == ALIVE) & (fire_draw < rate * self.cfg.dt)
        idx = np.flatnonzero(fire)
        if idx.size == 0:
            return
        prob = _expect(q, psi[idx])
        reacts = react_draw[idx] < prob
        reacted, spared = idx[reacts], idx[~reacts]
        channel[reacted] = code
        react_time[reacted] = t
        if spared.size:
            psi[spared] = _normalize(psi[spared] @ q_bar.T)

    def _measurement_step(self, psi, channel, react_time, t, draws):
        psi = psi @ self.unitary.T
        self._measure(psi, channel, react_time, t, draws[0], draws[1], self.q_s, self.q_s_bar, self.rates.k_s, SINGLET)
        self._measure(psi, channel, react_time, t, draws[2], draws[3], self.q_t, self.q_t_bar, self.rates.k_t, TRIPLET)
        return psi

    def _haberkorn_step(self, psi, channel, react_time, t, draws):
        alive = channel == ALIVE
        rate_s = self.rates.k_s * _expect(self.q_s, psi)
        rate_t = self.rates.k_t * _expect(self.q_t, psi)
        total = rate_s + rate_t
        reacts = alive & (draws[0] < total * self.cfg.dt)
        singlet = reacts & (draws[1] * total < rate_s)
        triplet = reacts & ~singlet
        channel[singlet] = SINGLET
        channel[triplet] = TRIPLET
        react_time[reacts] = t
        survivors = np.flatnonzero(alive & ~reacts)
        if survivors.size:
            psi[survivors] = _normalize(psi[survivors] @ self.no_jump.T)
        return psi


def run_ensemble(sys: SpinSystem, rates: RateConstants, rho0, cfg: TrajectoryConfig) -> TrajectoryEnsemble:
    """
    Simulate cfg.n_traj independent pairs and reduce them to ensemble statistics.

    Raises:
        PhysicsError: dt above the stability bound, or an invalid ρ0.
    """
    rho0 = validate_density_matrix(rho0, sys.dim)
    bound = max_stable_dt(sys, rates)
    if cfg.dt > bound * (1 + 1e-9):
        raise PhysicsError(f"dt={cfg.dt:g} exceeds the stability bound {bound:.6g}")

    engine = _Unraveling(sys, rates, rho0, cfg)
    tallies = map_ordered(engine.run_block, engine.block_sizes(), desc="Trajectories")

    n = int(cfg.n_traj)
    alive = sum(t.alive for t in tallies)
    s1_s = sum(t.s1_pop_s for t in tallies)
    s2_s = sum(t.s2_pop_s for t in tallies)
    s1_t = sum(t.s1_pop_t for t in tallies)
    s2_t = sum(t.s2_pop_t for t in tallies)
    channels = np.concatenate([t.reaction_channels for t in tallies])
    times_out = np.concatenate([t.reaction_times for t in tallies])

    def stderr(s1, s2):
        if n < 2:
            return np.full_like(s1, np.nan)
        var = np.clip((s2 - s1 * s1 / n) / (n - 1), 0.0, None)
        return np.sqrt(var / n)

    return TrajectoryEnsemble(
        times=engine.record_steps * cfg.dt,
        surviving_fraction=alive / n,
        pop_s_est=s1_s / n,
        pop_s_stderr=stderr(s1_s, s2_s),
        pop_t_est=s1_t / n,
        pop_t_stderr=stderr(s1_t, s2_t),
        n_traj=n,
        n_singlet=int(np.count_nonzero(channels == SINGLET)),
        n_triplet=int(np.count_nonzero(channels == TRIPLET)),
        reaction_times=times_out,
        reaction_channels=channels,
        scheme=cfg.scheme,
        seed=int(cfg.seed),
    )
