"""
Deterministic time evolution of the radical-pair density matrix.

ρ⃗(t) = exp(−L t) ρ⃗(0) is evaluated afresh at every output time (no stepping),
populations are Tr{Q ρ(t)} and the cumulative product yields are
k ∫₀ᵗ Tr{Q ρ(t′)} dt′, so that the four quantities always sum to Tr ρ(0).
"""

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.integrate

from src.core import linalg
from src.core.spinsys import RateConstants, SpinSystem
from src.core.superop import Kind, Superoperator, haberkorn_superop, kinetic_superop
from src.utils import console
from src.utils.errors import PhysicsError

# fixed so that golden outputs stay stable
RHO_TOL = 1e-10
IMAG_TOL = 1e-10
RESOLVENT_COND_LIMIT = 1e12
QUADRATURE_RTOL = 1e-8
QUADRATURE_MAX_PANELS = 4096

# upper bound on the number of Liouville matrices held at once by batched expm
_BATCH_ELEMENTS = 4_000_000

CSV_COLUMNS = ["t", "pop_s", "pop_t", "yield_s", "yield_t", "trace", "coherence_st"]


@dataclass(eq=False)
class EvolutionResult:
    times: np.ndarray
    rho_t: np.ndarray
    pop_s: np.ndarray
    pop_t: np.ndarray
    trace: np.ndarray
    coherence_st: np.ndarray
    yield_s: np.ndarray | None = None
    yield_t: np.ndarray | None = None
    kind: Kind | None = None
    yield_method: str = ""
    rho0: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.times)

    def conservation_defect(self) -> float:
        """max |pop_s + pop_t + yield_s + yield_t − Tr ρ(0)| over the grid."""
        total = self.pop_s + self.pop_t + self.yield_s + self.yield_t
        return float(np.max(np.abs(total - np.trace(self.rho0).real)))

    def hermiticity_defect(self) -> float:
        return linalg.hermiticity_defect(self.rho_t)

    def min_eigenvalue(self) -> float:
        return min(linalg.min_eigenvalue(rho) for rho in self.rho_t)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t": self.times,
                "pop_s": self.pop_s,
                "pop_t": self.pop_t,
                "yield_s": self.yield_s,
                "yield_t": self.yield_t,
                "trace": self.trace,
                "coherence_st": self.coherence_st,
            },
            columns=CSV_COLUMNS,
        )


def validate_density_matrix(rho, dim: int | None = None) -> np.ndarray:
    """
    Check ρ0: Hermitian, positive semidefinite and of unit trace (all within 1e−10).

    Raises:
        PhysicsError: on any violation.
    """
    rho = linalg.require_square(rho, "rho0")
    if dim is not None and rho.shape != (dim, dim):
        raise PhysicsError(f"rho0 has shape {rho.shape}, expected {(dim, dim)}")
    defect = linalg.hermiticity_defect(rho)
    if defect > RHO_TOL:
        raise PhysicsError(f"rho0 is not Hermitian (defect {defect:.3e})")
    lowest = linalg.min_eigenvalue(rho)
    if lowest < -RHO_TOL:
        raise PhysicsError(f"rho0 has a negative eigenvalue {lowest:.3e}")
    trace = np.trace(rho)
    if abs(trace - 1.0) > RHO_TOL:
        raise PhysicsError(f"rho0 must have unit trace, got {trace.real:.12g}")
    return rho


def initial_state(sys: SpinSystem, name: str = "singlet") -> np.ndarray:
    """
    Normalized projector states: "singlet" (Q_S/Tr Q_S), "triplet" (Q_T/Tr Q_T) or "mixed" (E/n).
    """
    name = name.strip().lower()
    if name == "singlet":
        q = sys.q_singlet
    elif name == "triplet":
        q = sys.q_triplet
    elif name == "mixed":
        q = sys.identity
    else:
        raise PhysicsError(f"unknown initial state {name!r}")
    trace = np.trace(q).real
    if trace <= 0:
        raise PhysicsError(f"initial state {name!r} is empty for this spin system")
    return np.array(q, dtype=complex) / trace


def check_time_grid(times) -> np.ndarray:
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size == 0:
        raise PhysicsError("time grid is empty")
    if not np.all(np.isfinite(times)):
        raise PhysicsError("time grid contains non-finite values")
    if np.any(times < 0):
        raise PhysicsError("time grid contains negative times")
    if np.any(np.diff(times) < 0):
        raise PhysicsError("time grid must be sorted")
    return times


def _expectation(q: np.ndarray, rhos: np.ndarray, what: str) -> np.ndarray:
    values = np.einsum("ij,...ji->...", q, rhos)
    residue = float(np.max(np.abs(values.imag), initial=0.0))
    if residue > IMAG_TOL:
        raise PhysicsError(f"{what} has an imaginary part {residue:.3e}")
    return values.real


def populations(sys: SpinSystem, rho) -> tuple[float, float]:
    """(Tr(Q_S ρ), Tr(Q_T ρ))."""
    rho = linalg.require_square(rho, "rho")
    if rho.shape != (sys.dim, sys.dim):
        raise PhysicsError(f"rho has shape {rho.shape}, expected {(sys.dim, sys.dim)}")
    return (
        float(_expectation(sys.q_singlet, rho, "singlet population")),
        float(_expectation(sys.q_triplet, rho, "triplet population")),
    )


def coherence_magnitude(sys: SpinSystem, rhos: np.ndarray) -> np.ndarray:
    """|⟨S|ρ|T⟩| for the two-level model, else the largest entry of Q_S ρ Q_T."""
    if sys.is_two_level and np.allclose(sys.q_singlet, np.diag([1, 0])):
        return np.abs(rhos[..., 0, 1])
    block = sys.q_singlet @ rhos @ sys.q_triplet
    return np.max(np.abs(block), axis=(-2, -1))


def propagators(matrix: np.ndarray, times: np.ndarray) -> np.ndarray:
    """exp(−L tᵢ) for every tᵢ, evaluated in memory-bounded batches."""
    n2 = matrix.shape[0]
    batch = max(1, _BATCH_ELEMENTS // (n2 * n2))
    out = np.empty((len(times), n2, n2), dtype=complex)
    for start in range(0, len(times), batch):
        chunk = times[start:start + batch]
        out[start:start + batch] = linalg.expm(-matrix[None] * chunk[:, None, None])
    return out


def propagate(superop: Superoperator, rho0, times) -> EvolutionResult:
    """
    ρ(tᵢ) = unvec(exp(−L tᵢ) vec(ρ0)) with populations, trace, coherence and yields.
    """
    sys = superop.system
    rho0 = validate_density_matrix(rho0, sys.dim)
    times = check_time_grid(times)

    vec_t = propagators(superop.matrix, times) @ linalg.vec(rho0)
    rho_t = linalg.unvec(vec_t, sys.dim)
    pop_s = _expectation(sys.q_singlet, rho_t, "singlet population")
    pop_t = _expectation(sys.q_triplet, rho_t, "triplet population")
    trace = np.trace(rho_t, axis1=-2, axis2=-1).real

    result = EvolutionResult(
        times=times,
        rho_t=rho_t,
        pop_s=pop_s,
        pop_t=pop_t,
        trace=trace,
        coherence_st=coherence_magnitude(sys, rho_t),
        kind=superop.kind,
        rho0=rho0,
    )
    return yields(superop, result)


def _resolvent_integrals(superop: Superoperator, result: EvolutionResult) -> np.ndarray | None:
    """∫₀ᵗ ρ(t′)dt′ = unvec(L⁻¹(ρ⃗0 − ρ⃗(t))), or None when L is numerically singular."""
    matrix = superop.matrix
    cond = np.linalg.cond(matrix)
    if not np.isfinite(cond) or cond > RESOLVENT_COND_LIMIT:
        return None
    rhs = linalg.vec(result.rho0)[:, None] - result.rho_t.reshape(len(result.times), -1).T
    integrals = np.linalg.solve(matrix, rhs).T
    return linalg.unvec(integrals, superop.dim)


def _simpson_panel(fn, a: float, b: float) -> tuple[np.ndarray, bool]:
    """
    Composite Simpson on [a, b], doubling panels until the relative change drops below 1e−8.

    Returns the integral and whether it converged within QUADRATURE_MAX_PANELS.
    """
    panels = 2
    previous = scipy.integrate.simpson(fn(np.linspace(a, b, panels + 1)), dx=(b - a) / panels, axis=0)
    while panels < QUADRATURE_MAX_PANELS:
        panels *= 2
        current = scipy.integrate.simpson(fn(np.linspace(a, b, panels + 1)), dx=(b - a) / panels, axis=0)
        scale = np.maximum(np.abs(current), 1e-300)
        if np.all(np.abs(current - previous) <= QUADRATURE_RTOL * scale + 1e-15):
            return current, True
        previous = current
    return previous, False


def _quadrature_integrals(superop: Superoperator, result: EvolutionResult) -> tuple[np.ndarray, bool]:
    """Cumulative ∫₀ᵗ (⟨Q_S⟩, ⟨Q_T⟩) by panel-wise Simpson quadrature, plus a convergence flag."""
    sys = superop.system
    rho0_vec = linalg.vec(result.rho0)

    def pops(ts: np.ndarray) -> np.ndarray:
        rhos = linalg.unvec(propagators(superop.matrix, ts) @ rho0_vec, sys.dim)
        return np.stack(
            [
                np.einsum("ij,...ji->...", sys.q_singlet, rhos).real,
                np.einsum("ij,...ji->...", sys.q_triplet, rhos).real,
            ],
            axis=-1,
        )

    edges = np.concatenate([[0.0], result.times])
    cumulative = np.zeros((len(result.times), 2))
    running = np.zeros(2)
    unconverged = []
    for i in range(len(result.times)):
        a, b = edges[i], edges[i + 1]
        if b > a:
            panel, converged = _simpson_panel(pops, a, b)
            running = running + panel
            if not converged:
                unconverged.append((a, b))
        cumulative[i] = running
    if unconverged:
        a, b = unconverged[0]
        console.warn(
            f"Simpson 积分在 {QUADRATURE_MAX_PANELS} 段内未收敛 (rtol={QUADRATURE_RTOL:g})："
            f"{len(unconverged)} 个区间，首个为 [{a:g}, {b:g}]"
        )
    return cumulative, not unconverged


def yields(superop: Superoperator, result: EvolutionResult) -> EvolutionResult:
    """
    Fill yield_s / yield_t with k ∫₀ᵗ ⟨Q⟩ dt′.

    Uses the exact resolvent form when L is nonsingular (condition number ≤ 1e12),
    otherwise panel-wise composite Simpson quadrature.
    """
    sys, rates = superop.system, superop.rates
    if result.rho0 is None:
        raise PhysicsError("yields need the initial density matrix; run propagate first")
    check_time_grid(result.times)

    zeros = np.zeros(len(result.times))
    if rates.total == 0:
        return replace(result, yield_s=zeros, yield_t=zeros.copy(), yield_method="none")

    integrals = _resolvent_integrals(superop, result)
    if integrals is not None:
        int_s = _expectation(sys.q_singlet, integrals, "singlet integral")
        int_t = _expectation(sys.q_triplet, integrals, "triplet integral")
        method = "resolvent"
    else:
        cumulative, converged = _quadrature_integrals(superop, result)
        int_s, int_t = cumulative[:, 0], cumulative[:, 1]
        method = "simpson" if converged else "simpson-unconverged"

    return replace(
        result,
        yield_s=rates.k_s * int_s,
        yield_t=rates.k_t * int_t,
        yield_method=method,
    )


def final_yields(superop: Superoperator, rho0) -> tuple[float, float]:
    """
    Total product yields Φ(∞) = k Tr{Q unvec(L⁻¹ ρ⃗0)}.

    Raises:
        PhysicsError: when L is singular (some population never reacts).
    """
    sys, rates = superop.system, superop.rates
    rho0 = validate_density_matrix(rho0, sys.dim)
    cond = np.linalg.cond(superop.matrix)
    if not np.isfinite(cond) or cond > RESOLVENT_COND_LIMIT:
        raise PhysicsError("kinetic superoperator is singular; the infinite-time yield diverges or is undefined")
    integral = linalg.unvec(np.linalg.solve(superop.matrix, linalg.vec(rho0)), sys.dim)
    return (
        rates.k_s * float(_expectation(sys.q_singlet, integral, "singlet yield")),
        rates.k_t * float(_expectation(sys.q_triplet, integral, "triplet yield")),
    )


def propagate_equal_rates(sys: SpinSystem, k: float, rho0, times) -> EvolutionResult:
    """
    Haberkorn evolution for k_S = k_T = k via ρ(t) = e^{−kt} U(t) ρ0 U(t)†.

    The recombination superoperator is then k·E, so only the unitary part needs
    exponentiating.
    """
    rates = RateConstants(k, k)
    rho0 = validate_density_matrix(rho0, sys.dim)
    times = check_time_grid(times)
    unitaries = linalg.expm(-1j * sys.hamiltonian[None] * times[:, None, None])
    rho_t = np.exp(-k * times)[:, None, None] * (unitaries @ rho0 @ linalg.dagger(unitaries))
    result = EvolutionResult(
        times=times,
        rho_t=rho_t,
        pop_s=_expectation(sys.q_singlet, rho_t, "singlet population"),
        pop_t=_expectation(sys.q_triplet, rho_t, "triplet population"),
        trace=np.trace(rho_t, axis1=-2, axis2=-1).real,
        coherence_st=coherence_magnitude(sys, rho_t),
        kind=Kind.HABERKORN,
        rho0=rho0,
    )
    return yields(haberkorn_superop(sys, rates), result)


def rhs_haberkorn(sys: SpinSystem, rates: RateConstants, rho) -> np.ndarray:
    """−i[H,ρ] − ½k_S{Q_S,ρ} − ½k_T{Q_T,ρ}."""
    rho = linalg.as_matrix(rho)
    h, qs, qt = sys.hamiltonian, sys.q_singlet, sys.q_triplet
    return (
        -1j * (h @ rho - rho @ h)
        - 0.5 * rates.k_s * (qs @ rho + rho @ qs)
        - 0.5 * rates.k_t * (qt @ rho + rho @ qt)
    )


def rhs_measurement(sys: SpinSystem, rates: RateConstants, rho, form: str = "sandwich") -> np.ndarray:
    """
    Measurement master equation right-hand side.

    form="sandwich":   −i[H,ρ] − (k_S+k_T)ρ + k_S Q_T ρ Q_T + k_T Q_S ρ Q_S
    form="projection": −i[H,ρ] − k_S(Q_SρQ_S + Q_SρQ_T + Q_TρQ_S)
                               − k_T(Q_TρQ_T + Q_SρQ_T + Q_TρQ_S)
    """
    rho = linalg.as_matrix(rho)
    h, qs, qt = sys.hamiltonian, sys.q_singlet, sys.q_triplet
    coherent = -1j * (h @ rho - rho @ h)
    if form == "sandwich":
        return coherent - rates.total * rho + rates.k_s * (qt @ rho @ qt) + rates.k_t * (qs @ rho @ qs)
    if form == "projection":
        cross = qs @ rho @ qt + qt @ rho @ qs
        return (
            coherent
            - rates.k_s * (qs @ rho @ qs + cross)
            - rates.k_t * (qt @ rho @ qt + cross)
        )
    raise PhysicsError(f"unknown right-hand-side form {form!r}")


def rhs(sys: SpinSystem, rates: RateConstants, rho, kind) -> np.ndarray:
    kind = Kind.parse(kind)
    if kind is Kind.MEASUREMENT:
        return rhs_measurement(sys, rates, rho)
    if kind is Kind.HABERKORN:
        return rhs_haberkorn(sys, rates, rho)
    return rhs_haberkorn(sys, RateConstants(), rho)


def operator_sum_step(sys: SpinSystem, rates: RateConstants, rho, dt: float) -> np.ndarray:
    """
    One finite reaction step without coherent evolution:

        ρ ← (1 − k_S dt − k_T dt)ρ + k_S dt Q̄_S ρ Q̄_S + k_T dt Q̄_T ρ Q̄_T

    with Q̄ = E − Q the complement projector.
    """
    rho = linalg.as_matrix(rho)
    qs_bar = sys.identity - sys.q_singlet
    qt_bar = sys.identity - sys.q_triplet
    return (
        (1.0 - rates.total * dt) * rho
        + rates.k_s * dt * (qs_bar @ rho @ qs_bar)
        + rates.k_t * dt * (qt_bar @ rho @ qt_bar)
    )


def operator_sum_trace_defect(sys: SpinSystem, rates: RateConstants, dt: float) -> np.ndarray:
    """
    E − Σ p_k A_k†A_k for the operator-sum step.

    Non-zero, because the step does not preserve trace; it equals
    dt·(k_S Q_S + k_T Q_T), the product formed during dt.
    """
    qs_bar = sys.identity - sys.q_singlet
    qt_bar = sys.identity - sys.q_triplet
    completeness = (
        (1.0 - rates.total * dt) * sys.identity
        + rates.k_s * dt * (qs_bar.conj().T @ qs_bar)
        + rates.k_t * dt * (qt_bar.conj().T @ qt_bar)
    )
    return sys.identity - completeness


def evolve_approach(sys: SpinSystem, rates: RateConstants, rho0, times, kind) -> EvolutionResult:
    return propagate(kinetic_superop(sys, rates, kind), rho0, times)
