"""
Subcommand implementations. Each takes a validated RunConfig and returns an
exit code; failures raise RadpairError subclasses that main.py maps to codes.
"""

from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from src.analysis.zeno import classify_regime, figure2_sweep, zeno_rate_fit
from src.core import linalg
from src.core.evolve import EvolutionResult, propagate, rhs_haberkorn, rhs_measurement
from src.core.superop import Kind, decoherence_gap, haberkorn_superop, kinetic_superop, measurement_superop
from src.core.trajectory import run_ensemble
from src.data.config import RunConfig
from src.data.robust_writer import RobustWriter
from src.utils import console
from src.utils.errors import ConfigError, PhysicsError, ResidualError

GAP_TOL = 1e-10
CHECK_TOL = 1e-9
CHECK_SAMPLES = 20
ORACLE_SIGMAS = 3.0


def _writer(cfg: RunConfig) -> RobustWriter:
    return RobustWriter(cfg.output.directory)


def _name(cfg: RunConfig, suffix: str) -> str:
    return f"{cfg.output.prefix}_{suffix}"


def _run_approaches(cfg: RunConfig) -> dict[Kind, EvolutionResult]:
    sys = cfg.build_system()
    rho0 = cfg.build_rho0(sys)
    times = cfg.time_values()
    results = {}
    for kind in cfg.approaches:
        console.info(f"propagating {kind.value} (dim={sys.dim}, {len(times)} time points)")
        results[kind] = propagate(kinetic_superop(sys, cfg.rates, kind), rho0, times)
    return results


def cmd_evolve(cfg: RunConfig) -> int:
    results = _run_approaches(cfg)
    writer = _writer(cfg)
    with writer.batch():
        for kind, result in results.items():
            writer.write_csv(result.to_frame(), _name(cfg, f"{kind.value}.csv"))
        writer.write_json(cfg.to_dict(), _name(cfg, "config.json"))
    return 0


@dataclass
class ComparisonReport:
    max_abs_pop_diff: float
    max_abs_coherence_diff: float
    trace_defect_max: float
    eq18_residual: float
    yields: dict = field(default_factory=dict)
    fitted_rates: dict = field(default_factory=dict)
    regimes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(cfg: RunConfig, results: dict[Kind, EvolutionResult]) -> ComparisonReport:
    h, m = results[Kind.HABERKORN], results[Kind.MEASUREMENT]
    sys = cfg.build_system()
    _, gap_residual = decoherence_gap(sys, cfg.rates)

    omega = cfg.system.omega if cfg.system.kind == "two_level" else None
    yields, rates, regimes = {}, {}, {}
    for kind, result in results.items():
        yields[kind.value] = {"yield_s": float(result.yield_s[-1]), "yield_t": float(result.yield_t[-1])}
        try:
            fit = zeno_rate_fit(result.times, result.pop_s)
            rates[kind.value] = {"rate": fit.rate, "r_squared": fit.r_squared, "window": list(fit.window)}
        except PhysicsError:
            rates[kind.value] = None
        try:
            regimes[kind.value] = classify_regime(result.times, result.pop_s, omega=omega, k_total=cfg.rates.total).value
        except PhysicsError:
            regimes[kind.value] = None

    return ComparisonReport(
        max_abs_pop_diff=max(linalg.max_abs(h.pop_s - m.pop_s), linalg.max_abs(h.pop_t - m.pop_t)),
        max_abs_coherence_diff=linalg.max_abs(h.coherence_st - m.coherence_st),
        trace_defect_max=max(r.conservation_defect() for r in results.values()),
        eq18_residual=gap_residual,
        yields=yields,
        fitted_rates=rates,
        regimes=regimes,
    )


def cmd_compare(cfg: RunConfig) -> int:
    cfg = cfg.with_overrides(approach="both")
    results = _run_approaches(cfg)
    report = build_report(cfg, results)
    if report.eq18_residual > GAP_TOL:
        raise ResidualError(f"decoherence-gap residual {report.eq18_residual:.3e} exceeds {GAP_TOL:g}")

    writer = _writer(cfg)
    with writer.batch():
        for kind, result in results.items():
            writer.write_csv(result.to_frame(), _name(cfg, f"{kind.value}.csv"))
        writer.write_json(report.to_dict(), _name(cfg, "report.json"))
        writer.write_json(cfg.to_dict(), _name(cfg, "config.json"))
        if cfg.output.excel:
            summary = pd.DataFrame(
                [(k, v) for k, v in report.to_dict().items() if not isinstance(v, dict)],
                columns=["metric", "value"],
            )
            sheets = {kind.value: result.to_frame() for kind, result in results.items()}
            sheets["report"] = summary
            writer.write_workbook(sheets, _name(cfg, "compare.xlsx"))

    console.info(
        f"max |Δpop| = {report.max_abs_pop_diff:.3e}, max |Δcoherence| = {report.max_abs_coherence_diff:.3e}, "
        f"decoherence-gap residual = {report.eq18_residual:.1e}"
    )
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.system.kind != "two_level":
        raise ConfigError("system", "sweep needs the two_level system")
    if cfg.system.omega == 0:
        raise ConfigError("system.two_level.omega", "sweep needs a non-zero mixing frequency")
    if cfg.rates.k_s != 0:
        console.warn(f"sweep runs with k_s = 0; ignoring k_s = {cfg.rates.k_s:g} from the config")

    result = figure2_sweep(
        omega=cfg.system.omega,
        kt_grid=cfg.sweep.kt_grid(),
        time_grid=cfg.sweep.t_omega_grid(),
        approaches=cfg.approaches,
    )
    surface = result.surface_frame()
    writer = _writer(cfg)
    with writer.batch():
        for kind in result.surfaces:
            writer.write_csv(
                surface[surface["approach"] == kind.value].reset_index(drop=True),
                _name(cfg, f"sweep_{kind.value}.csv"),
            )
        writer.write_csv(result.rates_frame(), _name(cfg, "sweep_rates.csv"))
        writer.write_json(cfg.to_dict(), _name(cfg, "config.json"))

    if len(result.surfaces) == 2:
        log_kt, t_omega = result.max_difference_location()
        console.info(f"largest surface difference at log10(k_T/ω) = {log_kt:.2f}, t·ω = {t_omega:.2f}")
        h_rate = result.fitted_rates(Kind.HABERKORN)[-1]
        m_rate = result.fitted_rates(Kind.MEASUREMENT)[-1]
        if np.isfinite(h_rate) and np.isfinite(m_rate) and m_rate > 0:
            console.info(f"rate ratio haberkorn/measurement at the high-k_T end: {h_rate / m_rate:.3f}")
    return 0


def _oracle_agreement(det: EvolutionResult, ens) -> float:
    """Fraction of grid points where the deterministic populations lie within 3 stderr."""
    if ens.n_traj < 2:
        return float("nan")
    ok_s = np.abs(ens.pop_s_est - det.pop_s) <= ORACLE_SIGMAS * ens.pop_s_stderr + 1e-12
    ok_t = np.abs(ens.pop_t_est - det.pop_t) <= ORACLE_SIGMAS * ens.pop_t_stderr + 1e-12
    return float(np.mean(ok_s & ok_t))


def cmd_trajectories(cfg: RunConfig) -> int:
    if cfg.trajectory is None:
        raise ConfigError("trajectory", "block is required for the trajectories command")
    sys = cfg.build_system()
    rho0 = cfg.build_rho0(sys)

    outputs = []
    for kind in cfg.approaches:
        traj_cfg = cfg.trajectory_config(sys, kind)
        console.info(
            f"{kind.value}: {traj_cfg.n_traj} trajectories, dt={traj_cfg.dt:g}, "
            f"{traj_cfg.n_steps} steps, seed={traj_cfg.seed}"
        )
        ens = run_ensemble(sys, cfg.rates, rho0, traj_cfg)
        det = propagate(kinetic_superop(sys, cfg.rates, kind), rho0, ens.times)
        summary = ens.summary()
        summary["deterministic_yield_s"] = float(det.yield_s[-1])
        summary["deterministic_yield_t"] = float(det.yield_t[-1])
        summary["oracle_agreement"] = _oracle_agreement(det, ens)
        outputs.append((kind, ens, summary))

    writer = _writer(cfg)
    with writer.batch():
        for kind, ens, summary in outputs:
            writer.write_csv(ens.to_frame(), _name(cfg, f"traj_{kind.value}.csv"))
            writer.write_csv(ens.histogram_frame(), _name(cfg, f"traj_{kind.value}_histogram.csv"))
            writer.write_json(summary, _name(cfg, f"traj_{kind.value}_summary.json"))
        writer.write_json(cfg.to_dict(), _name(cfg, "config.json"))
    return 0


def check_residuals(cfg: RunConfig) -> dict[str, float]:
    """Every self-consistency residual of the configured system, keyed by name."""
    sys = cfg.build_system()
    rates = cfg.rates
    rho0 = cfg.build_rho0(sys)
    residuals = {f"projector_{k}": v for k, v in sys.residuals().items()}

    _, residuals["decoherence_gap"] = decoherence_gap(sys, rates)

    v = haberkorn_superop(sys, rates)
    w = measurement_superop(sys, rates)
    times = np.linspace(0.0, float(cfg.time_values()[-1]), CHECK_SAMPLES)
    states = {
        Kind.HABERKORN: propagate(v, rho0, times).rho_t,
        Kind.MEASUREMENT: propagate(w, rho0, times).rho_t,
    }

    haberkorn_rhs, measurement_rhs, projection_forms, trace_loss = 0.0, 0.0, 0.0, 0.0
    for kind, rhos in states.items():
        for rho in rhos:
            haberkorn_rhs = max(haberkorn_rhs, linalg.max_abs(rhs_haberkorn(sys, rates, rho) - v.apply(rho)))
            sandwich = rhs_measurement(sys, rates, rho, form="sandwich")
            measurement_rhs = max(measurement_rhs, linalg.max_abs(sandwich - w.apply(rho)))
            projection_forms = max(
                projection_forms, linalg.max_abs(sandwich - rhs_measurement(sys, rates, rho, form="projection"))
            )
            rhs = rhs_haberkorn(sys, rates, rho) if kind is Kind.HABERKORN else sandwich
            loss = rates.k_s * np.trace(sys.q_singlet @ rho) + rates.k_t * np.trace(sys.q_triplet @ rho)
            trace_loss = max(trace_loss, abs(np.trace(rhs) + loss))

    residuals["haberkorn_rhs_vs_superop"] = haberkorn_rhs
    residuals["measurement_rhs_vs_superop"] = measurement_rhs
    residuals["measurement_projection_vs_sandwich"] = projection_forms
    residuals["trace_loss_identity"] = float(trace_loss)
    return residuals


def cmd_check(cfg: RunConfig) -> int:
    residuals = check_residuals(cfg)
    width = max(len(name) for name in residuals)
    failed = []
    for name, value in residuals.items():
        status = "OK" if value <= CHECK_TOL else "FAIL"
        if status == "FAIL":
            failed.append(name)
        print(f"{name:<{width}}  {value:.3e}  {status}")
    if failed:
        raise ResidualError(f"residuals above {CHECK_TOL:g}: {', '.join(failed)}")
    console.success("all residuals within tolerance")
    return 0


COMMANDS = {
    "evolve": cmd_evolve,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "trajectories": cmd_trajectories,
    "check": cmd_check,
}
