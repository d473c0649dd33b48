"""Experiment orchestration: spectra, robustness maps, and suppression reports.

A spectrum sweeps the DD frequency nu = 1 / (2 tau) and evaluates, at every
point, three protocol series: the standard repetition, the randomized protocol
averaged over K reproducible phase realizations, and an instantaneous-pulse
error-free baseline.  Realizations share their random numbers across sweep
points (phases depend only on (seed, realization, unit index)), so each
realization traces a smooth spectrum the way a single experimental run does.

Robustness maps grid static control errors and compare the fidelity of the
realized propagator against the error-free one for both protocols.  All
outputs are deterministic functions of (config, seed); sweep points are
independent work items reduced in index order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .dynamics import (
    ClassicalField,
    ErrorModel,
    TargetSpin,
    _classical_coherence_batch,
    _CompositeUnit,
    _population_from_coherence,
    classical_coherences,
    plan_coherence,
)
from .modulation import single_unit_fourier
from .sequences import (
    PulseUnit,
    Randomized,
    SequencePlan,
    build_named_unit,
)

__all__ = [
    "SpectrumConfig",
    "SpectrumResult",
    "RobustnessConfig",
    "RobustnessMap",
    "SuppressionRow",
    "SuppressionReport",
    "run_spectrum",
    "dual_basis_scan",
    "run_robustness_map",
    "spurious_suppression_report",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpectrumConfig:
    """One frequency-sweep experiment over a unit family (or custom unit)."""

    family: str
    pulse_duration: float
    repetitions: int
    frequencies: tuple[float, ...]
    errors: ErrorModel = ErrorModel()
    spins: tuple[TargetSpin, ...] = ()
    fields: tuple[ClassicalField, ...] = ()
    realizations: int = 1
    seed: int = 0
    readout_basis: str = "x"
    custom_unit: PulseUnit | None = None
    independent_spins: bool = True
    substeps_per_pulse: int = 64
    label: str = ""

    def __post_init__(self) -> None:
        freqs = np.asarray(self.frequencies, dtype=float)
        if freqs.size == 0:
            raise ValueError("sweep must be non-empty")
        if freqs.size > 1:
            diffs = np.diff(freqs)
            if not (np.all(diffs > 0) or np.all(diffs < 0)):
                raise ValueError("sweep frequencies must be strictly monotonic")
        if np.any(freqs <= 0):
            raise ValueError("sweep frequencies must be positive")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if len(self.fields) > 1:
            raise ValueError("at most one classical field per run is supported")
        if self.readout_basis not in ("x", "minus_x"):
            raise ValueError(f"unknown readout basis {self.readout_basis!r}")


@dataclass(frozen=True)
class SpectrumResult:
    """Per-point populations for the three protocol series."""

    frequencies: np.ndarray
    p_standard: np.ndarray
    p_randomized_mean: np.ndarray
    p_randomized_std: np.ndarray
    p_ideal: np.ndarray
    readout_basis: str
    label: str = ""


def _unit_at_frequency(config: SpectrumConfig, nu: float, pulse_duration: float) -> PulseUnit:
    """The sweep unit at DD frequency nu = 1/(2 tau), with the given pulse width."""
    if config.custom_unit is None:
        return build_named_unit(config.family, 1.0 / (2.0 * nu), pulse_duration)
    base = config.custom_unit
    n = base.pulse_count
    target_duration = n / (2.0 * nu)
    scale = target_duration / base.duration
    rabi = math.pi / pulse_duration if pulse_duration > 0 else 0.0
    pulses = tuple(
        replace(p, center_time=p.center_time * scale, rabi_frequency=rabi) for p in base.pulses
    )
    return replace(base, duration=target_duration, pulses=pulses)


def _point_coherences(config: SpectrumConfig, nu: float) -> tuple[complex, list[complex], complex]:
    """(standard, per-realization randomized, ideal-baseline) coherences at one sweep point."""
    field_obj = config.fields[0] if config.fields else None
    unit = _unit_at_frequency(config, nu, config.pulse_duration)
    plan = SequencePlan(
        unit,
        config.repetitions,
        Randomized(seed=config.seed, realizations=config.realizations),
        config.readout_basis,
    )
    ideal_unit = _unit_at_frequency(config, nu, 0.0)
    ideal_plan = SequencePlan(ideal_unit, config.repetitions, readout_basis=config.readout_basis)
    draws = np.stack(
        [rng.unit_phases(config.seed, r, config.repetitions) for r in range(config.realizations)]
    )

    if field_obj is not None and not config.spins:
        # batch standard + all realizations through the classical engine at once
        stacked = np.vstack([np.zeros((1, config.repetitions)), draws])
        cs = classical_coherences(
            plan, stacked, config.errors, field_obj, config.substeps_per_pulse
        )
        c_ideal = classical_coherences(
            ideal_plan, np.zeros((1, config.repetitions)), ErrorModel(), field_obj,
            config.substeps_per_pulse,
        )[0]
        return complex(cs[0]), [complex(c) for c in cs[1:]], complex(c_ideal)

    def coherence(the_plan: SequencePlan, phases, errors: ErrorModel) -> complex:
        return plan_coherence(
            the_plan,
            phases,
            errors,
            spins=config.spins,
            field=field_obj,
            independent=config.independent_spins,
            substeps_per_pulse=config.substeps_per_pulse,
        )

    c_standard = coherence(plan, None, config.errors)
    c_random = [coherence(plan, draws[r], config.errors) for r in range(config.realizations)]
    c_ideal = coherence(ideal_plan, None, ErrorModel())
    return c_standard, c_random, c_ideal


def _reduce_point(
    point: tuple[complex, list[complex], complex], basis: str
) -> tuple[float, float, float, float]:
    c_standard, c_random, c_ideal = point
    p_std = _population_from_coherence(c_standard, basis)
    p_rand = np.array([_population_from_coherence(c, basis) for c in c_random])
    p_rand_std = float(np.std(p_rand, ddof=1)) if len(p_rand) > 1 else 0.0
    return p_std, float(np.mean(p_rand)), p_rand_std, _population_from_coherence(c_ideal, basis)


def _sweep(config: SpectrumConfig, jobs: int) -> list[tuple[complex, list[complex], complex]]:
    freqs = list(config.frequencies)
    if jobs <= 1:
        return [_point_coherences(config, nu) for nu in freqs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_point_coherences, [config] * len(freqs), freqs))


def run_spectrum(config: SpectrumConfig, jobs: int = 1) -> SpectrumResult:
    """Evaluate the three protocol series over the sweep (deterministic given seed)."""
    points = _sweep(config, jobs)
    rows = [_reduce_point(p, config.readout_basis) for p in points]
    std, rmean, rstd, ideal = (np.array(col) for col in zip(*rows))
    return SpectrumResult(
        frequencies=np.asarray(config.frequencies, dtype=float),
        p_standard=std,
        p_randomized_mean=rmean,
        p_randomized_std=rstd,
        p_ideal=ideal,
        readout_basis=config.readout_basis,
        label=config.label,
    )


def dual_basis_scan(config: SpectrumConfig, jobs: int = 1) -> tuple[SpectrumResult, SpectrumResult]:
    """The same sweep read out in the x and -x bases (shared propagations)."""
    points = _sweep(config, jobs)
    results = []
    for basis in ("x", "minus_x"):
        rows = [_reduce_point(p, basis) for p in points]
        std, rmean, rstd, ideal = (np.array(col) for col in zip(*rows))
        results.append(
            SpectrumResult(
                frequencies=np.asarray(config.frequencies, dtype=float),
                p_standard=std,
                p_randomized_mean=rmean,
                p_randomized_std=rstd,
                p_ideal=ideal,
                readout_basis=basis,
                label=config.label,
            )
        )
    return results[0], results[1]


# ---------------------------------------------------------------------------
# Robustness maps

@dataclass(frozen=True)
class RobustnessConfig:
    """Grid specification for a two-axis control-error fidelity map.

    kind='amp_detuning': axis1 = detuning / Omega_ideal, axis2 = Rabi-bias
    fraction, fixed tau.  kind='yphase_tau': axis1 = X/Y phase offset (rad),
    axis2 = pulse spacing tau (s).
    """

    kind: str
    repetitions: int
    pulse_duration: float
    axis1: tuple[float, ...]
    axis2: tuple[float, ...]
    family: str = "xy8"
    tau: float = 0.0
    realizations: int = 10
    seed: int = 0
    detuning_during_free: bool = True
    label: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("amp_detuning", "yphase_tau"):
            raise ValueError(f"unknown map kind {self.kind!r}")
        if self.kind == "amp_detuning":
            if self.tau <= 0:
                raise ValueError("amp_detuning maps need the pulse spacing tau")
            for ax in (self.axis1, self.axis2):
                if any(abs(v) > 0.2 for v in ax):
                    raise ValueError("error fractions beyond |0.2| are outside the model's remit")
        if not self.axis1 or not self.axis2:
            raise ValueError("grid axes must be non-empty")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")


@dataclass(frozen=True)
class RobustnessMap:
    kind: str
    axis1: np.ndarray
    axis2: np.ndarray
    axis1_label: str
    axis2_label: str
    fidelity_standard: np.ndarray
    fidelity_randomized: np.ndarray
    label: str = ""


def _cell_fidelities(
    unit: PulseUnit,
    repetitions: int,
    errors: ErrorModel,
    draws: np.ndarray,
) -> tuple[float, float]:
    realized = _CompositeUnit(unit, errors, ())
    ideal = _CompositeUnit(unit, ErrorModel(), ())
    dim = realized.dimension
    zeros = np.zeros(repetitions)

    def overlap(phases: np.ndarray) -> float:
        u = realized.plan_propagator(phases)
        u0 = ideal.plan_propagator(phases)
        return float(abs(np.trace(u0.conj().T @ u)) / dim)

    f_standard = overlap(zeros)
    f_randomized = float(np.mean([overlap(draws[k]) for k in range(draws.shape[0])]))
    return f_standard, f_randomized


def run_robustness_map(config: RobustnessConfig) -> RobustnessMap:
    """Fidelity of the realized propagator against the error-free one, per grid cell."""
    n1, n2 = len(config.axis1), len(config.axis2)
    f_std = np.zeros((n1, n2))
    f_rnd = np.zeros((n1, n2))
    draws = np.stack(
        [rng.unit_phases(config.seed, r, config.repetitions) for r in range(config.realizations)]
    )
    if config.kind == "amp_detuning":
        omega_ideal = math.pi / config.pulse_duration
        unit = build_named_unit(config.family, config.tau, config.pulse_duration)
        for i, d_frac in enumerate(config.axis1):
            for j, a_frac in enumerate(config.axis2):
                errors = ErrorModel(
                    amplitude_fraction=float(a_frac),
                    detuning=float(d_frac) * omega_ideal,
                    detuning_during_free=config.detuning_during_free,
                )
                f_std[i, j], f_rnd[i, j] = _cell_fidelities(
                    unit, config.repetitions, errors, draws
                )
        labels = ("detuning_fraction", "amplitude_fraction")
    else:
        for j, tau in enumerate(config.axis2):
            unit = build_named_unit(config.family, float(tau), config.pulse_duration)
            for i, y_off in enumerate(config.axis1):
                errors = ErrorModel(y_phase_offset=float(y_off))
                f_std[i, j], f_rnd[i, j] = _cell_fidelities(
                    unit, config.repetitions, errors, draws
                )
        labels = ("y_phase_offset_rad", "tau_s")
    return RobustnessMap(
        kind=config.kind,
        axis1=np.asarray(config.axis1, dtype=float),
        axis2=np.asarray(config.axis2, dtype=float),
        axis1_label=labels[0],
        axis2_label=labels[1],
        fidelity_standard=f_std,
        fidelity_randomized=f_rnd,
        label=config.label,
    )


# ---------------------------------------------------------------------------
# Spurious-suppression report

@dataclass(frozen=True)
class SuppressionRow:
    repetitions: int
    standard_contrast: float
    randomized_mean_contrast: float
    randomized_stderr: float
    ratio: float
    predicted_ratio: float


@dataclass(frozen=True)
class SuppressionReport:
    family: str
    harmonic: int
    field_frequency: float
    field_amplitude: float
    rows: tuple[SuppressionRow, ...]
    warnings: tuple[str, ...] = ()


def spurious_suppression_report(
    family: str,
    m_list: tuple[int, ...],
    harmonic: int,
    realizations: int = 200,
    seed: int = 0,
    tau: float = 1e-6,
    pulse_duration: float = 200e-9,
    amplitude: float | None = None,
    substeps_per_pulse: int = 512,
) -> SuppressionReport:
    """Spurious-peak contrast of standard vs randomized repetition, per M.

    A classical field sits exactly on the chosen single-unit harmonic
    (frequency = harmonic / T).  The field phase is scanned for the strongest
    standard response, and contrasts are read in the readout quadrature
    calibrated on that response (the phase of the final pi/2 pulse an
    experimenter would tune).  The randomized contrast is that of the
    draw-averaged signal, as in an averaged experiment; its weak-signal
    prediction relative to the standard contrast is 1 / (2M).
    """
    unit = build_named_unit(family, tau, pulse_duration)
    t_unit = unit.duration
    nu_field = harmonic / t_unit
    f_tilde = abs(single_unit_fourier(unit, TWO_PI * harmonic / t_unit, "perp"))
    warnings = []
    if amplitude is None:
        m_big = max(m_list)
        if f_tilde > 1e-9:
            # keep the largest-M coherent rotation angle weak (~0.2 rad)
            amplitude = 0.4 / (f_tilde * m_big * t_unit)
        else:
            amplitude = 2.0 * math.pi * 1e3

    rows = []
    phase_grid = np.linspace(0.0, TWO_PI, 16, endpoint=False)
    for m_count in m_list:
        plan = SequencePlan(unit, m_count)
        zeros = np.zeros((1, m_count))
        c_baseline = complex(classical_coherences(
            plan, zeros, ErrorModel(), ClassicalField(0.0, nu_field), substeps_per_pulse
        )[0])
        # scan the field phase for the strongest coherent (standard) response,
        # batched over the phase grid with one convergence check
        fld = ClassicalField(amplitude, nu_field)
        scan_draws = np.zeros((len(phase_grid), m_count))
        cs_scan = _classical_coherence_batch(
            plan, scan_draws, ErrorModel(), fld, phase_grid, substeps_per_pulse
        )
        coarse = _classical_coherence_batch(
            plan, scan_draws, ErrorModel(), fld, phase_grid, max(substeps_per_pulse // 2, 8)
        )
        worst = float(np.max(np.abs(coarse - cs_scan)))
        if worst > 1e-6:
            raise RuntimeError(
                f"suppression report did not converge at M={m_count}: halving the "
                f"substeps moved a coherence by {worst:.2e} (> 1e-6)"
            )
        deltas = cs_scan - c_baseline
        best = int(np.argmax(np.abs(deltas)))
        delta_std = complex(deltas[best])
        best_phase = float(phase_grid[best])
        # population contrast in the readout quadrature aligned with delta_std
        standard_contrast = abs(delta_std)
        quadrature = np.conj(delta_std) / standard_contrast if standard_contrast > 0 else 1.0
        fld = ClassicalField(amplitude, nu_field, phase=best_phase)
        draws = np.stack([rng.unit_phases(seed, r, m_count) for r in range(realizations)])
        cs = classical_coherences(
            plan, draws, ErrorModel(), fld, substeps_per_pulse, check_convergence=False
        )
        projections = np.real((cs - c_baseline) * quadrature)
        mean_c = float(abs(np.mean(projections)))
        stderr = float(np.std(projections, ddof=1) / math.sqrt(len(projections)))
        if standard_contrast < 1e-10:
            warnings.append(
                f"M={m_count}: no spurious response at harmonic {harmonic} "
                f"(standard contrast {standard_contrast:.2e})"
            )
            ratio = math.nan
        else:
            ratio = mean_c / standard_contrast
        rows.append(
            SuppressionRow(
                repetitions=m_count,
                standard_contrast=standard_contrast,
                randomized_mean_contrast=mean_c,
                randomized_stderr=stderr,
                ratio=ratio,
                predicted_ratio=1.0 / (2.0 * m_count),
            )
        )
    return SuppressionReport(
        family=family,
        harmonic=harmonic,
        field_frequency=nu_field,
        field_amplitude=float(amplitude),
        rows=tuple(rows),
        warnings=tuple(warnings),
    )
