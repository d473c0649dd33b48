"""Modulation functions, their Fourier amplitudes, and randomisation statistics.

In the interaction picture of the pulse train the sensor couples to its
environment through two modulation functions: F_z(t), which is +-1 between
pulses and ramps as +-cos(theta) during a rectangular pulse of accumulated
area theta, and F_perp(t), which is nonzero only while a pulse is running and
carries a phase that bookkeeps every pulse phase applied so far.  Our phase
convention is fixed by the propagator identity

    F_z(t) sigma_z + F_perp(t)|1><0| + conj(F_perp(t))|0><1|
        = U_ctrl(t)^dagger sigma_z U_ctrl(t),

which the test suite enforces against an independent conjugation oracle.

Fourier amplitudes f_k (coefficient of frequency k / T_total) are evaluated by
exact closed-form integration over the constant and sinusoidal segments of the
rectangular-pulse train; no FFT or sampling is involved, so comb cancellations
are exact to rounding.  Every amplitude is computed through two independent
routes, the direct integral over the full train and the factored single-unit
form with per-unit transfer factors, and a disagreement beyond 1e-10 raises
(it would mean an implementation bug, not a data problem).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .sequences import PulseUnit, SequencePlan, apply_global_phase

__all__ = [
    "ModulationTrace",
    "FourierAmplitude",
    "ZFactor",
    "ZStatistics",
    "FourierPathMismatch",
    "trace_modulation",
    "modulation_samples",
    "global_phase_action",
    "fourier_amp",
    "single_unit_fourier",
    "z_factor",
    "z_statistics",
    "predicted_signal",
    "predicted_spurious_randomized",
]

TWO_PI = 2.0 * math.pi


class FourierPathMismatch(RuntimeError):
    """Direct and factored Fourier evaluations disagree: implementation bug."""


@dataclass(frozen=True)
class ModulationTrace:
    """Sampled modulation functions on a uniform grid."""

    time_grid: np.ndarray
    fz: np.ndarray
    fperp: np.ndarray


@dataclass(frozen=True)
class FourierAmplitude:
    """One Fourier coefficient of F_z or F_perp at frequency k / total_time."""

    k: int
    value: complex
    component: str
    total_time: float

    @property
    def phase_angle(self) -> float:
        return cmath.phase(self.value)

    @property
    def magnitude(self) -> float:
        return abs(self.value)


@dataclass(frozen=True)
class ZFactor:
    """Normalized phasor sum Z = (1/M) sum_m exp(i Phi_m)."""

    value: complex
    m_count: int


@dataclass(frozen=True)
class ZStatistics:
    """Monte-Carlo moments of |Z|^2 with standard errors."""

    mean_abs_sq: float
    variance_abs_sq: float
    samples: int
    mean_stderr: float
    variance_stderr: float


# ---------------------------------------------------------------------------
# Piecewise description of a pulse train

@dataclass(frozen=True)
class _Segments:
    """Flattened train: per-segment kind, bounds, F_z sign, F_perp phase, Rabi rate."""

    is_pulse: np.ndarray   # bool
    t0: np.ndarray
    t1: np.ndarray
    sign: np.ndarray       # (-1)^(pulses completed) before/within the segment
    chi: np.ndarray        # pulse segments: F_perp phase exponent
    rabi: np.ndarray
    total_time: float


def _global_pulses(plan: SequencePlan, phases: np.ndarray) -> list[tuple[float, float, float, float]]:
    """(start, duration, rabi, phase) for every pulse of the M-unit train."""
    unit = plan.unit
    out = []
    for m in range(plan.repetitions):
        offset = m * unit.duration
        shift = float(phases[m])
        for p in unit.pulses:
            out.append((p.start + offset, p.duration, p.rabi_frequency, (p.phase + shift) % TWO_PI))
    return out


def _build_segments(pulses: list[tuple[float, float, float, float]], total_time: float) -> _Segments:
    is_pulse, t0s, t1s, signs, chis, rabis = [], [], [], [], [], []
    alternating_sum = 0.0  # sum_{l<=j} (-1)^l phi_l over completed pulses
    sign = 1
    cursor = 0.0
    for j, (start, duration, rabi, phase) in enumerate(pulses, start=1):
        if start > cursor:
            is_pulse.append(False)
            t0s.append(cursor)
            t1s.append(start)
            signs.append(sign)
            chis.append(0.0)
            rabis.append(0.0)
        if duration > 0.0:
            chi = 2.0 * alternating_sum + (-1.0) ** j * phase
            is_pulse.append(True)
            t0s.append(start)
            t1s.append(start + duration)
            signs.append(sign)
            chis.append(chi)
            rabis.append(rabi)
        alternating_sum += (-1.0) ** j * phase
        sign = -sign
        cursor = start + duration
    if total_time > cursor:
        is_pulse.append(False)
        t0s.append(cursor)
        t1s.append(total_time)
        signs.append(sign)
        chis.append(0.0)
        rabis.append(0.0)
    return _Segments(
        is_pulse=np.array(is_pulse, dtype=bool),
        t0=np.array(t0s),
        t1=np.array(t1s),
        sign=np.array(signs, dtype=float),
        chi=np.array(chis),
        rabi=np.array(rabis),
        total_time=total_time,
    )


def _unit_segments(unit: PulseUnit) -> _Segments:
    pulses = [(p.start, p.duration, p.rabi_frequency, p.phase) for p in unit.pulses]
    return _build_segments(pulses, unit.duration)


def _plan_segments(plan: SequencePlan, phases: np.ndarray) -> _Segments:
    return _build_segments(_global_pulses(plan, phases), plan.total_time)


def _evaluate(segments: _Segments, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """F_z and F_perp at arbitrary times (piecewise-exact, vectorized)."""
    times = np.asarray(times, dtype=float)
    idx = np.clip(np.searchsorted(segments.t1, times, side="right"), 0, len(segments.t1) - 1)
    theta = np.where(
        segments.is_pulse[idx],
        segments.rabi[idx] * (times - segments.t0[idx]),
        0.0,
    )
    fz = np.where(segments.is_pulse[idx], segments.sign[idx] * np.cos(theta), segments.sign[idx])
    fperp = np.where(
        segments.is_pulse[idx],
        1j * segments.sign[idx] * np.exp(-1j * segments.chi[idx]) * np.sin(theta),
        0.0 + 0.0j,
    )
    return fz, fperp


def modulation_samples(unit: PulseUnit, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(F_z, F_perp) of a single unit evaluated at the given times."""
    return _evaluate(_unit_segments(unit), times)


def trace_modulation(unit: PulseUnit, samples_per_unit: int) -> ModulationTrace:
    """Sample the unit's modulation functions on a uniform midpoint grid.

    The grid must be fine enough that every finite-width pulse carries at
    least 8 samples; the evaluation itself is exact at each sample point.
    """
    if samples_per_unit < 2:
        raise ValueError("samples_per_unit must be >= 2")
    step = unit.duration / samples_per_unit
    for p in unit.pulses:
        if p.duration > 0.0 and p.duration / step < 8.0:
            raise ValueError(
                f"sampling too coarse: pulse of {p.duration}s would get "
                f"{p.duration / step:.2f} samples (need >= 8)"
            )
    times = (np.arange(samples_per_unit) + 0.5) * step
    fz, fperp = _evaluate(_unit_segments(unit), times)
    return ModulationTrace(time_grid=times, fz=fz, fperp=fperp)


def global_phase_action(trace: ModulationTrace, phi: float) -> ModulationTrace:
    """A global pulse phase leaves F_z alone and multiplies F_perp by e^{i phi}."""
    return replace(trace, fperp=trace.fperp * cmath.exp(1j * phi))


# ---------------------------------------------------------------------------
# Exact Fourier integrals

def _eiat_integral(a: np.ndarray, d: np.ndarray) -> np.ndarray:
    """integral_0^d e^{i a u} du, series-switched near a*d = 0 for accuracy."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    x = a * d
    small = np.abs(x) < 1e-4
    x_safe = np.where(small, 1.0, x)
    exact = d * (np.exp(1j * x_safe) - 1.0) / (1j * x_safe)
    series = d * (1.0 + 1j * x / 2.0 - x**2 / 6.0 - 1j * x**3 / 24.0 + x**4 / 120.0)
    return np.where(small, series, exact)


def _segment_fourier(segments: _Segments, omega: float, component: str) -> complex:
    """(1 / T_seg) * integral F_component(t) e^{-i omega t} dt over the segments."""
    t0, t1 = segments.t0, segments.t1
    d = t1 - t0
    phase0 = np.exp(-1j * omega * t0)
    free = ~segments.is_pulse
    total = 0.0 + 0.0j
    if component == "z":
        if np.any(free):
            total += np.sum(segments.sign[free] * phase0[free] * _eiat_integral(-omega, d[free]))
        pulse = segments.is_pulse
        if np.any(pulse):
            plus = _eiat_integral(segments.rabi[pulse] - omega, d[pulse])
            minus = _eiat_integral(-segments.rabi[pulse] - omega, d[pulse])
            total += np.sum(segments.sign[pulse] * phase0[pulse] * 0.5 * (plus + minus))
    elif component == "perp":
        pulse = segments.is_pulse
        if np.any(pulse):
            plus = _eiat_integral(segments.rabi[pulse] - omega, d[pulse])
            minus = _eiat_integral(-segments.rabi[pulse] - omega, d[pulse])
            prefactor = segments.sign[pulse] * np.exp(-1j * segments.chi[pulse]) * phase0[pulse]
            total += np.sum(prefactor * 0.5 * (plus - minus))
    else:
        raise ValueError(f"component must be 'z' or 'perp', got {component!r}")
    return complex(total / segments.total_time)


def single_unit_fourier(unit: PulseUnit, omega: float, component: str) -> complex:
    """Single-period amplitude f~ = (1/T) integral_0^T F(t) e^{-i omega t} dt."""
    return _segment_fourier(_unit_segments(unit), omega, component)


def _ideal_pulse_rotation(phase: float) -> np.ndarray:
    """exp(-i (pi/2) (sx cos phi + sy sin phi)): one complete ideal pi rotation."""
    return np.array(
        [[0.0, -1j * cmath.exp(-1j * phase)], [-1j * cmath.exp(1j * phase), 0.0]],
        dtype=complex,
    )


def _unit_control_propagator(unit: PulseUnit, global_phase: float) -> np.ndarray:
    u = np.eye(2, dtype=complex)
    for p in unit.pulses:
        u = _ideal_pulse_rotation(p.phase + global_phase) @ u
    return u


def _factored_fourier(plan: SequencePlan, phases: np.ndarray, k: int, component: str) -> complex:
    """Factored route: single-unit integral times exact per-unit transfer factors.

    The transfer of unit m follows from conjugating the one-unit identity with
    the control propagator W of the preceding units: a diagonal W multiplies
    F_perp by W00^2 (and leaves F_z), an anti-diagonal W (odd pulse count)
    maps F_perp to conj(W01) * W10 * conj(F_perp) and flips F_z.
    """
    unit = plan.unit
    m_count = plan.repetitions
    omega = TWO_PI * k / plan.total_time
    f_plus = single_unit_fourier(unit, omega, component)
    f_minus_conj = (
        np.conj(single_unit_fourier(unit, -omega, component)) if component == "perp" else 0.0
    )
    w = np.eye(2, dtype=complex)
    total = 0.0 + 0.0j
    for m in range(m_count):
        comb = cmath.exp(-2j * math.pi * k * m / m_count)
        diagonal = w[0, 1] == 0.0
        if component == "z":
            total += comb * (f_plus if diagonal else -f_plus)
        else:
            gp = cmath.exp(1j * float(phases[m]))
            if diagonal:
                total += comb * w[0, 0] ** 2 * gp * f_plus
            else:
                total += comb * np.conj(w[0, 1]) * w[1, 0] * np.conj(gp) * f_minus_conj
        w = _unit_control_propagator(unit, float(phases[m])) @ w
    return complex(total / m_count)


def fourier_amp(
    plan: SequencePlan,
    phases: np.ndarray | None,
    k: int,
    component: str,
) -> FourierAmplitude:
    """Fourier amplitude f_k of the plan's modulation function.

    `phases` are the realized per-unit global phases (zeros when None).  The
    value is computed both by direct integration over the M-unit train and by
    the factored single-unit route; both must agree to 1e-10.
    """
    if k < 1:
        raise ValueError("harmonic index k must be >= 1")
    if component not in ("z", "perp"):
        raise ValueError(f"component must be 'z' or 'perp', got {component!r}")
    if phases is None:
        phases = np.zeros(plan.repetitions)
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (plan.repetitions,):
        raise ValueError(f"need {plan.repetitions} per-unit phases, got shape {phases.shape}")

    omega = TWO_PI * k / plan.total_time
    direct = _segment_fourier(_plan_segments(plan, phases), omega, component)
    factored = _factored_fourier(plan, phases, k, component)
    if abs(direct - factored) > 1e-10:
        raise FourierPathMismatch(
            f"direct {direct} vs factored {factored} at k={k} ({component}): "
            f"|diff|={abs(direct - factored):.3e}"
        )
    return FourierAmplitude(k=k, value=direct, component=component, total_time=plan.total_time)


# ---------------------------------------------------------------------------
# Randomisation factor Z and its statistics

def z_factor(phases) -> ZFactor:
    """Z = (1/M) sum exp(i Phi_m) over the per-unit phases of one realization."""
    phases = np.asarray(phases, dtype=float)
    if phases.size < 1:
        raise ValueError("need at least one phase")
    return ZFactor(value=complex(np.mean(np.exp(1j * phases))), m_count=phases.size)


def z_statistics(m_count: int, samples: int, seed: int) -> ZStatistics:
    """Monte-Carlo mean and variance of |Z|^2 for uniform random phases.

    The exact values are <|Z|^2> = 1/M and var(|Z|^2) = (M-1)/M^3; the
    estimates here come with standard errors so tests can bound deviations.
    """
    if m_count < 1:
        raise ValueError("m_count must be >= 1")
    if samples < 1000:
        raise ValueError("need at least 1e3 samples for meaningful statistics")
    gen = rng.generator(seed, 0)
    chunk = max(1, min(samples, 1_000_000 // max(m_count, 1) + 1))
    done = 0
    s1 = s2 = s3 = s4 = 0.0
    while done < samples:
        n = min(chunk, samples - done)
        phi = gen.random((n, m_count)) * TWO_PI
        z = np.mean(np.exp(1j * phi), axis=1)
        absq = np.abs(z) ** 2
        s1 += float(np.sum(absq))
        s2 += float(np.sum(absq**2))
        s3 += float(np.sum(absq**3))
        s4 += float(np.sum(absq**4))
        done += n
    n = float(samples)
    mean = s1 / n
    m2 = s2 / n - mean**2                      # population variance of |Z|^2
    m4 = (s4 - 4 * mean * s3 + 6 * mean**2 * s2) / n - 3 * mean**4  # fourth central moment
    mean_stderr = math.sqrt(max(m2, 0.0) / n)
    var_stderr = math.sqrt(max(m4 - m2**2, 0.0) / n)
    variance = m2 * n / (n - 1.0)
    return ZStatistics(
        mean_abs_sq=mean,
        variance_abs_sq=variance,
        samples=samples,
        mean_stderr=mean_stderr,
        variance_stderr=var_stderr,
    )


# ---------------------------------------------------------------------------
# First-order analytic signal predictions

def predicted_signal(
    f: FourierAmplitude,
    a_perp: float,
    m_count: int,
    unit_time: float,
    kind: str,
) -> float:
    """Closed-form first-order population for a single spin-half target.

    kind='expected' uses the F_z amplitude: P = cos^2(|f| A_perp M T / 2).
    kind='spurious' uses the F_perp amplitude and its complex phase:
    P = 1 - sin^2(|f| A_perp M T / 2) cos^2(arg f).
    """
    if kind == "expected":
        if f.component != "z":
            raise ValueError("expected-signal prediction needs a z-component amplitude")
        return math.cos(0.5 * f.magnitude * a_perp * m_count * unit_time) ** 2
    if kind == "spurious":
        if f.component != "perp":
            raise ValueError("spurious-signal prediction needs a perp-component amplitude")
        half = 0.5 * a_perp * f.magnitude * m_count * unit_time
        return 1.0 - math.sin(half) ** 2 * math.cos(f.phase_angle) ** 2
    raise ValueError(f"kind must be 'expected' or 'spurious', got {kind!r}")


def predicted_spurious_randomized(
    f_single_unit: FourierAmplitude,
    a_perp: float,
    m_count: int,
    unit_time: float,
) -> float:
    """Expected randomized spurious population, P ~= 1 - (M/8)(T A_perp |f~|)^2.

    Follows from <|Z|^2> = 1/M and <cos^2> = 1/2 in the weak-signal limit;
    `f_single_unit` is the single-period F_perp amplitude at the spurious
    harmonic.
    """
    if f_single_unit.component != "perp":
        raise ValueError("needs a perp-component single-unit amplitude")
    return 1.0 - m_count / 8.0 * (unit_time * a_perp * f_single_unit.magnitude) ** 2
