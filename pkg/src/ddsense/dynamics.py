"""Exact propagation of the sensor qubit under imperfect finite-width pulse trains.

Everything is simulated in the microwave rotating frame, where each segment of
a rectangular-pulse sequence has a time-independent Hamiltonian:

    free:  (Delta/2) sz  +  (1/2) sz (x) sum_n (A_par I_z + A_perp I_x)
                          +  sum_n omega_n I_z
    pulse: the free part plus (Omega (1 + delta) / 2)(sx cos phi + sy sin phi)

so the propagator is a product of exact Hermitian-eigendecomposition
exponentials.  Classical AC fields are the one genuinely time-dependent case;
:func:`classical_signal` treats them in the interaction picture of the ideal
pulse train, where free segments integrate analytically and pulse segments are
sub-stepped with a second-order midpoint rule and a convergence check.

The faulty-pulse matrix of :func:`faulty_pulse` and the accumulation analysis
follow the static-error model in which every pi pulse shares the same
(alpha, beta, epsilon) and a drive detuning adds the phase Delta (t_{j+1}-t_j)
between pulse centres.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from . import rng
from .sequences import PulseUnit, SequencePlan, Standard, SequenceError
from .modulation import _plan_segments, _global_pulses  # shared piecewise bookkeeping

__all__ = [
    "ErrorModel",
    "FaultyPulseParams",
    "TargetSpin",
    "ClassicalField",
    "Propagator",
    "ErrorAccumulationReport",
    "DimensionError",
    "faulty_pulse",
    "faulty_params_from_physical",
    "unit_faulty_propagator",
    "propagate_plan",
    "plan_coherence",
    "classical_signal",
    "classical_coherence",
    "classical_coherences",
    "nuclear_signal",
    "unit_offdiagonal_analysis",
    "fidelity",
    "gyromagnetic_ratio",
    "larmor_frequency",
    "known_species",
]

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
ID2 = np.eye(2, dtype=complex)

_MAX_SPINS = 6
_UNITARITY_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when a joint propagation would exceed the desk-scale spin cap."""


@dataclass(frozen=True)
class ErrorModel:
    """Static control errors: Rabi bias, drive detuning, X/Y phase offset, optional T2."""

    amplitude_fraction: float = 0.0
    detuning: float = 0.0
    y_phase_offset: float = 0.0
    decoherence_t2: float | None = None
    detuning_during_free: bool = True

    def __post_init__(self) -> None:
        if abs(self.amplitude_fraction) >= 1.0:
            raise ValueError("|amplitude_fraction| must be < 1")
        if self.decoherence_t2 is not None and self.decoherence_t2 <= 0:
            raise ValueError("decoherence_t2 must be positive when set")

    @property
    def any_error(self) -> bool:
        return (
            self.amplitude_fraction != 0.0
            or self.detuning != 0.0
            or self.y_phase_offset != 0.0
        )


@dataclass(frozen=True)
class FaultyPulseParams:
    """(alpha, beta, epsilon) of the general static-error pi-pulse matrix."""

    alpha: float = 0.0
    beta: float = 0.0
    epsilon: float = 0.0


@dataclass(frozen=True)
class TargetSpin:
    """A spin-1/2 target: hyperfine components (rad/s) and precession frequency."""

    a_perp: float
    a_par: float
    larmor: float
    label: str = ""

    def __post_init__(self) -> None:
        if self.a_perp < 0:
            raise ValueError("a_perp must be >= 0")


@dataclass(frozen=True)
class ClassicalField:
    """Classical AC signal b cos(2 pi nu0 t + phase), amplitude in rad/s."""

    amplitude: float
    frequency: float
    phase: float = 0.0
    phase_averaged: bool = False

    def __post_init__(self) -> None:
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")


@dataclass(frozen=True)
class Propagator:
    """A unitary on qubit (x) spins, checked to 1e-10 on construction."""

    matrix: np.ndarray
    dimension: int

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix)
        if m.shape != (self.dimension, self.dimension):
            raise ValueError("matrix shape disagrees with dimension")
        defect = np.max(np.abs(m.conj().T @ m - np.eye(self.dimension)))
        if defect > _UNITARITY_TOL:
            raise ValueError(f"propagator is not unitary: defect {defect:.3e}")


@dataclass(frozen=True)
class ErrorAccumulationReport:
    """Off-diagonal growth |<0|U|1>| with repetition count, plus the fitted prefactor."""

    epsilon: float
    mode: str
    magnitudes: tuple[tuple[int, float], ...]
    fitted_prefactor: float


# ---------------------------------------------------------------------------
# Species data

def _load_gyromagnetic() -> dict[str, float]:
    text = resources.files("ddsense").joinpath("data", "gyromagnetic.tab").read_text("utf-8")
    table = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        species, value = line.split()
        table[species] = float(value) * 1e3 * 2.0 * math.pi  # kHz/G -> rad/s per G
    return table


_GYRO = _load_gyromagnetic()


def known_species() -> tuple[str, ...]:
    return tuple(sorted(_GYRO))


def gyromagnetic_ratio(species: str) -> float:
    """gamma in rad/s per Gauss for a tabulated nuclear species."""
    try:
        return _GYRO[species]
    except KeyError:
        raise ValueError(f"unknown species {species!r}; known: {', '.join(known_species())}")


def larmor_frequency(species: str, field_gauss: float) -> float:
    """Bare Larmor angular frequency gamma * B in rad/s (signed)."""
    return gyromagnetic_ratio(species) * field_gauss


# ---------------------------------------------------------------------------
# Faulty pi pulses (static error model)

def faulty_pulse(phase: float, params: FaultyPulseParams) -> np.ndarray:
    """The general static-error pi-pulse propagator.

    [[e^{-i alpha} sin eps,            i e^{-i(beta+phase)} cos eps],
     [i e^{i(beta+phase)} cos eps,     e^{i alpha} sin eps          ]]

    epsilon = beta = 0 is a perfect pi rotation about the equatorial axis at
    angle `phase` (up to a global phase).
    """
    a, b, e = params.alpha, params.beta, params.epsilon
    se, ce = math.sin(e), math.cos(e)
    return np.array(
        [
            [cmath.exp(-1j * a) * se, 1j * cmath.exp(-1j * (b + phase)) * ce],
            [1j * cmath.exp(1j * (b + phase)) * ce, cmath.exp(1j * a) * se],
        ],
        dtype=complex,
    )


def _axis(phase: float) -> np.ndarray:
    return SX * math.cos(phase) + SY * math.sin(phase)


def _expm_traceless(h: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i h dt) for a traceless Hermitian 2x2, via the axis-angle closed form."""
    vx = h[1, 0].real
    vy = h[1, 0].imag
    vz = h[0, 0].real
    norm = math.sqrt(vx * vx + vy * vy + vz * vz)
    if norm == 0.0:
        return ID2.copy()
    c, s = math.cos(norm * dt), math.sin(norm * dt) / norm
    return np.array(
        [[c - 1j * s * vz, -1j * s * (vx - 1j * vy)], [-1j * s * (vx + 1j * vy), c + 1j * s * vz]],
        dtype=complex,
    )


def physical_pulse_propagator(
    phase: float,
    rabi: float,
    duration: float,
    amplitude_fraction: float = 0.0,
    detuning: float = 0.0,
    angle: float = math.pi,
) -> np.ndarray:
    """Exact propagator of one driven rectangular pulse (2x2, qubit only)."""
    if duration == 0.0:
        return _expm_traceless(0.5 * (1.0 + amplitude_fraction) * angle * _axis(phase), 1.0)
    h = 0.5 * detuning * SZ + 0.5 * rabi * (1.0 + amplitude_fraction) * _axis(phase)
    return _expm_traceless(h, duration)


def faulty_params_from_physical(
    amplitude_fraction: float,
    detuning: float,
    rabi: float,
    phase: float = 0.0,
) -> FaultyPulseParams:
    """Map a physical (Rabi bias, detuning) rectangular pi pulse onto (alpha, beta, epsilon).

    The returned parameters reproduce the physical propagator exactly:
    faulty_pulse(phase, params) == physical propagator, for every drive phase.
    """
    u = physical_pulse_propagator(phase=0.0, rabi=rabi, duration=math.pi / rabi,
                                  amplitude_fraction=amplitude_fraction, detuning=detuning)
    sin_eps = min(abs(u[0, 0]), 1.0)
    eps = math.asin(sin_eps)
    alpha = -cmath.phase(u[0, 0]) if sin_eps > 1e-15 else 0.0
    beta = cmath.phase(u[1, 0] / 1j) if math.cos(eps) > 1e-15 else 0.0
    params = FaultyPulseParams(alpha=alpha, beta=beta, epsilon=eps)
    if np.max(np.abs(faulty_pulse(phase, params) - physical_pulse_propagator(
            phase, rabi, math.pi / rabi, amplitude_fraction, detuning))) > 1e-10:
        # the parametrization covers SU(2) up to a sign; absorb it
        params = FaultyPulseParams(alpha=alpha + math.pi, beta=beta + math.pi, epsilon=eps)
    return params


def unit_faulty_propagator(
    unit: PulseUnit,
    params: FaultyPulseParams,
    detuning: float = 0.0,
    global_phase: float = 0.0,
) -> np.ndarray:
    """One unit built from faulty_pulse matrices plus detuning phase between centres."""
    u = ID2.copy()
    cursor = 0.0
    for p in unit.pulses:
        gap = p.center_time - cursor
        if detuning != 0.0 and gap > 0.0:
            u = _expm_traceless(0.5 * detuning * SZ, gap) @ u
        u = faulty_pulse(p.phase + global_phase, params) @ u
        cursor = p.center_time
    gap = unit.duration - cursor
    if detuning != 0.0 and gap > 0.0:
        u = _expm_traceless(0.5 * detuning * SZ, gap) @ u
    return u


# ---------------------------------------------------------------------------
# Composite-space exact propagation

def _kron_chain(ops: list[np.ndarray]) -> np.ndarray:
    out = ops[0]
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def _spin_operator(n_spins: int, index: int, op: np.ndarray) -> np.ndarray:
    ops = [ID2]  # qubit slot
    for i in range(n_spins):
        ops.append(op if i == index else ID2)
    return _kron_chain(ops)


def _qubit_operator(n_spins: int, op: np.ndarray) -> np.ndarray:
    return _kron_chain([op] + [ID2] * n_spins)


def _expm_hermitian(h: np.ndarray, dt: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-1j * vals * dt)) @ vecs.conj().T


def _is_y_pulse(phase: float) -> bool:
    return math.isclose((phase % math.pi), math.pi / 2, rel_tol=0.0, abs_tol=1e-9)


def _effective_unit(unit: PulseUnit, errors: ErrorModel) -> PulseUnit:
    """Fold the static X/Y phase offset into the drive phases of y-axis pulses."""
    if errors.y_phase_offset == 0.0:
        return unit
    pulses = tuple(
        replace(p, phase=(p.phase + errors.y_phase_offset) % (2 * math.pi))
        if _is_y_pulse(p.phase)
        else p
        for p in unit.pulses
    )
    return replace(unit, pulses=pulses)


class _CompositeUnit:
    """Cached exact propagator machinery for one unit on qubit (x) spins.

    U_unit(Phi) = Rz(Phi) U_unit(0) Rz(Phi)^dagger with Rz diagonal, because a
    common drive-phase shift is a sigma_z conjugation that commutes with every
    non-drive term.
    """

    def __init__(self, unit: PulseUnit, errors: ErrorModel, targets: tuple[TargetSpin, ...]):
        n = len(targets)
        if n > _MAX_SPINS:
            raise DimensionError(f"{n} spins exceed the joint-space cap of {_MAX_SPINS}")
        self.dimension = 2 ** (n + 1)
        unit = _effective_unit(unit, errors)
        self.unit = unit

        sz_q = _qubit_operator(n, SZ)
        h_static = np.zeros((self.dimension, self.dimension), dtype=complex)
        for i, spin in enumerate(targets):
            h_static += 0.5 * sz_q @ (
                spin.a_par * _spin_operator(n, i, 0.5 * SZ)
                + spin.a_perp * _spin_operator(n, i, 0.5 * SX)
            )
            h_static += spin.larmor * _spin_operator(n, i, 0.5 * SZ)
        h_detune = 0.5 * errors.detuning * sz_q

        h_free = h_static + (h_detune if errors.detuning_during_free else 0.0)
        self._free_cache: dict[float, np.ndarray] = {}

        def free_propagator(dt: float) -> np.ndarray:
            if dt not in self._free_cache:
                self._free_cache[dt] = _expm_hermitian(h_free, dt)
            return self._free_cache[dt]

        drive = 1.0 + errors.amplitude_fraction
        sx_q, sy_q = _qubit_operator(n, SX), _qubit_operator(n, SY)

        def pulse_propagator(pulse) -> np.ndarray:
            if pulse.duration == 0.0:
                # instantaneous limit: a bare rotation by pi (1 + delta)
                angle = pulse.nominal_angle * drive
                axis = sx_q * math.cos(pulse.phase) + sy_q * math.sin(pulse.phase)
                return _expm_hermitian(0.5 * angle * axis, 1.0)
            h = (
                h_static
                + h_detune
                + 0.5 * pulse.rabi_frequency * drive
                * (sx_q * math.cos(pulse.phase) + sy_q * math.sin(pulse.phase))
            )
            return _expm_hermitian(h, pulse.duration)

        u = np.eye(self.dimension, dtype=complex)
        cursor = 0.0
        for pulse in unit.pulses:
            if pulse.start > cursor:
                u = free_propagator(pulse.start - cursor) @ u
            u = pulse_propagator(pulse) @ u
            cursor = pulse.end
        if unit.duration > cursor:
            u = free_propagator(unit.duration - cursor) @ u
        self.unit_propagator = u

        # diagonal of exp(-i (Phi/2) sz (x) 1) without the Phi factor
        self._half_sz_diag = np.diag(sz_q).real * 0.5

    def with_global_phase(self, phi: float) -> np.ndarray:
        if phi == 0.0:
            return self.unit_propagator
        d = np.exp(-1j * phi * self._half_sz_diag)
        return (d[:, None] * self.unit_propagator) * d.conj()[None, :]

    def plan_propagator(self, phases: np.ndarray) -> np.ndarray:
        phases = np.asarray(phases, dtype=float)
        if np.all(phases == 0.0):
            return np.linalg.matrix_power(self.unit_propagator, len(phases))
        u = np.eye(self.dimension, dtype=complex)
        for phi in phases:
            u = self.with_global_phase(float(phi)) @ u
        return u


def propagate_plan(
    plan: SequencePlan,
    phases: np.ndarray | None,
    errors: ErrorModel = ErrorModel(),
    targets: tuple[TargetSpin, ...] = (),
) -> Propagator:
    """Exact composite-space propagator of the full M-unit plan (no readout pulses)."""
    if phases is None:
        phases = np.zeros(plan.repetitions)
    phases = np.asarray(phases, dtype=float)
    if phases.shape != (plan.repetitions,):
        raise ValueError(f"need {plan.repetitions} per-unit phases, got {phases.shape}")
    composite = _CompositeUnit(plan.unit, errors, tuple(targets))
    return Propagator(matrix=composite.plan_propagator(phases), dimension=composite.dimension)


def fidelity(u: Propagator, u_ideal: Propagator) -> float:
    """Global-phase-invariant overlap |Tr(U_ideal^dagger U)| / dim."""
    if u.dimension != u_ideal.dimension:
        raise ValueError("propagator dimensions differ")
    return float(abs(np.trace(u_ideal.matrix.conj().T @ u.matrix)) / u.dimension)


# ---------------------------------------------------------------------------
# Populations: nuclear targets

def _coherence_joint(
    plan: SequencePlan,
    phases: np.ndarray,
    errors: ErrorModel,
    targets: tuple[TargetSpin, ...],
) -> complex:
    """<0| tr_spins rho_final |1> for rho_0 = |+><+| (x) 1/2^n."""
    u = propagate_plan(plan, phases, errors, targets).matrix
    n = len(targets)
    dim_spins = 2**n
    plus = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
    rho_q = np.outer(plus, plus.conj())
    rho = np.kron(rho_q, np.eye(dim_spins, dtype=complex) / dim_spins)
    rho_final = u @ rho @ u.conj().T
    block = rho_final.reshape(2, dim_spins, 2, dim_spins)
    return complex(np.trace(block[0, :, 1, :]))


def _population_from_coherence(coherence: complex, basis: str) -> float:
    p = 0.5 + coherence.real if basis == "x" else 0.5 - coherence.real
    return float(min(max(p, 0.0), 1.0))


def nuclear_signal(
    plan: SequencePlan,
    phases: np.ndarray | None,
    errors: ErrorModel = ErrorModel(),
    spins: tuple[TargetSpin, ...] = (),
    independent: bool = True,
) -> float:
    """Population after pi/2 -- plan -- pi/2 with spin-1/2 targets.

    independent=True propagates qubit (x) one spin at a time and multiplies
    the per-spin coherence factors (exact for one spin, a product
    approximation for several); independent=False uses the full joint space,
    subject to the spin cap.
    """
    coherence = plan_coherence(plan, phases, errors, spins=spins, independent=independent)
    return _population_from_coherence(coherence, plan.readout_basis)


def plan_coherence(
    plan: SequencePlan,
    phases: np.ndarray | None,
    errors: ErrorModel = ErrorModel(),
    spins: tuple[TargetSpin, ...] = (),
    field: ClassicalField | None = None,
    independent: bool = True,
    substeps_per_pulse: int = 64,
) -> complex:
    """Final qubit coherence <0|rho|1> for any mix of spin targets and one AC field.

    Spins beyond the first (in independent mode) and a classical field on top
    of spins combine through per-target coherence ratios against the
    target-free propagation, which is exact for commuting phase contributions
    and a controlled product approximation otherwise.  The T2 envelope is
    applied once at the end.
    """
    if phases is None:
        phases = np.zeros(plan.repetitions)
    phases = np.asarray(phases, dtype=float)
    spins = tuple(spins)
    no_t2 = replace(errors, decoherence_t2=None)

    factors_needed = (len(spins) if (independent or not spins) else 1) + (1 if field else 0)
    if not spins and field is None:
        coherence = _coherence_joint(plan, phases, no_t2, ())
    elif factors_needed > 1 or (spins and field is not None):
        base = _coherence_joint(plan, phases, no_t2, ())
        coherence = base
        if spins:
            if independent:
                singles = [_coherence_joint(plan, phases, no_t2, (s,)) for s in spins]
            else:
                singles = [_coherence_joint(plan, phases, no_t2, spins)]
            for single in singles:
                coherence = coherence * (single / base) if base != 0.0 else 0.0
        if field is not None:
            c_field = classical_coherence(plan, phases, no_t2, field, substeps_per_pulse)
            coherence = coherence * (c_field / base) if base != 0.0 else 0.0
    elif spins:
        coherence = _coherence_joint(plan, phases, no_t2, spins)
    else:
        coherence = classical_coherence(plan, phases, no_t2, field, substeps_per_pulse)
    if errors.decoherence_t2 is not None:
        coherence *= math.exp(-plan.total_time / errors.decoherence_t2)
    return complex(coherence)


# ---------------------------------------------------------------------------
# Populations: classical AC fields (interaction-picture engine)

def _field_integral(field: ClassicalField, field_phase: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """integral of b cos(w t + phase) over [t0, t1], vectorized over phases."""
    w = 2.0 * math.pi * field.frequency
    if w == 0.0:
        return field.amplitude * np.cos(field_phase) * (t1 - t0)
    return field.amplitude / w * (np.sin(w * t1 + field_phase) - np.sin(w * t0 + field_phase))


def _batched_unitary_step(u: np.ndarray, vx, vy, vz, dt: float) -> np.ndarray:
    """Left-multiply the batch u (R,2,2) by exp(-i (v . sigma) dt) per batch row."""
    norm = np.sqrt(vx * vx + vy * vy + vz * vz)
    norm = np.where(norm == 0.0, 1e-300, norm)
    c = np.cos(norm * dt)
    s = np.sin(norm * dt) / norm
    step = np.empty(u.shape, dtype=complex)
    step[:, 0, 0] = c - 1j * s * vz
    step[:, 0, 1] = -1j * s * (vx - 1j * vy)
    step[:, 1, 0] = -1j * s * (vx + 1j * vy)
    step[:, 1, 1] = c + 1j * s * vz
    return step @ u


def _classical_coherence_batch(
    plan: SequencePlan,
    phase_draws: np.ndarray,
    errors: ErrorModel,
    field: ClassicalField,
    field_phases: np.ndarray,
    substeps_per_pulse: int,
) -> np.ndarray:
    """Coherence <0|rho|1> for a batch of (per-unit phase draw, field phase) runs.

    phase_draws: (R, M) per-unit global phases; field_phases: (R,) field offsets.
    Works in the interaction picture of the nominal pulse train: free segments
    accumulate an exact sigma_z phase from the field plus detuning, pulse
    segments are midpoint-substepped with the exact conjugated drive-error and
    environment terms.
    """
    runs, m_count = phase_draws.shape
    if m_count != plan.repetitions:
        raise ValueError("phase draw length disagrees with plan repetitions")
    unit = _effective_unit(plan.unit, errors)
    eff_plan = replace(plan, unit=unit)
    delta = errors.detuning
    delta_free = delta if errors.detuning_during_free else 0.0
    amp = errors.amplitude_fraction

    pulses = _global_pulses(eff_plan, np.zeros(m_count))
    n_pulses = len(pulses)
    n_per_unit = unit.pulse_count

    # chi corrections are linear in the per-unit phases
    base_chi = np.zeros(n_pulses)
    coeff = np.zeros((n_pulses, m_count))
    alt = 0.0
    alt_unit = np.zeros(m_count)
    for j, (start, dur, rabi, phase) in enumerate(pulses, start=1):
        m = (j - 1) // n_per_unit
        sign_j = (-1.0) ** j
        base_chi[j - 1] = 2.0 * alt + sign_j * phase
        coeff[j - 1] = 2.0 * alt_unit
        coeff[j - 1, m] += sign_j
        alt += sign_j * phase
        alt_unit[m] += sign_j

    chi = base_chi[None, :] + phase_draws @ coeff.T  # (R, n_pulses)

    # conjugated drive axes W^dag (n . sigma) W and the running control product W
    w = np.broadcast_to(ID2, (runs, 2, 2)).copy()
    axes10 = np.zeros((runs, n_pulses), dtype=complex)  # (W^dag n.sigma W)[1,0]
    axesz = np.zeros((runs, n_pulses))                  # (W^dag n.sigma W)[0,0]
    need_axes = amp != 0.0
    for j, (start, dur, rabi, phase) in enumerate(pulses):
        m = j // n_per_unit
        phases_j = phase + phase_draws[:, m]
        if need_axes:
            n10 = np.exp(1j * phases_j)
            nmat = np.zeros((runs, 2, 2), dtype=complex)
            nmat[:, 0, 1] = n10.conj()
            nmat[:, 1, 0] = n10
            conj = np.swapaxes(w, 1, 2).conj() @ nmat @ w
            axes10[:, j] = conj[:, 1, 0]
            axesz[:, j] = conj[:, 0, 0].real
        rot = np.zeros((runs, 2, 2), dtype=complex)
        rot[:, 0, 1] = -1j * np.exp(-1j * phases_j)
        rot[:, 1, 0] = -1j * np.exp(1j * phases_j)
        w = rot @ w

    u = np.broadcast_to(ID2, (runs, 2, 2)).copy()
    sign = 1.0
    cursor = 0.0
    total_time = plan.total_time
    for j, (start, dur, rabi, phase) in enumerate(pulses):
        if start > cursor:
            env = _field_integral(field, field_phases, cursor, start) + delta_free * (start - cursor)
            half = 0.5 * sign * env
            d = np.exp(-1j * half)
            u = u * np.stack([d, d.conj()], axis=1)[:, :, None]
        if dur > 0.0:
            dt = dur / substeps_per_pulse
            mid = start + (np.arange(substeps_per_pulse) + 0.5) * dt
            theta = rabi * (mid - start)
            cos_t, sin_t = np.cos(theta), np.sin(theta)
            e_prefactor = 1j * sign * np.exp(-1j * chi[:, j])  # (R,)
            for c in range(substeps_per_pulse):
                e_val = field.amplitude * np.cos(
                    2.0 * math.pi * field.frequency * mid[c] + field_phases
                ) + delta
                m10 = 0.5 * e_val * e_prefactor * sin_t[c]
                vz = 0.5 * e_val * sign * cos_t[c]
                if need_axes:
                    m10 = m10 + 0.5 * rabi * amp * axes10[:, j]
                    vz = vz + 0.5 * rabi * amp * axesz[:, j]
                u = _batched_unitary_step(u, m10.real, m10.imag, vz, dt)
        sign = -sign
        cursor = start + dur
    if total_time > cursor:
        env = _field_integral(field, field_phases, cursor, total_time) + delta_free * (total_time - cursor)
        half = 0.5 * sign * env
        d = np.exp(-1j * half)
        u = u * np.stack([d, d.conj()], axis=1)[:, :, None]

    u_total = w @ u
    plus = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
    psi = u_total @ plus
    coherence = psi[:, 0] * psi[:, 1].conj()
    if errors.decoherence_t2 is not None:
        coherence = coherence * math.exp(-total_time / errors.decoherence_t2)
    return coherence


def classical_coherences(
    plan: SequencePlan,
    phase_draws: np.ndarray,
    errors: ErrorModel,
    field: ClassicalField,
    substeps_per_pulse: int = 64,
    check_convergence: bool = True,
) -> np.ndarray:
    """Batched final coherences for many per-unit phase draws (rows of phase_draws).

    Field-phase averaging, when requested, expands each row over a 16-point
    phase grid internally.  A single second-order convergence check (halved
    substeps on the first row) guards the midpoint integrator.
    """
    if substeps_per_pulse < 16:
        raise ValueError("substeps_per_pulse must be >= 16")
    phase_draws = np.atleast_2d(np.asarray(phase_draws, dtype=float))
    n_draws = phase_draws.shape[0]
    if field.phase_averaged:
        n_avg = 16
        grid = field.phase + 2.0 * math.pi * np.arange(n_avg) / n_avg
        field_phases = np.tile(grid, n_draws)
        draws = np.repeat(phase_draws, n_avg, axis=0)
    else:
        field_phases = np.full(n_draws, field.phase)
        draws = phase_draws
    coherences = _classical_coherence_batch(
        plan, draws, errors, field, field_phases, substeps_per_pulse
    )
    if check_convergence:
        coarse = _classical_coherence_batch(
            plan, draws[:1], errors, field, field_phases[:1], max(substeps_per_pulse // 2, 8)
        )
        if abs(coarse[0] - coherences[0]) > 1e-6:
            raise RuntimeError(
                f"classical_signal did not converge: halving the substeps moved the "
                f"coherence by {abs(coarse[0] - coherences[0]):.2e} (> 1e-6)"
            )
    if field.phase_averaged:
        return coherences.reshape(n_draws, n_avg).mean(axis=1)
    return coherences


def classical_coherence(
    plan: SequencePlan,
    phases: np.ndarray | None,
    errors: ErrorModel,
    field: ClassicalField,
    substeps_per_pulse: int = 64,
    check_convergence: bool = True,
) -> complex:
    """Final qubit coherence under a classical AC field (phase-averaged if requested)."""
    if phases is None:
        phases = np.zeros(plan.repetitions)
    return complex(
        classical_coherences(
            plan, np.asarray(phases, dtype=float)[None, :], errors, field,
            substeps_per_pulse, check_convergence,
        )[0]
    )


def classical_signal(
    plan: SequencePlan,
    phases: np.ndarray | None,
    errors: ErrorModel,
    field: ClassicalField,
    substeps_per_pulse: int = 64,
) -> float:
    """Population after pi/2 -- plan -- pi/2 sensing a classical AC field."""
    coherence = classical_coherence(plan, phases, errors, field, substeps_per_pulse)
    return _population_from_coherence(coherence, plan.readout_basis)


# ---------------------------------------------------------------------------
# Error accumulation analysis (faulty-pulse model)

def unit_offdiagonal_analysis(
    unit: PulseUnit,
    epsilons: tuple[float, ...] = (1e-4, 1e-3, 1e-2),
    mode: str = "standard",
    m_max: int = 20,
    draws: int = 2000,
    seed: int = 0,
) -> list[ErrorAccumulationReport]:
    """Growth of |<0|U|1>| with the repetition count M for faulty pulses.

    standard mode raises the unit propagator to successive powers and fits the
    through-origin slope (the |C| epsilon estimate).  randomized mode reports
    the ensemble RMS off-diagonal over random global-phase draws, whose square
    should grow as M (|C| epsilon)^2 instead of M^2.
    """
    if mode not in ("standard", "randomized"):
        raise ValueError("mode must be 'standard' or 'randomized'")
    reports = []
    for eps in epsilons:
        params = FaultyPulseParams(epsilon=eps)
        if mode == "standard":
            u_unit = unit_faulty_propagator(unit, params)
            u = ID2.copy()
            magnitudes = []
            for m in range(1, m_max + 1):
                u = u_unit @ u
                magnitudes.append((m, float(abs(u[0, 1]))))
        else:
            phases = rng.generator(seed, 0).random((draws, m_max)) * 2.0 * math.pi
            u = np.broadcast_to(ID2, (draws, 2, 2)).copy()
            base = unit_faulty_propagator(unit, params)
            magnitudes = []
            for m in range(m_max):
                phi = phases[:, m]
                d = np.exp(-1j * 0.5 * phi)
                u_m = np.empty((draws, 2, 2), dtype=complex)
                u_m[:, 0, 0] = base[0, 0]
                u_m[:, 1, 1] = base[1, 1]
                u_m[:, 0, 1] = base[0, 1] * (d * d)
                u_m[:, 1, 0] = base[1, 0] * (d * d).conj()
                u = u_m @ u
                mean_sq = float(np.mean(np.abs(u[:, 0, 1]) ** 2))
                magnitudes.append((m + 1, math.sqrt(mean_sq)))
        ms = np.array([m for m, _ in magnitudes], dtype=float)
        ys = np.array([y for _, y in magnitudes])
        if mode == "standard":
            slope = float(np.sum(ms * ys) / np.sum(ms * ms))
        else:
            slope = math.sqrt(max(float(np.sum(ms * ys**2) / np.sum(ms * ms)), 0.0))
        reports.append(
            ErrorAccumulationReport(
                epsilon=eps, mode=mode, magnitudes=tuple(magnitudes), fitted_prefactor=slope
            )
        )
    return reports
