"""Pulse units, sequence plans, built-in DD families, and the phase randomisation transform.

A :class:`PulseUnit` is the basic repeated block of a decoupling sequence: an
ordered train of finite-width pi pulses inside a window of duration T.  A
:class:`SequencePlan` repeats a unit M times, either verbatim (standard mode)
or with an independent uniform random global phase added to all pulses of each
repetition (randomized mode).

All types are immutable; phase draws are pure functions of
(seed, realization, unit index), so plans can be shared freely across workers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from importlib import resources
from typing import Union

import numpy as np

from . import rng

__all__ = [
    "Pulse",
    "PulseUnit",
    "Standard",
    "Randomized",
    "PhaseMode",
    "SequencePlan",
    "UnitReport",
    "SequenceError",
    "build_named_unit",
    "validate_unit",
    "draw_unit_phases",
    "apply_global_phase",
    "available_families",
    "family_table",
]

TWO_PI = 2.0 * math.pi

# Relative slack for floating-point timing comparisons.
_TIMING_RTOL = 1e-9


class SequenceError(ValueError):
    """Raised for malformed pulse units or plans."""


@dataclass(frozen=True)
class Pulse:
    """One rectangular pi pulse: centre time, drive phase, Rabi frequency.

    The width is not stored separately: duration = nominal_angle / Omega, and
    rabi_frequency = 0 encodes the instantaneous-pulse limit (duration 0).
    """

    center_time: float
    phase: float
    rabi_frequency: float
    nominal_angle: float = math.pi

    def __post_init__(self) -> None:
        if self.rabi_frequency < 0:
            raise SequenceError("rabi_frequency must be >= 0")
        if self.nominal_angle <= 0:
            raise SequenceError("nominal_angle must be positive")

    @property
    def duration(self) -> float:
        if self.rabi_frequency == 0.0:
            return 0.0
        return self.nominal_angle / self.rabi_frequency

    @property
    def start(self) -> float:
        return self.center_time - 0.5 * self.duration

    @property
    def end(self) -> float:
        return self.center_time + 0.5 * self.duration


@dataclass(frozen=True)
class PulseUnit:
    """Basic DD block: N ordered, non-overlapping pulses within [0, T]."""

    name: str
    duration: float
    pulses: tuple[Pulse, ...]

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise SequenceError("unit duration must be positive")
        if len(self.pulses) < 1:
            raise SequenceError("unit needs at least one pulse")
        object.__setattr__(self, "pulses", tuple(self.pulses))
        slack = _TIMING_RTOL * self.duration
        previous_end = 0.0
        previous_center = -math.inf
        for pulse in self.pulses:
            if pulse.center_time <= previous_center:
                raise SequenceError("pulses must be strictly ordered by center_time")
            if pulse.start < -slack or pulse.end > self.duration + slack:
                raise SequenceError(
                    f"pulse at t={pulse.center_time} extends outside [0, {self.duration}]"
                )
            if pulse.start < previous_end - slack:
                raise SequenceError(f"pulse at t={pulse.center_time} overlaps its predecessor")
            previous_end = pulse.end
            previous_center = pulse.center_time

    @property
    def pulse_count(self) -> int:
        return len(self.pulses)


@dataclass(frozen=True)
class Standard:
    """Repeat the unit verbatim: every per-unit global phase is exactly zero."""


@dataclass(frozen=True)
class Randomized:
    """Independent uniform global phase per repetition, over K reproducible realizations."""

    seed: int
    realizations: int = 1

    def __post_init__(self) -> None:
        if self.realizations < 1:
            raise SequenceError("realizations must be >= 1")


PhaseMode = Union[Standard, Randomized]


@dataclass(frozen=True)
class SequencePlan:
    """M repetitions of a unit plus the phase mode and readout basis."""

    unit: PulseUnit
    repetitions: int
    phase_mode: PhaseMode = Standard()
    readout_basis: str = "x"

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise SequenceError("repetitions must be >= 1")
        if self.readout_basis not in ("x", "minus_x"):
            raise SequenceError(f"unknown readout basis {self.readout_basis!r}")

    @property
    def total_time(self) -> float:
        return self.repetitions * self.unit.duration


@dataclass(frozen=True)
class UnitReport:
    """validate_unit output: balance residual and any structural violations."""

    balanced: bool
    balance_residual: float
    tolerance: float
    overlap_violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.balanced and not self.overlap_violations


def validate_unit(unit: PulseUnit) -> UnitReport:
    """Check the alternating-interval balance condition and pulse overlaps.

    A unit refocuses static dephasing when sum_j (-1)^j (t_{j+1} - t_j) = 0
    with t_0 = 0 and t_{N+1} = T; the residual is reported against a
    tolerance of 1e-12 * T.
    """
    times = [0.0] + [p.center_time for p in unit.pulses] + [unit.duration]
    residual = 0.0
    for j in range(len(times) - 1):
        residual += (-1.0) ** j * (times[j + 1] - times[j])
    tolerance = 1e-12 * unit.duration

    violations = []
    previous_end = 0.0
    for p in unit.pulses:
        if p.start < previous_end - _TIMING_RTOL * unit.duration:
            violations.append(f"pulse at t={p.center_time} overlaps its predecessor")
        previous_end = p.end
    return UnitReport(
        balanced=abs(residual) <= tolerance,
        balance_residual=residual,
        tolerance=tolerance,
        overlap_violations=tuple(violations),
    )


def apply_global_phase(unit: PulseUnit, phi: float) -> PulseUnit:
    """Shift every pulse phase by phi (mod 2pi); timings are untouched."""
    shifted = tuple(replace(p, phase=(p.phase + phi) % TWO_PI) for p in unit.pulses)
    return replace(unit, pulses=shifted)


def draw_unit_phases(plan: SequencePlan, realization_index: int = 0) -> np.ndarray:
    """Per-unit global phases Phi_{r,m} for one realization of the plan.

    Standard mode returns all zeros.  Randomized mode returns M values i.i.d.
    uniform on [0, 2pi), derived counter-based from (seed, realization, m) so
    any element is reproducible in isolation (see :mod:`ddsense.rng`).
    """
    mode = plan.phase_mode
    if isinstance(mode, Standard):
        return np.zeros(plan.repetitions)
    if not 0 <= realization_index < mode.realizations:
        raise SequenceError(
            f"realization_index {realization_index} outside [0, {mode.realizations})"
        )
    return rng.unit_phases(mode.seed, realization_index, plan.repetitions)


# ---------------------------------------------------------------------------
# Built-in families

_FAMILY_RE = re.compile(r"^(xy4|xy8|xy16|yy8)$|^cpmg-?(\d+)$|^ur-?(\d+)$", re.IGNORECASE)


def _data_text(filename: str) -> str:
    ref = resources.files("ddsense").joinpath("data", filename)
    if not ref.is_file():
        raise SequenceError(
            f"phase table {filename} is not shipped; refusing to guess pulse phases"
        )
    return ref.read_text(encoding="utf-8")


_TABLE_CACHE: dict[str, dict] = {}


def family_table(name: str) -> dict:
    """Load a shipped phase table: {name, n, phases (rad), source}."""
    key = name.lower()
    if key in _TABLE_CACHE:
        return _TABLE_CACHE[key]
    fields: dict[str, str] = {}
    for line in _data_text(f"{key}.tab").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tag, _, rest = line.partition(" ")
        fields[tag] = rest.strip()
    try:
        n = int(fields["n"])
        phases = tuple(float(x) * math.pi for x in fields["phases_pi"].split())
        source = fields["source"]
    except (KeyError, ValueError) as exc:
        raise SequenceError(f"malformed phase table {key}.tab: {exc}") from exc
    if len(phases) != n:
        raise SequenceError(f"phase table {key}.tab lists {len(phases)} phases, header says {n}")
    table = {"name": key, "n": n, "phases": phases, "source": source}
    _TABLE_CACHE[key] = table
    return table


def available_families() -> tuple[str, ...]:
    """Names accepted by build_named_unit (CPMG-n for any n >= 1)."""
    shipped = sorted(
        p.name[: -len(".tab")]
        for p in resources.files("ddsense").joinpath("data").iterdir()
        if p.name.endswith(".tab") and not p.name.startswith("gyromagnetic")
    )
    return tuple(shipped) + ("cpmg-n",)


def _family_phases(family: str) -> tuple[str, tuple[float, ...]]:
    m = _FAMILY_RE.match(family.strip())
    if not m:
        raise SequenceError(f"unknown sequence family {family!r}")
    if m.group(1):
        key = m.group(1).lower()
        return key, family_table(key)["phases"]
    if m.group(2):
        n = int(m.group(2))
        if n < 1:
            raise SequenceError("cpmg pulse count must be >= 1")
        return f"cpmg-{n}", (math.pi / 2,) * n
    n = int(m.group(3))
    return f"ur{n}", family_table(f"ur{n}")["phases"]


def build_named_unit(
    family: str,
    tau: float,
    pulse_duration: float,
    rabi: float | None = None,
) -> PulseUnit:
    """Construct a built-in unit at centre-to-centre spacing tau.

    Pulse j is centred at (j - 1/2) * tau and the unit lasts T = N * tau,
    which keeps every built-in family balanced.  pulse_duration = 0 selects
    the instantaneous-pulse limit; otherwise the Rabi frequency must satisfy
    rabi = pi / pulse_duration (it is derived when omitted).
    """
    name, phases = _family_phases(family)
    if tau <= 0:
        raise SequenceError("tau must be positive")
    if pulse_duration < 0:
        raise SequenceError("pulse_duration must be >= 0")
    if pulse_duration >= tau:
        raise SequenceError(
            f"pulse_duration {pulse_duration} >= tau {tau}: pulses would overlap"
        )
    if pulse_duration == 0.0:
        if rabi not in (None, 0.0):
            raise SequenceError("instantaneous pulses take rabi=0")
        rabi_frequency = 0.0
    elif rabi is None:
        rabi_frequency = math.pi / pulse_duration
    else:
        rabi_frequency = rabi
        if not math.isclose(rabi * pulse_duration, math.pi, rel_tol=_TIMING_RTOL):
            raise SequenceError(
                f"rabi * pulse_duration = {rabi * pulse_duration} is not a pi rotation"
            )
    n = len(phases)
    pulses = tuple(
        Pulse(
            center_time=(j + 0.5) * tau,
            phase=phases[j] % TWO_PI,
            rabi_frequency=rabi_frequency,
        )
        for j in range(n)
    )
    return PulseUnit(name=name, duration=n * tau, pulses=pulses)
