"""Parsing and formatting of unit-suffixed literals.

All quantities used in sequence files and run configs are written with an
explicit unit suffix ("200ns", "2pi*5kHz", "0.5pi", "450G").  Angular
frequencies must be spelled with a "2pi*" prefix or a "rad/s" suffix; a bare
"5kHz" is rejected for angular quantities so that rad/s and Hz can never be
confused silently.
"""

from __future__ import annotations

import math
import re

__all__ = [
    "UnitError",
    "parse_duration",
    "parse_frequency",
    "parse_angular_frequency",
    "parse_angle",
    "parse_field_gauss",
    "parse_float",
    "format_duration",
    "format_angle",
    "format_angular_frequency",
]


class UnitError(ValueError):
    """Raised when a unit-suffixed literal cannot be parsed."""


_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_NUMBER_RE = re.compile(_NUMBER)

_TIME_SUFFIXES = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12}
_FREQ_SUFFIXES = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9}

_DURATION_RE = re.compile(rf"^({_NUMBER})\s*(s|ms|us|ns|ps)?$")
_FREQ_RE = re.compile(rf"^({_NUMBER})\s*(Hz|kHz|MHz|GHz)?$")
_ANGULAR_RE = re.compile(rf"^2pi\*({_NUMBER})\s*(Hz|kHz|MHz|GHz)?$")
_RADS_RE = re.compile(rf"^({_NUMBER})\s*rad/s$")
_ANGLE_PI_RE = re.compile(rf"^({_NUMBER})?\s*pi$")
_ANGLE_RE = re.compile(rf"^({_NUMBER})\s*(rad|deg)?$")
_GAUSS_RE = re.compile(rf"^({_NUMBER})\s*G$")


def _clean(text: str) -> str:
    return text.strip()


def parse_float(text: str) -> float:
    """Parse a plain number with no unit suffix."""
    t = _clean(text)
    if not _NUMBER_RE.fullmatch(t):
        raise UnitError(f"expected a number, got {text!r}")
    return float(t)


def parse_duration(text: str) -> float:
    """Parse a time literal into seconds.  Accepts s, ms, us, ns, ps; bare numbers are seconds."""
    m = _DURATION_RE.match(_clean(text))
    if not m:
        raise UnitError(f"bad duration literal {text!r} (expected e.g. '200ns', '1.5us')")
    value = float(m.group(1))
    suffix = m.group(2) or "s"
    return value * _TIME_SUFFIXES[suffix]


def parse_frequency(text: str) -> float:
    """Parse an ordinary (cyclic) frequency literal into Hz."""
    m = _FREQ_RE.match(_clean(text))
    if not m:
        raise UnitError(f"bad frequency literal {text!r} (expected e.g. '1.9MHz')")
    value = float(m.group(1))
    suffix = m.group(2) or "Hz"
    return value * _FREQ_SUFFIXES[suffix]


def parse_angular_frequency(text: str) -> float:
    """Parse an angular frequency literal into rad/s.

    Only the explicit forms '2pi*<f><Hz suffix>' and '<x>rad/s' are accepted;
    a bare Hz value is an error so callers can never mix up the two
    conventions.
    """
    t = _clean(text)
    m = _ANGULAR_RE.match(t)
    if m:
        suffix = m.group(2) or "Hz"
        return 2.0 * math.pi * float(m.group(1)) * _FREQ_SUFFIXES[suffix]
    m = _RADS_RE.match(t)
    if m:
        return float(m.group(1))
    raise UnitError(
        f"bad angular frequency literal {text!r} "
        "(write '2pi*5kHz' or '31416rad/s'; bare Hz is ambiguous here)"
    )


def parse_angle(text: str) -> float:
    """Parse an angle literal into radians.  Accepts 'pi', '0.5pi', '90deg', '1.2rad', bare radians."""
    t = _clean(text)
    m = _ANGLE_PI_RE.match(t)
    if m:
        factor = float(m.group(1)) if m.group(1) else 1.0
        return factor * math.pi
    m = _ANGLE_RE.match(t)
    if m:
        value = float(m.group(1))
        if m.group(2) == "deg":
            return math.radians(value)
        return value
    raise UnitError(f"bad angle literal {text!r} (expected e.g. '0.5pi', '90deg', '1.2rad')")


def parse_field_gauss(text: str) -> float:
    """Parse a magnetic field literal into Gauss."""
    m = _GAUSS_RE.match(_clean(text))
    if not m:
        raise UnitError(f"bad field literal {text!r} (expected e.g. '450G')")
    return float(m.group(1))


def format_duration(seconds: float) -> str:
    """Canonical duration text.  Prefers 'us'/'ns' when the scaling is lossless."""
    for suffix in ("us", "ns"):
        scale = _TIME_SUFFIXES[suffix]
        scaled = seconds / scale
        if scaled * scale == seconds and abs(scaled) < 1e6:
            return f"{scaled:.17g}{suffix}"
    return f"{seconds:.17g}s"


def format_angle(radians: float) -> str:
    """Canonical angle text.  Uses a pi multiple when that is exactly representable."""
    multiple = radians / math.pi
    if multiple * math.pi == radians:
        return f"{multiple:.17g}pi"
    return f"{radians:.17g}rad"


def format_angular_frequency(rad_per_s: float) -> str:
    """Canonical angular frequency text ('2pi*...Hz' when lossless, else 'rad/s')."""
    cyclic = rad_per_s / (2.0 * math.pi)
    if cyclic * 2.0 * math.pi == rad_per_s:
        return f"2pi*{cyclic:.17g}Hz"
    return f"{rad_per_s:.17g}rad/s"
