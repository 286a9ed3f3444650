"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numbers

from .case import NetworkCase, load_case, validate_radial


def check_case(case, require_radial: bool = True) -> NetworkCase:
    """Return a :class:`NetworkCase` from a case object or a case source string.

    Strings are resolved with :func:`~radial_dg.case.load_case`
    (``builtin:ieee33`` or a file path).
    """
    if isinstance(case, str):
        case = load_case(case)
    if not isinstance(case, NetworkCase):
        raise TypeError(f"expected a NetworkCase or case source string, got {type(case).__name__}")
    if require_radial:
        report = validate_radial(case)
        if not report.ok:
            what = "disconnected" if not report.connected else "not a tree"
            raise ValueError(f"case '{case.name}' is {what}; a radial feeder is required")
    return case


def check_positive(value, name: str, integer: bool = False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind) or value <= 0:
        raise ValueError(f"{name} must be a positive {'integer' if integer else 'number'}, "
                         f"got {value!r}")
    return value


def check_band(bounds, name: str = "v_bounds") -> tuple[float, float]:
    lo, hi = (float(v) for v in bounds)
    if not 0 < lo < hi:
        raise ValueError(f"{name} must satisfy 0 < min < max, got {bounds!r}")
    return lo, hi
