import math
import re
from dataclasses import dataclass
from typing import Optional

# Погрешность, в пределах которой значения прижимаются к 0 или 1
_CLAMP_EPS = 1e-12

_INTERVAL_RE = re.compile(r'^\s*\[\s*([^,\]]+?)\s*,\s*([^,\]]+?)\s*\]\s*$')


class IntervalError(ValueError):
    """Базовая ошибка аннотаций"""


class OutOfRange(IntervalError):
    """Границы нарушают 0 <= lower <= upper <= 1"""


def _clamp(value: float) -> float:
    if abs(value) < _CLAMP_EPS:
        return 0.0
    if abs(value - 1.0) < _CLAMP_EPS:
        return 1.0
    return value


def _format_bound(value: float, trailing_zero: bool) -> str:
    text = f"{value:.9f}".rstrip('0')
    if text.endswith('.'):
        text = text + '0' if trailing_zero else text[:-1]
    return text


@dataclass(frozen=True)
class Interval:
    """Замкнутый подинтервал [0,1] - аннотация истинности атома"""
    lower: float
    upper: float

    def __post_init__(self):
        for value in (self.lower, self.upper):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise OutOfRange(f"Граница должна быть числом: {value!r}")
            if not math.isfinite(value):
                raise OutOfRange(f"Граница должна быть конечной: {value!r}")
        lower = _clamp(float(self.lower))
        upper = _clamp(float(self.upper))
        if not (0.0 <= lower <= upper <= 1.0):
            raise OutOfRange(f"Некорректный интервал [{self.lower}, {self.upper}]")
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    def __str__(self) -> str:
        return f"[{_format_bound(self.lower, False)},{_format_bound(self.upper, False)}]"

    def to_trace(self) -> str:
        """Форма для трассы: [0.0,1.0]"""
        return f"[{_format_bound(self.lower, True)},{_format_bound(self.upper, True)}]"

    def close_to(self, other: 'Interval', tol: float = 1e-9) -> bool:
        return abs(self.lower - other.lower) <= tol and abs(self.upper - other.upper) <= tol


UNKNOWN = Interval(0.0, 1.0)
TRUE = Interval(1.0, 1.0)
FALSE = Interval(0.0, 0.0)


def make(lower: float, upper: float) -> Interval:
    return Interval(lower, upper)


def parse_interval(text: str) -> Interval:
    """Разбор текстовой формы "[l,u]" """
    match = _INTERVAL_RE.match(text or '')
    if not match:
        raise OutOfRange(f"Не удалось разобрать интервал: {text!r}")
    try:
        lower, upper = float(match.group(1)), float(match.group(2))
    except ValueError:
        raise OutOfRange(f"Не удалось разобрать интервал: {text!r}")
    return Interval(lower, upper)


def negate(a: Interval) -> Interval:
    """Сильное отрицание: [l,u] -> [1-u, 1-l]"""
    return Interval(1.0 - a.upper, 1.0 - a.lower)


def is_subset(inner: Interval, outer: Interval) -> bool:
    return outer.lower <= inner.lower and inner.upper <= outer.upper


def intersect(a: Interval, b: Interval) -> Optional[Interval]:
    """Пересечение; None означает пустое множество"""
    lower = max(a.lower, b.lower)
    upper = min(a.upper, b.upper)
    if lower > upper:
        return None
    return Interval(lower, upper)
