import logging
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from intervals import TRUE, UNKNOWN, Interval
from logic_lang import AtomKey, Entity

logger = logging.getLogger(__name__)

# Правила игры "42"
GAME_LIMIT = 42
SUITS = ('clubs', 'diamonds', 'hearts', 'spades')
RANKS = ('ace', 'two', 'three', 'four', 'five', 'six', 'seven', 'eight', 'nine', 'ten',
         'jack', 'queen', 'king')
FACE_RANKS = ('jack', 'queen', 'king')
CARD_DIGITS = (3, 6, 9)
# Порог, с которого карта считается установленной
CARD_PRESENT = 0.3

PLAYER_HOLDS = 'player_holds'
DECK_HOLDS = 'deck_holds'


class AnnotationError(ValueError):
    """Базовая ошибка функций аннотаций"""


class DuplicateName(AnnotationError):
    """Функция с таким именем уже зарегистрирована"""


class UnknownAnnotationFunction(AnnotationError):
    """Правило ссылается на незарегистрированную функцию"""


class MalformedCardValue(AnnotationError):
    """Нижняя граница player_holds не кодирует очки карты"""


@dataclass(frozen=True)
class AnnotationContext:
    """Вход функции аннотации: границы тела и снимок интерпретации"""
    body_annotations: Sequence[Interval]
    snapshot: Mapping[AtomKey, Interval]
    head: Entity
    arrival_order: Sequence[AtomKey] = ()
    body_atoms: Sequence[AtomKey] = ()


AnnotationFn = Callable[[AnnotationContext], Interval]


class AnnotationRegistry:
    """Реестр функций, на которые ссылаются головы правил"""

    def __init__(self):
        self._functions: Dict[str, AnnotationFn] = {}

    def register(self, name: str, fn: AnnotationFn):
        if name in self._functions:
            raise DuplicateName(f"Функция аннотации '{name}' уже зарегистрирована")
        self._functions[name] = fn

    def resolve(self, name: str) -> AnnotationFn:
        try:
            return self._functions[name]
        except KeyError:
            raise UnknownAnnotationFunction(f"Функция аннотации '{name}' не зарегистрирована")

    def __contains__(self, name: str) -> bool:
        return name in self._functions

    def names(self) -> List[str]:
        return sorted(self._functions)


# T-НОРМЫ

def _bounds(ctx: AnnotationContext) -> Tuple[np.ndarray, np.ndarray]:
    if not ctx.body_annotations:
        raise AnnotationError("Функция аннотации вызвана без границ тела")
    lowers = np.array([a.lower for a in ctx.body_annotations], dtype=float)
    uppers = np.array([a.upper for a in ctx.body_annotations], dtype=float)
    return lowers, uppers


def tnorm_min(ctx: AnnotationContext) -> Interval:
    lowers, uppers = _bounds(ctx)
    return Interval(float(np.min(lowers)), float(np.min(uppers)))


def tnorm_product(ctx: AnnotationContext) -> Interval:
    lowers, uppers = _bounds(ctx)
    return Interval(float(np.prod(lowers)), float(np.prod(uppers)))


def tconorm_max(ctx: AnnotationContext) -> Interval:
    lowers, uppers = _bounds(ctx)
    return Interval(float(np.max(lowers)), float(np.max(uppers)))


def lukasiewicz(ctx: AnnotationContext) -> Interval:
    lowers, uppers = _bounds(ctx)
    n = len(lowers)
    return Interval(float(np.maximum(np.sum(lowers) - (n - 1), 0.0)),
                    float(np.maximum(np.sum(uppers) - (n - 1), 0.0)))


# КАРТОЧНАЯ ИГРА

def card_name(rank: str, suit: str) -> str:
    return f"{rank}_{suit}"


def full_deck() -> List[str]:
    """52 карты в порядке мастей и достоинств"""
    return [card_name(rank, suit) for suit in SUITS for rank in RANKS]


def card_points(name: str) -> int:
    """Очки карты: туз 3, числовые 6, картинки 9"""
    rank, _, suit = name.partition('_')
    if suit not in SUITS or rank not in RANKS:
        raise MalformedCardValue(f"Неизвестная карта: {name}")
    if rank == 'ace':
        return 3
    if rank in FACE_RANKS:
        return 9
    return 6


def card_value(name: str) -> Interval:
    """Аннотация player_holds для карты: [очки/10, 1]"""
    return Interval(card_points(name) / 10, 1.0)


@dataclass(frozen=True)
class HandEncoding:
    """Рука как десятичная дробь 0.d1d2...dn"""
    digits: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for digit in self.digits:
            if digit not in CARD_DIGITS:
                raise MalformedCardValue(f"Цифра руки {digit} не входит в {CARD_DIGITS}")

    @property
    def lower(self) -> Decimal:
        if not self.digits:
            return Decimal(0)
        return Decimal('0.' + ''.join(str(d) for d in self.digits))

    def interval(self) -> Interval:
        return Interval(float(self.lower), 1.0) if self.digits else UNKNOWN


def decode_hand(h: HandEncoding) -> int:
    return sum(h.digits)


def _card_digit(lower: float) -> int:
    digit = int((Decimal(repr(lower)) * 10).to_integral_value())
    if digit not in CARD_DIGITS or abs(lower * 10 - digit) > 1e-9:
        raise MalformedCardValue(f"Нижняя граница player_holds {lower} не кодирует карту")
    return digit


def hand_from_context(ctx: AnnotationContext) -> HandEncoding:
    """Рука по порядку появления установленных player_holds"""
    digits = []
    for key in ctx.arrival_order:
        if key[1] != PLAYER_HOLDS:
            continue
        bound = ctx.snapshot.get(key)
        if bound is not None and bound.lower >= CARD_PRESENT:
            digits.append(_card_digit(bound.lower))
    return HandEncoding(tuple(digits))


def append_hand(ctx: AnnotationContext) -> Interval:
    return hand_from_context(ctx).interval()


def odds_fraction(total: int, remaining: Iterable[str], limit: int = GAME_LIMIT) -> Fraction:
    """Доля оставшихся карт, после которых сумма превысит лимит"""
    remaining = list(remaining)
    if not remaining:
        return Fraction(1)
    risky = sum(1 for card in remaining if total + card_points(card) > limit)
    return Fraction(risky, len(remaining))


def remaining_cards(ctx: AnnotationContext) -> List[str]:
    """Карты колоды, чей deck_holds не ниже порога"""
    cards = []
    for key, bound in zip(ctx.body_atoms, ctx.body_annotations):
        entity, label = key
        if label == DECK_HOLDS and bound.lower >= CARD_PRESENT and isinstance(entity, tuple):
            cards.append(entity[0])
    return sorted(set(cards))


def odds_of_losing(ctx: AnnotationContext) -> Interval:
    total = decode_hand(hand_from_context(ctx))
    odds = odds_fraction(total, remaining_cards(ctx))
    if odds == 1:
        return TRUE
    return Interval(float(odds), 1.0)


def create_default_registry() -> AnnotationRegistry:
    """Реестр со стандартными функциями"""
    registry = AnnotationRegistry()
    for name, fn in (
        ('min_tnorm', tnorm_min),
        ('prod_tnorm', tnorm_product),
        ('max_tconorm', tconorm_max),
        ('lukasiewicz', lukasiewicz),
        ('append_hand', append_hand),
        ('odds_of_losing', odds_of_losing),
    ):
        registry.register(name, fn)
    return registry


def describe_registry(registry: Optional[AnnotationRegistry] = None) -> str:
    registry = registry or create_default_registry()
    return ', '.join(registry.names())
