import asyncio
import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from annotation_functions import AnnotationContext, AnnotationRegistry, create_default_registry
from graph_store import REL, KnowledgeGraph, TypeSchema, groundings, rel_annotation
from intervals import UNKNOWN, Interval, intersect, is_subset, negate, parse_interval
from logic_lang import AtomKey, Entity, Fact, Query, Rule

logger = logging.getLogger(__name__)

INCONSISTENCY_RESET = 'inconsistency-reset'
TRACE_HEADER = ('fpo', 'node', 'label', 'old_bound', 'new_bound', 'source')


class EngineError(ValueError):
    """Базовая ошибка движка вывода"""


class InconsistentFacts(EngineError):
    """Начальные факты противоречат друг другу"""


class HorizonExceeded(EngineError):
    """Попытка выйти за горизонт времени"""


class RetroactiveFact(EngineError):
    """Факт относится к уже прошедшему времени"""


class InconsistencyHalt(EngineError):
    """Движок остановлен политикой flag-and-halt"""

    def __init__(self, report: 'InconsistencyReport'):
        self.report = report
        super().__init__(report.describe())


class UpdateOutcome(Enum):
    CHANGED = 'changed'
    NO_CHANGE = 'no-change'
    INCONSISTENT = 'inconsistent'


class InconsistencyPolicy(Enum):
    HALT = 'halt'
    RESET = 'reset'


def format_entity(entity: Entity) -> str:
    return entity if isinstance(entity, str) else f"({entity[0]},{entity[1]})"


@dataclass(frozen=True)
class TraceEntry:
    """Одно изменение границы атома"""
    fpo: int
    entity: Entity
    label: str
    old_bound: Interval
    new_bound: Interval
    cause: str
    source: str
    time: int = 0
    support: Tuple[AtomKey, ...] = ()

    @property
    def key(self) -> AtomKey:
        return self.entity, self.label

    @property
    def is_edge(self) -> bool:
        return isinstance(self.entity, tuple)

    def row(self) -> Tuple[str, ...]:
        return (str(self.fpo), format_entity(self.entity), self.label,
                self.old_bound.to_trace(), self.new_bound.to_trace(), self.source)


@dataclass(frozen=True)
class InconsistencyReport:
    entity: Entity
    label: str
    old_bound: Interval
    new_bound: Interval
    time: int
    cause: str
    source: str

    def describe(self) -> str:
        return (f"Противоречие в {self.label}({format_entity(self.entity)}) при t={self.time}: "
                f"{self.old_bound} против {self.new_bound} (причина {self.cause}, источник {self.source})")


@dataclass
class EngineConfig:
    horizon: int = 64
    canonical: bool = True
    inconsistency_policy: InconsistencyPolicy = InconsistencyPolicy.RESET
    complement_pairs: List[Tuple[str, str]] = field(default_factory=list)
    max_passes: int = 1000

    def __post_init__(self):
        if isinstance(self.inconsistency_policy, str):
            self.inconsistency_policy = InconsistencyPolicy(self.inconsistency_policy)
        if self.horizon < 0:
            raise EngineError(f"Горизонт должен быть >= 0, получено {self.horizon}")
        if self.max_passes < 1:
            raise EngineError("max_passes должен быть положительным")
        self.complement_pairs = [tuple(pair) for pair in self.complement_pairs]


@dataclass(frozen=True)
class _Pending:
    """Голова правила, ожидающая своего момента времени"""
    rule_id: str
    key: AtomKey
    bound: Interval
    support: Tuple[AtomKey, ...]


class ReasoningEngine:
    """Интерпретация по времени, оператор неподвижной точки и трасса"""

    def __init__(self, graph: KnowledgeGraph, rules: Sequence[Rule], facts: Sequence[Fact],
                 config: Optional[EngineConfig] = None, registry: Optional[AnnotationRegistry] = None,
                 schema: Optional[TypeSchema] = None):
        self.graph = graph
        self.rules = list(rules)
        self.config = config or EngineConfig()
        self.registry = registry or create_default_registry()
        self.time = 0
        self.halted: Optional[InconsistencyReport] = None
        self.inconsistencies: List[InconsistencyReport] = []

        self._current: Dict[AtomKey, Interval] = {}
        self._history: Dict[int, Dict[AtomKey, Interval]] = {}
        self._static: Set[AtomKey] = set()
        self._arrivals: List[AtomKey] = []
        self._arrived: Set[AtomKey] = set()
        self._marks: Dict[AtomKey, Optional[Interval]] = {}
        self._pending_heads: Dict[int, List[_Pending]] = defaultdict(list)
        self._pending_facts: Dict[int, List[Fact]] = defaultdict(list)
        self._trace: List[TraceEntry] = []
        self._next_fpo = 0
        self._pass_fpo: Optional[int] = None
        # сброс шага без канонического режима: снятые атомы и повторные выводы Δt=0
        self._dropped: Set[AtomKey] = set()
        self._rederived: Set[Tuple[int, AtomKey]] = set()
        self._fresh_step = False

        for rule in self.rules:
            if rule.head_annotation.is_function:
                self.registry.resolve(rule.head_annotation.function_name)
        self._groundings = [self._group_groundings(rule, schema) for rule in self.rules]
        self._seed(facts)
        self.initial = dict(self._current)
        self.initial_static = set(self._static)

    # ИНИЦИАЛИЗАЦИЯ

    def _group_groundings(self, rule: Rule, schema: Optional[TypeSchema]):
        """Подстановки правила, сгруппированные по заземлённой голове"""
        grouped: Dict[AtomKey, List[Dict[str, str]]] = {}
        for sub in groundings(rule, self.graph, schema):
            grouped.setdefault(rule.head.ground(sub), []).append(sub)
        return list(grouped.items())

    def _seed(self, facts: Sequence[Fact]):
        for key, bound in self.graph.seed_atoms().items():
            self._set(key, bound)

        initial: Dict[AtomKey, Fact] = {}
        for fact in facts:
            self._check_fact(fact)
            if fact.static or fact.from_t == 0:
                previous = initial.get(fact.key)
                if previous is None or is_subset(fact.annotation, previous.annotation):
                    initial[fact.key] = fact
                elif not is_subset(previous.annotation, fact.annotation):
                    raise InconsistentFacts(
                        f"Факты {previous.id} и {fact.id} противоречат: "
                        f"{previous.annotation} и {fact.annotation}"
                    )
            self._register_window(fact)

        for key, fact in initial.items():
            if fact.annotation != UNKNOWN or key in self._current:
                self._set(key, fact.annotation)
            if fact.static:
                self._static.add(key)
        # Факты t=0 уже применены
        self._pending_facts.pop(0, None)

    def _check_fact(self, fact: Fact):
        if not fact.atom.is_ground():
            raise EngineError(f"Факт {fact.id} содержит переменные")
        if not fact.static and fact.from_t > self.config.horizon:
            raise HorizonExceeded(f"Окно факта {fact.id} начинается за горизонтом {self.config.horizon}")

    def _register_window(self, fact: Fact):
        if fact.static:
            return
        start = max(fact.from_t, self.time)
        end = min(fact.to_t, self.config.horizon)
        for t in range(start, end + 1):
            self._pending_facts[t].append(fact)

    # ХРАНИЛИЩЕ

    def _set(self, key: AtomKey, bound: Interval):
        if key not in self._marks:
            self._marks[key] = self._current.get(key)
        self._current[key] = bound
        if key not in self._arrived:
            self._arrived.add(key)
            self._arrivals.append(key)

    def _record(self, key: AtomKey, old: Interval, new: Interval, cause: str, source: str,
                support: Tuple[AtomKey, ...] = ()) -> TraceEntry:
        if self._pass_fpo is None:
            self._pass_fpo = self._next_fpo
            self._next_fpo += 1
        entry = TraceEntry(self._pass_fpo, key[0], key[1], old, new, cause, source, self.time, support)
        self._trace.append(entry)
        return entry

    def _begin_pass(self):
        self._pass_fpo = None

    def bound(self, entity: Entity, label: str, t: Optional[int] = None) -> Optional[Interval]:
        """Сохранённая граница или None, если атом неизвестен"""
        if t is None or t == self.time:
            return self._current.get((entity, label))
        if t < self.time:
            return self._history.get(t, {}).get((entity, label))
        return None

    def interpretation(self, t: Optional[int] = None) -> Dict[AtomKey, Interval]:
        if t is None or t == self.time:
            return dict(self._current)
        return dict(self._history.get(t, {}))

    def is_static(self, entity: Entity, label: str) -> bool:
        return (entity, label) in self._static

    @property
    def static_keys(self) -> Set[AtomKey]:
        return set(self._static)

    @property
    def arrival_order(self) -> List[AtomKey]:
        return list(self._arrivals)

    def has_pending(self) -> bool:
        """Есть ли отложенные головы правил на будущее время"""
        return any(t > self.time and items for t, items in self._pending_heads.items())

    # ОБНОВЛЕНИЕ

    def update(self, entity: Entity, label: str, new: Interval, cause: str, source: str,
               *, fired: bool = False, override: bool = False,
               support: Tuple[AtomKey, ...] = ()) -> UpdateOutcome:
        """Применение новой границы к атому"""
        key = (entity, label)
        if key in self._static:
            return UpdateOutcome.NO_CHANGE
        current = self._current.get(key)
        old = current or UNKNOWN

        if current is None and new == UNKNOWN:
            if not fired:
                return UpdateOutcome.NO_CHANGE
            self._set(key, new)
            self._record(key, old, new, cause, source, support)
            return UpdateOutcome.CHANGED

        if current is not None and new == current:
            if fired:
                self._record(key, old, new, cause, source, support)
            return UpdateOutcome.NO_CHANGE

        if not override and not is_subset(new, old):
            if is_subset(old, new):
                return UpdateOutcome.NO_CHANGE
            return self._inconsistent(key, old, new, cause, source)

        conflict = self._complement_conflict(key, new)
        if conflict is not None:
            return self._inconsistent(key, old, new, cause, source)

        self._set(key, new)
        self._record(key, old, new, cause, source, support)
        return UpdateOutcome.CHANGED

    def _complement_conflict(self, key: AtomKey, new: Interval) -> Optional[AtomKey]:
        entity, label = key
        for p, q in self.config.complement_pairs:
            other_label = q if label == p else p if label == q else None
            if other_label is None:
                continue
            other = self._current.get((entity, other_label))
            if other is not None and intersect(negate(new), other) is None:
                return entity, other_label
        return None

    def _inconsistent(self, key: AtomKey, old: Interval, new: Interval,
                      cause: str, source: str) -> UpdateOutcome:
        report = InconsistencyReport(key[0], key[1], old, new, self.time, cause, source)
        self.inconsistencies.append(report)
        logger.warning(f"⚠️ {report.describe()}")
        if self.config.inconsistency_policy == InconsistencyPolicy.HALT:
            self.halted = report
            logger.error(f"❌ Вывод остановлен: {report.describe()}")
            raise InconsistencyHalt(report)
        self.resolve_inconsistency(key[0], key[1], source)
        return UpdateOutcome.INCONSISTENT

    def resolve_inconsistency(self, entity: Entity, label: str, source: str = 'engine'):
        """Сброс атома в [0,1] и пометка статическим"""
        key = (entity, label)
        old = self._current.get(key) or UNKNOWN
        self._set(key, UNKNOWN)
        self._static.add(key)
        self._record(key, old, UNKNOWN, INCONSISTENCY_RESET, source)

    # ОПЕРАТОР НЕПОДВИЖНОЙ ТОЧКИ

    def _check_running(self):
        if self.halted is not None:
            raise InconsistencyHalt(self.halted)

    def fixpoint_step(self, t: Optional[int] = None, source: str = 'engine') -> List[TraceEntry]:
        """Вывод до неподвижной точки в текущий момент времени"""
        return self._recompute([], source, t)

    def inject_and_recompute(self, facts: Iterable[Fact], source: str) -> List[TraceEntry]:
        """Внедрение внешних фактов и пересчёт"""
        self._check_running()
        now: List[Fact] = []
        for fact in facts:
            self._check_fact(fact)
            if not fact.static and fact.to_t < self.time:
                raise RetroactiveFact(
                    f"Факт {fact.id} с окном [{fact.from_t},{fact.to_t}] относится к прошлому (t={self.time})"
                )
            if fact.static or fact.from_t <= self.time:
                now.append(fact)
            if not fact.static and fact.to_t > self.time:
                future = Fact(fact.atom, fact.annotation, max(fact.from_t, self.time + 1), fact.to_t,
                              False, fact.override, fact.id)
                self._register_window(future)
        return self._recompute(now, source)

    def _recompute(self, injected: List[Fact], source: str, t: Optional[int] = None) -> List[TraceEntry]:
        self._check_running()
        if t is not None and t != self.time:
            raise EngineError(f"Вывод возможен только в текущий момент t={self.time}, запрошено t={t}")
        start = len(self._trace)

        # Первый проход: отложенные головы, затем факты окна, затем внешние факты
        self._begin_pass()
        for pending in self._pending_heads.pop(self.time, []):
            self.update(pending.key[0], pending.key[1], pending.bound, pending.rule_id, source,
                        fired=True, support=pending.support)
        for fact in self._pending_facts.pop(self.time, []) + injected:
            self.update(fact.key[0], fact.key[1], fact.annotation, fact.id, source, override=fact.override)
            if fact.static:
                self._static.add(fact.key)

        passes = 0
        while self._rule_pass(source):
            passes += 1
            if passes >= self.config.max_passes:
                logger.warning(f"⚠️ Достигнут предел {self.config.max_passes} проходов при t={self.time}")
                break
        entries = self._trace[start:]
        logger.debug(f"Неподвижная точка при t={self.time}: {len(entries)} изменений, {passes} проходов")
        return entries

    def _literal_value(self, key: AtomKey, predicate: str) -> Optional[Interval]:
        if predicate == REL:
            a, b = key[0]
            return rel_annotation(a, b, self.graph)
        return self._current.get(key)

    def _rule_pass(self, source: str) -> bool:
        """Один проход правил по снимку; True, если хоть одно правило сработало"""
        delta = {key for key, before in self._marks.items() if self._current.get(key) != before}
        self._marks.clear()
        if self._fresh_step:
            # статические атомы пережили сброс и заново питают правила нового шага
            delta |= {key for key in self._static if key in self._current}
            self._fresh_step = False
        if not delta and not self._dropped:
            return False

        self._begin_pass()
        snapshot = MappingProxyType(self._current)
        immediate: List[_Pending] = []
        fired = False
        for index, (rule, grouped) in enumerate(zip(self.rules, self._groundings)):
            for head_key, subs in grouped:
                annotations: List[Interval] = []
                atoms: List[AtomKey] = []
                for sub in subs:
                    values = []
                    for literal in rule.body:
                        key = literal.atom.ground(sub)
                        value = self._literal_value(key, literal.atom.predicate)
                        if value is None:
                            break
                        effective = negate(value) if literal.negated else value
                        if not (effective.lower >= literal.threshold.lower
                                and effective.upper <= literal.threshold.upper):
                            break
                        values.append((key, value, literal.atom.predicate))
                    else:
                        for key, value, predicate in values:
                            atoms.append(key)
                            annotations.append(value)
                if not atoms:
                    continue
                support = tuple(dict.fromkeys(k for k in atoms if k[1] != REL))
                if not any(k in delta for k in support):
                    if not self._rederive(index, rule, head_key):
                        continue

                spec = rule.head_annotation
                if spec.is_function:
                    ctx = AnnotationContext(tuple(annotations), snapshot, head_key[0],
                                            tuple(self._arrivals), tuple(atoms))
                    bound = self.registry.resolve(spec.function_name)(ctx)
                else:
                    bound = spec.interval
                fired = True
                if rule.delta_t == 0 and head_key in self._dropped:
                    self._rederived.add((index, head_key))
                pending = _Pending(rule.id, head_key, bound, support)
                if rule.delta_t == 0:
                    immediate.append(pending)
                else:
                    self._schedule(self.time + rule.delta_t, pending)

        for pending in immediate:
            self.update(pending.key[0], pending.key[1], pending.bound, pending.rule_id, source,
                        fired=True, support=pending.support)
        return fired

    def _rederive(self, index: int, rule: Rule, head_key: AtomKey) -> bool:
        """Голова Δt=0, снятая сбросом шага, выводится заново один раз за шаг"""
        if rule.delta_t != 0 or head_key not in self._dropped:
            return False
        return (index, head_key) not in self._rederived

    def _schedule(self, t: int, pending: _Pending):
        if t > self.config.horizon:
            logger.warning(
                f"⚠️ Вывод {pending.key[1]}({format_entity(pending.key[0])}) на t={t} "
                f"за горизонтом {self.config.horizon} отброшен"
            )
            return
        if pending not in self._pending_heads[t]:
            self._pending_heads[t].append(pending)

    # ВРЕМЯ И ЗАПРОСЫ

    def advance_time(self) -> int:
        """Переход к следующему шагу логического времени"""
        self._check_running()
        if self.time >= self.config.horizon:
            raise HorizonExceeded(f"Горизонт {self.config.horizon} достигнут")
        self._history[self.time] = dict(self._current)
        self.time += 1
        if not self.config.canonical:
            self._dropped = set()
            self._rederived = set()
            self._fresh_step = True
            for key in list(self._current):
                if key in self._static:
                    continue
                if key not in self._marks:
                    self._marks[key] = self._current[key]
                del self._current[key]
                self._dropped.add(key)
        return self.time

    def query(self, q: Query, t: Optional[int] = None) -> bool:
        """Проверка следования: граница атома внутри запрошенной"""
        entity, label = q.key
        if label == REL and isinstance(entity, tuple):
            value = rel_annotation(entity[0], entity[1], self.graph)
        else:
            value = self.bound(entity, label, t)
        return is_subset(value or UNKNOWN, q.bound)

    # ТРАССА

    def export_trace(self, kind: str = 'all') -> List[TraceEntry]:
        """Трасса в порядке записи; kind = all | node | edge"""
        if kind == 'node':
            return [e for e in self._trace if not e.is_edge]
        if kind == 'edge':
            return [e for e in self._trace if e.is_edge]
        if kind != 'all':
            raise EngineError(f"Неизвестный вид трассы: {kind}")
        return list(self._trace)

    def explain(self, entity: Entity, label: str, t: Optional[int] = None) -> List[TraceEntry]:
        """Цепочка записей трассы, на которые опирается последнее (к моменту t) изменение атома"""
        index = {id(e): i for i, e in enumerate(self._trace)}
        last = next((e for e in reversed(self._trace)
                     if e.key == (entity, label) and (t is None or e.time <= t)), None)
        if last is None:
            return []
        chain: Dict[int, TraceEntry] = {}
        stack = [last]
        while stack:
            entry = stack.pop()
            position = index[id(entry)]
            if position in chain:
                continue
            chain[position] = entry
            for key in entry.support:
                earlier = next((e for e in reversed(self._trace[:position]) if e.key == key), None)
                if earlier is not None:
                    stack.append(earlier)
        return [chain[i] for i in sorted(chain)]


def replay_trace(initial: Mapping[AtomKey, Interval], entries: Iterable[TraceEntry],
                 canonical: bool = True, static: Iterable[AtomKey] = (),
                 final_time: Optional[int] = None) -> Dict[AtomKey, Interval]:
    """Восстановление интерпретации по трассе"""
    state: Dict[AtomKey, Interval] = dict(initial)
    static_keys = set(static)
    time = 0
    for entry in entries:
        if not canonical and entry.time > time:
            state = {k: v for k, v in state.items() if k in static_keys}
        time = entry.time
        if entry.cause == INCONSISTENCY_RESET:
            static_keys.add(entry.key)
        if (state.get(entry.key) or UNKNOWN) != entry.old_bound:
            raise EngineError(f"Запись трассы не согласуется с состоянием: {entry.row()}")
        state[entry.key] = entry.new_bound
    if not canonical and final_time is not None and final_time > time:
        state = {k: v for k, v in state.items() if k in static_keys}
    return state


def trace_to_tsv(entries: Iterable[TraceEntry]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter='\t', lineterminator='\n')
    writer.writerow(TRACE_HEADER)
    for entry in entries:
        writer.writerow(entry.row())
    return buffer.getvalue()


@dataclass(frozen=True)
class TraceRow:
    """Строка трассы, прочитанная из TSV"""
    fpo: int
    node: str
    label: str
    old_bound: Interval
    new_bound: Interval
    source: str


def read_trace_tsv(text: str) -> List[TraceRow]:
    reader = csv.reader(io.StringIO(text), delimiter='\t')
    rows = list(reader)
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise EngineError(f"Ожидался заголовок трассы: {chr(9).join(TRACE_HEADER)}")
    result = []
    for number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(TRACE_HEADER):
            raise EngineError(f"строка {number}: ожидалось {len(TRACE_HEADER)} полей")
        try:
            result.append(TraceRow(int(row[0]), row[1], row[2],
                                   parse_interval(row[3]), parse_interval(row[4]), row[5]))
        except ValueError as e:
            raise EngineError(f"строка {number}: {e}")
    return result


class EngineManager:
    """Единая точка сериализованного доступа к движку"""

    def __init__(self, engine: ReasoningEngine):
        self.engine = engine
        self._lock = asyncio.Lock()
        self._step_claimed = False

    async def inject(self, facts: Sequence[Fact], source: str) -> List[TraceEntry]:
        async with self._lock:
            return self.engine.inject_and_recompute(facts, source)

    async def step(self, source: str) -> List[TraceEntry]:
        async with self._lock:
            return self.engine.fixpoint_step(source=source)

    async def advance(self, source: str) -> List[TraceEntry]:
        """Переход на следующий шаг и вывод отложенных заключений"""
        async with self._lock:
            self.engine.advance_time()
            return self.engine.fixpoint_step(source=source)

    async def inject_event(self, build_facts: Callable[[int], Sequence[Fact]], source: str) -> List[TraceEntry]:
        """Внешнее событие: новый шаг времени, факты для него и пересчёт"""
        async with self._lock:
            self._claim_step()
            return self.engine.inject_and_recompute(build_facts(self.engine.time), source)

    def _claim_step(self):
        if self._step_claimed:
            self.engine.advance_time()
        self._step_claimed = True

    def query(self, q: Query, t: Optional[int] = None) -> bool:
        return self.engine.query(q, t)
