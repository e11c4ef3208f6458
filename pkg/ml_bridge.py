import asyncio
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from engine import EngineManager, TraceEntry
from intervals import Interval, OutOfRange
from logic_lang import Fact, Query, make_fact

logger = logging.getLogger(__name__)


class BridgeError(ValueError):
    """Базовая ошибка связи классификатора с движком"""


class InvalidBounds(BridgeError):
    """Из вероятности получились некорректные границы"""


class AdapterError(BridgeError):
    """Сбой адаптера классификатора"""

    def __init__(self, message: str, source: str = ''):
        self.source = source
        super().__init__(f"[{source}] {message}" if source else message)


# ПОСТОБРАБОТКА

def softmax(raw: Sequence[float]) -> np.ndarray:
    x = np.asarray(raw, dtype=float)
    if x.size == 0:
        raise BridgeError("softmax: пустой вектор")
    if not np.all(np.isfinite(x)):
        raise BridgeError("softmax: вектор содержит бесконечности или NaN")
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


def sigmoid_each(raw: Sequence[float]) -> np.ndarray:
    x = np.asarray(raw, dtype=float)
    # exp(-log(1 + e^-x)) не переполняется при больших |x|
    return np.exp(-np.logaddexp(0.0, -x))


def identity(raw: Sequence[float]) -> np.ndarray:
    return np.asarray(raw, dtype=float)


POSTPROCESSORS: Dict[str, Callable[[Sequence[float]], np.ndarray]] = {
    'softmax': softmax,
    'sigmoid_each': sigmoid_each,
    'identity': identity,
}


@dataclass(frozen=True)
class FactConversionOptions:
    threshold: float = 0.5
    set_lower_bound: bool = True
    set_upper_bound: bool = False
    snap_value: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise BridgeError(f"threshold вне [0,1]: {self.threshold}")
        if not (self.set_lower_bound or self.set_upper_bound):
            raise BridgeError("Нужно задать хотя бы одну из границ: set_lower_bound или set_upper_bound")
        if self.snap_value is not None and not 0.0 <= self.snap_value <= 1.0:
            raise BridgeError(f"snap_value вне [0,1]: {self.snap_value}")

    @classmethod
    def from_dict(cls, data: Optional[Mapping]) -> 'FactConversionOptions':
        data = dict(data or {})
        unknown = set(data) - {'threshold', 'set_lower_bound', 'set_upper_bound', 'snap_value'}
        if unknown:
            raise BridgeError(f"Неизвестные параметры преобразования: {sorted(unknown)}")
        return cls(**data)


def pred_to_facts(probs: Sequence[float], class_names: Sequence[str], target: str,
                  opts: FactConversionOptions, t: int) -> List[Fact]:
    """По одному факту на класс; p >= threshold включает границу"""
    if len(probs) != len(class_names):
        raise BridgeError(f"Вероятностей {len(probs)}, а классов {len(class_names)}")
    facts = []
    for name, p in zip(class_names, probs):
        p = float(p)
        if p >= opts.threshold:
            v = opts.snap_value if opts.snap_value is not None else p
            lower = v if opts.set_lower_bound else 0.0
            upper = v if opts.set_upper_bound else 1.0
        else:
            lower, upper = 0.0, 1.0
        try:
            bound = Interval(lower, upper)
        except OutOfRange as e:
            raise InvalidBounds(f"{name}({target}): {e}")
        facts.append(make_fact(name, target, bound, t))
    return facts


# КЛАССИФИКАТОРЫ

@dataclass(frozen=True)
class PredictionEvent:
    """Вход классификатора: скрипт, запрос к процессу или к серверу"""
    target: str
    scores: Mapping[str, float] = field(default_factory=dict)
    source: str = ''
    tick: int = 0
    input_id: Optional[str] = None
    facts: Tuple[Fact, ...] = ()


class InputSource(ABC):
    """Источник входов; None означает, что входы закончились"""

    @abstractmethod
    async def next(self) -> Optional[PredictionEvent]:
        ...


class ClassifierAdapter(ABC):
    """infer -> postprocess; классы - предикаты фактов"""

    def __init__(self, class_names: Sequence[str], postprocess: str = 'softmax', name: str = ''):
        if not class_names:
            raise BridgeError("Классификатору нужен хотя бы один класс")
        if postprocess not in POSTPROCESSORS:
            raise BridgeError(f"Неизвестная постобработка: {postprocess}")
        self.class_names = list(class_names)
        self.postprocess_name = postprocess
        self.name = name or type(self).__name__

    @abstractmethod
    async def infer(self, event: PredictionEvent) -> Sequence[float]:
        ...

    def postprocess(self, raw: Sequence[float]) -> np.ndarray:
        return POSTPROCESSORS[self.postprocess_name](raw)

    async def predict(self, event: PredictionEvent) -> np.ndarray:
        raw = await self.infer(event)
        if len(raw) != len(self.class_names):
            raise AdapterError(f"{self.name}: получено {len(raw)} оценок для {len(self.class_names)} классов")
        try:
            probs = self.postprocess(raw)
        except BridgeError as e:
            raise AdapterError(f"{self.name}: {e}")
        if np.any(probs < 0.0) or np.any(probs > 1.0):
            raise AdapterError(f"{self.name}: вероятности вне [0,1] после {self.postprocess_name}")
        return probs

    async def close(self):
        """Освобождение ресурсов адаптера"""


def scores_vector(scores: Mapping[str, float], class_names: Sequence[str]) -> List[float]:
    """Оценки в порядке классов; отсутствующие классы получают 0"""
    return [float(scores.get(name, 0.0)) for name in class_names]


async def classify_and_inject(adapter: ClassifierAdapter, event: PredictionEvent, target: Optional[str],
                              opts: FactConversionOptions, manager: EngineManager, source: str,
                              new_step: bool = True) -> List[TraceEntry]:
    """infer -> postprocess -> pred_to_facts -> внедрение в движок"""
    target = target or event.target
    if target not in manager.engine.graph.nodes:
        raise BridgeError(f"[{source}] цель '{target}' не является вершиной графа")
    try:
        probs = await adapter.predict(event)
    except AdapterError as e:
        if not e.source:
            raise AdapterError(str(e), source) from e
        raise

    def build(t: int) -> List[Fact]:
        facts = pred_to_facts(probs, adapter.class_names, target, opts, t)
        return facts + [fact.at(t) for fact in event.facts]

    if new_step:
        return await manager.inject_event(build, source)
    return await manager.inject(build(manager.engine.time), source)


# ОПРОС ПО ВРЕМЕНИ

@dataclass(frozen=True)
class PollerConfig:
    poll_interval: float = 0.5
    interval_ticks: int = 1
    poll_condition: Optional[Query] = None
    settle: bool = False

    def __post_init__(self):
        if self.poll_interval <= 0:
            raise BridgeError("poll_interval должен быть больше 0")
        if self.interval_ticks <= 0:
            raise BridgeError("interval_ticks должен быть больше 0")


class PollerTask:
    """Один опрос классификатора: условие, вход, внедрение"""

    def __init__(self, source: str, cfg: PollerConfig, adapter: ClassifierAdapter, inputs: InputSource,
                 opts: FactConversionOptions, manager: EngineManager, target: Optional[str] = None):
        self.source = source
        self.cfg = cfg
        self.adapter = adapter
        self.inputs = inputs
        self.opts = opts
        self.manager = manager
        self.target = target
        self.exhausted = False
        self.injections = 0
        self.ticks: List[float] = []

    def due(self, tick: int) -> bool:
        return tick % self.cfg.interval_ticks == 0

    def condition_holds(self) -> bool:
        return self.cfg.poll_condition is None or self.manager.query(self.cfg.poll_condition)

    async def poll(self) -> List[TraceEntry]:
        if self.exhausted:
            return []
        if not self.condition_holds():
            return []
        event = await self.inputs.next()
        if event is None:
            self.exhausted = True
            logger.info(f"📭 [{self.source}] входы закончились")
            return []
        try:
            entries = await classify_and_inject(self.adapter, event, self.target, self.opts,
                                                self.manager, self.source)
        except AdapterError as e:
            logger.error(f"❌ {e}")
            return []
        self.injections += 1
        if self.cfg.settle:
            while self.manager.engine.has_pending():
                entries += await self.manager.advance(self.source)
        logger.info(f"🔄 [{self.source}] опрос при t={self.manager.engine.time}: {len(entries)} изменений")
        return entries


async def run_poller(cfg: PollerConfig, adapter: ClassifierAdapter, input_source: InputSource,
                     opts: FactConversionOptions, manager: EngineManager, stop_signal: asyncio.Event,
                     source: str = 'poller', target: Optional[str] = None) -> PollerTask:
    """Опрос каждые poll_interval секунд до сигнала остановки"""
    task = PollerTask(source, cfg, adapter, input_source, opts, manager, target)
    return await poll_forever(task, stop_signal)


async def poll_forever(task: PollerTask, stop_signal: asyncio.Event) -> PollerTask:
    """Цикл опроса по настенным часам для готовой задачи"""
    cfg, source = task.cfg, task.source
    loop = asyncio.get_running_loop()
    start = loop.time()
    n = 0
    while not stop_signal.is_set() and not task.exhausted:
        n += 1
        deadline = start + n * cfg.poll_interval
        try:
            await asyncio.wait_for(stop_signal.wait(), timeout=max(0.0, deadline - loop.time()))
        except asyncio.TimeoutError:
            pass
        if stop_signal.is_set():
            break
        task.ticks.append(loop.time() - start)
        try:
            await task.poll()
        except BridgeError as e:
            logger.error(f"❌ [{source}] ошибка опроса: {e}")
    return task
