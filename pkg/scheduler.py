import asyncio
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from engine import EngineManager, HorizonExceeded, TraceEntry
from logic_lang import Query, format_node
from ml_bridge import (
    AdapterError,
    BridgeError,
    ClassifierAdapter,
    FactConversionOptions,
    InputSource,
    PollerTask,
    classify_and_inject,
    poll_forever,
)

logger = logging.getLogger(__name__)


class MonitorTask:
    """Следит за условием завершения и поднимает флаг остановки"""

    def __init__(self, condition: Query, manager: EngineManager, stop_signal: asyncio.Event):
        self.condition = condition
        self.manager = manager
        self.stop_signal = stop_signal

    def check(self) -> bool:
        if not self.stop_signal.is_set() and self.manager.query(self.condition):
            logger.info(f"🏁 Условие завершения выполнено: {format_node(self.condition)} "
                        f"при t={self.manager.engine.time}")
            self.stop_signal.set()
        return self.stop_signal.is_set()


class DriverTask:
    """Внешние события сценария: по одному шагу времени на событие"""

    def __init__(self, source: str, adapter: ClassifierAdapter, inputs: InputSource,
                 opts: FactConversionOptions, manager: EngineManager, stop_signal: asyncio.Event,
                 target: Optional[str] = None):
        self.source = source
        self.adapter = adapter
        self.inputs = inputs
        self.opts = opts
        self.manager = manager
        self.stop_signal = stop_signal
        self.target = target
        self.finished = False
        self.events = 0

    async def step(self) -> List[TraceEntry]:
        if self.finished:
            return []
        if self.stop_signal.is_set():
            self.finished = True
            return []
        event = await self.inputs.next()
        if event is None:
            self.finished = True
            logger.info(f"📭 [{self.source}] события сценария закончились")
            return []
        try:
            entries = await classify_and_inject(self.adapter, event, self.target, self.opts,
                                                self.manager, self.source)
        except AdapterError as e:
            logger.error(f"❌ {e}")
            return []
        self.events += 1
        logger.info(f"📦 [{self.source}] событие {self.events} при t={self.manager.engine.time}: "
                    f"{len(entries)} изменений")
        return entries


@dataclass
class RunResult:
    ticks: int = 0
    stopped_by_monitor: bool = False
    horizon_reached: bool = False
    pollers: List[PollerTask] = field(default_factory=list)


class DeterministicScheduler:
    """Кооперативный обход задач на логических тактах в фиксированном порядке"""

    def __init__(self, manager: EngineManager, driver: Optional[DriverTask] = None,
                 pollers: Sequence[PollerTask] = (), monitor: Optional[MonitorTask] = None,
                 max_ticks: int = 10000):
        self.manager = manager
        self.driver = driver
        self.pollers = list(pollers)
        self.monitor = monitor
        self.max_ticks = max_ticks

    def _active(self) -> bool:
        if self.driver is not None:
            return not self.driver.finished
        return any(not p.exhausted for p in self.pollers)

    async def run(self) -> RunResult:
        result = RunResult(pollers=self.pollers)
        tick = 0
        try:
            while tick < self.max_ticks and self._active():
                # Порядок в такте: монитор, сценарий, опросчики
                if self.monitor is not None and self.monitor.check():
                    result.stopped_by_monitor = True
                if self.driver is not None:
                    await self.driver.step()
                    if self.driver.finished:
                        break
                for poller in self.pollers:
                    if poller.due(tick):
                        await poller.poll()
                tick += 1
        except HorizonExceeded as e:
            logger.warning(f"⚠️ Прогон остановлен: {e}")
            result.horizon_reached = True
        result.ticks = tick
        if self.monitor is not None:
            result.stopped_by_monitor = self.monitor.check()
        return result


class RealtimeRunner:
    """Сценарий и опросчики как отдельные задачи asyncio по настенным часам"""

    def __init__(self, manager: EngineManager, driver: Optional[DriverTask] = None,
                 pollers: Sequence[PollerTask] = (), monitor: Optional[MonitorTask] = None,
                 event_interval: float = 0.5, grace: float = 1.0, stop_signal: Optional[asyncio.Event] = None):
        self.manager = manager
        self.driver = driver
        self.pollers = list(pollers)
        self.monitor = monitor
        self.event_interval = event_interval
        self.grace = grace
        self.stop_signal = stop_signal or (monitor.stop_signal if monitor else asyncio.Event())

    async def _drive(self) -> bool:
        horizon_reached = False
        try:
            while self.driver is not None and not self.driver.finished:
                if self.monitor is not None:
                    self.monitor.check()
                await self.driver.step()
                if self.driver.finished:
                    break
                await asyncio.sleep(self.event_interval)
        except HorizonExceeded as e:
            logger.warning(f"⚠️ Прогон остановлен: {e}")
            horizon_reached = True
        await asyncio.sleep(self.grace)
        return horizon_reached

    async def run(self, duration: Optional[float] = None) -> RunResult:
        """Прогон до окончания событий сценария или по истечении duration"""
        tasks = [asyncio.create_task(poll_forever(p, self.stop_signal)) for p in self.pollers]
        result = RunResult(pollers=self.pollers)
        try:
            if self.driver is not None:
                result.horizon_reached = await self._drive()
            elif duration is not None:
                await asyncio.sleep(duration)
        finally:
            self.stop_signal.set()
            outcomes = await asyncio.gather(*tasks, return_exceptions=True)
        for outcome in outcomes:
            if isinstance(outcome, HorizonExceeded):
                result.horizon_reached = True
            elif isinstance(outcome, BaseException) and not isinstance(outcome, BridgeError):
                raise outcome
        if self.monitor is not None:
            result.stopped_by_monitor = self.monitor.check()
        return result
