"""Прогоны по настенным часам: pytest -m realtime"""
import asyncio

import pytest

from engine import EngineManager
from logic_lang import parse_query
from ml_bridge import PollerConfig, PollerTask, poll_forever
from scenarios import run_scenario, scenario_welding

from conftest import make_engine

pytestmark = pytest.mark.realtime


def test_poller_keeps_its_schedule():
    manager = EngineManager(make_engine(nodes=('a',), canonical=False, horizon=4))
    cfg = PollerConfig(poll_interval=0.5, poll_condition=parse_query('good(a):[1,1]'))
    task = PollerTask('2', cfg, None, None, None, manager)

    async def scenario():
        stop = asyncio.Event()
        running = asyncio.create_task(poll_forever(task, stop))
        await asyncio.sleep(5.1)
        stop.set()
        return await running

    asyncio.run(scenario())
    assert len(task.ticks) >= 9
    for i, tick in enumerate(task.ticks):
        assert abs(tick - (i + 1) * 0.5) < 0.25
    assert task.injections == 0


def test_realtime_welding_run():
    result = asyncio.run(run_scenario(scenario_welding(), deterministic=False))
    assert result.halted is None
    driver_rows = [e.label for e in result.trace if e.source == '1' and e.label in ('good', 'gap')]
    assert driver_rows == ['good', 'gap', 'gap', 'good', 'good']
    [poller] = result.run.pollers
    assert poller.injections >= 1
