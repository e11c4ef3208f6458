import asyncio

import pytest

from classifiers import ScriptedAdapter, ScriptedInputSource
from engine import EngineManager
from intervals import TRUE, UNKNOWN, Interval
from logic_lang import parse_query
from ml_bridge import (
    AdapterError,
    BridgeError,
    FactConversionOptions,
    InvalidBounds,
    PollerConfig,
    PollerTask,
    PredictionEvent,
    classify_and_inject,
    pred_to_facts,
    run_poller,
    sigmoid_each,
    softmax,
)

from conftest import make_engine


def only_fact(p, **opts):
    [fact] = pred_to_facts([p], ['gap'], 'weld_object', FactConversionOptions(**opts), 0)
    return fact.annotation


def test_conversion_table():
    assert only_fact(0.9, threshold=0.5, snap_value=1.0) == TRUE
    assert only_fact(0.7, threshold=0.5) == Interval(0.7, 1.0)
    assert only_fact(0.3, threshold=0.5) == UNKNOWN
    assert only_fact(0.5, threshold=0.5) == Interval(0.5, 1.0)
    assert only_fact(0.8, threshold=0.5, set_lower_bound=False, set_upper_bound=True) == Interval(0.0, 0.8)
    assert only_fact(0.8, threshold=0.5, set_upper_bound=True) == Interval(0.8, 0.8)


def test_conversion_builds_one_fact_per_class():
    facts = pred_to_facts([0.1, 0.9], ['good', 'gap'], 'weld_object', FactConversionOptions(snap_value=1.0), 4)
    assert [f.key for f in facts] == [('weld_object', 'good'), ('weld_object', 'gap')]
    assert all((f.from_t, f.to_t) == (4, 4) for f in facts)


def test_conversion_errors():
    with pytest.raises(InvalidBounds):
        only_fact(1.2, threshold=0.5)
    with pytest.raises(BridgeError):
        pred_to_facts([0.5], ['a', 'b'], 'x', FactConversionOptions(), 0)
    with pytest.raises(BridgeError):
        FactConversionOptions(threshold=1.5)
    with pytest.raises(BridgeError):
        FactConversionOptions(set_lower_bound=False)
    with pytest.raises(BridgeError):
        FactConversionOptions.from_dict({'treshold': 0.5})


def test_softmax_and_sigmoid():
    probs = softmax([1000.0, 1000.0, 0.0])
    assert probs.sum() == pytest.approx(1.0)
    assert probs[0] == pytest.approx(0.5)
    assert sigmoid_each([-800.0, 0.0, 800.0]).tolist() == pytest.approx([0.0, 0.5, 1.0])
    with pytest.raises(BridgeError):
        softmax([])
    with pytest.raises(BridgeError):
        softmax([float('inf')])


def test_adapter_validates_outputs():
    adapter = ScriptedAdapter(['good', 'gap'])
    event = PredictionEvent('weld_object', {'good': 1.5})
    with pytest.raises(AdapterError):
        asyncio.run(adapter.predict(event))
    with pytest.raises(BridgeError):
        ScriptedAdapter(['good'], postprocess='argmax')


def test_classify_and_inject():
    engine = make_engine(nodes=('weld_object',), canonical=False, horizon=5)
    manager = EngineManager(engine)
    adapter = ScriptedAdapter(['good', 'gap'])
    opts = FactConversionOptions(snap_value=1.0)

    async def scenario():
        await classify_and_inject(adapter, PredictionEvent('weld_object', {'good': 0.9}), None, opts, manager, '1')
        await classify_and_inject(adapter, PredictionEvent('weld_object', {'gap': 0.8}), None, opts, manager, '1')

    asyncio.run(scenario())
    assert engine.time == 1
    assert engine.bound('weld_object', 'gap') == TRUE
    assert engine.bound('weld_object', 'good') is None
    assert engine.bound('weld_object', 'good', 0) == TRUE

    with pytest.raises(BridgeError):
        asyncio.run(classify_and_inject(adapter, PredictionEvent('nowhere', {}), None, opts, manager, '1'))


def test_poller_respects_condition_and_settles():
    engine = make_engine('repairing(W) <-1 gap(W)\n', nodes=('weld_object',), canonical=False, horizon=8)
    manager = EngineManager(engine)
    adapter = ScriptedAdapter(['good', 'gap'])
    opts = FactConversionOptions(snap_value=1.0)
    inputs = ScriptedInputSource([PredictionEvent('weld_object', {'gap': 1.0})])
    poller = PollerTask('2', PollerConfig(poll_condition=parse_query('good(weld_object)'), settle=True),
                        adapter, inputs, opts, manager)

    async def scenario():
        assert await poller.poll() == []
        await manager.inject_event(lambda t: pred_to_facts([1.0, 0.0], ['good', 'gap'], 'weld_object', opts, t), '1')
        entries = await poller.poll()
        await poller.poll()
        return entries

    entries = asyncio.run(scenario())
    # опрос на t=1, вывод ремонта дозревает на t=2 под тем же источником
    assert engine.time == 2
    assert [(e.label, e.source, e.time) for e in entries] == [('gap', '2', 1), ('repairing', '2', 2)]
    assert poller.injections == 1
    assert poller.exhausted is False
    assert inputs.remaining() == 0


def test_poller_config_validation():
    with pytest.raises(BridgeError):
        PollerConfig(poll_interval=0)
    with pytest.raises(BridgeError):
        PollerConfig(interval_ticks=0)
    assert PollerTask('p', PollerConfig(interval_ticks=2), None, None, None, None).due(4)


def test_run_poller_injects_until_stopped():
    engine = make_engine(nodes=('weld_object',), canonical=False, horizon=8)
    manager = EngineManager(engine)
    inputs = ScriptedInputSource([PredictionEvent('weld_object', {'gap': 1.0}),
                                  PredictionEvent('weld_object', {'good': 1.0})])

    async def scenario():
        stop = asyncio.Event()
        running = asyncio.create_task(run_poller(PollerConfig(poll_interval=0.05), ScriptedAdapter(['good', 'gap']),
                                                 inputs, FactConversionOptions(snap_value=1.0), manager, stop, '2'))
        await asyncio.sleep(0.5)
        stop.set()
        return await running

    task = asyncio.run(scenario())
    # два входа, затем пустая очередь завершает опрос
    assert task.injections == 2
    assert task.exhausted
    assert [e.source for e in engine.export_trace()] == ['2', '2']
    assert engine.bound('weld_object', 'good') == TRUE
