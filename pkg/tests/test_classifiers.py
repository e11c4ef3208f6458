import asyncio
import sys
import textwrap

import pytest
from aiohttp import web
from aiohttp.test_utils import TestServer

from classifiers import (
    ExternalProcessAdapter,
    HttpAdapter,
    ScriptedAdapter,
    ScriptedInputSource,
    create_adapter,
)
from ml_bridge import AdapterError, BridgeError, PredictionEvent


def test_scripted_records():
    source = ScriptedInputSource.from_records([
        {'tick': 0, 'target': 'weld_object', 'scores': {'good': 0.9}},
        {'tick': 2, 'target': 'weld_object', 'scores': {'gap': 0.8}, 'facts': ['gap(weld_object) : [1,1]']},
    ], source='driver')
    assert source.remaining() == 2
    first = asyncio.run(source.next())
    assert first.scores == {'good': 0.9}
    assert source.events[1].facts[0].key == ('weld_object', 'gap')


@pytest.mark.parametrize('records', [
    [{'tick': 1, 'target': 'a'}, {'tick': 0, 'target': 'a'}],
    [{'tick': -1, 'target': 'a'}],
    [{'tick': 0}],
    [{'tick': 0, 'target': 'a', 'scores': {'x': 'high'}}],
    [{'tick': 0, 'target': 'a', 'facts': ['broken(']}],
    ['not a record'],
])
def test_bad_records(records):
    with pytest.raises(BridgeError):
        ScriptedInputSource.from_records(records)


def test_scripted_file(tmp_path):
    path = tmp_path / 'events.jsonl'
    path.write_text('{"tick": 0, "target": "a", "scores": {"x": 1}}\n\n{"tick": 1, "target": "a"}\n',
                    encoding='utf-8')
    source = ScriptedInputSource.from_file(path)
    assert [e.tick for e in source.events] == [0, 1]
    assert source.events[0].source == 'events.jsonl'

    path.write_text('{oops\n', encoding='utf-8')
    with pytest.raises(BridgeError):
        ScriptedInputSource.from_file(path)
    with pytest.raises(BridgeError):
        ScriptedInputSource.from_file(tmp_path / 'missing.jsonl')


def test_scripted_adapter_fills_missing_classes():
    adapter = ScriptedAdapter(['good', 'gap'])
    probs = asyncio.run(adapter.predict(PredictionEvent('a', {'gap': 0.7})))
    assert probs.tolist() == [0.0, 0.7]


def test_create_adapter():
    assert isinstance(create_adapter('cam', {'class_names': ['a']}), ScriptedAdapter)
    assert isinstance(create_adapter('cam', {'kind': 'http', 'url': 'http://localhost:1/x', 'class_names': ['a']}),
                      HttpAdapter)
    with pytest.raises(BridgeError):
        create_adapter('cam', {'kind': 'http', 'url': 'ftp://x', 'class_names': ['a']})
    with pytest.raises(BridgeError):
        create_adapter('cam', {'kind': 'telepathy', 'class_names': ['a']})
    with pytest.raises(BridgeError):
        create_adapter('cam', {'kind': 'scripted'})


async def _serve(handler):
    app = web.Application()
    app.router.add_post('/predict', handler)
    server = TestServer(app)
    await server.start_server()
    return server


def test_http_adapter_retries_server_errors():
    calls = []

    async def handler(request):
        calls.append((await request.json())['input_id'])
        if len(calls) == 1:
            return web.Response(status=503)
        return web.json_response({'scores': {'good': 0.2, 'gap': 0.8}})

    async def scenario():
        server = await _serve(handler)
        adapter = HttpAdapter(str(server.make_url('/predict')), ['good', 'gap'], postprocess='identity',
                              retries=2, backoff=0.01, name='weld_camera')
        try:
            return await adapter.predict(PredictionEvent('weld_object', input_id='frame-7'))
        finally:
            await adapter.close()
            await server.close()

    probs = asyncio.run(scenario())
    assert probs.tolist() == [0.2, 0.8]
    assert calls == ['frame-7', 'frame-7']


@pytest.mark.parametrize('status, expected_calls', [(500, 2), (404, 1)])
def test_http_adapter_gives_up(status, expected_calls):
    calls = []

    async def handler(request):
        calls.append(1)
        return web.Response(status=status)

    async def scenario():
        server = await _serve(handler)
        adapter = HttpAdapter(str(server.make_url('/predict')), ['good'], retries=1, backoff=0.01)
        try:
            await adapter.predict(PredictionEvent('weld_object', tick=3))
        finally:
            await adapter.close()
            await server.close()

    with pytest.raises(AdapterError):
        asyncio.run(scenario())
    assert len(calls) == expected_calls


MODEL_SCRIPT = textwrap.dedent('''
    import json
    import sys

    for line in sys.stdin:
        request = json.loads(line)
        if request['input_id'] == 'silent':
            print('not json', flush=True)
            continue
        print(json.dumps({'scores': {'good': 0.0, 'gap': 2.0}}), flush=True)
''')


def test_external_process_adapter(tmp_path):
    script = tmp_path / 'model.py'
    script.write_text(MODEL_SCRIPT, encoding='utf-8')

    async def scenario():
        adapter = ExternalProcessAdapter([sys.executable, str(script)], ['good', 'gap'], timeout=10)
        try:
            probs = await adapter.predict(PredictionEvent('weld_object', input_id='frame-1'))
            with pytest.raises(AdapterError):
                await adapter.predict(PredictionEvent('weld_object', input_id='silent'))
            return probs
        finally:
            await adapter.close()

    probs = asyncio.run(scenario())
    assert probs.sum() == pytest.approx(1.0)
    assert probs[1] > 0.85


def test_external_process_missing_binary(tmp_path):
    adapter = ExternalProcessAdapter([str(tmp_path / 'no-such-model')], ['good'])
    with pytest.raises(AdapterError):
        asyncio.run(adapter.predict(PredictionEvent('a')))
