import pytest

from engine import EngineConfig, ReasoningEngine
from graph_store import load_graph
from logic_lang import parse_program
from scenarios import SCENARIO_DIR


def make_graph(nodes, edges=(), types=None):
    """Граф из списка имён; рёбра - тройки (from, to, label)"""
    types = types or {}
    return load_graph({
        'nodes': [{'id': n, 'type': types.get(n)} for n in nodes],
        'edges': [{'from': a, 'to': b, 'label': label} for a, b, label in edges],
    })


def make_engine(program='', nodes=('a',), edges=(), **config):
    rules, facts = parse_program(program)
    return ReasoningEngine(make_graph(nodes, edges), rules, facts, EngineConfig(**config))


@pytest.fixture
def welding_path():
    return SCENARIO_DIR / 'welding' / 'scenario.json'


@pytest.fixture
def cardgame_path():
    return SCENARIO_DIR / 'cardgame' / 'scenario.json'
