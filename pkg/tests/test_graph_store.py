import itertools
import json
import random

import pytest

from graph_store import (
    DanglingEdge,
    SchemaError,
    UnknownConstant,
    groundings,
    load_graph,
    load_graph_file,
    load_schema,
    rel_annotation,
)
from intervals import TRUE, UNKNOWN, Interval
from logic_lang import parse_rule
from scenarios import SCENARIO_DIR

from conftest import make_graph


def test_load_graph_with_labels():
    graph = load_graph({
        'nodes': [{'id': 'a', 'type': 'card', 'labels': {'shiny': '[0.5,1]'}}, {'id': 'd', 'type': 'deck'}],
        'edges': [{'from': 'a', 'to': 'd', 'label': 'deck_holds'}],
    })
    assert graph.types() == {'card', 'deck'}
    assert graph.has_edge('a', 'd') and not graph.has_edge('d', 'a')
    assert graph.seed_atoms() == {
        (('a', 'd'), 'deck_holds'): TRUE,
        ('a', 'shiny'): Interval(0.5, 1.0),
    }


def test_graph_errors():
    with pytest.raises(SchemaError):
        load_graph('{not json')
    with pytest.raises(SchemaError):
        load_graph({'nodes': [{'id': 'a'}, {'id': 'a'}]})
    with pytest.raises(DanglingEdge):
        load_graph({'nodes': [{'id': 'a'}], 'edges': [{'from': 'a', 'to': 'b'}]})
    with pytest.raises(SchemaError):
        load_graph_file(SCENARIO_DIR / 'missing.json')


def test_schema_rejects_unknown_types():
    graph = make_graph(['a'], types={'a': 'card'})
    assert load_schema({'p': [['card']]}, graph) == {'p': [frozenset({'card'})]}
    with pytest.raises(SchemaError):
        load_schema({'p': [['planet']]}, graph)
    with pytest.raises(SchemaError):
        load_schema({'p': []}, graph)


def test_rel_annotation():
    graph = make_graph(['a', 'b'], [('a', 'b', None)])
    assert rel_annotation('a', 'b', graph) == TRUE
    assert rel_annotation('b', 'a', graph) == UNKNOWN
    with pytest.raises(UnknownConstant):
        rel_annotation('a', 'zzz', graph)


def test_groundings_are_sorted():
    graph = make_graph(['c', 'a', 'b'])
    subs = groundings(parse_rule('q(X) <-0 p(X)'), graph)
    assert [s['X'] for s in subs] == ['a', 'b', 'c']


def test_binary_literal_ranges_over_edges():
    graph = make_graph(['a', 'b', 'c'], [('a', 'b', 'e'), ('b', 'c', 'e')])
    subs = groundings(parse_rule('q(X,Z) <-0 e(X,Y), e(Y,Z)'), graph)
    assert subs == [{'X': 'a', 'Y': 'b', 'Z': 'c'}]


def test_rel_ranges_over_all_pairs():
    graph = make_graph(['a', 'b'])
    subs = groundings(parse_rule('q(X) <-0 rel(X,Y)'), graph)
    assert len(subs) == 4


def _brute_force(rule, graph, schema):
    nodes = graph.node_names()
    variables = rule.variables()
    result = []
    for values in itertools.product(nodes, repeat=len(variables)):
        sub = dict(zip(variables, values))
        ok = True
        body = [lit.atom for lit in rule.body]
        for atom in [rule.head] + body:
            names = [sub[t.name] if t.is_variable else t.name for t in atom.args]
            if atom in body and atom.arity == 2 and atom.predicate != 'rel' and not graph.has_edge(*names):
                ok = False
            positions = (schema or {}).get(atom.predicate, [])
            for allowed, name in zip(positions, names):
                if allowed is not None and graph.node_type(name) not in allowed:
                    ok = False
        if ok:
            result.append(sub)
    return sorted(result, key=lambda s: tuple(s[v] for v in sorted(variables)))


def test_typed_groundings_match_brute_force():
    nodes = [f"card{i}" for i in range(6)] + [f"deck{i}" for i in range(4)]
    types = {n: 'card' if n.startswith('card') else 'deck' for n in nodes}
    rng = random.Random(3)
    edges = [(c, d, 'holds') for c in nodes for d in nodes if c != d and rng.random() < 0.3]
    edges += [('card0', 'deck0', 'holds'), ('deck1', 'card1', 'holds')]
    graph = make_graph(nodes, edges, types)
    schema = load_schema({'holds': [['card'], ['deck']], 'q': [['card']]}, graph)

    for text in ('q(X) <-0 holds(X,Y), p(Y)', 'r(X,Y) <-0 p(X), p(Y)', 'q(X) <-0 p(X)'):
        rule = parse_rule(text)
        typed = groundings(rule, graph, schema)
        assert typed == _brute_force(rule, graph, schema), text
        untyped = groundings(rule, graph)
        assert untyped == _brute_force(rule, graph, None), text
        if rule.head.predicate == 'q':
            assert len(typed) < len(untyped)


def test_cardgame_graph_file():
    graph = load_graph_file(SCENARIO_DIR / 'cardgame' / 'graph.json')
    assert len(graph.nodes) == 55
    assert len(graph.edges) == 52
    schema = json.loads((SCENARIO_DIR / 'cardgame' / 'schema.json').read_text(encoding='utf-8'))
    typed = groundings(parse_rule('hand_as_point_vals(player_hand) : append_hand <-0 player_holds(Card):[0.3,1]'),
                       graph, load_schema(schema, graph))
    assert len(typed) == 52


def test_parallel_edges_keep_their_labels():
    graph = load_graph({
        'nodes': [{'id': 'a', 'type': 'card'}, {'id': 'b'}],
        'edges': [{'from': 'a', 'to': 'b', 'label': 'left'}, {'from': 'a', 'to': 'b', 'label': 'right'}],
    })
    assert graph.nodes['a']['type'] == 'card'
    assert graph.node_type('b') is None and graph.node_type('zz') is None
    assert sorted(label for _, _, label in graph.edges(data='label')) == ['left', 'right']
    assert len(graph.edges) == 2
    assert graph.pairs == [('a', 'b')]
    assert set(graph.seed_atoms()) == {(('a', 'b'), 'left'), (('a', 'b'), 'right')}
