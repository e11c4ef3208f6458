import asyncio
from decimal import Decimal
from fractions import Fraction

import pytest

from annotation_functions import HandEncoding, decode_hand
from engine import TraceRow, replay_trace, trace_to_tsv
from graph_store import GraphError
from intervals import TRUE, Interval
from logic_lang import parse_query
from scenarios import (
    GOLDEN_CARD_ORDER,
    SCENARIO_DIR,
    GoldenTrace,
    ScenarioError,
    cardgame_program,
    compare_trace,
    load_scenario,
    parse_scenario,
    run_scenario,
    scenario_cardgame,
    scenario_welding,
)


def run(spec, **kwargs):
    return asyncio.run(run_scenario(spec, **kwargs))


# СВАРКА

def test_welding_golden_trace():
    spec = scenario_welding()
    result = run(spec)
    trace = result.engine.export_trace('node')
    report = compare_trace(trace, GoldenTrace.load(spec.golden))
    assert report.ok, report.mismatches
    assert [e.fpo for e in trace] == [0, 1, 2, 2, 3, 4, 5, 5, 6, 7]
    assert all(e.old_bound.to_trace() == '[0.0,1.0]' and e.new_bound == TRUE for e in trace)
    assert result.halted is None


def test_welding_defect_is_visible_only_while_it_holds():
    result = run(scenario_welding())
    engine = result.engine
    defective = parse_query('defective(weld_object):[1,1]')
    assert engine.query(defective, 3)
    assert not engine.query(defective)
    assert result.final_answers() == [(parse_query('good(weld_object):[1,1]'), True)]


def test_welding_poller_attribution():
    result = run(scenario_welding())
    [poller] = result.run.pollers
    assert poller.injections == 2
    assert {e.label for e in result.trace if e.source == '2'} == {'gap', 'good', 'repairing', 'defective'}


def test_welding_trace_replays():
    result = run(scenario_welding())
    engine = result.engine
    replayed = replay_trace(engine.initial, engine.export_trace(), canonical=False,
                            static=engine.initial_static, final_time=engine.time)
    assert replayed == engine.interpretation()


# КАРТЫ

def test_cardgame_program_file_matches_builder():
    text = (SCENARIO_DIR / 'cardgame' / 'cardgame.pr').read_text(encoding='utf-8')
    assert text == cardgame_program()


def test_cardgame_golden_trace(cardgame_path):
    spec = load_scenario(cardgame_path)
    result = run(spec)
    trace = result.engine.export_trace('node')
    report = compare_trace(trace, GoldenTrace.load(spec.golden))
    assert report.ok, report.mismatches
    assert len(trace) == 28
    assert result.run.stopped_by_monitor

    hands = [e.new_bound.lower for e in trace if e.label == 'hand_as_point_vals']
    assert hands == [float(Decimal(x)) for x in
                     ('0.6', '0.66', '0.666', '0.6666', '0.66669', '0.666693', '0.6666936')]
    odds = [e.new_bound.lower for e in trace if e.label == 'odds_of_losing']
    assert odds[:5] == [0.0] * 5
    assert odds[5] == pytest.approx(float(Fraction(11, 46)), abs=1e-9)
    assert odds[6] == 1.0
    # согласованность: старая граница каждой записи руки - новая граница предыдущей
    hand_rows = [e for e in trace if e.label == 'hand_as_point_vals']
    assert hand_rows[2].fpo == 10 and hand_rows[2].old_bound == Interval(0.66, 1.0)
    assert hand_rows[1].fpo == 6 and hand_rows[1].old_bound == Interval(0.6, 1.0)
    assert decode_hand(HandEncoding((6, 6, 6, 6, 9, 3, 6))) == 42


def test_builtin_cardgame_matches_file_scenario(cardgame_path):
    from_file = run(load_scenario(cardgame_path)).engine.export_trace()
    built = run(scenario_cardgame(order=GOLDEN_CARD_ORDER)).engine.export_trace()
    assert trace_to_tsv(built) == trace_to_tsv(from_file)


def test_noisy_classifier_gives_same_trace(cardgame_path):
    golden = GoldenTrace.load(load_scenario(cardgame_path).golden)
    result = run(scenario_cardgame(order=GOLDEN_CARD_ORDER, noisy=True))
    assert compare_trace(result.engine.export_trace('node'), golden).ok


def check_game_stops_on_certain_loss(seed):
    result = run(scenario_cardgame(seed=seed))
    trace = result.engine.export_trace('node')
    assert result.run.stopped_by_monitor, seed
    assert not result.engine.inconsistencies, seed
    certain = next(i for i, e in enumerate(trace) if e.label == 'odds_of_losing' and e.new_bound == TRUE)
    # после уверенного проигрыша карты больше не тянут
    assert all(e.entity != 'card_drawn_obj' for e in trace[certain:]), seed
    total = sum(round(e.new_bound.lower * 10) for e in trace if e.label == 'player_holds')
    assert total >= 40, seed


@pytest.mark.parametrize('seed', range(20))
def test_random_games_stop_on_certain_loss(seed):
    check_game_stops_on_certain_loss(seed)


@pytest.mark.slow
def test_thousand_random_games_stop_on_certain_loss():
    for seed in range(1000):
        check_game_stops_on_certain_loss(seed)


def test_shuffled_runs_are_reproducible():
    spec = load_scenario(SCENARIO_DIR / 'cardgame' / 'shuffled.json')
    first = trace_to_tsv(run(spec).engine.export_trace())
    second = trace_to_tsv(run(load_scenario(SCENARIO_DIR / 'cardgame' / 'shuffled.json')).engine.export_trace())
    assert first == second
    assert any(trace_to_tsv(run(spec, seed=spec.seed + offset).engine.export_trace()) != first
               for offset in (1, 2, 3))


# ОШИБКИ И ПОЛИТИКИ

def _document(**overrides):
    document = {
        'name': 'tiny',
        'graph': {'nodes': [{'id': 'a'}]},
        'program': {'text': 'q(X) <-0 p(X)\n'},
        'engine': {'horizon': 4, 'canonical': True, 'inconsistency_policy': 'halt'},
        'classifiers': {'sensor': {'class_names': ['p'], 'conversion': {'snap_value': 1.0}}},
        'driver': {'source': '1', 'classifier': 'sensor', 'events': [
            {'tick': 0, 'target': 'a', 'scores': {'p': 1.0}},
            {'tick': 1, 'target': 'a', 'facts': ['p(a) : [0,0]']},
        ]},
    }
    document.update(overrides)
    return document


def test_halt_policy_reports_inconsistency(tmp_path):
    result = run(parse_scenario(_document(), tmp_path))
    assert result.halted is not None
    assert (result.halted.entity, result.halted.label) == ('a', 'p')
    assert (result.halted.old_bound, result.halted.new_bound) == (TRUE, Interval(0.0, 0.0))


def test_reset_policy_continues(tmp_path):
    document = _document(engine={'horizon': 4, 'canonical': True, 'inconsistency_policy': 'reset'})
    result = run(parse_scenario(document, tmp_path))
    assert result.halted is None
    assert result.engine.is_static('a', 'p')
    assert result.trace[-1].cause == 'inconsistency-reset'


@pytest.mark.parametrize('overrides, error', [
    ({'graph': None}, GraphError),
    ({'driver': {'classifier': 'camera', 'events': []}}, ScenarioError),
    ({'driver': {'classifier': 'sensor', 'events': [], 'order': 'random'}}, ScenarioError),
    ({'driver': {'classifier': 'sensor'}}, ScenarioError),
    ({'program': 'missing.pr'}, ScenarioError),
])
def test_invalid_scenarios(tmp_path, overrides, error):
    document = _document(**overrides)
    if document['graph'] is None:
        del document['graph']
    with pytest.raises(error):
        parse_scenario(document, tmp_path)


def test_load_scenario_errors(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / 'nope.json')
    bad = tmp_path / 'bad.json'
    bad.write_text('[1, 2]', encoding='utf-8')
    with pytest.raises(ScenarioError):
        load_scenario(bad)


# СРАВНЕНИЕ ТРАСС

def test_compare_trace_reports_differences(welding_path):
    golden = GoldenTrace.load(load_scenario(welding_path).golden)
    rows = list(golden.rows)
    assert compare_trace(rows, golden).ok

    shifted = list(rows)
    first = shifted[0]
    shifted[0] = TraceRow(first.fpo, first.node, first.label, first.old_bound, Interval(0.999995, 1.0), first.source)
    assert compare_trace(shifted, golden).ok
    assert not compare_trace(shifted, golden, tolerance=1e-6).ok

    shifted[1] = TraceRow(9, 'other', 'gap', first.old_bound, first.new_bound, '3')
    report = compare_trace(shifted[:-1], golden)
    assert not report.ok
    assert report.mismatches[0][0] == 1
    assert report.mismatches[-1] == (len(rows) - 1, 'строка отсутствует в трассе')
