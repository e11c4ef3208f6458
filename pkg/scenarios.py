import asyncio
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from annotation_functions import DECK_HOLDS, card_value, full_deck
from classifiers import ScriptedInputSource, create_adapter
from config import HORIZON, INCONSISTENCY_POLICY, CANONICAL, MAX_PASSES, POLL_INTERVAL
from engine import (
    EngineConfig,
    EngineError,
    EngineManager,
    InconsistencyHalt,
    InconsistencyReport,
    ReasoningEngine,
    TraceEntry,
    TraceRow,
    read_trace_tsv,
)
from graph_store import GraphError, KnowledgeGraph, SchemaError, TypeSchema, load_graph, load_graph_file, load_schema
from logic_lang import Fact, ProgramError, Query, Rule, parse_program, parse_query
from ml_bridge import (
    BridgeError,
    ClassifierAdapter,
    FactConversionOptions,
    PollerConfig,
    PollerTask,
    PredictionEvent,
)
from scheduler import DeterministicScheduler, DriverTask, MonitorTask, RealtimeRunner, RunResult

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent / 'scenarios'

CARD_TARGET = 'card_drawn_obj'
HAND_NODE = 'player_hand'
DECK_NODE = 'full_deck'
GOLDEN_CARD_ORDER = ('two_clubs', 'ten_hearts', 'six_clubs', 'four_clubs', 'jack_spades',
                     'ace_clubs', 'three_hearts')
ODDS_CERTAIN = 'odds_of_losing(player_hand):[1,1]'


class ScenarioError(ValueError):
    """Некорректное описание сценария"""


@dataclass
class ClassifierBinding:
    name: str
    spec: Dict[str, Any]
    conversion: FactConversionOptions


@dataclass
class DriverSpec:
    source: str
    classifier: str
    events: List[PredictionEvent]
    order: str = 'script'
    stop_condition: Optional[Query] = None
    target: Optional[str] = None
    interval_seconds: float = POLL_INTERVAL


@dataclass
class PollerSpec:
    source: str
    classifier: str
    events: List[PredictionEvent]
    config: PollerConfig
    target: Optional[str] = None


@dataclass
class ScenarioSpec:
    """Всё, что нужно для прогона: граф, программа, классификаторы, задачи"""
    name: str
    graph: KnowledgeGraph
    rules: List[Rule]
    facts: List[Fact]
    engine: EngineConfig
    classifiers: Dict[str, ClassifierBinding] = field(default_factory=dict)
    driver: Optional[DriverSpec] = None
    pollers: List[PollerSpec] = field(default_factory=list)
    schema: Optional[TypeSchema] = None
    seed: int = 0
    golden: Optional[Path] = None
    final_queries: List[Query] = field(default_factory=list)


# ЗАГРУЗКА

def _resolve(base: Path, value: Any, what: str) -> Path:
    if not isinstance(value, str) or not value:
        raise ScenarioError(f"{what}: требуется путь")
    path = (base / value).resolve()
    if not path.is_file():
        raise ScenarioError(f"{what}: файл не найден: {path}")
    return path


def _load_events(base: Path, data: Mapping, what: str) -> List[PredictionEvent]:
    if 'script' in data:
        return ScriptedInputSource.from_file(_resolve(base, data['script'], f"{what}.script")).events
    if 'events' in data:
        return ScriptedInputSource.from_records(data['events'], source=what).events
    raise ScenarioError(f"{what}: требуется 'script' или 'events'")


def _query_or_none(text: Any, what: str) -> Optional[Query]:
    if text is None:
        return None
    if not isinstance(text, str):
        raise ScenarioError(f"{what}: запрос должен быть строкой")
    return parse_query(text)


def _engine_config(data: Mapping) -> EngineConfig:
    return EngineConfig(
        horizon=int(data.get('horizon', HORIZON)),
        canonical=bool(data.get('canonical', CANONICAL)),
        inconsistency_policy=data.get('inconsistency_policy', INCONSISTENCY_POLICY),
        complement_pairs=[tuple(p) for p in data.get('complement_pairs', [])],
        max_passes=int(data.get('max_passes', MAX_PASSES)),
    )


def parse_scenario(document: Mapping[str, Any], base_dir: Path) -> ScenarioSpec:
    """Сценарий из разобранного JSON-документа"""
    try:
        if 'graph' not in document:
            raise SchemaError("сценарий: не указан граф")
        graph_ref = document['graph']
        if isinstance(graph_ref, Mapping):
            graph = load_graph(graph_ref)
        else:
            graph = load_graph_file(base_dir / str(graph_ref))

        program_ref = document.get('program')
        if isinstance(program_ref, Mapping) and 'text' in program_ref:
            program_text = program_ref['text']
        else:
            program_text = _resolve(base_dir, program_ref, 'program').read_text(encoding='utf-8')
        rules, facts = parse_program(program_text)

        schema_ref = document.get('schema')
        schema = None
        if isinstance(schema_ref, str):
            schema_ref = json.loads(_resolve(base_dir, schema_ref, 'schema').read_text(encoding='utf-8'))
        if schema_ref is not None:
            if not isinstance(schema_ref, Mapping):
                raise SchemaError("схема типов должна быть объектом")
            schema = load_schema(schema_ref, graph)

        classifiers = {}
        for name, spec in (document.get('classifiers') or {}).items():
            if not isinstance(spec, Mapping):
                raise ScenarioError(f"классификатор '{name}' должен быть объектом")
            classifiers[name] = ClassifierBinding(
                name, dict(spec), FactConversionOptions.from_dict(spec.get('conversion'))
            )

        def classifier_of(data: Mapping, what: str) -> str:
            name = data.get('classifier')
            if name not in classifiers:
                raise ScenarioError(f"{what}: неизвестный классификатор '{name}'")
            return name

        driver = None
        if document.get('driver'):
            data = document['driver']
            order = data.get('order', 'script')
            if order not in ('script', 'shuffle'):
                raise ScenarioError(f"driver.order: ожидается script или shuffle, получено {order}")
            driver = DriverSpec(
                source=str(data.get('source', 'driver')),
                classifier=classifier_of(data, 'driver'),
                events=_load_events(base_dir, data, 'driver'),
                order=order,
                stop_condition=_query_or_none(data.get('stop_condition'), 'driver.stop_condition'),
                target=data.get('target'),
                interval_seconds=float(data.get('interval_seconds', POLL_INTERVAL)),
            )

        pollers = []
        for i, data in enumerate(document.get('pollers') or []):
            what = f"pollers[{i}]"
            pollers.append(PollerSpec(
                source=str(data.get('source', f"poller{i + 1}")),
                classifier=classifier_of(data, what),
                events=_load_events(base_dir, data, what),
                config=PollerConfig(
                    poll_interval=float(data.get('interval_seconds', POLL_INTERVAL)),
                    interval_ticks=int(data.get('interval_ticks', 1)),
                    poll_condition=_query_or_none(data.get('condition'), f"{what}.condition"),
                    settle=bool(data.get('settle', False)),
                ),
                target=data.get('target'),
            ))

        golden = document.get('golden')
        return ScenarioSpec(
            name=str(document.get('name', base_dir.name)),
            graph=graph,
            rules=rules,
            facts=facts,
            engine=_engine_config(document.get('engine') or {}),
            classifiers=classifiers,
            driver=driver,
            pollers=pollers,
            schema=schema,
            seed=int(document.get('seed', 0)),
            golden=_resolve(base_dir, golden, 'golden') if golden else None,
            final_queries=[parse_query(q) for q in document.get('final_queries', [])],
        )
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise ScenarioError(f"Некорректный сценарий: {e}")


def load_scenario(path: Union[str, Path]) -> ScenarioSpec:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"Файл сценария не найден: {path}")
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path.name}: некорректный JSON: {e}")
    if not isinstance(document, Mapping):
        raise ScenarioError(f"{path.name}: сценарий должен быть объектом")
    return parse_scenario(document, path.resolve().parent)


# ЭТАЛОННЫЕ СЦЕНАРИИ

def scenario_welding() -> ScenarioSpec:
    """Сварка: камера сварщика и опросчик ремонта"""
    return load_scenario(SCENARIO_DIR / 'welding' / 'scenario.json')


def cardgame_graph() -> Dict[str, Any]:
    cards = full_deck()
    return {
        'nodes': [{'id': c, 'type': 'card'} for c in cards] + [
            {'id': DECK_NODE, 'type': 'deck'},
            {'id': HAND_NODE, 'type': 'hand'},
            {'id': CARD_TARGET, 'type': 'observation'},
        ],
        'edges': [{'from': c, 'to': DECK_NODE, 'label': DECK_HOLDS} for c in cards],
    }


CARDGAME_SCHEMA = {'player_holds': [['card']], 'deck_holds': [['card'], ['deck']]}


def cardgame_program() -> str:
    """52 правила карт, правило руки и правило шансов проигрыша"""
    lines = ['# Карта, распознанная на столе, попадает в руку с весом очки/10']
    for card in full_deck():
        lines.append(f"player_holds({card}) : {card_value(card)} <-0 {card}({CARD_TARGET})")
    lines.append('')
    lines.append(f"hand_as_point_vals({HAND_NODE}) : append_hand <-0 player_holds(Card):[0.3,1]")
    lines.append(f"odds_of_losing({HAND_NODE}) : odds_of_losing <-0 "
                 f"hand_as_point_vals({HAND_NODE}):[0,1], deck_holds(Card,{DECK_NODE}):[0.3,1]")
    return '\n'.join(lines) + '\n'


def card_event(card: str, tick: int, noisy: Optional[random.Random] = None) -> Dict[str, Any]:
    """Запись скрипта: распознанная карта и её изъятие из колоды"""
    if noisy is None:
        scores = {card: 1.0}
    else:
        scores = {c: round(noisy.gauss(0.0, 1.0), 4) for c in full_deck()}
        scores[card] = 8.0
    return {
        'tick': tick,
        'target': CARD_TARGET,
        'scores': scores,
        'facts': [f"{DECK_HOLDS}({card},{DECK_NODE}) : [0,0] !"],
    }


def scenario_cardgame(seed: Optional[int] = None, order: Optional[Sequence[str]] = None,
                      noisy: bool = False) -> ScenarioSpec:
    """Игра "42": заданный порядок карт или перетасовка по seed"""
    rng = random.Random(seed or 0)
    if order is None:
        order = full_deck()
        if seed is not None:
            rng.shuffle(order)
    else:
        order = list(order)
    noise = random.Random((seed or 0) + 1) if noisy else None
    document = {
        'name': 'cardgame',
        'graph': cardgame_graph(),
        'program': {'text': cardgame_program()},
        'schema': CARDGAME_SCHEMA,
        'engine': {'horizon': 64, 'canonical': True, 'inconsistency_policy': 'reset'},
        'classifiers': {
            'card_camera': {
                'kind': 'scripted',
                'class_names': full_deck(),
                'postprocess': 'softmax' if noisy else 'identity',
                'conversion': {'threshold': 0.5, 'snap_value': 1.0},
            }
        },
        'driver': {
            'source': '1',
            'classifier': 'card_camera',
            'events': [card_event(card, i, noise) for i, card in enumerate(order)],
            'stop_condition': ODDS_CERTAIN,
        },
        'seed': seed or 0,
        'final_queries': [ODDS_CERTAIN],
    }
    return parse_scenario(document, SCENARIO_DIR / 'cardgame')


# ПРОГОН

@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    engine: ReasoningEngine
    run: RunResult
    halted: Optional[InconsistencyReport] = None

    @property
    def trace(self) -> List[TraceEntry]:
        return self.engine.export_trace()

    def final_answers(self) -> List[Tuple[Query, bool]]:
        return [(q, self.engine.query(q)) for q in self.spec.final_queries]


def build_engine(spec: ScenarioSpec, horizon: Optional[int] = None) -> ReasoningEngine:
    config = spec.engine
    if horizon is not None:
        config = EngineConfig(horizon, config.canonical, config.inconsistency_policy,
                              list(config.complement_pairs), config.max_passes)
    return ReasoningEngine(spec.graph, spec.rules, spec.facts, config, schema=spec.schema)


async def run_scenario(spec: ScenarioSpec, deterministic: bool = True, seed: Optional[int] = None,
                       horizon: Optional[int] = None, duration: Optional[float] = None) -> ScenarioResult:
    """Прогон сценария: сценарий, опросчики и монитор над одним движком"""
    engine = build_engine(spec, horizon)
    manager = EngineManager(engine)
    stop_signal = asyncio.Event()
    adapters: Dict[str, ClassifierAdapter] = {}

    def adapter_for(name: str) -> ClassifierAdapter:
        if name not in adapters:
            adapters[name] = create_adapter(name, spec.classifiers[name].spec)
        return adapters[name]

    driver = monitor = None
    if spec.driver is not None:
        events = list(spec.driver.events)
        if spec.driver.order == 'shuffle':
            random.Random(spec.seed if seed is None else seed).shuffle(events)
        binding = spec.classifiers[spec.driver.classifier]
        driver = DriverTask(spec.driver.source, adapter_for(binding.name), ScriptedInputSource(events),
                            binding.conversion, manager, stop_signal, spec.driver.target)
        if spec.driver.stop_condition is not None:
            monitor = MonitorTask(spec.driver.stop_condition, manager, stop_signal)

    pollers = []
    for poller in spec.pollers:
        binding = spec.classifiers[poller.classifier]
        pollers.append(PollerTask(poller.source, poller.config, adapter_for(binding.name),
                                  ScriptedInputSource(poller.events), binding.conversion, manager, poller.target))

    halted = None
    run_result = RunResult(pollers=pollers)
    try:
        if deterministic:
            run_result = await DeterministicScheduler(manager, driver, pollers, monitor).run()
        else:
            interval = spec.driver.interval_seconds if spec.driver else POLL_INTERVAL
            runner = RealtimeRunner(manager, driver, pollers, monitor, event_interval=interval,
                                    stop_signal=stop_signal)
            run_result = await runner.run(duration)
    except InconsistencyHalt as e:
        halted = e.report
    finally:
        for adapter in adapters.values():
            await adapter.close()
    logger.info(f"✅ Сценарий {spec.name}: t={engine.time}, записей трассы {len(engine.export_trace())}")
    return ScenarioResult(spec, engine, run_result, halted)


# СРАВНЕНИЕ ТРАСС

@dataclass
class GoldenTrace:
    rows: List[TraceRow]

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'GoldenTrace':
        path = Path(path)
        if not path.is_file():
            raise ScenarioError(f"Эталонная трасса не найдена: {path}")
        return cls(read_trace_tsv(path.read_text(encoding='utf-8')))


@dataclass
class ComparisonReport:
    compared: int
    mismatches: List[Tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches


def _as_rows(actual: Union[str, Path, Sequence[TraceEntry], Sequence[TraceRow]]) -> List[TraceRow]:
    if isinstance(actual, (str, Path)):
        return GoldenTrace.load(actual).rows
    rows = []
    for item in actual:
        if isinstance(item, TraceEntry):
            fpo, node, label, old, new, source = item.row()
            item = TraceRow(item.fpo, node, label, item.old_bound, item.new_bound, source)
        rows.append(item)
    return rows


def compare_trace(actual, golden: GoldenTrace, tolerance: float = 1e-5) -> ComparisonReport:
    """Построчное сравнение трассы с эталоном"""
    rows = _as_rows(actual)
    report = ComparisonReport(compared=min(len(rows), len(golden.rows)))
    for index, (got, want) in enumerate(zip(rows, golden.rows)):
        problems = []
        for name in ('fpo', 'node', 'label'):
            if getattr(got, name) != getattr(want, name):
                problems.append(f"{name}: {getattr(got, name)} != {getattr(want, name)}")
        for name in ('old_bound', 'new_bound'):
            if not getattr(got, name).close_to(getattr(want, name), tolerance):
                problems.append(f"{name}: {getattr(got, name)} != {getattr(want, name)}")
        if want.source and got.source != want.source:
            problems.append(f"source: {got.source} != {want.source}")
        if problems:
            report.mismatches.append((index, '; '.join(problems)))
    for index in range(len(rows), len(golden.rows)):
        report.mismatches.append((index, 'строка отсутствует в трассе'))
    for index in range(len(golden.rows), len(rows)):
        report.mismatches.append((index, 'лишняя строка в трассе'))
    return report


INPUT_ERRORS = (ScenarioError, ProgramError, GraphError, BridgeError, EngineError)
