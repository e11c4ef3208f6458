from pathlib import Path
from typing import Optional

from annotation_functions import describe_registry
from config import TRACE_DIR, logger
from engine import EngineError, read_trace_tsv, trace_to_tsv
from logic_lang import parse_query
from reports import render_comparison, render_explanation, render_inconsistency, render_summary
from scenarios import INPUT_ERRORS, GoldenTrace, build_engine, compare_trace, load_scenario, run_scenario

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INPUT = 2


def _input_error(e: Exception) -> int:
    logger.error(f"❌ {type(e).__name__}: {e}")
    print(f"❌ {type(e).__name__}: {e}")
    return EXIT_INPUT


async def cmd_run(scenario_path: str, deterministic: bool = True, seed: Optional[int] = None,
                  trace_out: Optional[str] = None, horizon: Optional[int] = None,
                  edges: bool = False, duration: Optional[float] = None) -> int:
    """Прогон сценария и запись трассы"""
    try:
        spec = load_scenario(scenario_path)
        result = await run_scenario(spec, deterministic=deterministic, seed=seed,
                                    horizon=horizon, duration=duration)
    except INPUT_ERRORS as e:
        return _input_error(e)

    path = Path(trace_out) if trace_out else Path(TRACE_DIR) / f"{spec.name}.tsv"
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = result.engine.export_trace('all' if edges else 'node')
    path.write_text(trace_to_tsv(entries), encoding='utf-8')
    logger.info(f"💾 Трасса записана: {path}")

    print(render_summary(result))
    print(f"💾 Трасса: {path}")
    if result.halted is not None:
        print(render_inconsistency(result.halted))
        return EXIT_FAILURE
    return EXIT_OK


async def cmd_query(scenario_path: str, query_text: str, at: Optional[int] = None) -> int:
    """Запрос к модели после прогона с объяснением"""
    try:
        query = parse_query(query_text)
        spec = load_scenario(scenario_path)
        result = await run_scenario(spec)
    except INPUT_ERRORS as e:
        return _input_error(e)
    if result.halted is not None:
        print(render_inconsistency(result.halted))
        return EXIT_FAILURE

    engine = result.engine
    tick = engine.time if at is None else at
    if tick < 0 or tick > engine.time:
        return _input_error(EngineError(f"момент {tick} вне прогона 0..{engine.time}"))
    entity, label = query.key
    verdict = engine.query(query, tick)
    chain = engine.explain(entity, label, tick) if engine.bound(entity, label, tick) is not None else []
    print(render_explanation(query, verdict, tick, chain))
    return EXIT_OK


async def cmd_compare(trace_path: str, golden_path: str, tolerance: float = 1e-5) -> int:
    """Сравнение трассы с эталоном"""
    try:
        golden = GoldenTrace.load(golden_path)
        actual = read_trace_tsv(Path(trace_path).read_text(encoding='utf-8'))
    except OSError as e:
        return _input_error(e)
    except INPUT_ERRORS as e:
        return _input_error(e)
    report = compare_trace(actual, golden, tolerance)
    print(render_comparison(report))
    return EXIT_OK if report.ok else EXIT_FAILURE


async def cmd_validate(scenario_path: str) -> int:
    """Проверка сценария без прогона"""
    try:
        spec = load_scenario(scenario_path)
        engine = build_engine(spec)
    except INPUT_ERRORS as e:
        return _input_error(e)
    print(f"✅ Сценарий {spec.name} корректен: {len(spec.graph.nodes)} вершин, "
          f"{len(spec.graph.edges)} рёбер, {len(engine.rules)} правил, {len(spec.facts)} фактов, "
          f"опросчиков {len(spec.pollers)}")
    print(f"🧮 Функции аннотаций: {describe_registry(engine.registry)}")
    return EXIT_OK
