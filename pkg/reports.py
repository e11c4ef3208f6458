from collections import Counter
from typing import List, Sequence

from engine import INCONSISTENCY_RESET, InconsistencyReport, TraceEntry, format_entity
from logic_lang import Query, format_node


def render_summary(result) -> str:
    """Итог прогона сценария"""
    engine = result.engine
    trace = engine.export_trace()
    by_source = Counter(entry.source for entry in trace)
    lines = [
        f"📊 Сценарий: {result.spec.name}",
        f"⏱️ Логическое время: {engine.time} (горизонт {engine.config.horizon})",
        f"🔄 Изменений в трассе: {len(trace)} "
        f"(вершины {len(engine.export_trace('node'))}, рёбра {len(engine.export_trace('edge'))})",
        f"🔢 Операций неподвижной точки: {len({entry.fpo for entry in trace})}",
        f"⚠️ Противоречий: {len(engine.inconsistencies)}",
    ]
    if by_source:
        lines.append("🧵 По источникам: " + ', '.join(f"{s}={n}" for s, n in sorted(by_source.items())))
    if result.run.stopped_by_monitor:
        lines.append("🏁 Остановлено условием завершения")
    if result.run.horizon_reached:
        lines.append("⛔ Достигнут горизонт времени")
    answers = result.final_answers()
    if answers:
        lines.append("❓ Итоговые запросы:")
        for query, verdict in answers:
            lines.append(f"  {'✅' if verdict else '❌'} {format_node(query)}")
    return '\n'.join(lines)


def render_inconsistency(report: InconsistencyReport) -> str:
    return (f"❌ Вывод остановлен противоречием\n"
            f"  Атом: {report.label}({format_entity(report.entity)})\n"
            f"  Было: {report.old_bound}  Пришло: {report.new_bound}\n"
            f"  Время: {report.time}  Причина: {report.cause}  Источник: {report.source}")


def render_entry(entry: TraceEntry) -> str:
    cause = '🔁 сброс противоречия' if entry.cause == INCONSISTENCY_RESET else entry.cause
    return (f"  FPO {entry.fpo} t={entry.time}: {entry.label}({format_entity(entry.entity)}) "
            f"{entry.old_bound.to_trace()} -> {entry.new_bound.to_trace()} [{cause}, {entry.source}]")


def render_explanation(query: Query, verdict: bool, at: int, chain: Sequence[TraceEntry]) -> str:
    """Ответ на запрос и цепочка вывода"""
    lines = [f"{'✅ true' if verdict else '❌ false'}: {format_node(query)} при t={at}"]
    if not chain:
        lines.append("ℹ️ Атом не затронут выводом: open-world unknown, граница [0,1]")
        return '\n'.join(lines)
    lines.append("📜 Цепочка вывода:")
    lines.extend(render_entry(entry) for entry in chain)
    return '\n'.join(lines)


def render_comparison(report) -> str:
    if report.ok:
        return f"✅ Трасса совпадает с эталоном ({report.compared} строк)"
    lines: List[str] = [f"❌ Расхождений: {len(report.mismatches)}"]
    for index, message in report.mismatches:
        lines.append(f"  строка {index}: {message}")
    return '\n'.join(lines)
