import argparse
import asyncio
import sys

from config import validate_config, logger
from handlers import EXIT_INPUT, cmd_compare, cmd_query, cmd_run, cmd_validate


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='reasoner', description='Темпоральный вывод над графом знаний')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='прогнать сценарий и записать трассу')
    run.add_argument('scenario')
    run.add_argument('--deterministic', action='store_true', help='логические такты вместо настенных часов')
    run.add_argument('--seed', type=int)
    run.add_argument('--trace-out')
    run.add_argument('--horizon', type=int)
    run.add_argument('--edges', action='store_true', help='включить в трассу изменения рёбер')
    run.add_argument('--duration', type=float, help='длительность прогона без сценарных событий, с')

    query = commands.add_parser('query', help='ответить на запрос после прогона')
    query.add_argument('scenario')
    query.add_argument('query')
    query.add_argument('--at', type=int, help='момент времени (по умолчанию последний)')

    compare = commands.add_parser('compare', help='сравнить трассу с эталоном')
    compare.add_argument('trace')
    compare.add_argument('golden')
    compare.add_argument('--tol', type=float, default=1e-5)

    validate = commands.add_parser('validate', help='проверить сценарий без прогона')
    validate.add_argument('scenario')
    return parser


async def main(argv=None) -> int:
    """Основная функция"""
    args = build_parser().parse_args(argv)
    if not validate_config():
        return EXIT_INPUT

    if args.command == 'run':
        return await cmd_run(args.scenario, deterministic=args.deterministic, seed=args.seed,
                             trace_out=args.trace_out, horizon=args.horizon,
                             edges=args.edges, duration=args.duration)
    if args.command == 'query':
        return await cmd_query(args.scenario, args.query, at=args.at)
    if args.command == 'compare':
        return await cmd_compare(args.trace, args.golden, tolerance=args.tol)
    return await cmd_validate(args.scenario)


if __name__ == "__main__":
    try:
        sys.exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("Программа прервана пользователем")
        sys.exit(1)
