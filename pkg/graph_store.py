import itertools
import json
import logging
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import networkx as nx

from intervals import TRUE, UNKNOWN, Interval, IntervalError, parse_interval
from logic_lang import AtomKey, Rule

logger = logging.getLogger(__name__)

REL = 'rel'


class GraphError(ValueError):
    """Базовая ошибка графа знаний"""


class SchemaError(GraphError):
    """Документ графа или схема типов не соответствуют формату"""


class DanglingEdge(GraphError):
    """Ребро ссылается на необъявленную вершину"""


class UnknownConstant(GraphError):
    """Константа не является вершиной графа"""


class KnowledgeGraph:
    """Типизированные вершины и помеченные рёбра - универсум заземления

    Вершины хранят атрибуты type и labels, рёбра - атрибут label.
    Между одной парой вершин допускается несколько рёбер с разными метками.
    """

    def __init__(self, graph: Optional[nx.MultiDiGraph] = None):
        self.g = graph if graph is not None else nx.MultiDiGraph()

    def add_node(self, name: str, node_type: Optional[str] = None,
                 labels: Optional[Dict[str, Interval]] = None):
        self.g.add_node(name, type=node_type, labels=dict(labels or {}))

    def add_edge(self, source: str, target: str, label: Optional[str] = None):
        self.g.add_edge(source, target, label=label)

    @property
    def nodes(self):
        return self.g.nodes

    @property
    def edges(self):
        return self.g.edges

    @property
    def pairs(self) -> List[Tuple[str, str]]:
        """Упорядоченные пары рёбер без повторов"""
        return sorted(set(self.g.edges()))

    def has_edge(self, a: str, b: str) -> bool:
        return self.g.has_edge(a, b)

    def node_type(self, name: str) -> Optional[str]:
        return self.g.nodes[name].get('type') if name in self.g else None

    def node_names(self) -> List[str]:
        return sorted(self.g.nodes)

    def types(self) -> Set[str]:
        return {t for _, t in self.g.nodes(data='type') if t}

    def seed_atoms(self) -> Dict[AtomKey, Interval]:
        """Атомы из меток графа: label(from,to) и метки вершин"""
        seeds: Dict[AtomKey, Interval] = {}
        for source, target, label in self.g.edges(data='label'):
            if label:
                seeds[((source, target), label)] = TRUE
        for node, labels in self.g.nodes(data='labels'):
            for label, bound in (labels or {}).items():
                seeds[(node, label)] = bound
        return seeds


TypeSchema = Dict[str, List[Optional[FrozenSet[str]]]]


def _require(document: Mapping, key: str, kind: type, where: str):
    value = document.get(key)
    if not isinstance(value, kind):
        raise SchemaError(f"{where}: поле '{key}' должно быть {kind.__name__}")
    return value


def load_graph(document: Union[str, Mapping[str, Any]]) -> KnowledgeGraph:
    """Загрузка графа из JSON-документа"""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SchemaError(f"Граф не является корректным JSON: {e}")
    if not isinstance(document, Mapping):
        raise SchemaError("Документ графа должен быть объектом")

    graph = KnowledgeGraph()
    for i, raw in enumerate(_require(document, 'nodes', list, 'граф')):
        if not isinstance(raw, Mapping) or not isinstance(raw.get('id'), str) or not raw['id']:
            raise SchemaError(f"вершина #{i}: требуется строковый 'id'")
        name = raw['id']
        if name in graph.nodes:
            raise SchemaError(f"вершина '{name}' объявлена дважды")
        node_type = raw.get('type')
        if node_type is not None and not isinstance(node_type, str):
            raise SchemaError(f"вершина '{name}': 'type' должен быть строкой")
        labels = raw.get('labels') or {}
        if not isinstance(labels, Mapping):
            raise SchemaError(f"вершина '{name}': 'labels' должен быть объектом")
        try:
            bounds = {
                label: parse_interval(bound) if isinstance(bound, str) else Interval(*bound)
                for label, bound in labels.items()
            }
        except (IntervalError, TypeError) as e:
            raise SchemaError(f"вершина '{name}': некорректная метка: {e}")
        graph.add_node(name, node_type, bounds)

    for i, raw in enumerate(document.get('edges') or []):
        if not isinstance(raw, Mapping):
            raise SchemaError(f"ребро #{i}: требуется объект")
        source, target = raw.get('from'), raw.get('to')
        if not isinstance(source, str) or not isinstance(target, str):
            raise SchemaError(f"ребро #{i}: требуются строковые 'from' и 'to'")
        for endpoint in (source, target):
            if endpoint not in graph.nodes:
                raise DanglingEdge(f"ребро #{i}: вершина '{endpoint}' не объявлена")
        label = raw.get('label')
        if label is not None and not isinstance(label, str):
            raise SchemaError(f"ребро #{i}: 'label' должен быть строкой")
        graph.add_edge(source, target, label)

    logger.debug(f"Граф загружен: {graph.g.number_of_nodes()} вершин, {graph.g.number_of_edges()} рёбер")
    return graph


def load_graph_file(path: Union[str, Path]) -> KnowledgeGraph:
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"Файл графа не найден: {path}")
    return load_graph(path.read_text(encoding='utf-8'))


def load_schema(document: Mapping[str, Any], graph: KnowledgeGraph) -> TypeSchema:
    """Схема типов: предикат -> список допустимых типов по позициям"""
    known = graph.types()
    schema: TypeSchema = {}
    for predicate, positions in document.items():
        if not isinstance(positions, list) or not 1 <= len(positions) <= 2:
            raise SchemaError(f"схема '{predicate}': ожидается список из 1 или 2 позиций")
        parsed: List[Optional[FrozenSet[str]]] = []
        for position in positions:
            if position is None:
                parsed.append(None)
                continue
            allowed = frozenset([position] if isinstance(position, str) else position)
            unknown = allowed - known
            if unknown:
                raise SchemaError(f"схема '{predicate}': неизвестные типы {sorted(unknown)}")
            parsed.append(allowed)
        schema[predicate] = parsed
    return schema


def rel_annotation(a: str, b: str, g: KnowledgeGraph) -> Interval:
    """rel(a,b): истина для объявленного ребра, иначе неизвестно"""
    for name in (a, b):
        if name not in g.nodes:
            raise UnknownConstant(f"'{name}' не является вершиной графа")
    return TRUE if g.has_edge(a, b) else UNKNOWN


def _allowed(schema: Optional[TypeSchema], predicate: str, position: int,
             node: str, g: KnowledgeGraph) -> bool:
    if not schema or predicate not in schema:
        return True
    positions = schema[predicate]
    if position >= len(positions) or positions[position] is None:
        return True
    return g.node_type(node) in positions[position]


def _extend(substitutions: Iterable[Dict[str, str]], names: Sequence, candidates: Iterable[Tuple[str, ...]]):
    """Присоединение кандидатов к подстановкам с учётом уже связанных переменных"""
    candidates = list(candidates)
    for sub in substitutions:
        for values in candidates:
            new = dict(sub)
            ok = True
            for (is_var, name), value in zip(names, values):
                if is_var:
                    if new.setdefault(name, value) != value:
                        ok = False
                        break
                elif name != value:
                    ok = False
                    break
            if ok:
                yield new


def groundings(rule: Rule, g: KnowledgeGraph, schema: Optional[TypeSchema] = None) -> List[Dict[str, str]]:
    """Все подстановки переменных правила вершинами графа в лексикографическом порядке"""
    substitutions: List[Dict[str, str]] = [{}]
    nodes = g.node_names()
    for literal in rule.body:
        atom = literal.atom
        names = [(t.is_variable, t.name) for t in atom.args]
        if not any(is_var for is_var, _ in names):
            continue
        if atom.arity == 1:
            candidates = [(n,) for n in nodes if _allowed(schema, atom.predicate, 0, n, g)]
        elif atom.predicate == REL:
            candidates = [(a, b) for a, b in itertools.product(nodes, nodes)
                          if _allowed(schema, REL, 0, a, g) and _allowed(schema, REL, 1, b, g)]
        else:
            candidates = [(a, b) for a, b in g.pairs
                          if _allowed(schema, atom.predicate, 0, a, g)
                          and _allowed(schema, atom.predicate, 1, b, g)]
        substitutions = list(_extend(substitutions, names, candidates))
        if not substitutions:
            return []

    # Голова тоже проходит проверку типов
    variables = sorted(rule.variables())
    result = []
    for sub in substitutions:
        if all(_allowed(schema, rule.head.predicate, i, sub[t.name], g)
               for i, t in enumerate(rule.head.args) if t.is_variable):
            result.append(sub)
    result.sort(key=lambda s: tuple(s[v] for v in variables))
    return result
