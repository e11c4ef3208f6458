import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

from pyparsing import (
    DelimitedList,
    Group,
    Keyword,
    Opt,
    ParseBaseException,
    ParseFatalException,
    ParserElement,
    ParseResults,
    QuotedString,
    Regex,
    StringEnd,
    Suppress,
)

from intervals import TRUE, Interval, OutOfRange

ParserElement.enable_packrat()

Entity = Union[str, Tuple[str, str]]
AtomKey = Tuple[Entity, str]

_PLAIN_CONSTANT = re.compile(r'^[a-z0-9_][A-Za-z0-9_]*$')
_QUOTED = re.compile(r'"(?:\\.|[^"\\])*"|\'(?:\\.|[^\'\\])*\'')


class ProgramError(ValueError):
    """Базовая ошибка программы на языке правил"""


class ProgramSyntaxError(ProgramError):
    """Синтаксическая ошибка с позицией"""

    def __init__(self, message: str, line: int = 1, column: int = 1):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(f"строка {line}, позиция {column}: {message}")


class RangeRestrictionError(ProgramError):
    """Переменная головы не встречается в теле правила"""


class NonGroundFact(ProgramError):
    """Факт или запрос содержит переменные"""


class ProgramErrors(ProgramError):
    """Все ошибки разбора программы, собранные вместе"""

    def __init__(self, errors: List[ProgramError]):
        self.errors = errors
        super().__init__("\n".join(str(error) for error in errors))


# ДЕРЕВО РАЗБОРА

@dataclass(frozen=True)
class Term:
    kind: str  # constant | variable
    name: str

    @property
    def is_variable(self) -> bool:
        return self.kind == 'variable'


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: Tuple[Term, ...]

    @property
    def arity(self) -> int:
        return len(self.args)

    def variables(self) -> List[str]:
        return [term.name for term in self.args if term.is_variable]

    def is_ground(self) -> bool:
        return not self.variables()

    def ground(self, substitution: Optional[Dict[str, str]] = None) -> AtomKey:
        """Ключ (сущность, метка) атома после подстановки"""
        substitution = substitution or {}
        names = tuple(substitution[t.name] if t.is_variable else t.name for t in self.args)
        entity: Entity = names[0] if len(names) == 1 else names
        return entity, self.predicate


@dataclass(frozen=True)
class Literal:
    atom: Atom
    negated: bool = False
    threshold: Interval = TRUE


@dataclass(frozen=True)
class AnnotationSpec:
    kind: str  # constant-interval | function-reference
    interval: Optional[Interval] = None
    function_name: Optional[str] = None

    @classmethod
    def constant(cls, interval: Interval) -> 'AnnotationSpec':
        return cls('constant-interval', interval=interval)

    @classmethod
    def function(cls, name: str) -> 'AnnotationSpec':
        return cls('function-reference', function_name=name)

    @property
    def is_function(self) -> bool:
        return self.kind == 'function-reference'


DEFAULT_ANNOTATION = AnnotationSpec.constant(TRUE)


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: Tuple[Literal, ...]
    head_annotation: AnnotationSpec = DEFAULT_ANNOTATION
    delta_t: int = 0
    id: str = field(default='r1', compare=False)

    def variables(self) -> List[str]:
        seen: List[str] = []
        for atom in [self.head] + [lit.atom for lit in self.body]:
            for name in atom.variables():
                if name not in seen:
                    seen.append(name)
        return seen


@dataclass(frozen=True)
class Fact:
    atom: Atom
    annotation: Interval
    from_t: int = 0
    to_t: int = 0
    static: bool = False
    override: bool = False
    id: str = field(default='f1', compare=False)

    @property
    def key(self) -> AtomKey:
        return self.atom.ground()

    def at(self, t: int) -> 'Fact':
        """Копия факта с окном [t,t]"""
        return Fact(self.atom, self.annotation, t, t, self.static, self.override, self.id)


@dataclass(frozen=True)
class Query:
    atom: Atom
    bound: Interval = TRUE

    @property
    def key(self) -> AtomKey:
        return self.atom.ground()


# ГРАММАТИКА

def _fatal(s: str, loc: int, message: str):
    raise ParseFatalException(s, loc, message)


def _build_interval(s, loc, tokens):
    try:
        return Interval(float(tokens[0]), float(tokens[1]))
    except (OutOfRange, ValueError) as e:
        _fatal(s, loc, f"некорректный интервал: {e}")


@dataclass(frozen=True)
class _Window:
    from_t: int = 0
    to_t: int = 0
    static: bool = False


def _build_window(s, loc, tokens):
    start, end = int(tokens[0]), int(tokens[1])
    if start > end:
        _fatal(s, loc, f"окно [{start},{end}] начинается позже, чем заканчивается")
    return _Window(start, end)


def _build_atom(s, loc, tokens):
    predicate, args = tokens[0], list(tokens[1:])
    if len(args) > 2:
        _fatal(s, loc, f"арность {len(args)} у {predicate}: допустимы только 1 или 2")
    return Atom(predicate, tuple(args))


def _build_literal(s, loc, tokens):
    tokens = list(tokens)
    negated = tokens[0] == '~'
    if negated:
        tokens = tokens[1:]
    threshold = tokens[1] if len(tokens) > 1 else TRUE
    return Literal(tokens[0], negated, threshold)


def _build_grammar():
    number = Regex(r'[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?')
    integer = Regex(r'\d+')
    lbr, rbr, comma, colon = map(Suppress, '[],:')

    variable = Regex(r'[A-Z][A-Za-z0-9_]*').set_parse_action(lambda t: Term('variable', t[0]))
    constant = (
        Regex(r'[a-z0-9_][A-Za-z0-9_]*')
        | QuotedString('"', esc_char='\\')
        | QuotedString("'", esc_char='\\')
    ).set_parse_action(lambda t: Term('constant', t[0]))
    term = variable | constant
    ident = Regex(r'[A-Za-z_][A-Za-z0-9_]*')

    interval = (lbr + number + comma + number + rbr).set_parse_action(_build_interval)
    window = (lbr + integer + comma + integer + rbr).set_parse_action(_build_window)
    atom = (ident + Suppress('(') + DelimitedList(term) + Suppress(')')).set_parse_action(_build_atom)

    # имя результата ставится на каждую альтернативу, иначе get() вернёт список
    annspec = interval.copy().add_parse_action(lambda t: AnnotationSpec.constant(t[0]))('annotation') | \
        ident.copy().set_parse_action(lambda t: AnnotationSpec.function(t[0]))('annotation')
    static = Keyword('static').set_parse_action(lambda: _Window(static=True))
    literal = (Opt('~') + atom + Opt(colon + interval)).set_parse_action(_build_literal)
    arrow = Regex(r'<-(\d*)').set_parse_action(lambda t: int(t[0][2:] or 0))

    rule = atom('head') + Opt(colon + annspec) + arrow('delta') + \
        Group(DelimitedList(literal))('body') + StringEnd()
    fact = atom('atom') + colon + interval('interval') + \
        Opt(Suppress('@') + (window('window') | static('window'))) + \
        Opt('!')('override') + StringEnd()
    query = atom('atom') + Opt(colon + interval('interval')) + StringEnd()
    return rule, fact, query


_RULE, _FACT, _QUERY = _build_grammar()


def _strip_comment(line: str) -> str:
    """Удаление комментария '#' вне кавычек"""
    quote = None
    escaped = False
    for i, ch in enumerate(line):
        if quote:
            if escaped:
                escaped = False
            elif ch == '\\':
                escaped = True
            elif ch == quote:
                quote = None
        elif ch in '"\'':
            quote = ch
        elif ch == '#':
            return line[:i]
    return line


def _token(result: ParseResults, name: str, default):
    value = result.get(name, default)
    if isinstance(value, ParseResults):
        return value[0] if len(value) else default
    return value


def _has_arrow(line: str) -> bool:
    """Стрелка правила вне строк в кавычках"""
    return '<-' in _QUOTED.sub('', line)


def _run(grammar, text: str, line: int):
    try:
        return grammar.parse_string(text, parse_all=True)
    except ParseBaseException as e:
        raise ProgramSyntaxError(e.msg, line=line + e.lineno - 1, column=e.col) from None


def parse_rule(text: str, rule_id: Optional[str] = None, line: int = 1) -> Rule:
    """Разбор одного правила"""
    result = _run(_RULE, text, line)
    annotation = _token(result, 'annotation', DEFAULT_ANNOTATION)
    rule = Rule(
        head=result.head,
        body=tuple(result.body),
        head_annotation=annotation,
        delta_t=result.delta,
        id=rule_id or f"r{line}",
    )
    body_vars = {name for lit in rule.body for name in lit.atom.variables()}
    unbound = [name for name in rule.head.variables() if name not in body_vars]
    if unbound:
        raise RangeRestrictionError(
            f"строка {line}: переменные головы {', '.join(unbound)} не встречаются в теле"
        )
    return rule


def parse_fact(text: str, fact_id: Optional[str] = None, line: int = 1) -> Fact:
    """Разбор факта: atom : [l,u] @ [t1,t2] | @ static"""
    result = _run(_FACT, text, line)
    atom: Atom = result.atom
    if not atom.is_ground():
        raise NonGroundFact(f"строка {line}: факт {atom.predicate} содержит переменные")
    window: _Window = _token(result, 'window', _Window())
    return Fact(
        atom=atom,
        annotation=result.interval,
        from_t=window.from_t,
        to_t=window.to_t,
        static=window.static,
        override='override' in result,
        id=fact_id or f"f{line}",
    )


def parse_query(text: str) -> Query:
    """Разбор запроса; граница по умолчанию [1,1]"""
    result = _run(_QUERY, text, 1)
    atom: Atom = result.atom
    if not atom.is_ground():
        raise NonGroundFact(f"запрос {atom.predicate} содержит переменные")
    return Query(atom, result.get('interval', TRUE))


def parse_program(text: str) -> Tuple[List[Rule], List[Fact]]:
    """Разбор программы: правила и факты в порядке исходного текста"""
    rules: List[Rule] = []
    facts: List[Fact] = []
    errors: List[ProgramError] = []
    for number, raw in enumerate((text or '').splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        try:
            if _has_arrow(line):
                rules.append(parse_rule(line, line=number))
            else:
                facts.append(parse_fact(line, line=number))
        except ProgramError as e:
            errors.append(e)
    if errors:
        raise ProgramErrors(errors)
    return rules, facts


# ФОРМАТИРОВАНИЕ

def _format_term(term: Term) -> str:
    if term.is_variable or _PLAIN_CONSTANT.match(term.name):
        return term.name
    escaped = term.name.replace('\\', '\\\\').replace('"', '\\"')
    return f'"{escaped}"'


def format_atom(atom: Atom) -> str:
    return f"{atom.predicate}({','.join(_format_term(t) for t in atom.args)})"


def _format_literal(literal: Literal) -> str:
    prefix = '~' if literal.negated else ''
    return f"{prefix}{format_atom(literal.atom)}:{literal.threshold}"


def format_node(node: Union[Rule, Fact, Query]) -> str:
    """Каноническая текстовая форма правила, факта или запроса"""
    if isinstance(node, Rule):
        head = format_atom(node.head)
        if node.head_annotation != DEFAULT_ANNOTATION:
            ann = node.head_annotation
            head += f" : {ann.function_name if ann.is_function else ann.interval}"
        body = ', '.join(_format_literal(lit) for lit in node.body)
        return f"{head} <-{node.delta_t} {body}"
    if isinstance(node, Fact):
        window = 'static' if node.static else f"[{node.from_t},{node.to_t}]"
        text = f"{format_atom(node.atom)} : {node.annotation} @ {window}"
        return text + ' !' if node.override else text
    if isinstance(node, Query):
        return f"{format_atom(node.atom)} : {node.bound}"
    raise TypeError(f"Неизвестный узел: {type(node).__name__}")


def make_fact(predicate: str, entity: Entity, annotation: Interval, t: int = 0,
              fact_id: Optional[str] = None, override: bool = False) -> Fact:
    """Построение факта без разбора текста"""
    names = (entity,) if isinstance(entity, str) else tuple(entity)
    atom = Atom(predicate, tuple(Term('constant', name) for name in names))
    return Fact(atom, annotation, t, t, override=override,
                id=fact_id or f"{format_atom(atom)}@{t}")

