"""Line-based configuration documents.

Grammar::

    # comment
    [section]
    key = value

A value is a number, an identifier, a quoted string, a call ``name(args)``
with positional or ``name=number`` keyword arguments, a bracketed list of
values, or a product ``call * [[matrix]]``.
"""
import re
from dataclasses import dataclass

from .errors import ParseError

__all__ = ["Call", "Ident", "Product", "Document", "parse_document", "parse_value", "fmt_float", "fmt_value"]

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?inf|nan)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<str>"[^"]*")
  | (?P<punct>[\[\](),=*])
""", re.VERBOSE)


class Ident(str):
    """A bare identifier value."""


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple = ()
    kwargs: tuple = ()  # sorted (name, value) pairs


@dataclass(frozen=True)
class Product:
    coef: object
    matrix: tuple


def _tokenize(text, line):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(line, f"unexpected character {text[pos]!r}")
        pos = m.end()
        kind = m.lastgroup
        if kind == "ws":
            continue
        out.append((kind, m.group()))
    return out


class _Parser:
    def __init__(self, tokens, line):
        self.toks = tokens
        self.i = 0
        self.line = line

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None:
            raise ParseError(self.line, "unexpected end of value")
        if value is not None and tok[1] != value:
            raise ParseError(self.line, f"expected {value!r}, found {tok[1]!r}")
        self.i += 1
        return tok

    def value(self):
        kind, text = self.peek()
        if kind == "num":
            self.take()
            return float(text)
        if kind == "str":
            self.take()
            return text[1:-1]
        if text == "[":
            return self.listing()
        if kind == "ident":
            self.take()
            if self.peek()[1] == "(":
                node = self.call(text)
            else:
                node = Ident(text)
            if self.peek()[1] == "*":
                self.take("*")
                mat = self.value()
                if not isinstance(mat, tuple):
                    raise ParseError(self.line, "expected a matrix after '*'")
                return Product(node, mat)
            return node
        raise ParseError(self.line, f"unexpected token {text!r}")

    def listing(self):
        self.take("[")
        items = []
        if self.peek()[1] == "]":
            self.take("]")
            return tuple(items)
        while True:
            items.append(self.value())
            tok = self.take()
            if tok[1] == "]":
                return tuple(items)
            if tok[1] != ",":
                raise ParseError(self.line, f"expected ',' or ']', found {tok[1]!r}")

    def call(self, name):
        self.take("(")
        args, kwargs = [], {}
        if self.peek()[1] == ")":
            self.take(")")
            return Call(name)
        while True:
            kind, text = self.peek()
            nxt = self.toks[self.i + 1][1] if self.i + 1 < len(self.toks) else None
            if kind == "ident" and nxt == "=":
                self.take()
                self.take("=")
                kwargs[text] = self.value()
            else:
                if kwargs:
                    raise ParseError(self.line, "positional argument after keyword argument")
                args.append(self.value())
            tok = self.take()
            if tok[1] == ")":
                return Call(name, tuple(args), tuple(sorted(kwargs.items())))
            if tok[1] != ",":
                raise ParseError(self.line, f"expected ',' or ')', found {tok[1]!r}")


def parse_value(text, line=0):
    """Parse one value string."""
    p = _Parser(_tokenize(text, line), line)
    if not p.toks:
        raise ParseError(line, "empty value")
    v = p.value()
    if p.i != len(p.toks):
        raise ParseError(line, f"trailing input {p.toks[p.i][1]!r}")
    return v


class Document:
    """Parsed sections: ``{section: {key: (value, line)}}``.

    Keys that appear before any section header belong to section ``""``.
    """

    def __init__(self, sections, order):
        self.sections = sections
        self.order = order

    def section(self, name):
        return self.sections.get(name, {})

    def has(self, name):
        return name in self.sections


_HEADER = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")
_KEY = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def _strip_comment(raw):
    out = []
    quoted = False
    for ch in raw:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).strip()


def parse_document(text):
    """Parse a configuration document into a :class:`Document`."""
    sections = {}
    order = []
    current = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            current = m.group(1)
            if current in sections:
                raise ParseError(lineno, f"duplicate section [{current}]")
            sections[current] = {}
            order.append(current)
            continue
        m = _KEY.match(line)
        if not m:
            raise ParseError(lineno, f"expected 'key = value' or '[section]', found {line!r}")
        key, rhs = m.group(1), m.group(2)
        if current not in sections:
            sections[current] = {}
            order.append(current)
        if key in sections[current]:
            raise ParseError(lineno, f"duplicate key {key!r}")
        sections[current][key] = (parse_value(rhs, lineno), lineno)
    return Document(sections, order)


def fmt_float(x):
    """Shortest round-trip decimal form of a float."""
    x = float(x)
    if x != x:
        return "nan"
    if x in (float("inf"), float("-inf")):
        return "inf" if x > 0 else "-inf"
    if x == 0.0:
        return "0.0"
    return repr(x)


def fmt_value(v):
    """Inverse of :func:`parse_value` for the value types it produces."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, float)):
        return fmt_float(v)
    if isinstance(v, Ident):
        return str(v)
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, Call):
        parts = [fmt_value(a) for a in v.args] + [f"{k}={fmt_value(a)}" for k, a in v.kwargs]
        return f"{v.name}({', '.join(parts)})"
    if isinstance(v, Product):
        return f"{fmt_value(v.coef)} * {fmt_value(v.matrix)}"
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(fmt_value(a) for a in v) + "]"
    raise TypeError(f"cannot format {v!r}")
