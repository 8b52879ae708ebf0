"""A small Java-flavored imperative language: lexer, tolerant parser, AST.

The language is a line-oriented subset: every statement header (with its
opening brace), every simple statement, and every closing brace sits on its
own source line. Rendered slices prefix each statement with "L :" where L is
the original line number.

Grammar:
    program     := class_decl | method_decl | stmt*
    class_decl  := "class" IDENT "{" method_decl* "}"
    method_decl := type IDENT "(" ")" block
    block       := "{" stmt* "}"
    stmt        := decl ";" | assign ";" | if | while | for
                 | "return" expr? ";" | block
    decl        := type IDENT ("=" expr)?
    assign      := IDENT "=" expr
    if          := "if" "(" expr ")" block ("else" block)?
    while       := "while" "(" expr ")" block
    for         := "for" "(" decl ";" expr ";" assign ")" block
    type        := "int" | "long" | "boolean"

Parsing never fails: any rule failure consumes tokens up to the next
statement boundary (';', '{', '}', or line break) into a single error leaf
and resumes. Silent repairs (missing semicolon at end of line, implicit
block close at EOF) are counted so callers can detect inputs a strict parser
would reject.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

KEYWORDS = frozenset({"class", "int", "long", "boolean", "if", "else", "while", "for", "return"})
TYPES = frozenset({"int", "long", "boolean"})

KIND_KEYWORD = "keyword"
KIND_IDENT = "identifier"
KIND_INT = "int_literal"
KIND_OP = "operator"
KIND_PUNCT = "punct"
KIND_LINE_MARKER = "line_marker"

STMT_KINDS = (
    "decl", "assign", "if_header", "else_header", "while_header", "for_header",
    "return", "open_brace", "close_brace", "method_header", "class_header",
)


@dataclass(frozen=True)
class Token:
    text: str
    kind: str
    line: int
    col: int


@dataclass(frozen=True)
class Statement:
    line: int
    tokens: tuple[Token, ...]
    kind: str

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(t.text for t in self.tokens)


@dataclass
class AstNode:
    label: str
    children: list["AstNode"] = field(default_factory=list)
    span: tuple[int, int] = (0, 0)
    is_error: bool = False


_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<comment>//[^\n]*|/\*.*?\*/)
      | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
      | (?P<int>[0-9]+)
      | (?P<op><=|>=|==|!=|&&|\|\||[=<>+\-*/%!])
      | (?P<punct>[(){};:,.\[\]])
    """,
    re.VERBOSE | re.DOTALL,
)


def tokenize(source: str) -> list[Token]:
    """Maximal-munch lexing; never fails.

    Whitespace and comments are dropped; any character outside the language
    becomes a single-character punct token so corrupted inputs still lex.
    """
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    n = len(source)
    while pos < n:
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            tokens.append(Token(source[pos], KIND_PUNCT, line, col))
            pos += 1
            col += 1
            continue
        text = m.group(0)
        group = m.lastgroup
        if group == "name":
            kind = KIND_KEYWORD if text in KEYWORDS else KIND_IDENT
            tokens.append(Token(text, kind, line, col))
        elif group == "int":
            tokens.append(Token(text, KIND_INT, line, col))
        elif group == "op":
            tokens.append(Token(text, KIND_OP, line, col))
        elif group == "punct":
            tokens.append(Token(text, KIND_PUNCT, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    return tokens


def classify_statement(tokens: list[Token] | tuple[Token, ...]) -> str:
    """Statement kind from a single line's tokens."""
    texts = [t.text for t in tokens]
    first = texts[0]
    if first == "}":
        return "close_brace"
    if first == "{":
        return "open_brace"
    if first == "class":
        return "class_header"
    if first in TYPES:
        if len(texts) >= 3 and texts[2] == "(":
            return "method_header"
        return "decl"
    if first == "if":
        return "if_header"
    if first == "else":
        return "else_header"
    if first == "while":
        return "while_header"
    if first == "for":
        return "for_header"
    if first == "return":
        return "return"
    return "assign"


def split_statements(text: str) -> list[Statement]:
    """One Statement per non-blank physical line, keeping 1-based line numbers."""
    statements = []
    for i, raw in enumerate(text.split("\n"), start=1):
        toks = tokenize(raw)
        if not toks:
            continue
        toks = [Token(t.text, t.kind, i, t.col) for t in toks]
        statements.append(Statement(i, tuple(toks), classify_statement(toks)))
    return statements


def render_program(statements: list[Statement]) -> str:
    """Canonical program text: tokens joined by single spaces, one stmt per line."""
    return "\n".join(" ".join(s.texts) for s in statements)


def render_slice(statements: list[Statement]) -> str:
    """Line-prefixed slice text: 'L : tok tok ...' per statement."""
    prev = 0
    for s in statements:
        if s.line <= prev:
            raise ValueError(f"render_slice input unordered: line {s.line} after {prev}")
        prev = s.line
    return "\n".join(f"{s.line} : " + " ".join(s.texts) for s in statements)


def split_slice_line(texts: list[str]) -> tuple[int | None, list[str]]:
    """Strip a leading 'L :' prefix (digits may arrive as separate tokens)."""
    i = 0
    while i < len(texts) and texts[i].isdigit():
        i += 1
    if i > 0 and i < len(texts) and texts[i] == ":":
        return int("".join(texts[:i])), texts[i + 1 :]
    return None, list(texts)


def strip_line_prefixes(slice_text: str) -> str:
    """Slice text without its 'L :' prefixes, ready for parsing."""
    out = []
    for raw in slice_text.split("\n"):
        toks = [t.text for t in tokenize(raw)]
        if not toks:
            continue
        _, rest = split_slice_line(toks)
        out.append(" ".join(rest))
    return "\n".join(out)


def slice_lines(slice_text: str) -> list[int]:
    """Line numbers named by a rendered slice's prefixes, in order."""
    lines = []
    for raw in slice_text.split("\n"):
        toks = [t.text for t in tokenize(raw)]
        if not toks:
            continue
        num, _ = split_slice_line(toks)
        if num is not None:
            lines.append(num)
    return lines


# ---------------------------------------------------------------------------
# tolerant recursive-descent parser


@dataclass
class ParseStats:
    error_nodes: int = 0
    repairs: int = 0

    @property
    def clean(self) -> bool:
        return self.error_nodes == 0 and self.repairs == 0


_BOUNDARY = frozenset({";", "{", "}"})
_BINARY_OPS = (
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", ">", "<=", ">="),
    ("+", "-"),
    ("*", "/", "%"),
)


class _Parser:
    def __init__(self, tokens: list[Token], stats: ParseStats):
        self.toks = tokens
        self.pos = 0
        self.stats = stats

    # -- stream helpers

    def peek(self, off: int = 0) -> Token | None:
        i = self.pos + off
        return self.toks[i] if i < len(self.toks) else None

    def at(self, text: str) -> bool:
        t = self.peek()
        return t is not None and t.text == text

    def eat(self, text: str) -> Token | None:
        if self.at(text):
            self.pos += 1
            return self.toks[self.pos - 1]
        return None

    def done(self) -> bool:
        return self.pos >= len(self.toks)

    def cur_line(self) -> int:
        t = self.peek()
        if t is not None:
            return t.line
        return self.toks[-1].line if self.toks else 1

    def line_broke_since(self, line: int) -> bool:
        t = self.peek()
        return t is None or t.line > line

    # -- node helpers

    def error_leaf(self, line: int) -> AstNode:
        self.stats.error_nodes += 1
        return AstNode("error", [], (line, line), is_error=True)

    def recover_to_boundary(self) -> AstNode:
        """Consume the failing region (through ';', stopping before braces or
        the next line) into a single error leaf."""
        start = self.cur_line()
        consumed = 0
        while not self.done():
            t = self.peek()
            if t.line > start and consumed > 0:
                break
            if t.text in ("{", "}") and consumed > 0:
                break
            self.pos += 1
            consumed += 1
            if t.text == ";":
                break
        return self.error_leaf(start)

    # -- grammar

    def parse_program(self) -> AstNode:
        children: list[AstNode] = []
        first = self.peek()
        if first is not None and first.text == "class":
            children.append(self.parse_class())
        elif self.looks_like_method_header():
            children.append(self.parse_method())
        while not self.done():
            if self.at("}"):
                # stray close brace at top level
                line = self.cur_line()
                self.pos += 1
                children.append(self.error_leaf(line))
                continue
            if self.looks_like_method_header():
                children.append(self.parse_method())
            else:
                children.append(self.parse_stmt())
        start = self.toks[0].line if self.toks else 1
        end = self.toks[-1].line if self.toks else 1
        return AstNode("program", children, (start, end))

    def looks_like_method_header(self) -> bool:
        a, b, c = self.peek(0), self.peek(1), self.peek(2)
        return (
            a is not None and a.text in TYPES
            and b is not None and b.kind == KIND_IDENT
            and c is not None and c.text == "("
        )

    def parse_class(self) -> AstNode:
        start = self.cur_line()
        self.eat("class")
        name = self.parse_name()
        children = [name]
        if self.eat("{") is None:
            self.stats.repairs += 1
        while not self.done() and not self.at("}"):
            if self.looks_like_method_header():
                children.append(self.parse_method())
            else:
                children.append(self.recover_to_boundary())
        end = self.cur_line()
        if self.eat("}") is None:
            self.stats.repairs += 1
        return AstNode("class", children, (start, end))

    def parse_method(self) -> AstNode:
        start = self.cur_line()
        self.pos += 1  # type
        name = self.parse_name()
        if self.eat("(") is None:
            self.stats.repairs += 1
        if self.eat(")") is None:
            self.stats.repairs += 1
        block = self.parse_block()
        return AstNode("method", [name, block], (start, block.span[1]))

    def parse_name(self) -> AstNode:
        t = self.peek()
        if t is not None and t.kind == KIND_IDENT:
            self.pos += 1
            return AstNode("ident", [], (t.line, t.line))
        return self.error_leaf(self.cur_line())

    def parse_block(self) -> AstNode:
        start = self.cur_line()
        if self.eat("{") is None:
            self.stats.repairs += 1
            return AstNode("block", [], (start, start))
        children = []
        while not self.done() and not self.at("}"):
            children.append(self.parse_stmt())
        end = self.cur_line()
        if self.eat("}") is None:
            self.stats.repairs += 1
            end = self.toks[-1].line if self.toks else start
        return AstNode("block", children, (start, end))

    def parse_stmt(self) -> AstNode:
        t = self.peek()
        assert t is not None
        if t.text in TYPES:
            return self.parse_decl_stmt()
        if t.text == "if":
            return self.parse_if()
        if t.text == "while":
            return self.parse_while()
        if t.text == "for":
            return self.parse_for()
        if t.text == "return":
            return self.parse_return()
        if t.text == "{":
            return self.parse_block()
        if t.kind == KIND_IDENT:
            nxt = self.peek(1)
            if nxt is not None and nxt.text == "=" and nxt.line == t.line:
                return self.parse_assign_stmt()
        return self.recover_to_boundary()

    def finish_simple_stmt(self, node: AstNode, line: int) -> AstNode:
        """Consume the trailing ';', tolerating its absence at a line break,
        EOF, or closing brace; same-line garbage becomes one error leaf."""
        if self.eat(";") is not None:
            return node
        if self.done() or self.line_broke_since(line) or self.at("}"):
            self.stats.repairs += 1
            return node
        node.children.append(self.recover_to_boundary())
        return node

    def parse_decl_core(self) -> AstNode:
        start = self.cur_line()
        self.pos += 1  # type keyword
        children = [self.parse_name()]
        if self.eat("=") is not None:
            children.append(self.parse_expr(start))
        return AstNode("decl", children, (start, start))

    def parse_decl_stmt(self) -> AstNode:
        node = self.parse_decl_core()
        return self.finish_simple_stmt(node, node.span[0])

    def parse_assign_core(self) -> AstNode:
        start = self.cur_line()
        children = [self.parse_name()]
        if self.eat("=") is None:
            children.append(self.error_leaf(start))
            return AstNode("assign", children, (start, start))
        children.append(self.parse_expr(start))
        return AstNode("assign", children, (start, start))

    def parse_assign_stmt(self) -> AstNode:
        node = self.parse_assign_core()
        return self.finish_simple_stmt(node, node.span[0])

    def parse_return(self) -> AstNode:
        start = self.cur_line()
        self.eat("return")
        children = []
        if not self.done() and not self.at(";") and not self.at("}") and not self.line_broke_since(start):
            children.append(self.parse_expr(start))
        node = AstNode("return", children, (start, start))
        return self.finish_simple_stmt(node, start)

    def parse_condition(self, start: int) -> AstNode:
        if self.eat("(") is None:
            self.stats.repairs += 1
        cond = self.parse_expr(start)
        if self.eat(")") is None:
            self.stats.repairs += 1
        return cond

    def parse_if(self) -> AstNode:
        start = self.cur_line()
        self.eat("if")
        cond = self.parse_condition(start)
        then = self.parse_block()
        children = [cond, then]
        end = then.span[1]
        if self.at("else"):
            self.pos += 1
            other = self.parse_block()
            children.append(other)
            end = other.span[1]
        return AstNode("if", children, (start, end))

    def parse_while(self) -> AstNode:
        start = self.cur_line()
        self.eat("while")
        cond = self.parse_condition(start)
        body = self.parse_block()
        return AstNode("while", [cond, body], (start, body.span[1]))

    def parse_for(self) -> AstNode:
        start = self.cur_line()
        self.eat("for")
        if self.eat("(") is None:
            self.stats.repairs += 1
        if self.peek() is not None and self.peek().text in TYPES:
            init = self.parse_decl_core()
        else:
            init = self.error_leaf(start)
        if self.eat(";") is None:
            self.stats.repairs += 1
        cond = self.parse_expr(start)
        if self.eat(";") is None:
            self.stats.repairs += 1
        t = self.peek()
        if t is not None and t.kind == KIND_IDENT:
            update = self.parse_assign_core()
        else:
            update = self.error_leaf(start)
        if self.eat(")") is None:
            self.stats.repairs += 1
        body = self.parse_block()
        return AstNode("for", [init, cond, update, body], (start, body.span[1]))

    # -- expressions (precedence climbing)

    def parse_expr(self, line: int, level: int = 0) -> AstNode:
        if level >= len(_BINARY_OPS):
            return self.parse_unary(line)
        node = self.parse_expr(line, level + 1)
        ops = _BINARY_OPS[level]
        while True:
            t = self.peek()
            if t is None or t.text not in ops or t.line != line:
                return node
            self.pos += 1
            rhs = self.parse_expr(line, level + 1)
            node = AstNode(f"binop:{t.text}", [node, rhs], (node.span[0], rhs.span[1]))

    def parse_unary(self, line: int) -> AstNode:
        t = self.peek()
        if t is not None and t.text in ("!", "-") and t.line == line:
            self.pos += 1
            operand = self.parse_unary(line)
            return AstNode(f"unary:{t.text}", [operand], (t.line, operand.span[1]))
        return self.parse_primary(line)

    def parse_primary(self, line: int) -> AstNode:
        t = self.peek()
        if t is None or t.line != line or t.text in _BOUNDARY or t.text == ")":
            return self.error_leaf(line)
        if t.kind == KIND_IDENT:
            self.pos += 1
            return AstNode("ident", [], (t.line, t.line))
        if t.kind == KIND_INT:
            self.pos += 1
            return AstNode("int", [], (t.line, t.line))
        if t.text == "(":
            self.pos += 1
            inner = self.parse_expr(line)
            if self.eat(")") is None:
                self.stats.repairs += 1
            return inner
        # not a valid operand: swallow one token so parsing always advances
        self.pos += 1
        return self.error_leaf(line)


def parse_with_stats(tokens: list[Token]) -> tuple[AstNode, ParseStats]:
    stats = ParseStats()
    root = _Parser(list(tokens), stats).parse_program()
    return root, stats


def parse_tolerant(tokens: list[Token]) -> AstNode:
    """Parse any token stream into a 'program' tree; total by construction."""
    root, _ = parse_with_stats(tokens)
    return root


def parse_text(text: str) -> AstNode:
    return parse_tolerant(tokenize(text))


def count_nodes(root: AstNode) -> int:
    """Total node count (error leaves included) == preorder traversal length."""
    total = 0
    stack = [root]
    while stack:
        node = stack.pop()
        total += 1
        stack.extend(node.children)
    return total


def count_error_nodes(root: AstNode) -> int:
    total = 0
    stack = [root]
    while stack:
        node = stack.pop()
        total += node.is_error
        stack.extend(node.children)
    return total
