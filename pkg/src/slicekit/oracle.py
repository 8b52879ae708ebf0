"""Classical dependence-graph backward slicer used as the ground-truth oracle.

Data dependence comes from a reaching-definitions fixed point over a
statement-level control-flow graph (loop back edges give loop-carried defs);
control dependence is syntactic nesting (each statement depends on its
innermost enclosing if/while/for header), which is sound for this structured
language. A variable's declaration line is always depended on by every line
where the variable occurs.

Slices are restricted to lines at or before the criterion line, then closed
structurally: every included control header drags in its closing brace, and
any included else-branch statement drags in the `else {` line plus both
branch closers, so a rendered slice always reparses cleanly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import minilang
from .errors import AnalysisError, CriterionError
from .minilang import Statement

CONTROL_HEADERS = frozenset({"if_header", "while_header", "for_header"})


@dataclass(frozen=True)
class SliceCriterion:
    variable: str
    line: int


@dataclass
class ElseFrame:
    if_line: int
    else_line: int
    then_close: int
    else_close: int
    body_lines: frozenset[int]


@dataclass
class Pdg:
    nodes: frozenset[int]
    data_edges: frozenset[tuple[int, int]]     # (use line -> def line)
    control_edges: frozenset[tuple[int, int]]  # (stmt line -> header line)
    closers: dict[int, int] = field(default_factory=dict)   # header -> '}' line
    else_frames: list[ElseFrame] = field(default_factory=list)
    idents_by_line: dict[int, frozenset[str]] = field(default_factory=dict)

    def edges_from(self, line: int) -> set[int]:
        out = {d for (u, d) in self.data_edges if u == line}
        out |= {h for (s, h) in self.control_edges if s == line}
        return out


def _idents(tokens: list[str]) -> list[str]:
    toks = minilang.tokenize(" ".join(tokens))
    return [t.text for t in toks if t.kind == minilang.KIND_IDENT]


def _defs_uses(stmt: Statement) -> tuple[set[str], set[str]]:
    """Defined and used variable names on one statement line."""
    texts = list(stmt.texts)
    kind = stmt.kind
    if kind == "decl":
        name = texts[1] if len(texts) > 1 else None
        rhs = texts[texts.index("=") + 1 :] if "=" in texts else []
        return ({name} if name else set()), set(_idents(rhs))
    if kind == "assign":
        name = texts[0]
        rhs = texts[texts.index("=") + 1 :] if "=" in texts else texts[1:]
        return {name}, set(_idents(rhs))
    if kind in ("if_header", "while_header", "return"):
        return set(), set(_idents(texts[1:]))
    if kind == "for_header":
        semis = [i for i, t in enumerate(texts) if t == ";"]
        if len(semis) >= 2:
            init = texts[:semis[0]]
            cond = texts[semis[0] + 1 : semis[1]]
            update = texts[semis[1] + 1 :]
        else:
            init, cond, update = texts, [], []
        defs: set[str] = set()
        uses: set[str] = set()
        init_ids = _idents(init)
        if init_ids:
            defs.add(init_ids[0])
            uses.update(init_ids[1:])
        uses.update(_idents(cond))
        upd_ids = _idents(update)
        if upd_ids:
            defs.add(upd_ids[0])
            uses.update(upd_ids[1:])
        return defs, uses
    return set(), set()


@dataclass
class _Frame:
    kind: str            # "if" | "else" | "while" | "for" | "method" | "class"
    header: int          # governing header line (the if line for else frames)
    open_line: int
    body: set[int] = field(default_factory=set)


def _structure_scan(statements: list[Statement]):
    """Single pass over statement lines recovering nesting, closers, elses."""
    stack: list[_Frame] = []
    control_parent: dict[int, int] = {}
    closers: dict[int, int] = {}
    else_frames: list[ElseFrame] = []
    last_closed_if: dict[int, tuple[int, int]] = {}  # depth -> (if_line, close_line)

    def parent_header() -> int | None:
        for fr in reversed(stack):
            if fr.kind in ("if", "else", "while", "for"):
                return fr.header
        return None

    for stmt in statements:
        kind = stmt.kind
        line = stmt.line
        if kind == "close_brace":
            if not stack:
                raise AnalysisError(f"unbalanced close brace at line {line}")
            fr = stack.pop()
            if fr.kind in ("if", "while", "for"):
                closers[fr.open_line] = line
                if fr.kind == "if":
                    last_closed_if[len(stack)] = (fr.open_line, line)
            elif fr.kind == "else":
                if_line, then_close = last_closed_if.get(len(stack), (fr.header, fr.open_line))
                else_frames.append(
                    ElseFrame(if_line, fr.open_line, then_close, line, frozenset(fr.body))
                )
            continue

        hdr = parent_header()
        if hdr is not None and kind != "else_header":
            control_parent[line] = hdr
        for fr in stack:
            fr.body.add(line)

        if kind in ("if_header", "while_header", "for_header"):
            stack.append(_Frame(kind.removesuffix("_header"), line, line))
        elif kind == "else_header":
            if_line, _ = last_closed_if.get(len(stack), (line, line))
            stack.append(_Frame("else", if_line, line))
        elif kind in ("method_header", "class_header"):
            stack.append(_Frame(kind.removesuffix("_header"), line, line))
        elif kind == "open_brace":
            stack.append(_Frame("block", parent_header() or line, line))

    if stack:
        raise AnalysisError(f"unclosed block opened at line {stack[-1].open_line}")
    return control_parent, closers, else_frames


def _cfg_edges(statements: list[Statement]) -> dict[int, set[int]]:
    """Successor edges of the statement-level control-flow graph."""
    succ: dict[int, set[int]] = {s.line: set() for s in statements}
    items, _ = _parse_region(statements, 0, top=True)

    def wire(seq) -> tuple[int | None, set[int]]:
        entry: int | None = None
        exits: set[int] = set()
        for item in seq:
            ie, ix = wire_item(item)
            if ie is None:
                continue
            if entry is None:
                entry = ie
            for e in exits:
                succ[e].add(ie)
            exits = ix
        return entry, exits

    def wire_item(item) -> tuple[int | None, set[int]]:
        if isinstance(item, int):
            return item, {item}
        kind = item["kind"]
        header = item["header"]
        if kind in ("while", "for"):
            be, bx = wire(item["body"])
            close = item["close"]
            if be is not None:
                succ[header].add(be)
                for e in bx:
                    succ[e].add(close)
            else:
                succ[header].add(close)
            succ[close].add(header)
            return header, {header}
        if kind == "if":
            te, tx = wire(item["body"])
            tclose = item["close"]
            if te is not None:
                succ[header].add(te)
                for e in tx:
                    succ[e].add(tclose)
            else:
                succ[header].add(tclose)
            exits = {tclose}
            if item.get("else_body") is not None:
                eline, eclose = item["else_line"], item["else_close"]
                succ[header].add(eline)
                ee, ex = wire(item["else_body"])
                if ee is not None:
                    succ[eline].add(ee)
                    for e in ex:
                        succ[e].add(eclose)
                else:
                    succ[eline].add(eclose)
                exits.add(eclose)
            else:
                exits.add(header)
            return header, exits
        if kind in ("method", "class"):
            be, bx = wire(item["body"])
            close = item["close"]
            if be is not None:
                succ[header].add(be)
                for e in bx:
                    succ[e].add(close)
            else:
                succ[header].add(close)
            return header, {close}
        raise AnalysisError(f"unknown region kind {kind!r}")

    wire(items)
    return succ


def _parse_region(statements: list[Statement], i: int, top: bool = False):
    """Group the flat statement list into nested control regions."""
    items: list = []
    while i < len(statements):
        stmt = statements[i]
        kind = stmt.kind
        if kind == "close_brace":
            if top:
                raise AnalysisError(f"unbalanced close brace at line {stmt.line}")
            return items, i
        if kind in ("if_header", "while_header", "for_header", "method_header", "class_header"):
            header = stmt.line
            body, j = _parse_region(statements, i + 1)
            if j >= len(statements):
                raise AnalysisError(f"unclosed block at line {header}")
            region = {
                "kind": kind.removesuffix("_header"),
                "header": header,
                "body": body,
                "close": statements[j].line,
            }
            i = j + 1
            if kind == "if_header" and i < len(statements) and statements[i].kind == "else_header":
                region["else_line"] = statements[i].line
                ebody, k = _parse_region(statements, i + 1)
                if k >= len(statements):
                    raise AnalysisError(f"unclosed else block at line {region['else_line']}")
                region["else_body"] = ebody
                region["else_close"] = statements[k].line
                i = k + 1
            items.append(region)
            continue
        items.append(stmt.line)
        i += 1
    if not top:
        raise AnalysisError("unclosed block at end of input")
    return items, i


def build_pdg(statements: list[Statement], root: minilang.AstNode | None = None) -> Pdg:
    """Dependence graph over statement lines; needs well-formed input."""
    if root is not None and minilang.count_error_nodes(root) > 0:
        raise AnalysisError("dependence analysis requires a program with no parse errors")
    control_parent, closers, else_frames = _structure_scan(statements)
    succ = _cfg_edges(statements)

    defs: dict[int, set[str]] = {}
    uses: dict[int, set[str]] = {}
    idents_by_line: dict[int, frozenset[str]] = {}
    decl_line: dict[str, int] = {}
    for stmt in statements:
        d, u = _defs_uses(stmt)
        defs[stmt.line] = d
        uses[stmt.line] = u
        idents_by_line[stmt.line] = frozenset(_idents(list(stmt.texts)))
        if stmt.kind == "decl" and d:
            decl_line.setdefault(next(iter(d)), stmt.line)
        if stmt.kind == "for_header":
            semis = [k for k, t in enumerate(stmt.texts) if t == ";"]
            init_ids = _idents(list(stmt.texts[: semis[0]])) if semis else []
            if init_ids:
                decl_line.setdefault(init_ids[0], stmt.line)

    pred: dict[int, set[int]] = {s.line: set() for s in statements}
    for a, outs in succ.items():
        for b in outs:
            pred[b].add(a)

    # reaching definitions fixed point over (var, def_line) facts
    lines = [s.line for s in statements]
    gen = {ln: {(v, ln) for v in defs[ln]} for ln in lines}
    reach_in: dict[int, set[tuple[str, int]]] = {ln: set() for ln in lines}
    reach_out: dict[int, set[tuple[str, int]]] = {ln: set(gen[ln]) for ln in lines}
    changed = True
    while changed:
        changed = False
        for ln in lines:
            new_in = set()
            for p in pred[ln]:
                new_in |= reach_out[p]
            if new_in != reach_in[ln]:
                reach_in[ln] = new_in
            killed = {(v, d) for (v, d) in new_in if v in defs[ln]}
            new_out = gen[ln] | (new_in - killed)
            if new_out != reach_out[ln]:
                reach_out[ln] = new_out
                changed = True

    data_edges: set[tuple[int, int]] = set()
    for ln in lines:
        for v in uses[ln]:
            for (w, d) in reach_in[ln]:
                if w == v:
                    data_edges.add((ln, d))
        for v in idents_by_line[ln]:
            d = decl_line.get(v)
            if d is not None and d != ln:
                data_edges.add((ln, d))

    control_edges = frozenset(control_parent.items())
    return Pdg(
        nodes=frozenset(lines),
        data_edges=frozenset(data_edges),
        control_edges=control_edges,
        closers=closers,
        else_frames=else_frames,
        idents_by_line=idents_by_line,
    )


def build_pdg_from_text(text: str) -> Pdg:
    root, stats = minilang.parse_with_stats(minilang.tokenize(text))
    if not stats.clean:
        raise AnalysisError("dependence analysis requires strictly parseable input")
    return build_pdg(minilang.split_statements(text), root)


def backward_slice(pdg: Pdg, crit: SliceCriterion) -> set[int]:
    """Line set that can influence the criterion, structurally closed."""
    if crit.line not in pdg.nodes:
        raise CriterionError(f"criterion line {crit.line} is not a statement line")
    if crit.variable not in pdg.idents_by_line.get(crit.line, frozenset()):
        raise CriterionError(
            f"variable {crit.variable!r} does not occur on line {crit.line}"
        )
    reached = {crit.line}
    frontier = [crit.line]
    while frontier:
        line = frontier.pop()
        for nxt in pdg.edges_from(line):
            if nxt <= crit.line and nxt not in reached:
                reached.add(nxt)
                frontier.append(nxt)
    # structural closure: closing braces and else plumbing
    closed = set(reached)
    for header, close in pdg.closers.items():
        if header in reached:
            closed.add(close)
    for frame in pdg.else_frames:
        if reached & frame.body_lines:
            closed.update((frame.else_line, frame.then_close, frame.else_close))
    return closed
