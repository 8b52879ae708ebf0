"""Synthetic corpus: program generation, gold slices, corruption, encoding.

Generated programs are single methods in the mini-language, tuned so that
10k samples average ~19 statement lines and ~64 tokens. Variable names mix
a fixed pool of 50 common identifiers (in-vocabulary) with random 3-10
character names (out-of-vocabulary) at 60/40, so the copy path has real work
to do on rare identifiers.

Encoded inputs follow the marker scheme
    <line_number> digits </line_number> <criterion> var </criterion>
    <code> L : tokens <nl> ... </code>
with line numbers spelled as single-digit tokens so emitted line prefixes
always come from the input itself.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import minilang, oracle
from .errors import DataFormatError, GenerationError
from .minilang import Statement
from .oracle import SliceCriterion
from .rng import substream

CORRUPTION_KINDS = ("missing_class", "missing_semicolons", "unmatched_braces")

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
MARKERS = (
    "<line_number>", "</line_number>", "<criterion>", "</criterion>",
    "<code>", "</code>", "<slice>", "</slice>",
)
NL = "<nl>"

_KEYWORDS = ("class", "int", "long", "boolean", "if", "else", "while", "for", "return")
_OPERATORS = ("=", "+", "-", "*", "/", "%", "<", ">", "<=", ">=", "==", "!=", "&&", "||", "!")
_PUNCT = ("(", ")", "{", "}", ";", ":", ",")
_DIGITS = tuple(str(d) for d in range(10))

COMMON_NAMES = (
    "main", "a", "b", "c", "d", "e", "i", "j", "k", "n",
    "m", "x", "y", "z", "sum", "count", "temp", "total", "result", "value",
    "flag", "idx", "len", "num", "max", "min", "avg", "left", "right", "mid",
    "low", "high", "size", "pos", "step", "acc", "tmp", "val", "cnt", "ans",
    "cur", "prev", "next", "first", "last", "limit", "base", "rate", "score", "keta",
)


class Vocabulary:
    """Fixed token inventory with reserved ids.

    Ids are dense from 0: PAD=0, BOS=1, EOS=2, UNK=3, the eight structural
    markers take 4-11, <nl> is 12, then keywords, operators, punctuation,
    the ten digit tokens, and the 50 common identifier names. Every
    non-identifier token the mini-language can produce is in-vocabulary;
    only identifiers (and multi-digit literals in foreign inputs) can be OOV.
    """

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    pad_id = 0
    bos_id = 1
    eos_id = 2
    unk_id = 3

    @property
    def nl_id(self) -> int:
        return self.token_to_id[NL]

    @property
    def slice_open_id(self) -> int:
        return self.token_to_id["<slice>"]

    @property
    def slice_close_id(self) -> int:
        return self.token_to_id["</slice>"]

    def id(self, token: str) -> int | None:
        return self.token_to_id.get(token)

    def fingerprint(self) -> str:
        return hashlib.sha256("\x00".join(self.id_to_token).encode()).hexdigest()[:16]


def build_default_vocab() -> Vocabulary:
    tokens = [PAD, BOS, EOS, UNK, *MARKERS, NL]
    tokens += [*_KEYWORDS, *_OPERATORS, *_PUNCT, *_DIGITS, *COMMON_NAMES]
    return Vocabulary(tokens)


@dataclass(frozen=True)
class SliceInstance:
    program_text: str
    criterion: SliceCriterion
    gold_lines: tuple[int, ...]
    gold_text: str
    corruption: str = "none"

    def statements(self) -> list[Statement]:
        return minilang.split_statements(self.program_text)


@dataclass
class DatasetSplit:
    train: list[SliceInstance] = field(default_factory=list)
    valid: list[SliceInstance] = field(default_factory=list)
    test: list[SliceInstance] = field(default_factory=list)


# ---------------------------------------------------------------------------
# program generation


@dataclass(frozen=True)
class GeneratorConfig:
    max_lines: int = 30
    var_pool: tuple[int, int] = (4, 8)
    nesting_depth: int = 2
    mean_lines: float = 19.0
    lines_std: float = 2.1
    common_name_ratio: float = 0.6
    digit_leaf_ratio: float = 0.3
    binary_expr_ratio: float = 0.15
    bare_condition_ratio: float = 0.6


_CMP_OPS = ("<", ">", "<=", ">=", "==", "!=")
_ARITH_OPS = ("+", "-", "*", "/", "%")


class _ProgramBuilder:
    def __init__(self, rng: np.random.Generator, cfg: GeneratorConfig):
        self.rng = rng
        self.cfg = cfg
        self.lines: list[str] = []
        self.scopes: list[list[str]] = [[]]
        self.pending: list[str] = []
        self.loop_counter = 0

    def fresh_names(self) -> list[str]:
        cfg, rng = self.cfg, self.rng
        count = int(rng.integers(cfg.var_pool[0], cfg.var_pool[1] + 1))
        names: list[str] = []
        taken = set(_KEYWORDS) | {"main"}
        while len(names) < count:
            if rng.random() < cfg.common_name_ratio:
                cand = str(rng.choice(COMMON_NAMES[1:]))
            else:
                length = int(rng.integers(3, 11))
                letters = "abcdefghijklmnopqrstuvwxyz"
                cand = "".join(rng.choice(list(letters)) for _ in range(length))
            if cand not in taken:
                taken.add(cand)
                names.append(cand)
        return names

    def in_scope(self) -> list[str]:
        return [v for frame in self.scopes for v in frame]

    def leaf(self) -> str:
        vars_ = self.in_scope()
        if vars_ and self.rng.random() >= self.cfg.digit_leaf_ratio:
            return str(self.rng.choice(vars_))
        return str(self.rng.integers(0, 10))

    def expr(self) -> str:
        if self.rng.random() < self.cfg.binary_expr_ratio:
            op = str(self.rng.choice(_ARITH_OPS))
            return f"{self.leaf()} {op} {self.leaf()}"
        return self.leaf()

    def condition(self) -> str:
        vars_ = self.in_scope()
        var = str(self.rng.choice(vars_))
        if self.rng.random() < self.cfg.bare_condition_ratio:
            return var
        return f"{var} {self.rng.choice(_CMP_OPS)} {self.leaf()}"

    def emit_decl(self) -> None:
        name = self.pending.pop(0)
        if self.rng.random() < 0.35:
            self.lines.append(f"int {name} = {self.expr()} ;")
        else:
            self.lines.append(f"int {name} ;")
        self.scopes[-1].append(name)

    def emit_assign(self) -> None:
        target = str(self.rng.choice(self.in_scope()))
        self.lines.append(f"{target} = {self.expr()} ;")

    def gen_body(self, budget: int, depth: int) -> None:
        """Emit roughly `budget` lines into the current scope."""
        rng, cfg = self.rng, self.cfg
        while budget > 0:
            can_nest = depth < cfg.nesting_depth and budget >= 4
            roll = rng.random()
            if self.pending and (roll < 0.35 or not self.in_scope()):
                self.emit_decl()
                budget -= 1
            elif can_nest and roll < 0.62:
                budget -= self.gen_control(budget, depth)
            else:
                self.emit_assign()
                budget -= 1

    def gen_control(self, budget: int, depth: int) -> int:
        rng = self.rng
        kind = rng.choice(["if", "if_else", "while", "for"], p=[0.28, 0.42, 0.25, 0.05])
        if kind == "if_else":
            inner = min(budget - 4, max(1, int(rng.integers(1, 3))))
            inner2 = min(budget - 4 - inner + 1, max(1, int(rng.integers(1, 3))))
            self.lines.append(f"if ( {self.condition()} ) {{")
            self.scopes.append([])
            self.gen_body(inner, depth + 1)
            self.scopes.pop()
            self.lines.append("}")
            self.lines.append("else {")
            self.scopes.append([])
            self.gen_body(max(1, inner2), depth + 1)
            self.scopes.pop()
            self.lines.append("}")
            return 4 + inner + max(1, inner2)
        if kind == "for":
            self.loop_counter += 1
            loop_var = f"i{self.loop_counter}" if self.loop_counter > 1 else "it"
            bound = self.leaf()
            inner = min(budget - 2, max(1, int(rng.integers(1, 3))))
            self.lines.append(
                f"for ( int {loop_var} = 0 ; {loop_var} < {bound} ; {loop_var} = {loop_var} + 1 ) {{"
            )
            self.scopes.append([loop_var])
            self.gen_body(inner, depth + 1)
            self.scopes.pop()
            self.lines.append("}")
            return 2 + inner
        header = "if" if kind == "if" else "while"
        inner = min(budget - 2, max(1, int(rng.integers(1, 3))))
        self.lines.append(f"{header} ( {self.condition()} ) {{")
        self.scopes.append([])
        self.gen_body(inner, depth + 1)
        self.scopes.pop()
        self.lines.append("}")
        return 2 + inner


def generate_program(seed: int, config: GeneratorConfig = GeneratorConfig()) -> str:
    """Deterministic-from-seed well-formed method in the mini-language."""
    rng = substream(seed, "program")
    builder = _ProgramBuilder(rng, config)
    names = builder.fresh_names()
    builder.pending = names
    method_name = str(rng.choice(("main", "solve", "run", "calc", "check")))
    target = int(np.clip(round(rng.normal(config.mean_lines, config.lines_std)), 12, config.max_lines))
    body_budget = target - 3  # method header, closing brace, return
    builder.lines.append(f"int {method_name} ( ) {{")
    builder.emit_decl()
    builder.gen_body(body_budget - 1, depth=0)
    ret = str(rng.choice(builder.scopes[0]))
    builder.lines.append(f"return {ret} ;")
    builder.lines.append("}")
    return "\n".join(builder.lines)


def make_instance(program_text: str, seed: int) -> SliceInstance:
    """Pick a uniform random (variable, line) occurrence and label it."""
    statements = minilang.split_statements(program_text)
    pdg = oracle.build_pdg_from_text(program_text)
    occurrences: list[tuple[str, int]] = []
    for stmt in statements:
        if stmt.kind in ("method_header", "class_header"):
            continue
        for var in sorted(pdg.idents_by_line.get(stmt.line, frozenset())):
            occurrences.append((var, stmt.line))
    if not occurrences:
        raise GenerationError("program has no variable occurrences to slice on")
    rng = substream(seed, "criterion")
    var, line = occurrences[int(rng.integers(0, len(occurrences)))]
    criterion = SliceCriterion(var, line)
    gold = oracle.backward_slice(pdg, criterion)
    by_line = {s.line: s for s in statements}
    gold_sorted = tuple(sorted(gold))
    gold_text = minilang.render_slice([by_line[ln] for ln in gold_sorted])
    return SliceInstance(program_text, criterion, gold_sorted, gold_text, "none")


def generate_split(
    seed: int,
    n_train: int,
    n_valid: int,
    n_test: int,
    config: GeneratorConfig = GeneratorConfig(),
) -> DatasetSplit:
    """Reproducible dataset; (seed, config) fully determine all instances."""
    split = DatasetSplit()
    for name, count, bucket in (
        ("train", n_train, split.train),
        ("valid", n_valid, split.valid),
        ("test", n_test, split.test),
    ):
        for i in range(count):
            inst_seed = int.from_bytes(
                hashlib.sha256(f"{seed}/{name}/{i}".encode()).digest()[:8], "little"
            )
            program = generate_program(inst_seed, config)
            bucket.append(make_instance(program, inst_seed))
    return split


# ---------------------------------------------------------------------------
# corruption


def corrupt(instance: SliceInstance, kind: str, seed: int = 0) -> SliceInstance:
    """Derive an unparsable variant of an instance, remapping its gold lines."""
    if kind not in CORRUPTION_KINDS:
        raise ValueError(f"unknown corruption kind {kind!r}; expected one of {CORRUPTION_KINDS}")
    if instance.corruption != "none":
        raise ValueError("instance is already corrupted")
    lines = instance.program_text.split("\n")

    if kind == "missing_class":
        first = minilang.classify_statement(minilang.tokenize(lines[0]))
        if first not in ("method_header", "class_header") or lines[-1].strip() != "}":
            raise ValueError("missing_class corruption needs a wrapped program")
        new_lines = lines[1:-1]
        mapping = {old: old - 1 for old in range(2, len(lines))}
    elif kind == "missing_semicolons":
        new_lines = [" ".join(t for t in line.split() if t != ";") for line in lines]
        mapping = {i: i for i in range(1, len(lines) + 1)}
    else:  # unmatched_braces
        closers = [i + 1 for i, line in enumerate(lines) if line.strip() == "}"]
        if not closers:
            raise ValueError("program has no close-brace line to remove")
        rng = substream(seed, "corrupt")
        victim = closers[int(rng.integers(0, len(closers)))]
        new_lines = lines[: victim - 1] + lines[victim:]
        mapping = {old: (old if old < victim else old - 1) for old in range(1, len(lines) + 1)}
        mapping.pop(victim, None)

    new_text = "\n".join(new_lines)
    new_gold = tuple(sorted(mapping[ln] for ln in instance.gold_lines if ln in mapping))
    crit_line = mapping.get(instance.criterion.line)
    if crit_line is None:
        raise ValueError("corruption removed the criterion line")
    by_line = {s.line: s for s in minilang.split_statements(new_text)}
    gold_text = minilang.render_slice([by_line[ln] for ln in new_gold if ln in by_line])
    return SliceInstance(
        new_text,
        SliceCriterion(instance.criterion.variable, crit_line),
        new_gold,
        gold_text,
        kind,
    )


# ---------------------------------------------------------------------------
# encoding


@dataclass
class EncodedInput:
    ids: np.ndarray          # vocab ids; OOV positions hold UNK
    ext_ids: np.ndarray      # extended ids; OOV positions hold vocab.size + k
    token_texts: list[str]
    oov_tokens: list[str]    # k-th entry's extended id is vocab.size + k
    truncated: bool = False

    @property
    def oov_map(self) -> dict[str, int]:
        return {t: k for k, t in enumerate(self.oov_tokens)}


def _digit_tokens(number: int) -> list[str]:
    return list(str(number))


def _statement_tokens(stmt: Statement) -> list[str]:
    return _digit_tokens(stmt.line) + [":"] + list(stmt.texts) + [NL]


def encode_input(
    instance: SliceInstance, vocab: Vocabulary, max_src: int = 256
) -> EncodedInput:
    """Marker-framed token ids plus the per-input OOV table."""
    statements = instance.statements()
    head = (
        ["<line_number>", *_digit_tokens(instance.criterion.line), "</line_number>"]
        + ["<criterion>"]
        + [t.text for t in minilang.tokenize(instance.criterion.variable)]
        + ["</criterion>", "<code>"]
    )
    stmt_token_runs = [_statement_tokens(s) for s in statements]
    texts = list(head)
    truncated = False
    budget = max_src - len(head) - 1  # room for </code>
    for run in stmt_token_runs:
        if len(run) > budget:
            truncated = True
            break
        texts.extend(run)
        budget -= len(run)
    texts.append("</code>")

    ids = np.empty(len(texts), dtype=np.int64)
    ext = np.empty(len(texts), dtype=np.int64)
    oov_tokens: list[str] = []
    oov_index: dict[str, int] = {}
    for i, tok in enumerate(texts):
        vid = vocab.id(tok)
        if vid is not None:
            ids[i] = vid
            ext[i] = vid
        else:
            ids[i] = vocab.unk_id
            k = oov_index.get(tok)
            if k is None:
                k = len(oov_tokens)
                oov_index[tok] = k
                oov_tokens.append(tok)
            ext[i] = vocab.size + k
    return EncodedInput(ids, ext, texts, oov_tokens, truncated)


def encode_target(
    instance: SliceInstance, vocab: Vocabulary, oov_map: dict[str, int]
) -> np.ndarray:
    """Gold slice as extended-vocabulary ids, EOS-terminated.

    Every gold token must be in-vocabulary or present in the source OOV map;
    anything else breaks the extractive premise and is a data error.
    """
    by_line = {s.line: s for s in instance.statements()}
    texts: list[str] = ["<slice>"]
    for ln in instance.gold_lines:
        texts.extend(_statement_tokens(by_line[ln]))
    texts.append("</slice>")
    out = np.empty(len(texts) + 1, dtype=np.int64)
    for i, tok in enumerate(texts):
        vid = vocab.id(tok)
        if vid is not None:
            out[i] = vid
        elif tok in oov_map:
            out[i] = vocab.size + oov_map[tok]
        else:
            raise DataFormatError(
                f"gold token {tok!r} is neither in-vocabulary nor in the source OOV map"
                " (violates the extractive premise)"
            )
    out[-1] = vocab.eos_id
    return out


def decoder_input_ids(target_ext: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Teacher-forcing decoder input: BOS + shifted target, OOV ids -> UNK."""
    dec = np.empty_like(target_ext)
    dec[0] = vocab.bos_id
    shifted = target_ext[:-1]
    dec[1:] = np.where(shifted >= vocab.size, vocab.unk_id, shifted)
    return dec


# ---------------------------------------------------------------------------
# persistence


def instance_to_dict(inst: SliceInstance) -> dict:
    return {
        "program": inst.program_text,
        "criterion": {"var": inst.criterion.variable, "line": inst.criterion.line},
        "gold_lines": list(inst.gold_lines),
        "gold_text": inst.gold_text,
        "corruption": inst.corruption,
    }


_REQUIRED_KEYS = ("program", "criterion", "gold_lines", "gold_text", "corruption")


def instance_from_dict(obj: dict, lineno: int = 0) -> SliceInstance:
    for key in _REQUIRED_KEYS:
        if key not in obj:
            raise DataFormatError(f"line {lineno}: missing key {key!r}")
    crit = obj["criterion"]
    for key in ("var", "line"):
        if key not in crit:
            raise DataFormatError(f"line {lineno}: missing key criterion.{key!r}")
    inst = SliceInstance(
        obj["program"],
        SliceCriterion(crit["var"], int(crit["line"])),
        tuple(sorted(int(x) for x in obj["gold_lines"])),
        obj["gold_text"],
        obj["corruption"],
    )
    _validate_instance(inst, lineno)
    return inst


def _validate_instance(inst: SliceInstance, lineno: int) -> None:
    statements = {s.line: s for s in inst.statements()}
    line = inst.criterion.line
    if line not in statements:
        raise DataFormatError(f"line {lineno}: criterion line {line} is not a statement line")
    idents = {t.text for t in statements[line].tokens if t.kind == minilang.KIND_IDENT}
    if inst.criterion.variable not in idents:
        raise DataFormatError(
            f"line {lineno}: criterion variable {inst.criterion.variable!r} not on line {line}"
        )
    if inst.corruption == "none":
        missing = [ln for ln in inst.gold_lines if ln not in statements]
        if missing:
            raise DataFormatError(f"line {lineno}: gold lines {missing} not in program")
        rendered = minilang.render_slice([statements[ln] for ln in inst.gold_lines])
        if rendered != inst.gold_text:
            raise DataFormatError(f"line {lineno}: gold_text does not match rendered gold lines")


def save_jsonl(path: str | Path, instances: list[SliceInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_dict(inst)) + "\n")


def load_jsonl(path: str | Path) -> list[SliceInstance]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
            out.append(instance_from_dict(obj, lineno))
    return out


def save_split(directory: str | Path, split: DatasetSplit, manifest_extra: dict | None = None) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, instances in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        path = directory / f"{name}.jsonl"
        save_jsonl(path, instances)
        hashes[name] = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    manifest = {
        "counts": {"train": len(split.train), "valid": len(split.valid), "test": len(split.test)},
        "file_hashes": hashes,
        "vocab": build_default_vocab().fingerprint(),
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    manifest["manifest_hash"] = hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode()
    ).hexdigest()[:16]
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_split(directory: str | Path) -> DatasetSplit:
    directory = Path(directory)
    return DatasetSplit(
        train=load_jsonl(directory / "train.jsonl"),
        valid=load_jsonl(directory / "valid.jsonl"),
        test=load_jsonl(directory / "test.jsonl"),
    )
