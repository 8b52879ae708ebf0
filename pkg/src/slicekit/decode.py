"""Constrained beam search: lexical masking plus TSED-monotonicity pruning.

Per decoding step, each live hypothesis's next-token scores are masked down
to tokens occurring in the encoded input (plus EOS and the slice/newline
specials), renormalized, and expanded top-K. Each surviving candidate is
checked for tree-similarity monotonicity at statement boundaries: a
candidate whose partial-slice TSED drops below the hypothesis's last
accepted score (beyond a small float tolerance) is discarded as structurally
derailed.

Deviations from the literal pseudocode, recorded here and in the design
notes: candidates that emit EOS are banked in a completed pool instead of
being skipped outright (the literal loop never returns a finished
hypothesis); final selection uses length-normalized log-probability by
default; and decoding can stop early once the pool holds a full beam of
finished hypotheses. All three are toggleable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import minilang
from .corpus import EncodedInput, SliceInstance, Vocabulary, encode_input
from .errors import DecodeError
from .tsed import PrefixTsedScorer

Array = np.ndarray

ALWAYS_ALLOWED = ("<eos>", "<slice>", "</slice>", "<nl>")
BOUNDARY_TEXTS = frozenset({"<nl>", ";", "}"})
LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 3
    max_len: int = 256
    lexical_on: bool = True
    syntactic_on: bool = True
    tsed_granularity: str = "statement"  # or "token"
    length_normalize: bool = True
    early_stop: bool = True
    tsed_tolerance: float = 1e-9

    def __post_init__(self):
        if self.beam_size < 1 or self.max_len < 1:
            raise ValueError("beam_size and max_len must be at least 1")
        if self.tsed_granularity not in ("statement", "token"):
            raise ValueError(f"bad tsed_granularity {self.tsed_granularity!r}")


@dataclass
class AllowedSet:
    mask: Array  # bool over the extended vocabulary

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def allowed_tokens(input_ext_ids: Sequence[int], vocab: Vocabulary, ext_size: int) -> AllowedSet:
    """Mask true exactly for ids present in the input plus the four specials.

    OOV source positions are represented by their extended ids, so UNK itself
    is never allowed: emitting it would not be an extract of the input.
    """
    mask = np.zeros(ext_size, dtype=bool)
    ids = np.asarray(input_ext_ids, dtype=np.int64)
    if ids.size:
        mask[ids] = True
    for text in ALWAYS_ALLOWED:
        tid = vocab.id(text)
        if tid is not None:
            mask[tid] = True
    return AllowedSet(mask)


def apply_mask(logits: Array, allowed: AllowedSet) -> Array:
    """Disallowed positions forced to -1e30 (softmax mass < 1e-300)."""
    if logits.shape != allowed.mask.shape:
        raise ValueError(f"logits shape {logits.shape} != mask shape {allowed.mask.shape}")
    if not allowed.mask.any():
        raise DecodeError("degenerate mask: every token is disallowed")
    return np.where(allowed.mask, logits, -1e30)


def _log_softmax(scores: Array) -> Array:
    m = scores.max()
    z = np.log(np.exp(scores - m).sum())
    return scores - m - z


@dataclass
class Hypothesis:
    """One beam candidate: emitted extended-vocabulary ids and bookkeeping."""

    tokens: list[int] = field(default_factory=list)
    texts: list[str] = field(default_factory=list)
    logp: float = 0.0
    t_prev: float = 0.0
    finished: bool = False
    tsed_history: list[float] = field(default_factory=list)
    stepper: object | None = None
    dist: Array | None = None

    def norm_score(self, length_normalize: bool) -> float:
        length = len(self.tokens) + (1 if self.finished else 0)
        if not length_normalize:
            return self.logp
        return self.logp / max(1, length)


@dataclass
class DecodeResult:
    text: str
    tokens: list[int]
    token_texts: list[str]
    score: float
    finished: bool
    tsed_history: list[float]
    trace: list[dict] | None = None


def token_text(token_id: int, vocab: Vocabulary, oov_tokens: Sequence[str]) -> str:
    if token_id < vocab.size:
        return vocab.id_to_token[token_id]
    k = token_id - vocab.size
    if k < len(oov_tokens):
        return oov_tokens[k]
    return f"<oov:{k}>"


def detokenize(texts: Sequence[str]) -> str:
    """Emitted token texts -> line-prefixed slice text.

    Statements split on <nl>; slice markers and EOS are decoding framing, not
    content. A statement-leading run of digit tokens followed by ':' merges
    back into one line number ("1 2 :" -> "12 :").
    """
    lines: list[list[str]] = [[]]
    for t in texts:
        if t == "<nl>":
            lines.append([])
        elif t in ("<slice>", "</slice>", "<eos>", "<bos>", "<pad>"):
            continue
        else:
            lines[-1].append(t)
    rendered = []
    for toks in lines:
        if not toks:
            continue
        i = 0
        while i < len(toks) and toks[i].isdigit() and len(toks[i]) == 1:
            i += 1
        if 0 < i < len(toks) and toks[i] == ":":
            rendered.append("".join(toks[:i]) + " " + " ".join(toks[i:]))
        else:
            rendered.append(" ".join(toks))
    return "\n".join(rendered)


def _top_k_ids(scores: Array, k: int) -> Array:
    """Indices of the k best scores; ties broken by ascending token id."""
    order = np.argsort(-scores, kind="stable")  # stable keeps ascending ids on ties
    return order[:k]


def beam_search(
    model,
    instance: SliceInstance | EncodedInput,
    config: BeamConfig = BeamConfig(),
    trace: bool = False,
) -> DecodeResult:
    """Constrained beam search around any model exposing the session API.

    The model must provide ``vocab``, ``encode_instance(encoded)``,
    ``start_session(states) -> session`` where a session supports
    ``advance(token_id) -> output`` (with ``p_extended``) and ``fork()``.
    """
    vocab: Vocabulary = model.vocab
    if isinstance(instance, SliceInstance):
        encoded = encode_input(instance, vocab, model.config.max_src)
        source_text = instance.program_text
    else:
        encoded = instance
        source_text = None
    states = model.encode_instance(encoded)
    ext_size = model.config.ext_size
    allowed = allowed_tokens(encoded.ext_ids, vocab, ext_size) if config.lexical_on else None

    scorer: PrefixTsedScorer | None = None
    if config.syntactic_on:
        if source_text is None:
            source_text = detokenize(
                [t for t in encoded.token_texts if t not in
                 ("<line_number>", "</line_number>", "<criterion>", "</criterion>", "<code>", "</code>")]
            )
        scorer = PrefixTsedScorer(source_text)

    root = model.start_session(states)
    first = root.advance(vocab.bos_id)
    beams = [Hypothesis(stepper=root, dist=first.p_extended)]
    completed: list[Hypothesis] = []
    steps_trace: list[dict] = [] if trace else None

    k = config.beam_size
    for step in range(1, config.max_len + 1):
        candidates: list[tuple[Hypothesis, int, float, float, bool, int]] = []
        step_records: list[dict] = [] if trace else None
        for hyp_index, hyp in enumerate(beams):
            raw_scores = np.log(np.maximum(hyp.dist, LOG_FLOOR))
            if allowed is not None:
                masked = apply_mask(raw_scores, allowed)
            else:
                masked = raw_scores
            log_probs = _log_softmax(masked)

            if trace:
                for tok in _top_k_ids(raw_scores, k):
                    if allowed is not None and not allowed.mask[tok]:
                        step_records.append(_trace_entry(
                            hyp, int(tok), vocab, states, "reject", "lexical_masked",
                            hyp.logp + float(raw_scores[tok]),
                        ))

            for tok in _top_k_ids(log_probs, k):
                tok = int(tok)
                logp = hyp.logp + float(log_probs[tok])
                if tok == vocab.eos_id:
                    candidates.append((hyp, tok, logp, hyp.t_prev, False, hyp_index))
                    continue
                text = token_text(tok, vocab, states.oov_tokens)
                t_cur = hyp.t_prev
                evaluated = False
                if scorer is not None:
                    boundary = (config.tsed_granularity == "token") or (text in BOUNDARY_TEXTS)
                    if boundary:
                        t_cur = scorer.score_tokens(hyp.texts + [text])
                        evaluated = True
                        if t_cur < hyp.t_prev - config.tsed_tolerance:
                            if trace:
                                step_records.append(
                                    _trace_entry(hyp, tok, vocab, states, "reject", "tsed_drop", logp)
                                )
                            continue
                candidates.append((hyp, tok, logp, t_cur, evaluated, hyp_index))

        if not candidates:
            if step == 1 and not completed:
                raise DecodeError("beam exhausted with no hypothesis at step 1")
            break

        candidates.sort(key=lambda c: (-c[2], c[1], c[5]))
        next_beams: list[Hypothesis] = []
        # EOS hits are banked only from the top-2K ranked candidates, so weak
        # finishes cannot flood the pool; the live beam refills up to K.
        for hyp, tok, logp, t_cur, evaluated, _ in candidates[: 2 * k]:
            if tok == vocab.eos_id:
                completed.append(Hypothesis(
                    tokens=list(hyp.tokens), texts=list(hyp.texts), logp=logp,
                    t_prev=hyp.t_prev, finished=True,
                    tsed_history=list(hyp.tsed_history),
                ))
                if trace:
                    step_records.append(_trace_entry(hyp, tok, vocab, states, "finish", "eos", logp))
                continue
            if len(next_beams) >= k:
                if trace:
                    step_records.append(_trace_entry(hyp, tok, vocab, states, "pruned", "score_rank", logp, t_cur))
                continue
            stepper = hyp.stepper.fork()
            out = stepper.advance(tok)
            text = token_text(tok, vocab, states.oov_tokens)
            next_beams.append(Hypothesis(
                tokens=hyp.tokens + [tok],
                texts=hyp.texts + [text],
                logp=logp,
                t_prev=t_cur,
                tsed_history=hyp.tsed_history + ([t_cur] if evaluated else []),
                stepper=stepper,
                dist=out.p_extended,
            ))
            if trace:
                step_records.append(_trace_entry(hyp, tok, vocab, states, "accept", "ok", logp, t_cur))
        if trace:
            steps_trace.append({"step": step, "beams": step_records})
        completed.sort(key=lambda h: -h.norm_score(config.length_normalize))
        del completed[2 * k :]
        beams = next_beams
        if not beams:
            break
        if config.early_stop and len(completed) >= k:
            best_live = max(h.norm_score(config.length_normalize) for h in beams)
            kth_done = completed[min(k, len(completed)) - 1].norm_score(config.length_normalize)
            if best_live <= kth_done:
                break

    pool = completed if completed else beams
    if not pool:
        raise DecodeError("no hypothesis produced")
    best = max(pool, key=lambda h: (h.norm_score(config.length_normalize), h.finished))
    return DecodeResult(
        text=detokenize(best.texts),
        tokens=list(best.tokens),
        token_texts=list(best.texts),
        score=best.norm_score(config.length_normalize),
        finished=best.finished,
        tsed_history=list(best.tsed_history),
        trace=steps_trace,
    )


def _trace_entry(hyp, tok, vocab, states, action, reason, score, t_cur=None) -> dict:
    return {
        "tokens": hyp.texts + [token_text(tok, vocab, states.oov_tokens)],
        "token": token_text(tok, vocab, states.oov_tokens),
        "score": score,
        "t_prev": hyp.t_prev if t_cur is None else t_cur,
        "action": action,
        "reason": reason,
    }


def decode_trace(model, instance: SliceInstance | EncodedInput, config: BeamConfig = BeamConfig()) -> list[dict]:
    """Structured accept/reject record per step, serializable to JSON."""
    return beam_search(model, instance, config, trace=True).trace
