"""Evaluation metrics and the ablation/robustness harness.

Metrics: ExactMatch (token-level equality of rendered slices), Acc-D (the
recall-shaped ratio of correctly predicted statements over gold statements),
a classification-style variant Acc-D-cls over candidate lines (which also
penalizes extra statements), and TSED between predicted and gold slice trees.

The harness decodes a split under configurable constraint toggles and emits
one report per configuration; ablation mode produces the four canonical rows
(full, -copy, -lexical, -syntactic) and the corruption sweep one block per
corruption kind.
"""
from __future__ import annotations

import json
import multiprocessing as mp
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import corpus, decode, minilang, tsed
from .corpus import CORRUPTION_KINDS, SliceInstance
from .decode import BeamConfig
from .errors import MetricError
from .rng import substream


def exact_match(pred_text: str, gold_text: str) -> int:
    """1 iff whitespace-normalized token sequences (line prefixes kept) agree."""
    pred = [t.text for t in minilang.tokenize(pred_text)]
    gold = [t.text for t in minilang.tokenize(gold_text)]
    return int(pred == gold)


def acc_d(pred_lines: set[int], gold_lines: set[int]) -> float:
    """|pred ∩ gold| / |gold|: recall of gold statements; extras unpenalized."""
    if not gold_lines:
        raise MetricError("acc_d undefined for an empty gold slice")
    return len(set(pred_lines) & set(gold_lines)) / len(set(gold_lines))


def acc_d_cls(pred_lines: set[int], gold_lines: set[int], candidate_lines: set[int]) -> float:
    """Per-statement classification accuracy over the candidate lines."""
    if not candidate_lines:
        raise MetricError("acc_d_cls undefined without candidate lines")
    pred = set(pred_lines) & set(candidate_lines)
    gold = set(gold_lines) & set(candidate_lines)
    agree = sum(1 for ln in candidate_lines if (ln in pred) == (ln in gold))
    return agree / len(candidate_lines)


def tsed_metric(pred_text: str, gold_text: str) -> float:
    """Tree similarity between the predicted and gold slice bodies."""
    gold_tree = tsed.from_ast(minilang.parse_text(minilang.strip_line_prefixes(gold_text)))
    pred_body = minilang.strip_line_prefixes(pred_text)
    if not pred_body.strip():
        return 0.0 if gold_tree.size else 1.0
    pred_tree = tsed.from_ast(minilang.parse_text(pred_body))
    return tsed.tsed_score(gold_tree, pred_tree)


@dataclass
class InstanceRecord:
    pred_text: str
    gold_text: str
    pred_lines: list[int]
    gold_lines: list[int]
    exact_match: int
    acc_d: float
    acc_d_cls: float
    tsed: float
    finished: bool
    emitted_tokens: list[str] | None = None  # raw decoder output, pre-detokenization


@dataclass
class EvalReport:
    label: str
    config: dict
    records: list[InstanceRecord] = field(default_factory=list)

    @property
    def aggregates(self) -> dict[str, float]:
        n = len(self.records)
        if n == 0:
            return {"count": 0}
        return {
            "count": n,
            "acc_d": float(np.mean([r.acc_d for r in self.records])),
            "exact_match": float(np.mean([r.exact_match for r in self.records])),
            "tsed": float(np.mean([r.tsed for r in self.records])),
            "acc_d_cls": float(np.mean([r.acc_d_cls for r in self.records])),
            "finished_rate": float(np.mean([r.finished for r in self.records])),
        }

    def to_dict(self, include_records: bool = True) -> dict:
        out = {"label": self.label, "config": self.config, "aggregates": self.aggregates}
        if include_records:
            out["records"] = [asdict(r) for r in self.records]
        return out


def score_instance(
    inst: SliceInstance,
    pred_text: str,
    finished: bool = True,
    emitted_tokens: list[str] | None = None,
) -> InstanceRecord:
    pred_lines = sorted(set(minilang.slice_lines(pred_text)))
    gold_lines = sorted(set(inst.gold_lines))
    statements = inst.statements()
    candidates = {s.line for s in statements if s.line <= inst.criterion.line}
    candidates |= set(gold_lines)
    return InstanceRecord(
        pred_text=pred_text,
        gold_text=inst.gold_text,
        pred_lines=pred_lines,
        gold_lines=gold_lines,
        exact_match=exact_match(pred_text, inst.gold_text),
        acc_d=acc_d(set(pred_lines), set(gold_lines)),
        acc_d_cls=acc_d_cls(set(pred_lines), set(gold_lines), candidates),
        tsed=tsed_metric(pred_text, inst.gold_text),
        finished=finished,
        emitted_tokens=emitted_tokens,
    )


_WORKER: dict = {}


def _worker_init(model, beam_config):
    _WORKER["model"] = model
    _WORKER["config"] = beam_config


def _worker_eval(payload):
    idx, inst = payload
    result = decode.beam_search(_WORKER["model"], inst, _WORKER["config"])
    return idx, result.text, result.finished, result.token_texts


def evaluate(
    instances: list[SliceInstance],
    model,
    beam_config: BeamConfig = BeamConfig(),
    label: str = "eval",
    jobs: int = 1,
    extra_config: dict | None = None,
) -> EvalReport:
    """Decode every instance and score it; embarrassingly parallel."""
    fingerprint = {
        "beam_size": beam_config.beam_size,
        "max_len": beam_config.max_len,
        "lexical_on": beam_config.lexical_on,
        "syntactic_on": beam_config.syntactic_on,
        "tsed_granularity": beam_config.tsed_granularity,
        "copy_enabled": bool(getattr(model.config, "copy_enabled", True)),
    }
    if extra_config:
        fingerprint.update(extra_config)
    report = EvalReport(label, fingerprint)
    outputs: list[tuple[str, bool, list[str]]] = [("", False, [])] * len(instances)
    if jobs > 1 and len(instances) > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(jobs, initializer=_worker_init, initargs=(model, beam_config)) as pool:
            for idx, text, finished, tokens in pool.imap_unordered(
                _worker_eval, list(enumerate(instances)), chunksize=8
            ):
                outputs[idx] = (text, finished, tokens)
    else:
        for idx, inst in enumerate(instances):
            result = decode.beam_search(model, inst, beam_config)
            outputs[idx] = (result.text, result.finished, result.token_texts)
    for inst, (text, finished, tokens) in zip(instances, outputs):
        report.records.append(score_instance(inst, text, finished, tokens))
    return report


def ablation_rows(
    instances: list[SliceInstance],
    full_model,
    nocopy_model,
    beam_config: BeamConfig = BeamConfig(),
    jobs: int = 1,
) -> list[EvalReport]:
    """The four canonical rows: full, -copy, -lexical, -syntactic.

    Each row is one point of the constraints x copy grid; -copy swaps in the
    checkpoint trained with the generation gate pinned to 1.
    """
    rows = [
        ("full", full_model, beam_config),
        ("-copy", nocopy_model, beam_config),
        ("-lexical", full_model, _with(beam_config, lexical_on=False)),
        ("-syntactic", full_model, _with(beam_config, syntactic_on=False)),
    ]
    return [
        evaluate(instances, m, cfg, label=label, jobs=jobs)
        for label, m, cfg in rows
        if m is not None
    ]


def _with(cfg: BeamConfig, **kw) -> BeamConfig:
    base = {
        "beam_size": cfg.beam_size, "max_len": cfg.max_len,
        "lexical_on": cfg.lexical_on, "syntactic_on": cfg.syntactic_on,
        "tsed_granularity": cfg.tsed_granularity,
        "length_normalize": cfg.length_normalize, "early_stop": cfg.early_stop,
        "tsed_tolerance": cfg.tsed_tolerance,
    }
    base.update(kw)
    return BeamConfig(**base)


def corrupt_split(instances: list[SliceInstance], kind: str, seed: int) -> list[SliceInstance]:
    out = []
    for i, inst in enumerate(instances):
        corrupt_seed = int(substream(seed, f"corrupt/{kind}/{i}").integers(0, 2**31))
        out.append(corpus.corrupt(inst, kind, corrupt_seed))
    return out


def corruption_sweep(
    instances: list[SliceInstance],
    model,
    beam_config: BeamConfig = BeamConfig(),
    seed: int = 0,
    jobs: int = 1,
) -> list[EvalReport]:
    """One evaluation block per corruption kind, mirroring the robustness table."""
    reports = []
    for kind in CORRUPTION_KINDS:
        corrupted = corrupt_split(instances, kind, seed)
        reports.append(
            evaluate(corrupted, model, beam_config, label=kind, jobs=jobs,
                     extra_config={"corruption": kind})
        )
    return reports


def format_table(reports: list[EvalReport]) -> str:
    """Plain-text table, columns in the headline order plus the cls variant."""
    header = f"{'config':<24} {'Acc-D':>8} {'ExactMatch':>11} {'TSED':>8} {'Acc-D-cls':>10}"
    lines = [header, "-" * len(header)]
    for rep in reports:
        agg = rep.aggregates
        lines.append(
            f"{rep.label:<24} {100 * agg['acc_d']:>8.2f} {100 * agg['exact_match']:>11.2f} "
            f"{100 * agg['tsed']:>8.2f} {100 * agg['acc_d_cls']:>10.2f}"
        )
    return "\n".join(lines)


def save_reports(path: str | Path, reports: list[EvalReport], include_records: bool = True) -> None:
    payload = {"reports": [r.to_dict(include_records) for r in reports]}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


REPORT_SCHEMA = {
    "type": "object",
    "required": ["reports"],
    "properties": {
        "reports": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["label", "config", "aggregates"],
                "properties": {
                    "label": {"type": "string"},
                    "config": {"type": "object"},
                    "aggregates": {
                        "type": "object",
                        "required": ["count", "acc_d", "exact_match", "tsed", "acc_d_cls"],
                    },
                    "records": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": [
                                "pred_text", "gold_text", "pred_lines", "gold_lines",
                                "exact_match", "acc_d", "acc_d_cls", "tsed",
                            ],
                        },
                    },
                },
            },
        }
    },
}
