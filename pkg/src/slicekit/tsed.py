"""Tree edit distance (Zhang-Shasha) and the normalized tree-similarity score.

Similarity between two ASTs is 1 - TED / max(|T_x|, |T_y|): identical trees
score 1.0, an empty tree against an n-node tree scores 0.0, and heavily
divergent trees can go negative. ``prefix_tsed`` scores a partially generated
slice against its source program, which the constrained decoder uses to
detect structural derailment (the score of a growing correct slice should
not drop).

The O(n^2)-ish dynamic program runs on flat integer arrays; a numba-compiled
kernel is used when available and a pure-python twin (same integer results)
otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import minilang
from .errors import SliceKitError

try:  # pragma: no cover - exercised implicitly
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


@dataclass(frozen=True)
class EditCost:
    """Nonnegative per-operation weights; relabel of equal labels is free."""

    insert: float = 1.0
    delete: float = 1.0
    relabel: float = 1.0

    def __post_init__(self):
        if min(self.insert, self.delete, self.relabel) < 0:
            raise ValueError("edit costs must be nonnegative")


UNIT_COST = EditCost()


class LabeledTree:
    """Postorder array form of an ordered labeled tree.

    ``lmld[i]`` is the postorder index of node i's leftmost leaf descendant;
    ``keyroots`` holds, for each distinct leftmost-leaf class, its highest
    node (the root is always one of them).
    """

    __slots__ = ("labels", "lmld", "parent", "keyroots")

    def __init__(self, labels: list[str], lmld: np.ndarray, parent: np.ndarray):
        self.labels = labels
        self.lmld = lmld
        self.parent = parent
        highest: dict[int, int] = {}
        for i in range(len(labels)):
            highest[int(lmld[i])] = i
        self.keyroots = np.array(sorted(highest.values()), dtype=np.int64)

    @property
    def size(self) -> int:
        return len(self.labels)


def from_ast(root: minilang.AstNode) -> LabeledTree:
    """Flatten an AST to postorder arrays; labels are grammar-symbol names."""
    labels: list[str] = []
    lmld: list[int] = []
    parent: list[int] = []

    def visit(node: minilang.AstNode, parent_slot: list[int]) -> int:
        first_leaf = -1
        my_children: list[int] = []
        for child in node.children:
            ci = visit(child, my_children)
            if first_leaf == -1:
                first_leaf = lmld[ci]
        idx = len(labels)
        labels.append(node.label)
        lmld.append(first_leaf if first_leaf != -1 else idx)
        parent.append(-1)
        for ci in my_children:
            parent[ci] = idx
        parent_slot.append(idx)
        return idx

    visit(root, [])
    return LabeledTree(labels, np.array(lmld, dtype=np.int64), np.array(parent, dtype=np.int64))


def _zs_python(lml1, lml2, lab1, lab2, kr1, kr2, ci, cd, cr, td):
    n2 = len(lab2)
    for i in kr1:
        li = lml1[i]
        for j in kr2:
            lj = lml2[j]
            m = i - li + 2
            n = j - lj + 2
            fd = np.zeros((m, n))
            ioff = li - 1
            joff = lj - 1
            for x in range(1, m):
                fd[x, 0] = fd[x - 1, 0] + cd
            for y in range(1, n):
                fd[0, y] = fd[0, y - 1] + ci
            for x in range(1, m):
                for y in range(1, n):
                    if li == lml1[x + ioff] and lj == lml2[y + joff]:
                        sub = 0.0 if lab1[x + ioff] == lab2[y + joff] else cr
                        best = min(fd[x - 1, y] + cd, fd[x, y - 1] + ci, fd[x - 1, y - 1] + sub)
                        fd[x, y] = best
                        td[(x + ioff) * n2 + (y + joff)] = best
                    else:
                        p = lml1[x + ioff] - 1 - ioff
                        q = lml2[y + joff] - 1 - joff
                        fd[x, y] = min(
                            fd[x - 1, y] + cd,
                            fd[x, y - 1] + ci,
                            fd[p, q] + td[(x + ioff) * n2 + (y + joff)],
                        )
    return td[-1]


if _HAVE_NUMBA:
    _zs_fast = numba.njit(cache=True, fastmath=False)(_zs_python)
else:  # pragma: no cover
    _zs_fast = _zs_python


def tree_edit_distance(a: LabeledTree, b: LabeledTree, cost: EditCost = UNIT_COST) -> float:
    """Minimum-cost edit script value between two ordered labeled trees."""
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0:
        return cost.insert * b.size
    if b.size == 0:
        return cost.delete * a.size
    interned: dict[str, int] = {}
    lab1 = np.array([interned.setdefault(s, len(interned)) for s in a.labels], dtype=np.int64)
    lab2 = np.array([interned.setdefault(s, len(interned)) for s in b.labels], dtype=np.int64)
    td = np.zeros(a.size * b.size)
    return float(
        _zs_fast(a.lmld, b.lmld, lab1, lab2, a.keyroots, b.keyroots,
                 cost.insert, cost.delete, cost.relabel, td)
    )


def tsed_score(x_tree: LabeledTree, y_tree: LabeledTree, cost: EditCost = UNIT_COST) -> float:
    """1 - TED / max(node counts); requires at least one non-empty tree."""
    biggest = max(x_tree.size, y_tree.size)
    if biggest == 0:
        raise SliceKitError("tsed_score undefined: both trees are empty")
    return 1.0 - tree_edit_distance(x_tree, y_tree, cost) / biggest


class PrefixTsedScorer:
    """Scores partial slices against one source program, memoized.

    The memo is keyed by the hash of the partial token-text sequence, so beams
    that converge on the same statements share work. One scorer per decoding
    worker; instances are not shared across threads.
    """

    def __init__(self, source_text: str, cost: EditCost = UNIT_COST):
        self.source_tree = from_ast(minilang.parse_text(source_text))
        self.cost = cost
        self._memo: dict[tuple[str, ...], float] = {}

    def score_tokens(self, partial_tokens: Sequence[str]) -> float:
        """TSED of the partial slice whose token texts are given.

        Tokens may include "<nl>" separators and "L :" line-number prefixes;
        both are decoding artifacts, not slice content, and are stripped.
        """
        key = tuple(partial_tokens)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        text = _slice_tokens_to_text(partial_tokens)
        if not text.strip():
            score = 0.0 if self.source_tree.size else 1.0
        else:
            tree = from_ast(minilang.parse_text(text))
            score = tsed_score(self.source_tree, tree, self.cost)
        self._memo[key] = score
        return score


def _slice_tokens_to_text(tokens: Sequence[str]) -> str:
    lines: list[list[str]] = [[]]
    for t in tokens:
        if t == "<nl>":
            lines.append([])
        else:
            lines[-1].append(t)
    parts = []
    for line in lines:
        if not line:
            continue
        _, rest = minilang.split_slice_line(line)
        if rest:
            parts.append(" ".join(rest))
    return "\n".join(parts)


_scorers: dict[str, PrefixTsedScorer] = {}


def prefix_tsed(source_text: str, partial_slice_tokens: Sequence[str]) -> float:
    """Convenience wrapper over PrefixTsedScorer with a per-source memo."""
    scorer = _scorers.get(source_text)
    if scorer is None:
        if len(_scorers) >= 64:
            _scorers.clear()
        scorer = _scorers[source_text] = PrefixTsedScorer(source_text)
    return scorer.score_tokens(partial_slice_tokens)
