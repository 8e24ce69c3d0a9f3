"""Score matrices to well-formed character trees.

Decoding is greedy-first: per-dependent argmax heads, kept when they already
form a single-rooted tree, otherwise repaired exactly with Chu-Liu/Edmonds
maximum spanning arborescence over the same scores.  Label assignment then
masks the intra-word label wherever its adjacency constraint would be
violated, so recovery into a word tree can never fail.

Ties break toward the lowest index everywhere; decoding is deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scorer as sc
from . import tensor_core as tc
from .encoder import encode_batch
from .errors import DimensionError, StructureError
from .treebank import (
    APP,
    ROOT_LABEL,
    CharTree,
    LabelSet,
    Sentence,
    WordTree,
    char_tree_from_word_tree,
    segmentation_from_seg_labels,
    word_tree_from_char_tree,
    _cycles,
)

NEG = -1.0e18  # finite stand-in for -inf; keeps contraction arithmetic NaN-free


@dataclass
class DecodeConfig:
    mode: str = "joint-multi"
    enforce_single_root: bool = True


def _is_forest_heads_valid(heads, single_root: bool) -> bool:
    roots = sum(1 for h in heads if h == 0)
    if roots == 0 or (single_root and roots != 1):
        return False
    return not _cycles(list(heads))


def _square_scores(arc: np.ndarray) -> np.ndarray:
    """(n+1, n) head-by-dependent scores -> (n+1, n+1) square with bans applied."""
    n_heads, n = arc.shape
    if n_heads != n + 1:
        raise DimensionError(f"arc matrix must be (n+1, n), got {arc.shape}")
    square = np.full((n + 1, n + 1), NEG, dtype=np.float64)
    square[:, 1:] = arc
    np.fill_diagonal(square, NEG)  # no self arcs
    square[:, 0] = NEG              # nothing points at the root
    return square


def chu_liu_edmonds(arc: np.ndarray, single_root: bool = True):
    """Maximum spanning arborescence rooted at 0 over an (n+1, n) score matrix.

    With ``single_root`` the root gets exactly one child, found by trying each
    candidate child with all other root arcs banned and keeping the best total.
    """
    arc = np.asarray(arc, dtype=np.float64)
    if not np.isfinite(arc).all():
        raise DimensionError("arc scores must be finite")
    n = arc.shape[1]
    if n == 0:
        raise DimensionError("cannot decode an empty sentence")
    square = _square_scores(arc)
    if not single_root:
        return tuple(_cle_dense(square)[1:])
    best_heads, best_total = None, -np.inf
    for candidate in range(1, n + 1):
        banned = square.copy()
        keep = banned[0, candidate]
        banned[0, :] = NEG
        banned[0, candidate] = keep
        heads = _cle_dense(banned)
        total = sum(square[heads[j], j] for j in range(1, n + 1))
        if total > best_total:
            best_heads, best_total = heads, total
    return tuple(best_heads[1:])


def _cle_dense(scores: np.ndarray) -> np.ndarray:
    """Recursive dense Chu-Liu/Edmonds on a square matrix; node 0 is the root.

    Returns per-node heads with heads[0] = 0.  Classic contraction: pick the
    best entering arc per node, contract any cycle into a supernode with
    entering arcs reweighted by what they displace, recurse, then unroll.
    """
    m = scores.shape[0]
    heads = np.zeros(m, dtype=np.int64)
    for j in range(1, m):
        heads[j] = int(np.argmax(scores[:, j]))
    cycles = _cycles(list(heads[1:]))
    if not cycles:
        return heads
    cycle = sorted(cycles[0])
    in_cycle = np.zeros(m, dtype=bool)
    in_cycle[cycle] = True
    outside = [x for x in range(m) if not in_cycle[x]]  # keeps 0 in front
    # contracted node index: len(outside) in the new numbering
    c_new = len(outside)
    size = c_new + 1
    new_scores = np.full((size, size), NEG, dtype=np.float64)
    old_of_new = {nx: x for nx, x in enumerate(outside)}
    new_of_old = {x: nx for nx, x in enumerate(outside)}
    for ax, x in enumerate(outside):
        for ay, y in enumerate(outside):
            if x != y:
                new_scores[ax, ay] = scores[x, y]
    enter_choice = {}
    leave_choice = {}
    for ax, x in enumerate(outside):
        enter_gain = [scores[x, v] - scores[heads[v], v] for v in cycle]
        best_in = int(np.argmax(enter_gain))
        enter_choice[x] = cycle[best_in]
        new_scores[ax, c_new] = enter_gain[best_in]
        leave = [scores[v, x] for v in cycle]
        best_out = int(np.argmax(leave))
        leave_choice[x] = cycle[best_out]
        new_scores[c_new, ax] = leave[best_out]
    sub_heads = _cle_dense(new_scores)
    out = np.zeros(m, dtype=np.int64)
    for v in cycle:
        out[v] = heads[v]  # cycle arcs kept, except where the entering arc lands
    entering_from = old_of_new[int(sub_heads[c_new])]
    out[enter_choice[entering_from]] = entering_from
    for nx, x in enumerate(outside):
        if x == 0:
            continue
        h = int(sub_heads[nx])
        out[x] = leave_choice[x] if h == c_new else old_of_new[h]
    return out


def decode_arcs(arc, single_root: bool = True):
    """Per-dependent argmax heads, repaired by Chu-Liu/Edmonds when not a tree."""
    arc = np.asarray(arc if not isinstance(arc, tc.Tensor) else arc.data, dtype=np.float64)
    if not np.isfinite(arc).all():
        raise DimensionError("arc scores must be finite")
    square = _square_scores(arc)
    n = arc.shape[1]
    if n == 0:
        raise DimensionError("cannot decode an empty sentence")
    greedy = tuple(int(np.argmax(square[:, j])) for j in range(1, n + 1))
    if _is_forest_heads_valid(greedy, single_root):
        return greedy
    return chu_liu_edmonds(arc, single_root)


def assign_labels(label_scores, heads, label_set: LabelSet):
    """Argmax labels per decoded arc with the intra-word constraint enforced.

    Row j-1 of ``label_scores`` scores the arc into dependent j.  The ``app``
    coordinate is masked to -inf unless head(j) = j+1, which also covers the
    root arc (its head is 0, never j+1); ties break to the lowest index.
    """
    scores = np.asarray(label_scores if not isinstance(label_scores, tc.Tensor)
                        else label_scores.data, dtype=np.float64)
    heads = list(heads)
    if scores.ndim != 2 or scores.shape[0] != len(heads):
        raise DimensionError(f"need one score row per arc: {scores.shape} vs {len(heads)} heads")
    app = label_set.app_index
    out = []
    for j, head in enumerate(heads, 1):
        row = scores[j - 1]
        if head != j + 1:
            row = row.copy()
            row[app] = -np.inf
        out.append(label_set.labels[int(np.argmax(row))])
    return tuple(out)


def decode_seg_only(label_scores, label_set: LabelSet):
    """Per-row argmax over {seg, app} for the fixed adjacent arcs; length n-1."""
    scores = np.asarray(label_scores if not isinstance(label_scores, tc.Tensor)
                        else label_scores.data, dtype=np.float64)
    if set(label_set.labels) != {APP, "seg"}:
        raise StructureError(f"seg-only label set must be {{app, seg}}, got {label_set.labels}")
    if scores.size == 0:
        return ()
    if scores.ndim != 2 or scores.shape[1] != 2:
        raise DimensionError(f"seg-only scores must be (n-1, 2), got {scores.shape}")
    return tuple(label_set.labels[int(np.argmax(row))] for row in scores)


def naive_attach(spans) -> WordTree:
    """Chain-attachment baseline: every word heads to the next, last is root."""
    m = len(spans)
    heads = tuple(w + 1 for w in range(1, m)) + (0,)
    labels = tuple("dep" for _ in range(m - 1)) + (ROOT_LABEL,)
    return WordTree(tuple(spans), heads, labels)


def parse_batch(sentences, model, cfg: DecodeConfig, batch_size: int = 64):
    """Parse sentences in length-bucketed batches; order of results is preserved."""
    order = sorted(range(len(sentences)), key=lambda k: (len(sentences[k]), k))
    results = [None] * len(sentences)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        batch = [sentences[k] for k in chunk]
        for k, parsed in zip(chunk, _parse_chunk(batch, model, cfg)):
            results[k] = parsed
    return results


def _parse_chunk(batch, model, cfg: DecodeConfig):
    mcfg = model.config
    h, lengths = encode_batch(batch, model, "eval")
    arc_head, arc_dep, label_head, label_dep = sc.project(h, model.scorer, "eval")
    B = len(batch)
    out = []
    for b, sentence in enumerate(batch):
        n = int(lengths[b])
        rows = np.array([p * B + b for p in range(n + 1)], dtype=np.int64)
        lh = tc.take_rows(label_head, rows)
        ld = tc.take_rows(label_dep, rows)
        if cfg.mode == "seg-only":
            if n == 1:
                seg_labels = ()
            else:
                label_scores = sc.score_labels(lh, ld, sc.adjacent_pairs(n), model.scorer)
                seg_labels = decode_seg_only(label_scores, model.label_set)
            spans = segmentation_from_seg_labels(seg_labels, n=n)
            wt = naive_attach(spans)
            out.append((wt, char_tree_from_word_tree(sentence, wt)))
            continue
        rh = tc.take_rows(arc_head, rows)
        rd = tc.take_rows(arc_dep, rows[1:])
        arc = sc.score_arcs(rh, rd, model.scorer.arc_bilinear, model.scorer.arc_prior)
        heads = decode_arcs(arc.data, cfg.enforce_single_root)
        label_scores = sc.score_labels(lh, ld, [(j, heads[j - 1]) for j in range(1, n + 1)],
                                       model.scorer)
        labels = assign_labels(label_scores, heads, model.label_set)
        ct = CharTree(tuple(heads), labels)
        out.append((word_tree_from_char_tree(sentence, ct), ct))
    return out


def parse_sentence(sentence: Sentence, model, cfg: DecodeConfig):
    """Decode one sentence into its (WordTree, CharTree) pair."""
    return parse_batch([sentence], model, cfg)[0]
