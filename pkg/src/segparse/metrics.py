"""Word-level joint evaluation.

A dependent-head pair is correct only when both words are segmented exactly
right and the dependent attaches to the right head word; the root word forms
a pair with the virtual root.  Precision runs over predicted words, recall
over gold words, so UAS and LAS coincide with the unlabeled and labeled
recalls.  Corpus scores pool counts over sentences (micro-average).
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import StructureError
from .treebank import Corpus, WordTree


@dataclass(frozen=True)
class PRF:
    p: float
    r: float
    f1: float

    @classmethod
    def from_counts(cls, correct: int, n_pred: int, n_gold: int) -> "PRF":
        p = correct / n_pred if n_pred else 0.0
        r = correct / n_gold if n_gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1)


@dataclass(frozen=True)
class EvalReport:
    seg: PRF
    udep: PRF
    ldep: PRF
    counts: dict

    @property
    def uas(self) -> float:
        return self.udep.r

    @property
    def las(self) -> float:
        return self.ldep.r

    def to_json_dict(self) -> dict:
        return {
            "seg_p": self.seg.p, "seg_r": self.seg.r, "seg_f1": self.seg.f1,
            "udep_p": self.udep.p, "uas": self.uas, "udep_f1": self.udep.f1,
            "ldep_p": self.ldep.p, "las": self.las, "ldep_f1": self.ldep.f1,
        }


@dataclass(frozen=True)
class ErrorBreakdown:
    """Split of predicted pairs into correct / segmentation-broken / wrong-head."""

    correct_pct: float
    seg_wrong_pct: float
    head_wrong_pct: float
    counts: dict

    def to_json_dict(self) -> dict:
        return {
            "correct_pct": self.correct_pct,
            "seg_wrong_pct": self.seg_wrong_pct,
            "head_wrong_pct": self.head_wrong_pct,
        }


def _check_aligned(gold: WordTree, pred: WordTree):
    if gold.n_chars != pred.n_chars:
        raise StructureError(
            f"gold covers {gold.n_chars} chars but prediction covers {pred.n_chars}")


def _pair_map(wt: WordTree) -> dict:
    """span -> (head span or None for the virtual root, label)."""
    out = {}
    for w, span in enumerate(wt.spans):
        h = wt.heads[w]
        out[span] = (None if h == 0 else wt.spans[h - 1], wt.labels[w])
    return out


def _pair_counts(gold: WordTree, pred: WordTree):
    gold_map = _pair_map(gold)
    pred_map = _pair_map(pred)
    spans = len(set(gold_map) & set(pred_map))
    udep = sum(1 for s, (h, _) in pred_map.items()
               if s in gold_map and gold_map[s][0] == h)
    ldep = sum(1 for s, (h, lab) in pred_map.items()
               if s in gold_map and gold_map[s] == (h, lab))
    return spans, udep, ldep


def seg_scores(gold: WordTree, pred: WordTree) -> PRF:
    _check_aligned(gold, pred)
    correct = len(set(gold.spans) & set(pred.spans))
    return PRF.from_counts(correct, pred.n_words, gold.n_words)


def udep_scores(gold: WordTree, pred: WordTree) -> PRF:
    _check_aligned(gold, pred)
    _, udep, _ = _pair_counts(gold, pred)
    return PRF.from_counts(udep, pred.n_words, gold.n_words)


def ldep_scores(gold: WordTree, pred: WordTree) -> PRF:
    _check_aligned(gold, pred)
    _, _, ldep = _pair_counts(gold, pred)
    return PRF.from_counts(ldep, pred.n_words, gold.n_words)


def _breakdown_counts(gold: WordTree, pred: WordTree):
    gold_map = _pair_map(gold)
    gold_spans = set(gold_map)
    correct = seg_wrong = head_wrong = 0
    for span, (head_span, _) in _pair_map(pred).items():
        dep_ok = span in gold_spans
        head_ok = head_span is None or head_span in gold_spans
        if not (dep_ok and head_ok):
            seg_wrong += 1
        elif gold_map[span][0] == head_span:
            correct += 1
        else:
            head_wrong += 1
    return correct, seg_wrong, head_wrong


def error_breakdown(gold: WordTree, pred: WordTree) -> ErrorBreakdown:
    _check_aligned(gold, pred)
    return _breakdown_from_counts(*_breakdown_counts(gold, pred))


def _breakdown_from_counts(correct: int, seg_wrong: int, head_wrong: int) -> ErrorBreakdown:
    pairs = correct + seg_wrong + head_wrong
    pct = (lambda c: 100.0 * c / pairs) if pairs else (lambda c: 0.0)
    return ErrorBreakdown(pct(correct), pct(seg_wrong), pct(head_wrong),
                          {"correct": correct, "seg_wrong": seg_wrong,
                           "head_wrong": head_wrong, "pairs": pairs})


def evaluate_corpus(gold: Corpus, preds) -> EvalReport:
    """Micro-averaged corpus scores: counts pool first, ratios come last."""
    preds = list(preds)
    if not preds:
        raise StructureError("no predictions to evaluate")
    if len(preds) != len(gold.items):
        raise StructureError(f"{len(gold.items)} gold sentences vs {len(preds)} predictions")
    gold_words = pred_words = spans = udep = ldep = 0
    for (_, gold_wt), pred_wt in zip(gold.items, preds):
        _check_aligned(gold_wt, pred_wt)
        s, u, l = _pair_counts(gold_wt, pred_wt)
        spans += s
        udep += u
        ldep += l
        gold_words += gold_wt.n_words
        pred_words += pred_wt.n_words
    counts = {
        "gold_words": gold_words, "pred_words": pred_words,
        "correct_spans": spans, "correct_udep": udep, "correct_ldep": ldep,
    }
    report = EvalReport(
        seg=PRF.from_counts(spans, pred_words, gold_words),
        udep=PRF.from_counts(udep, pred_words, gold_words),
        ldep=PRF.from_counts(ldep, pred_words, gold_words),
        counts=counts,
    )
    assert report.uas == report.udep.r and report.las == report.ldep.r
    assert counts["correct_udep"] <= counts["correct_spans"], counts
    assert report.ldep.f1 <= report.udep.f1 + 1e-12, report
    return report


def corpus_error_breakdown(gold: Corpus, preds) -> ErrorBreakdown:
    preds = list(preds)
    if not preds or len(preds) != len(gold.items):
        raise StructureError(f"{len(gold.items)} gold sentences vs {len(preds)} predictions")
    totals = [0, 0, 0]
    for (_, gold_wt), pred_wt in zip(gold.items, preds):
        _check_aligned(gold_wt, pred_wt)
        for k, c in enumerate(_breakdown_counts(gold_wt, pred_wt)):
            totals[k] += c
    return _breakdown_from_counts(*totals)
