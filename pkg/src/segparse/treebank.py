"""Sentences, word- and character-level trees, tree transforms, corpus I/O.

A word-level dependency tree is rewritten as a character-level tree: inside
a word every character depends on its right neighbour with the reserved
label ``app``, and an arc between two words becomes an arc between their
last characters.  The rewrite is exactly invertible, which is what the
round-trip tests pin down.

Characters are 1-based; index 0 is the virtual root.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import FormatError, StructureError

APP = "app"
ROOT_LABEL = "root"
SEG = "seg"
END = "</s>"


@dataclass(frozen=True)
class Sentence:
    """A character sequence with derived bigram/trigram streams."""

    chars: tuple[str, ...]
    bigrams: tuple[str, ...]
    trigrams: tuple[str, ...]

    @classmethod
    def from_chars(cls, text: str) -> "Sentence":
        chars = tuple(text)
        if not chars:
            raise StructureError("a sentence needs at least one character")
        padded = chars + (END, END)
        bigrams = tuple(padded[i] + padded[i + 1] for i in range(len(chars)))
        trigrams = tuple(padded[i] + padded[i + 1] + padded[i + 2] for i in range(len(chars)))
        return cls(chars, bigrams, trigrams)

    def __len__(self) -> int:
        return len(self.chars)

    @property
    def text(self) -> str:
        return "".join(self.chars)


@dataclass(frozen=True)
class WordTree:
    """Word spans plus a labeled dependency tree over the words.

    ``spans`` are (start, end) character ranges, 1-based inclusive, covering
    the sentence in order.  ``heads[w]`` is the 1-based index of word w's
    head word, 0 for the sentence root.
    """

    spans: tuple[tuple[int, int], ...]
    heads: tuple[int, ...]
    labels: tuple[str, ...]

    @property
    def n_words(self) -> int:
        return len(self.spans)

    @property
    def n_chars(self) -> int:
        return self.spans[-1][1] if self.spans else 0

    def words(self, sentence: Sentence) -> list[str]:
        return ["".join(sentence.chars[a - 1:b]) for a, b in self.spans]


@dataclass(frozen=True)
class CharTree:
    """Per-character head indices (0 = root) and arc labels, ``app`` included."""

    heads: tuple[int, ...]
    labels: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.heads)


@dataclass(frozen=True)
class LabelSet:
    """Ordered arc-label inventory with ``app`` always in last position."""

    labels: tuple[str, ...]

    @classmethod
    def from_labels(cls, labels) -> "LabelSet":
        ordered = sorted(set(labels))
        if APP in ordered:
            raise StructureError(f"'{APP}' is reserved and cannot appear as a word-level label")
        return cls(tuple(ordered) + (APP,))

    def __post_init__(self):
        if self.labels.count(APP) != 1:
            raise StructureError(f"label set must contain '{APP}' exactly once")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def app_index(self) -> int:
        return self.labels.index(APP)

    @property
    def root_index(self) -> int | None:
        return self.labels.index(ROOT_LABEL) if ROOT_LABEL in self.labels else None

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise StructureError(f"label '{label}' not in label set") from None


@dataclass
class Corpus:
    items: list[tuple[Sentence, WordTree]] = field(default_factory=list)
    label_set: LabelSet = field(default_factory=lambda: LabelSet.from_labels([]))

    def __len__(self) -> int:
        return len(self.items)


def validate_word_tree(wt: WordTree, n_chars: int) -> list[str]:
    """Return human-readable violations; empty list means the tree is valid."""
    bad = []
    if not wt.spans:
        return ["tree has no words"]
    if not (len(wt.spans) == len(wt.heads) == len(wt.labels)):
        return ["spans, heads and labels must have equal length"]
    expect = 1
    for w, (a, b) in enumerate(wt.spans, 1):
        if a != expect or b < a:
            bad.append(f"word {w}: span ({a},{b}) breaks the partition at char {expect}")
            break
        expect = b + 1
    else:
        if expect != n_chars + 1:
            bad.append(f"spans cover 1..{expect - 1} but the sentence has {n_chars} characters")
    m = wt.n_words
    roots = [w for w, h in enumerate(wt.heads, 1) if h == 0]
    if len(roots) != 1:
        bad.append(f"expected exactly one root word, found {len(roots)}")
    for w, h in enumerate(wt.heads, 1):
        if not 0 <= h <= m:
            bad.append(f"word {w}: head {h} out of range 0..{m}")
        elif h == w:
            bad.append(f"word {w}: heads itself")
    for w, lab in enumerate(wt.labels, 1):
        if lab == APP:
            bad.append(f"word {w}: '{APP}' is not a word-level label")
        if not lab:
            bad.append(f"word {w}: empty label")
    if not bad:
        bad.extend(f"cycle through words {sorted(c)}" for c in _cycles(wt.heads))
    return bad


def validate_char_tree(ct: CharTree) -> list[str]:
    """Check the character-tree invariants; violations are data, not errors."""
    n = len(ct.heads)
    bad = []
    if n == 0:
        return ["tree has no characters"]
    if len(ct.labels) != n:
        return [f"{n} heads but {len(ct.labels)} labels"]
    for i, h in enumerate(ct.heads, 1):
        if not 0 <= h <= n:
            bad.append(f"char {i}: head {h} out of range 0..{n}")
        elif h == i:
            bad.append(f"char {i}: heads itself")
    roots = [i for i, h in enumerate(ct.heads, 1) if h == 0]
    if len(roots) != 1:
        bad.append(f"expected exactly one root character, found {len(roots)}: {roots}")
    for i, (h, lab) in enumerate(zip(ct.heads, ct.labels), 1):
        if lab == APP and h != i + 1:
            bad.append(f"char {i}: '{APP}' arc must point to char {i + 1}, not {h}")
        if h == 0 and lab == APP:
            bad.append(f"char {i}: the root arc cannot be labeled '{APP}'")
    if not any("out of range" in b or "heads itself" in b for b in bad):
        bad.extend(f"cycle through chars {sorted(c)}" for c in _cycles(ct.heads))
    return bad


def _cycles(heads) -> list[set[int]]:
    # Each node has one parent, so any cycle is found by walking parent links.
    state = [0] * (len(heads) + 1)  # 0 new, 1 on path, 2 done
    state[0] = 2
    cycles = []
    for start in range(1, len(heads) + 1):
        path = []
        i = start
        while state[i] == 0:
            state[i] = 1
            path.append(i)
            i = heads[i - 1]
        if state[i] == 1:  # walked back into the current path
            cycles.append(set(path[path.index(i):]))
        for j in path:
            state[j] = 2
    return cycles


def char_tree_from_word_tree(sentence: Sentence, wt: WordTree) -> CharTree:
    """Rewrite a word tree as its character-level equivalent.

    Non-final characters of a word point at their right neighbour with the
    ``app`` label; the last character inherits the word's arc, redirected to
    the last character of the head word (0 for the root word).
    """
    problems = validate_word_tree(wt, len(sentence))
    if problems:
        raise StructureError("invalid word tree: " + "; ".join(problems))
    last = [b for _, b in wt.spans]
    heads = [0] * len(sentence)
    labels = [APP] * len(sentence)
    for w, (a, b) in enumerate(wt.spans, 1):
        for i in range(a, b):
            heads[i - 1] = i + 1
        h = wt.heads[w - 1]
        heads[b - 1] = 0 if h == 0 else last[h - 1]
        labels[b - 1] = wt.labels[w - 1]
    return CharTree(tuple(heads), tuple(labels))


def word_tree_from_char_tree(sentence: Sentence, ct: CharTree) -> WordTree:
    """Recover the word tree: app runs merge into words, last-char arcs attach them.

    Inverse of :func:`char_tree_from_word_tree` on valid input.  A word's head
    is the word containing the head character of its last character, whatever
    position that character occupies in the head word.
    """
    problems = validate_char_tree(ct)
    if problems:
        raise StructureError("invalid char tree: " + "; ".join(problems))
    n = len(ct)
    if len(sentence) != n:
        raise StructureError(f"sentence has {len(sentence)} chars but the tree has {n}")
    spans = []
    start = 1
    for i in range(1, n + 1):
        if ct.labels[i - 1] != APP:
            spans.append((start, i))
            start = i + 1
    # validate_char_tree rejects app on the last char (head n+1 is impossible),
    # so the final word is always closed.
    word_of = [0] * (n + 1)
    for w, (a, b) in enumerate(spans, 1):
        for i in range(a, b + 1):
            word_of[i] = w
    heads, labels = [], []
    for a, b in spans:
        h = ct.heads[b - 1]
        heads.append(0 if h == 0 else word_of[h])
        labels.append(ct.labels[b - 1])
    return WordTree(tuple(spans), tuple(heads), tuple(labels))


def segmentation_from_seg_labels(labels, n: int | None = None) -> tuple[tuple[int, int], ...]:
    """Turn a seg/app decision sequence into word spans over 1..n.

    ``labels[i]`` decides the gap after character i+1: ``seg`` closes a word,
    ``app`` continues it.  The gap after the final character is always a
    boundary, so for an n-character sentence either n-1 decisions are given
    (the usual decoder output) or n with a mandatory trailing ``seg``.
    """
    labels = list(labels)
    for lab in labels:
        if lab not in (SEG, APP):
            raise FormatError(f"unknown segmentation label '{lab}'")
    if n is None:
        n = len(labels) + 1
    elif len(labels) == n:
        if labels and labels[-1] != SEG:
            raise StructureError(f"position {n} must be '{SEG}': the sentence ends there")
        labels = labels[:-1]
    elif len(labels) != n - 1:
        raise StructureError(f"{len(labels)} labels cannot segment {n} characters")
    spans = []
    start = 1
    for i, lab in enumerate(labels, 1):
        if lab == SEG:
            spans.append((start, i))
            start = i + 1
    spans.append((start, n))
    return tuple(spans)


def seg_labels_from_spans(spans) -> list[str]:
    """Per-gap gold decisions for the segmentation-only model (length n-1)."""
    boundaries = {b for _, b in spans}
    n = spans[-1][1]
    return [SEG if i in boundaries else APP for i in range(1, n)]


# ---------------------------------------------------------------------------
# corpus file format: WORD<TAB>HEAD<TAB>LABEL, blank line between sentences


def read_corpus(text: str) -> Corpus:
    items = []
    all_labels = set()
    rows: list[tuple[str, int, str]] = []
    first_line = 0

    def flush(line_no):
        if not rows:
            return
        words = [w for w, _, _ in rows]
        spans = []
        pos = 1
        for w in words:
            spans.append((pos, pos + len(w) - 1))
            pos += len(w)
        wt = WordTree(tuple(spans), tuple(h for _, h, _ in rows), tuple(l for _, _, l in rows))
        sentence = Sentence.from_chars("".join(words))
        problems = validate_word_tree(wt, len(sentence))
        if problems:
            raise StructureError(
                f"sentence starting at line {first_line}: " + "; ".join(problems)
            )
        items.append((sentence, wt))
        all_labels.update(wt.labels)
        rows.clear()

    for line_no, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            flush(line_no)
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(f"expected WORD<TAB>HEAD<TAB>LABEL, got {line!r}", line=line_no)
        word, head_s, label = fields
        if not word:
            raise FormatError("empty word", line=line_no)
        if not label:
            raise FormatError("empty label", line=line_no)
        try:
            head = int(head_s)
        except ValueError:
            raise FormatError(f"head {head_s!r} is not an integer", line=line_no) from None
        if head < 0:
            raise FormatError(f"head {head} is negative", line=line_no)
        if not rows:
            first_line = line_no
        rows.append((word, head, label))
    flush(line_no + 1 if text else 1)
    return Corpus(items, LabelSet.from_labels(all_labels))


def write_corpus(corpus: Corpus) -> str:
    blocks = []
    for sentence, wt in corpus.items:
        lines = [
            f"{word}\t{head}\t{label}"
            for word, head, label in zip(wt.words(sentence), wt.heads, wt.labels)
        ]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n" if blocks else ""


# ---------------------------------------------------------------------------
# synthetic treebank
#
# A toy language over 50 character types in which every character class is
# tied to one within-word position, so segmentation and attachment are
# recoverable from local context.  Word lengths 1-3, projective trees,
# sentence lengths 5-15 characters.

_NOUN_BEGIN = "金银铁市学工农科"
_NOUN_MID = "融济术程"
_NOUN_END = "业场校厂员司团城"
_NOUN_SINGLE = "人水山车书马"
_VERB_SINGLE = "看写读开走用"
_VERB_BEGIN = "发计建"
_VERB_END = "展划设"
_DET = "这那每"
_ADV = "很都先"
_PREP = "在从向"
_PUNCT = "。！？"

SYNTH_CHARSET = (
    _NOUN_BEGIN + _NOUN_MID + _NOUN_END + _NOUN_SINGLE + _VERB_SINGLE
    + _VERB_BEGIN + _VERB_END + _DET + _ADV + _PREP + _PUNCT
)


def _synth_noun(rng):
    size = rng.choices((1, 2, 3), weights=(0.3, 0.4, 0.3))[0]
    if size == 1:
        return rng.choice(_NOUN_SINGLE)
    if size == 2:
        return rng.choice(_NOUN_BEGIN) + rng.choice(_NOUN_END)
    return rng.choice(_NOUN_BEGIN) + rng.choice(_NOUN_MID) + rng.choice(_NOUN_END)


def _synth_verb(rng):
    if rng.random() < 0.55:
        return rng.choice(_VERB_SINGLE)
    return rng.choice(_VERB_BEGIN) + rng.choice(_VERB_END)


def _synth_sentence(rng) -> tuple[list[str], list[int], list[str]]:
    words: list[str] = []
    heads: list[int] = []
    labels: list[str] = []

    def add(word, head, label):
        words.append(word)
        heads.append(head)
        labels.append(label)
        return len(words)

    def noun_phrase(head, label, p_det):
        if rng.random() < p_det:
            det = add(rng.choice(_DET), 0, "det")
        else:
            det = None
        noun = add(_synth_noun(rng), head, label)
        if det is not None:
            heads[det - 1] = noun
        return noun

    noun_phrase(0, "nsubj", p_det=0.45)  # head patched to the verb below
    subj = len(words)
    if rng.random() < 0.4:
        add(rng.choice(_ADV), 0, "advmod")
    adv = len(words) if len(words) > subj else None
    verb = add(_synth_verb(rng), 0, ROOT_LABEL)
    heads[subj - 1] = verb
    if adv is not None:
        heads[adv - 1] = verb
    if rng.random() < 0.8:
        noun_phrase(verb, "dobj", p_det=0.45)
    if rng.random() < 0.35:
        prep = add(rng.choice(_PREP), verb, "prep")
        noun_phrase(prep, "pobj", p_det=0.3)
    if rng.random() < 0.7:
        add(rng.choice(_PUNCT), verb, "punct")
    return words, heads, labels


def gen_synth_corpus(seed: int, n_sentences: int) -> Corpus:
    """Deterministic toy treebank; same (seed, n) always yields the same corpus."""
    if n_sentences < 1:
        raise ValueError("n_sentences must be >= 1")
    rng = random.Random(seed)
    items = []
    all_labels = set()
    for _ in range(n_sentences):
        while True:
            words, heads, labels = _synth_sentence(rng)
            n = sum(len(w) for w in words)
            if 5 <= n <= 15:
                break
        spans = []
        pos = 1
        for w in words:
            spans.append((pos, pos + len(w) - 1))
            pos += len(w)
        wt = WordTree(tuple(spans), tuple(heads), tuple(labels))
        sentence = Sentence.from_chars("".join(words))
        items.append((sentence, wt))
        all_labels.update(labels)
    return Corpus(items, LabelSet.from_labels(all_labels))


def to_binary_labels(corpus: Corpus) -> Corpus:
    """Collapse attachment labels to {dep, root} for the binary-label mode."""
    items = []
    for sentence, wt in corpus.items:
        labels = tuple(ROOT_LABEL if h == 0 else "dep" for h in wt.heads)
        items.append((sentence, WordTree(wt.spans, wt.heads, labels)))
    return Corpus(items, LabelSet.from_labels({"dep", ROOT_LABEL}))
