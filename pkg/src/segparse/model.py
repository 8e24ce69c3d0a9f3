"""Model assembly: configuration, parameter construction, (de)serialization.

A model directory holds ``model.json`` (config, vocabulary, label inventory)
next to one or more checkpoints in the binary container format, so a trained
parser can be reloaded for inference without the training corpus.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor_core as tc
from .encoder import (
    STREAMS,
    BiLstmParams,
    EmbeddingTables,
    Vocabulary,
    init_bilstm,
    init_embeddings,
    load_pretrained,
    xavier_normal,
)
from .errors import CheckpointError, ConfigError
from .scorer import ScorerParams, init_scorer
from .tensor_core import Tensor
from .treebank import LabelSet

MODES = ("joint-multi", "joint-binary", "seg-only")


@dataclass
class ModelConfig:
    mode: str = "joint-multi"
    embed_dim: int = 100
    hidden: int = 400
    lstm_layers: int = 3
    arc_mlp: int = 500
    label_mlp: int = 100
    embed_dropout: float = 0.33
    lstm_dropout: float = 0.33
    arc_mlp_dropout: float = 0.33
    label_mlp_dropout: float = 0.33
    min_freq: int = 2
    no_ngram: bool = False
    no_pretrained: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def streams(self):
        return ("uni",) if self.no_ngram else STREAMS

    @property
    def embed_width(self) -> int:
        return self.embed_dim * len(self.streams)


class ModelParams:
    """All trainable tensors plus the vocabulary and label inventory."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, label_set: LabelSet,
                 embeddings: EmbeddingTables, bilstm: BiLstmParams, root_vec: Tensor,
                 scorer: ScorerParams, pretrained_paths=None):
        self.config = config
        self.vocab = vocab
        self.label_set = label_set
        self.embeddings = embeddings
        self.bilstm = bilstm
        self.root_vec = root_vec
        self.scorer = scorer
        self.pretrained_paths = dict(pretrained_paths or {})

    @classmethod
    def build(cls, config: ModelConfig, vocab: Vocabulary, label_set: LabelSet,
              rng, pretrained=None, pretrained_paths=None) -> "ModelParams":
        dtype = config.np_dtype
        if config.no_pretrained:
            pretrained = None
            pretrained_paths = None
        embeddings = init_embeddings(rng, vocab, config.embed_dim, dtype,
                                     streams=config.streams, pretrained=pretrained)
        bilstm = init_bilstm(rng, config.embed_width, config.hidden, config.lstm_layers, dtype)
        root_vec = Tensor(xavier_normal(rng, (1, 2 * config.hidden), dtype), requires_grad=True)
        scorer = init_scorer(rng, 2 * config.hidden, config.arc_mlp, config.label_mlp,
                             len(label_set), dtype,
                             with_arc_scorer=config.mode != "seg-only")
        return cls(config, vocab, label_set, embeddings, bilstm, root_vec, scorer,
                   pretrained_paths)

    # -- parameter traversal -------------------------------------------------

    def trainables(self):
        """Stable (name, Tensor) order shared by Adam state and checkpoints."""
        out = []
        for name in self.config.streams:
            out.append((f"embed/{name}", self.embeddings.learned[name]))
        out.append(("root_vec", self.root_vec))
        for i, (fwd, bwd) in enumerate(self.bilstm.layers):
            for tag, direction in (("fw", fwd), ("bw", bwd)):
                out.append((f"lstm{i}/{tag}/w_in", direction.w_in))
                out.append((f"lstm{i}/{tag}/w_rec", direction.w_rec))
                out.append((f"lstm{i}/{tag}/bias", direction.bias))
        s = self.scorer
        scorer_parts = [
            ("scorer/arc_head_w", s.arc_head_w), ("scorer/arc_head_b", s.arc_head_b),
            ("scorer/arc_dep_w", s.arc_dep_w), ("scorer/arc_dep_b", s.arc_dep_b),
            ("scorer/arc_bilinear", s.arc_bilinear), ("scorer/arc_prior", s.arc_prior),
            ("scorer/label_head_w", s.label_head_w), ("scorer/label_head_b", s.label_head_b),
            ("scorer/label_dep_w", s.label_dep_w), ("scorer/label_dep_b", s.label_dep_b),
            ("scorer/label_bilinear", s.label_bilinear), ("scorer/label_linear", s.label_linear),
            ("scorer/label_bias", s.label_bias),
        ]
        out.extend((name, t) for name, t in scorer_parts if t is not None)
        return out

    def zero_grads(self):
        for _, t in self.trainables():
            t.grad = None

    # -- dropout masks (trainer owns the RNG) --------------------------------

    def sample_masks(self, rng, batch: int, length: int) -> dict:
        cfg = self.config
        dtype = cfg.np_dtype

        def bern(p, shape):
            return (rng.random(shape) >= p).astype(dtype)

        masks = {}
        if cfg.embed_dropout > 0:
            masks["embed"] = bern(cfg.embed_dropout, (length * batch, cfg.embed_width))
        if cfg.lstm_dropout > 0:
            dims = [cfg.embed_width] + [2 * cfg.hidden] * (cfg.lstm_layers - 1)
            masks["lstm"] = [bern(cfg.lstm_dropout, (batch, d)) for d in dims]
        rows = (length + 1) * batch
        if self.scorer.has_arc_scorer and cfg.arc_mlp_dropout > 0:
            masks["arc_head"] = bern(cfg.arc_mlp_dropout, (rows, cfg.arc_mlp))
            masks["arc_dep"] = bern(cfg.arc_mlp_dropout, (rows, cfg.arc_mlp))
        if cfg.label_mlp_dropout > 0:
            masks["label_head"] = bern(cfg.label_mlp_dropout, (rows, cfg.label_mlp))
            masks["label_dep"] = bern(cfg.label_mlp_dropout, (rows, cfg.label_mlp))
        return masks

    # -- persistence ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {name: t.data for name, t in self.trainables()}

    def load_state(self, entries: dict) -> None:
        own = dict(self.trainables())
        missing = sorted(set(own) - set(entries))
        extra = sorted(set(entries) - set(own))
        if missing or extra:
            raise CheckpointError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, tensor in own.items():
            arr = entries[name]
            if tuple(arr.shape) != tuple(tensor.data.shape):
                raise CheckpointError(
                    f"checkpoint entry {name}: shape {arr.shape} != model {tensor.data.shape}")
            tensor.data = arr.astype(self.config.np_dtype)
            tensor.grad = None

    def save_meta(self, directory) -> None:
        blob = {
            "config": asdict(self.config),
            "vocab": self.vocab.to_json_dict(),
            "labels": list(self.label_set.labels),
            "pretrained_paths": self.pretrained_paths,
        }
        with open(f"{directory}/model.json", "w", encoding="utf-8") as fh:
            json.dump(blob, fh, ensure_ascii=False, sort_keys=True, indent=1)
            fh.write("\n")


def load_model(directory, checkpoint: str = "best.ckpt") -> ModelParams:
    """Rebuild a model from ``model.json`` + a checkpoint in ``directory``."""
    try:
        with open(f"{directory}/model.json", encoding="utf-8") as fh:
            blob = json.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"no model.json under {directory}") from None
    config = ModelConfig(**blob["config"])
    vocab = Vocabulary.from_json_dict(blob["vocab"])
    label_set = LabelSet(tuple(blob["labels"]))
    pretrained_paths = blob.get("pretrained_paths") or {}
    pretrained = {name: load_pretrained(path, config.embed_dim)
                  for name, path in pretrained_paths.items() if path}
    model = ModelParams.build(config, vocab, label_set, np.random.default_rng(0),
                              pretrained=pretrained, pretrained_paths=pretrained_paths)
    model.load_state(tc.load_checkpoint(f"{directory}/{checkpoint}"))
    return model
