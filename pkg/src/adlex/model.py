"""Classifier architectures built on the tensor core.

* ``STLModel``: encoder -> column mean -> dense(128, ReLU) -> dense(1) -> sigmoid.
* ``SiameseModel``: both halves of a transcript through one shared encoder,
  co-attention over the two encodings, dropout, then the same dense head.
* ``MTLModel``: encoder -> pooled vector -> two softmax heads (dementia 2-way,
  severity 4-way); the ``double`` variant adds one task-specific mixing layer
  per task over a frozen shared encoder.

Encodings are column-major: an encoded sequence of N tokens is a d x N matrix.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as tn
from .errors import InvalidSeverity, MissingEmbedding, ShapeMismatch, TooShort
from .tensor import Tensor

HIDDEN_UNITS = 128
UNK = "<unk>"
MODEL_KINDS = ("stl", "siamese", "mtl", "mtl-de")


# --------------------------------------------------------------------------- vocabulary / config

class Vocab:
    """Token -> row index; row 0 is reserved for unknown tokens."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = [UNK] + [t for t in tokens if t != UNK]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    @classmethod
    def build(cls, corpus: Iterable[Sequence[str]], min_count: int = 1) -> "Vocab":
        counts = Counter(t for toks in corpus for t in toks)
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
        return cls(kept)

    def __len__(self) -> int:
        return len(self.itos)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, 0) for t in tokens]


@dataclass
class ModelConfig:
    kind: str = "stl"
    embed_dim: int = 16
    attn_hidden: int | None = None  # co-attention k; None -> embed_dim // 2
    context: str = "mean"           # "mean" or "selfattn"
    encoder: str = "toy"            # "toy" or "precomputed"
    max_len: int = 256
    dropout: float = 0.4
    hidden: int = HIDDEN_UNITS

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {self.kind!r}")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be at least 2")
        if self.context not in ("mean", "selfattn"):
            raise ValueError(f"context must be 'mean' or 'selfattn', got {self.context!r}")
        if self.encoder not in ("toy", "precomputed"):
            raise ValueError(f"encoder must be 'toy' or 'precomputed', got {self.encoder!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def k(self) -> int:
        return self.attn_hidden if self.attn_hidden else max(1, self.embed_dim // 2)


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_out, fan_in))


# --------------------------------------------------------------------------- layers

class Dense:
    """Row-vector affine map: (1 x n_in) @ W + b."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        self.W = Tensor(glorot(rng, n_out, n_in, (n_in, n_out)), requires_grad=True, name=f"{name}.W")
        self.b = Tensor(np.zeros((1, n_out)), requires_grad=True, name=f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return tn.add(tn.matmul(x, self.W), self.b)

    def parameters(self) -> dict[str, Tensor]:
        return {self.W.name: self.W, self.b.name: self.b}


class SelfAttnMix:
    """Residual single-head self-attention over the columns of a d x N matrix.

    out = X + (Wv X) softmax((Wq X)^T (Wk X) / sqrt(d))^T, so Wv = 0 is the identity.
    """

    def __init__(self, d: int, rng: np.random.Generator, name: str, zero_value: bool = False):
        self.Wq = Tensor(glorot(rng, d, d), requires_grad=True, name=f"{name}.Wq")
        self.Wk = Tensor(glorot(rng, d, d), requires_grad=True, name=f"{name}.Wk")
        self.Wv = Tensor(np.zeros((d, d)) if zero_value else glorot(rng, d, d), requires_grad=True, name=f"{name}.Wv")
        self.scale = 1.0 / math.sqrt(d)

    def __call__(self, X: Tensor) -> Tensor:
        Q = tn.matmul(self.Wq, X)
        K = tn.matmul(self.Wk, X)
        A = tn.row_softmax(tn.scale(tn.matmul(tn.transpose(Q), K), self.scale))
        return tn.add(X, tn.matmul(tn.matmul(self.Wv, X), tn.transpose(A)))

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.Wq, self.Wk, self.Wv)}


class ToyEncoder:
    """Trainable embedding lookup plus a context layer; stands in for a pretrained transformer."""

    def __init__(self, vocab: Vocab, d: int, context: str, max_len: int, rng: np.random.Generator):
        self.vocab = vocab
        self.d = d
        self.context = context
        self.max_len = max_len
        self.E = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d), size=(len(vocab), d)), requires_grad=True, name="enc.E")
        self.mix = SelfAttnMix(d, rng, "enc.attn") if context == "selfattn" else None

    def encode(self, tokens: Sequence[str], key: str | None = None) -> Tensor:
        tokens = list(tokens)[: self.max_len] or [UNK]
        X = tn.transpose(tn.take_rows(self.E, self.vocab.ids(tokens)))
        if self.mix is not None:
            return self.mix(X)
        # each column sees the sequence mean
        return tn.add(X, tn.mean_over_columns(X))

    def parameters(self) -> dict[str, Tensor]:
        params = {self.E.name: self.E}
        if self.mix is not None:
            params.update(self.mix.parameters())
        return params


class PrecomputedEncoder:
    """Serves stored d x N matrices keyed by transcript id; has no trainable parameters.

    File layout: ``<stem>.json`` manifest ``{"format": "adlex-embeddings", "version": 1,
    "dim": d, "entries": {id: {"offset": o, "cols": N}}}`` next to ``<stem>.bin``, a raw
    little-endian float64 stream where entry ``id`` occupies ``d * N`` values starting at
    value index ``o``, stored row-major as a d x N matrix.
    """

    def __init__(self, matrices: dict[str, np.ndarray], max_len: int = 256):
        dims = {m.shape[0] for m in matrices.values()}
        if len(dims) != 1:
            raise ShapeMismatch(f"precomputed matrices must share one width d, got {sorted(dims)}")
        self.d = dims.pop()
        self.matrices = matrices
        self.max_len = max_len

    def encode(self, tokens: Sequence[str] | None = None, key: str | None = None,
               columns: slice | None = None) -> Tensor:
        if key not in self.matrices:
            raise MissingEmbedding(f"no precomputed embedding for {key!r}")
        m = self.matrices[key][:, : self.max_len]
        return Tensor(m[:, columns] if columns is not None else m)

    def parameters(self) -> dict[str, Tensor]:
        return {}

    @staticmethod
    def save(stem, matrices: dict[str, np.ndarray]) -> None:
        stem = Path(stem)
        entries, offset, chunks = {}, 0, []
        dims = {m.shape[0] for m in matrices.values()}
        if len(dims) != 1:
            raise ShapeMismatch("all matrices must share one width d")
        for key in sorted(matrices):
            m = np.ascontiguousarray(matrices[key], dtype="<f8")
            entries[key] = {"offset": offset, "cols": int(m.shape[1])}
            offset += m.size
            chunks.append(m.tobytes())
        stem.with_suffix(".bin").write_bytes(b"".join(chunks))
        stem.with_suffix(".json").write_text(json.dumps(
            {"format": "adlex-embeddings", "version": 1, "dim": dims.pop(), "entries": entries}, sort_keys=True))

    @classmethod
    def load(cls, stem, max_len: int = 256) -> "PrecomputedEncoder":
        stem = Path(stem)
        manifest = json.loads(stem.with_suffix(".json").read_text())
        raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
        d = manifest["dim"]
        mats = {}
        for key, e in manifest["entries"].items():
            n = e["cols"]
            mats[key] = raw[e["offset"]: e["offset"] + d * n].reshape(d, n).astype(np.float64)
        return cls(mats, max_len)


# --------------------------------------------------------------------------- co-attention

@dataclass
class CoAttentionParams:
    W_l: Tensor
    W_s: Tensor
    W_c: Tensor
    w_hs: Tensor
    w_hc: Tensor

    @classmethod
    def init(cls, d: int, k: int, rng: np.random.Generator) -> "CoAttentionParams":
        def p(a, name):
            return Tensor(a, requires_grad=True, name=name)
        return cls(p(glorot(rng, d, d), "coatt.W_l"), p(glorot(rng, k, d), "coatt.W_s"),
                   p(glorot(rng, k, d), "coatt.W_c"), p(glorot(rng, k, 1), "coatt.w_hs"),
                   p(glorot(rng, k, 1), "coatt.w_hc"))

    def parameters(self) -> dict[str, Tensor]:
        return {t.name: t for t in (self.W_l, self.W_s, self.W_c, self.w_hs, self.w_hc)}


def coattention(C: Tensor, S: Tensor, params: CoAttentionParams) -> tuple[Tensor, Tensor, Tensor]:
    """Co-attention over C (d x N) and S (d x T).

    Returns p = [s_hat, c_hat] (1 x 2d), the attention over S's T columns
    (1 x T) and over C's N columns (1 x N).
    """
    d = params.W_l.shape[0]
    k = params.W_s.shape[0]
    if C.data.ndim != 2 or S.data.ndim != 2 or C.shape[0] != d or S.shape[0] != d:
        raise ShapeMismatch(f"coattention: C {C.shape}, S {S.shape}, W_l {params.W_l.shape}")
    for name, t, shape in (("W_s", params.W_s, (k, d)), ("W_c", params.W_c, (k, d)),
                           ("w_hs", params.w_hs, (k, 1)), ("w_hc", params.w_hc, (k, 1))):
        if t.shape != shape:
            raise ShapeMismatch(f"coattention: {name} has shape {t.shape}, expected {shape}")

    F = tn.tanh(tn.matmul(tn.matmul(tn.transpose(C), params.W_l), S))   # N x T
    WsS = tn.matmul(params.W_s, S)                                       # k x T
    WcC = tn.matmul(params.W_c, C)                                       # k x N
    Hs = tn.tanh(tn.add(WsS, tn.matmul(WcC, F)))                         # k x T
    Hc = tn.tanh(tn.add(WcC, tn.matmul(WsS, tn.transpose(F))))           # k x N
    a_s = tn.row_softmax(tn.matmul(tn.transpose(params.w_hs), Hs))       # 1 x T
    a_c = tn.row_softmax(tn.matmul(tn.transpose(params.w_hc), Hc))       # 1 x N
    s_hat = tn.matmul(a_s, tn.transpose(S))                              # 1 x d
    c_hat = tn.matmul(a_c, tn.transpose(C))                              # 1 x d
    return tn.concat_cols(s_hat, c_hat), a_s, a_c


def split_transcript(tokens: Sequence[str]) -> tuple[list[str], list[str]]:
    """First ceil(n/2) tokens and the rest."""
    tokens = list(tokens)
    if len(tokens) < 2:
        raise TooShort(f"need at least 2 tokens to split, got {len(tokens)}")
    half = (len(tokens) + 1) // 2
    return tokens[:half], tokens[half:]


# --------------------------------------------------------------------------- losses

@dataclass
class LossConfig:
    alpha: float = 0.1
    severity_class_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if len(self.severity_class_weights) != 4 or min(self.severity_class_weights) <= 0:
            raise ValueError("severity_class_weights needs 4 positive values")


def balanced_class_weights(severities: Iterable[int | None], n_classes: int = 4) -> tuple[float, ...]:
    """n_total / (n_classes * n_c) over the labelled samples; absent classes get weight 1."""
    counts = Counter(int(s) for s in severities if s is not None)
    total = sum(counts.values())
    return tuple(total / (n_classes * counts[c]) if counts[c] else 1.0 for c in range(n_classes))


def joint_loss(dem_logits: Tensor, sev_logits: Tensor, label: int, severity: int | None,
               config: LossConfig) -> Tensor:
    """(1 - alpha) * CE(dementia) + alpha * w_sev * CE(severity); severity None drops the second term.

    Takes the logit rows of the two softmax heads; cross-entropy is evaluated
    from the logits for numerical stability.
    """
    if label not in (0, 1):
        raise InvalidSeverity(f"dementia label must be 0 or 1, got {label!r}")
    dem = tn.softmax_cross_entropy(dem_logits, int(label), 1.0 - config.alpha)
    if severity is None:
        return dem
    if severity not in (0, 1, 2, 3):
        raise InvalidSeverity(f"severity class must be 0..3 or None, got {severity!r}")
    w = config.severity_class_weights[int(severity)]
    return tn.add(dem, tn.softmax_cross_entropy(sev_logits, int(severity), config.alpha * w))


def softmax_probs(logits: Tensor) -> np.ndarray:
    return tn._softmax_rows(logits.data)[0]


# --------------------------------------------------------------------------- models

@dataclass
class Example:
    id: str
    tokens: tuple[str, ...]
    label: int
    severity: int | None = None


class BaseModel:
    kind = "base"

    def __init__(self, config: ModelConfig, encoder, rng: np.random.Generator):
        self.config = config
        self.encoder = encoder
        self.d = encoder.d

    # parameter bookkeeping ------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def encoder_parameter_names(self) -> set[str]:
        return set(self.encoder.parameters())

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state lacks parameters {sorted(missing)}")
        for n, p in params.items():
            if state[n].shape != p.shape:
                raise ShapeMismatch(f"{n}: state {state[n].shape} vs parameter {p.shape}")
            p.data[...] = state[n]

    # forward ---------------------------------------------------------------
    def _encode(self, ex: Example) -> Tensor:
        return self.encoder.encode(ex.tokens, ex.id)

    def loss(self, ex: Example, training: bool = False, rng=None, loss_config: LossConfig | None = None) -> Tensor:
        raise NotImplementedError

    def predict_proba(self, examples: Sequence[Example]) -> np.ndarray:
        """P(dementia) per example, eval mode, no tape."""
        raise NotImplementedError


class STLModel(BaseModel):
    kind = "stl"

    def __init__(self, config: ModelConfig, encoder, rng: np.random.Generator):
        super().__init__(config, encoder, rng)
        self.hidden = Dense(self.d, config.hidden, rng, "head.hidden")
        self.out = Dense(config.hidden, 1, rng, "head.out")

    def parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.parameters(), **self.hidden.parameters(), **self.out.parameters()}

    def logit(self, ex: Example, training: bool = False, rng=None) -> Tensor:
        pooled = tn.transpose(tn.mean_over_columns(self._encode(ex)))
        return self.out(tn.relu(self.hidden(pooled)))

    def forward(self, ex: Example, training: bool = False, rng=None) -> float:
        return float(tn.sigmoid(self.logit(ex, training, rng)).item())

    def loss(self, ex, training=False, rng=None, loss_config=None) -> Tensor:
        return tn.bce_with_logits(self.logit(ex, training, rng), ex.label)

    def predict_proba(self, examples):
        return np.array([self.forward(ex) for ex in examples])


class SiameseModel(STLModel):
    kind = "siamese"

    def __init__(self, config: ModelConfig, encoder, rng: np.random.Generator):
        BaseModel.__init__(self, config, encoder, rng)
        self.co = CoAttentionParams.init(self.d, config.k, rng)
        self.hidden = Dense(2 * self.d, config.hidden, rng, "head.hidden")
        self.out = Dense(config.hidden, 1, rng, "head.out")

    def parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.parameters(), **self.co.parameters(),
                **self.hidden.parameters(), **self.out.parameters()}

    def encode_pair(self, ex: Example) -> tuple[Tensor, Tensor]:
        if isinstance(self.encoder, PrecomputedEncoder):
            n = min(self.encoder.matrices[ex.id].shape[1], self.encoder.max_len) if ex.id in self.encoder.matrices else 0
            if n < 2:
                raise TooShort(f"{ex.id}: precomputed encoding too short to split")
            half = (n + 1) // 2
            return (self.encoder.encode(key=ex.id, columns=slice(0, half)),
                    self.encoder.encode(key=ex.id, columns=slice(half, n)))
        tokens = list(ex.tokens)[: self.config.max_len]
        while len(tokens) < 2:
            tokens.append(UNK)
        s1, s2 = split_transcript(tokens)
        return self.encoder.encode(s1), self.encoder.encode(s2)

    def attend(self, ex: Example) -> tuple[Tensor, Tensor, Tensor]:
        C, S = self.encode_pair(ex)
        return coattention(C, S, self.co)

    def logit(self, ex: Example, training: bool = False, rng=None) -> Tensor:
        p, _, _ = self.attend(ex)
        p = tn.dropout(p, self.config.dropout, training, rng)
        return self.out(tn.relu(self.hidden(p)))


class MTLModel(BaseModel):
    """Shared encoder with a dementia head (2-way) and a severity head (4-way)."""

    def __init__(self, config: ModelConfig, encoder, rng: np.random.Generator):
        super().__init__(config, encoder, rng)
        self.double = config.kind == "mtl-de"
        self.kind = config.kind
        if self.double:
            self.dem_mix = SelfAttnMix(self.d, rng, "task.dem")
            self.sev_mix = SelfAttnMix(self.d, rng, "task.sev")
        self.dem_head = Dense(self.d, 2, rng, "head.dem")
        self.sev_head = Dense(self.d, 4, rng, "head.sev")

    def parameters(self) -> dict[str, Tensor]:
        params = {**self.encoder.parameters()}
        if self.double:
            params.update(self.dem_mix.parameters())
            params.update(self.sev_mix.parameters())
        params.update(self.dem_head.parameters())
        params.update(self.sev_head.parameters())
        return params

    def logits(self, ex: Example) -> tuple[Tensor, Tensor]:
        C = self._encode(ex)
        if self.double:
            dem_in, sev_in = self.dem_mix(C), self.sev_mix(C)
        else:
            dem_in = sev_in = C
        dem = self.dem_head(tn.transpose(tn.mean_over_columns(dem_in)))
        sev = self.sev_head(tn.transpose(tn.mean_over_columns(sev_in)))
        return dem, sev

    def forward(self, ex: Example, training: bool = False, rng=None) -> tuple[np.ndarray, np.ndarray]:
        dem, sev = self.logits(ex)
        return softmax_probs(dem), softmax_probs(sev)

    def loss(self, ex, training=False, rng=None, loss_config=None) -> Tensor:
        dem, sev = self.logits(ex)
        return joint_loss(dem, sev, ex.label, ex.severity, loss_config or LossConfig())

    def predict_proba(self, examples):
        return np.array([self.forward(ex)[0][1] for ex in examples])


_MODEL_CLASSES = {"stl": STLModel, "siamese": SiameseModel, "mtl": MTLModel, "mtl-de": MTLModel}


def build_model(config: ModelConfig, vocab: Vocab | None = None, seed: int = 0,
                encoder: PrecomputedEncoder | None = None) -> BaseModel:
    """Fresh model with parameters drawn from a generator keyed by ``seed``."""
    rng = tn.make_rng(seed, "init", config.kind)
    if config.encoder == "precomputed":
        if encoder is None:
            raise MissingEmbedding("precomputed encoder requested but no embeddings supplied")
        enc = encoder
    else:
        if vocab is None:
            raise ValueError("toy encoder needs a vocabulary")
        enc = ToyEncoder(vocab, config.embed_dim, config.context, config.max_len, rng)
    return _MODEL_CLASSES[config.kind](config, enc, rng)


def save_model(path, model: BaseModel, extra: dict | None = None) -> None:
    vocab = model.encoder.vocab.itos if isinstance(model.encoder, ToyEncoder) else None
    meta = {"config": asdict(model.config), "vocab": vocab, **(extra or {})}
    tn.save_checkpoint(path, model.state(), meta)


def load_model(path, encoder: PrecomputedEncoder | None = None) -> BaseModel:
    arrays, meta = tn.load_checkpoint(path)
    config = ModelConfig(**meta["config"])
    vocab = Vocab(meta["vocab"][1:]) if meta.get("vocab") else None
    model = build_model(config, vocab, 0, encoder)
    model.load_state(arrays)
    return model
