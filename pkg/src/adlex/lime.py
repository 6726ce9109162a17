"""Local explanations: mask token types, query the model, fit a weighted sparse linear surrogate."""

from __future__ import annotations

import html
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SingularSystem
from .model import Example
from .tensor import make_rng

DEFAULT_SAMPLES = 5000
DEFAULT_WIDTH = 25.0
DEFAULT_KEEP = 10
DEFAULT_RIDGE = 1.0
BATCH = 256


def features_of(tokens: Sequence[str]) -> list[str]:
    """Unique token types, sorted so the feature order does not depend on token order."""
    return sorted(set(tokens))


def perturb(tokens: Sequence[str], n_samples: int, seed: int) -> tuple[np.ndarray, list[list[str]]]:
    """Row 0 keeps every feature; row i masks a uniformly drawn number (1..m) of features.

    Each row draws from its own seed stream, so a longer run extends a shorter
    one without changing the shared rows.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    feats = features_of(tokens)
    m = len(feats)
    if m == 0:
        raise ValueError("cannot perturb an empty transcript")
    masks = np.ones((n_samples, m), dtype=np.int8)
    for i in range(1, n_samples):
        rng = make_rng(seed, "lime", i)
        n_off = int(rng.integers(1, m + 1))
        masks[i, rng.choice(m, size=n_off, replace=False)] = 0
    index = {f: j for j, f in enumerate(feats)}
    cols = [index[t] for t in tokens]
    texts = [[t for t, j in zip(tokens, cols) if row[j]] for row in masks]
    return masks, texts


def cosine_distance_to_ones(mask: np.ndarray) -> np.ndarray:
    """Cosine distance of each mask row to the all-ones vector; an all-zero row is at distance 1."""
    mask = np.atleast_2d(np.asarray(mask, dtype=np.float64))
    on = mask.sum(axis=1)
    norm = np.sqrt(on) * np.sqrt(mask.shape[1])
    sim = np.divide(on, norm, out=np.zeros_like(on), where=norm > 0)
    return 1.0 - sim


def kernel_weight(mask: np.ndarray, kernel_width: float = DEFAULT_WIDTH) -> np.ndarray | float:
    d = cosine_distance_to_ones(mask)
    w = np.exp(-(d ** 2) / kernel_width ** 2)
    return float(w[0]) if np.asarray(mask).ndim == 1 else w


def weighted_ridge(X: np.ndarray, y: np.ndarray, w: np.ndarray, ridge: float = DEFAULT_RIDGE) -> tuple[float, np.ndarray]:
    """Minimise sum_i w_i (y_i - b - x_i.beta)^2 + ridge*|beta|^2; the intercept b is not penalised."""
    X = np.asarray(X, dtype=np.float64)
    n, m = X.shape
    A = np.hstack([np.ones((n, 1)), X])
    Aw = A * w[:, None]
    G = A.T @ Aw
    G[np.arange(1, m + 1), np.arange(1, m + 1)] += ridge
    try:
        sol = np.linalg.solve(G, Aw.T @ y)
    except np.linalg.LinAlgError as e:
        raise SingularSystem(f"surrogate normal equations are singular: {e}") from None
    return float(sol[0]), sol[1:]


def fit_surrogate(masks: np.ndarray, model_probs: np.ndarray, sample_weights: np.ndarray,
                  n_features_keep: int = DEFAULT_KEEP, ridge: float = DEFAULT_RIDGE) -> tuple[float, np.ndarray, np.ndarray]:
    """Full ridge fit, keep the largest-|coefficient| features, refit on those.

    Returns (intercept, weights of the kept features, their column indices),
    indices ordered by decreasing |first-fit coefficient| with ties by index.
    """
    masks = np.asarray(masks, dtype=np.float64)
    y = np.asarray(model_probs, dtype=np.float64)
    w = np.asarray(sample_weights, dtype=np.float64)
    m = masks.shape[1]
    keep = min(n_features_keep, m)
    if masks.shape[0] < keep + 1:
        raise ValueError(f"need at least {keep + 1} samples to fit {keep} features")
    _, coef = weighted_ridge(masks, y, w, ridge)
    order = sorted(range(m), key=lambda j: (-abs(coef[j]), j))[:keep]
    idx = np.array(order, dtype=np.int64)
    intercept, weights = weighted_ridge(masks[:, idx], y, w, ridge)
    return intercept, weights, idx


@dataclass(frozen=True)
class Explanation:
    id: str
    tokens: tuple[str, ...]
    weights: dict[str, float]
    predicted_prob: float
    intercept: float
    n_samples: int
    seed: int
    local_gap: float  # model prob on the original minus the surrogate's reconstruction

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.weights.items(), key=lambda kv: (-abs(kv[1]), kv[0]))

    def to_json(self) -> dict:
        return {"id": self.id, "prob": self.predicted_prob,
                "tokens": [{"token": t, "weight": w} for t, w in self.ranked()],
                "intercept": self.intercept, "local_gap": self.local_gap,
                "seed": self.seed, "n_samples": self.n_samples}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def to_html(self) -> str:
        """Transcript with tokens shaded orange (toward dementia) or blue (toward control)."""
        top = max((abs(w) for w in self.weights.values()), default=0.0) or 1.0
        spans = []
        for t in self.tokens:
            w = self.weights.get(t, 0.0)
            a = abs(w) / top
            rgb = "255,140,0" if w > 0 else "30,110,255"
            spans.append(f'<span style="background:rgba({rgb},{a:.3f})" title="{w:+.4f}">{html.escape(t)}</span>')
        return ("<!doctype html>\n<meta charset=\"utf-8\">\n"
                f"<h1>{html.escape(self.id)}: P(dementia) = {self.predicted_prob:.4f}</h1>\n"
                f"<p style=\"line-height:2\">{' '.join(spans)}</p>\n")


def batched_proba(model, texts: Sequence[Sequence[str]], id_: str, batch: int = BATCH) -> np.ndarray:
    out = []
    for start in range(0, len(texts), batch):
        chunk = [Example(id_, tuple(t), 0) for t in texts[start:start + batch]]
        out.append(np.asarray(model.predict_proba(chunk), dtype=np.float64))
    return np.concatenate(out)


def explain(model, tokens: Sequence[str], seed: int, n_samples: int = DEFAULT_SAMPLES, id_: str = "",
            kernel_width: float = DEFAULT_WIDTH, n_features_keep: int = DEFAULT_KEEP,
            ridge: float = DEFAULT_RIDGE) -> Explanation:
    """Explain P(dementia) for one transcript; positive weights push toward dementia."""
    tokens = tuple(tokens)
    masks, texts = perturb(tokens, n_samples, seed)
    probs = batched_proba(model, texts, id_)
    sw = kernel_weight(masks, kernel_width)
    intercept, weights, idx = fit_surrogate(masks, probs, sw, n_features_keep, ridge)
    feats = features_of(tokens)
    gap = float(probs[0] - (intercept + weights.sum()))
    return Explanation(id_, tokens, {feats[j]: float(w) for j, w in zip(idx, weights)}, float(probs[0]),
                       intercept, n_samples, seed, gap)
