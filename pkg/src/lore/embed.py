"""Desk-scale encoders: hashed n-gram features, linear projection, L2 norm.

Both the trainable query encoder and the frozen document encoder are
``normalize(W @ x)`` where ``x`` is a hashed sparse feature vector and ``W``
has shape ``(embed_dim, feature_dim)``.  Only the query projection ever
receives gradient updates.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import xxhash

from .errors import DegenerateEmbedding, DimensionMismatch, ParseError
from .tiers import Dataset

EMBED_DIM = 256
FEATURE_DIM = 2**18

# Pinned so featurization is identical on every platform.
HASH_NAME = "xxh64"
HASH_SEED = 0x1F0E_5EED

DEGENERATE_NORM = 1e-12

_WORD_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Sparse vector: strictly increasing ``indices`` with parallel ``values``."""

    indices: np.ndarray
    values: np.ndarray
    feature_dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape or idx.ndim != 1:
            raise DimensionMismatch("indices and values must be parallel 1-D arrays")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.feature_dim or np.any(np.diff(idx) <= 0)):
            raise DimensionMismatch("indices must be strictly increasing in [0, feature_dim)")
        if not np.all(np.isfinite(val)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.feature_dim)
        out[self.indices] = self.values
        return out

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            self.feature_dim == other.feature_dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


@dataclass(eq=False)
class EncoderParams:
    """Projection matrix of shape ``(embed_dim, feature_dim)``.

    Stored column-major: gradients and optimizer updates touch whole columns
    (one per active feature), which are then contiguous.
    """

    projection: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.projection, dtype=np.float64)
        if w.ndim != 2:
            raise DimensionMismatch("projection must be a 2-D matrix")
        self.projection = np.asfortranarray(w)

    @property
    def embed_dim(self) -> int:
        return self.projection.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.projection.shape[1]

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.projection.copy(order="F"))

    def __eq__(self, other):
        if not isinstance(other, EncoderParams):
            return NotImplemented
        return np.array_equal(self.projection, other.projection)


def init_params(embed_dim: int = EMBED_DIM, feature_dim: int = FEATURE_DIM, seed: int = 0) -> EncoderParams:
    """Fan-in scaled uniform init in ``[-1/sqrt(F), 1/sqrt(F)]``."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(feature_dim)
    # draw transposed so the column-major result needs no copy
    w = rng.uniform(-bound, bound, size=(feature_dim, embed_dim)).T
    return EncoderParams(w)


# -- featurization -----------------------------------------------------------


def tokens(text: str) -> list[str]:
    """Word unigrams plus boundary-padded character trigrams of each word."""
    out = []
    for word in _WORD_RE.findall(text.lower()):
        out.append("w:" + word)
        padded = f"<{word}>"
        out.extend("c:" + padded[i : i + 3] for i in range(len(padded) - 2))
    return out


def hash_token(token: str, feature_dim: int) -> int:
    return xxhash.xxh64_intdigest(token.encode("utf-8"), seed=HASH_SEED) % feature_dim


def featurize(text: str, feature_dim: int = FEATURE_DIM) -> FeatureVector:
    """Hash ``text`` into a unit-norm sparse count vector."""
    if feature_dim < 2:
        raise ValueError("feature_dim must be >= 2")
    counts = Counter(hash_token(t, feature_dim) for t in tokens(text))
    if not counts:
        return FeatureVector(np.empty(0, np.int64), np.empty(0), feature_dim)
    idx = np.fromiter(sorted(counts), dtype=np.int64, count=len(counts))
    val = np.array([counts[i] for i in idx.tolist()], dtype=np.float64)
    val /= np.linalg.norm(val)
    return FeatureVector(idx, val, feature_dim)


# -- encoder forward / backward ----------------------------------------------


def project(features: FeatureVector, params: EncoderParams) -> np.ndarray:
    """Pre-normalization output ``W @ x``."""
    if features.feature_dim != params.feature_dim:
        raise DimensionMismatch(
            f"feature_dim {features.feature_dim} != params feature_dim {params.feature_dim}"
        )
    return params.projection[:, features.indices] @ features.values


def normalize(y: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(y))
    if not norm >= DEGENERATE_NORM:
        raise DegenerateEmbedding(f"pre-normalization norm {norm:.3g} below {DEGENERATE_NORM}")
    return y / norm


def encode(features: FeatureVector, params: EncoderParams) -> np.ndarray:
    return normalize(project(features, params))


@dataclass(frozen=True)
class ColumnGradient:
    """Gradient of a ``(d, F)`` matrix that is zero outside a few columns.

    ``block[:, j]`` is the gradient of column ``columns[j]``.
    """

    columns: np.ndarray
    block: np.ndarray
    feature_dim: int

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.block.shape[0], self.feature_dim))
        np.add.at(out.T, self.columns, self.block.T)
        return out

    @staticmethod
    def combine(grads: Iterable["ColumnGradient"]) -> "ColumnGradient":
        """Sum gradients, merging repeated columns, in a fixed order."""
        grads = list(grads)
        if not grads:
            raise ValueError("nothing to combine")
        cols = np.concatenate([g.columns for g in grads])
        blocks = np.concatenate([g.block for g in grads], axis=1)
        uniq, inverse = np.unique(cols, return_inverse=True)
        summed = np.zeros((blocks.shape[0], uniq.size))
        np.add.at(summed.T, inverse, blocks.T)
        return ColumnGradient(uniq, summed, grads[0].feature_dim)


def encode_backward(
    features: FeatureVector, params: EncoderParams, grad_embedding: np.ndarray
) -> ColumnGradient:
    """Pull ``dL/du`` back through ``u = normalize(W x)`` onto ``W``.

    With ``y = W x`` and ``u = y / |y|`` the Jacobian of the normalization is
    ``(I - u u^T) / |y|``, so ``dL/dW = ((I - u u^T) g / |y|) x^T``.  Only
    the columns in the support of ``x`` are non-zero.
    """
    g = np.asarray(grad_embedding, dtype=np.float64)
    if g.shape != (params.embed_dim,):
        raise DimensionMismatch(f"grad_embedding must have length {params.embed_dim}")
    y = project(features, params)
    norm = float(np.linalg.norm(y))
    if not norm >= DEGENERATE_NORM:
        raise DegenerateEmbedding(f"pre-normalization norm {norm:.3g} below {DEGENERATE_NORM}")
    u = y / norm
    gy = (g - u * (u @ g)) / norm
    return ColumnGradient(features.indices.copy(), np.outer(gy, features.values), params.feature_dim)


class TextEncoder:
    """Featurize-then-encode helper with a feature cache.

    The params object is held by reference, so updates made by the trainer
    are seen by later calls.
    """

    def __init__(self, params: EncoderParams):
        self.params = params
        self._features: dict[str, FeatureVector] = {}

    def features(self, text: str) -> FeatureVector:
        fv = self._features.get(text)
        if fv is None:
            fv = featurize(text, self.params.feature_dim)
            self._features[text] = fv
        return fv

    def __call__(self, text: str) -> np.ndarray:
        return encode(self.features(text), self.params)


# -- frozen document embeddings ----------------------------------------------


def embed_documents(dataset: Dataset, params: EncoderParams) -> dict[str, np.ndarray]:
    """Run the frozen document encoder over every candidate chunk.

    Raises:
        DegenerateEmbedding: listing every chunk key whose embedding is degenerate.
    """
    enc = TextEncoder(params)
    out: dict[str, np.ndarray] = {}
    bad = []
    for ex in dataset:
        for cand in ex.candidates:
            key = ex.chunk_key(cand.chunk.chunk_id)
            try:
                vec = enc(cand.chunk.text)
            except DegenerateEmbedding:
                bad.append(key)
                continue
            vec.flags.writeable = False
            out[key] = vec
    if bad:
        raise DegenerateEmbedding(f"degenerate document embeddings for chunk keys: {', '.join(bad)}")
    return out


def save_document_embeddings(embeddings: Mapping[str, np.ndarray], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for key, vec in embeddings.items():
            rec = {"chunk_key": key, "vector": [float(v) for v in vec]}
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def load_document_embeddings(path: str | Path, embed_dim: int | None = None) -> dict[str, np.ndarray]:
    """Load precomputed frozen document embeddings, re-normalizing each vector.

    Raises:
        ParseError: malformed line, duplicate key or non-finite value.
        DimensionMismatch: vector length differs from ``embed_dim`` (or from
            the first vector when ``embed_dim`` is None).
        DegenerateEmbedding: a zero vector.
    """
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    dim = embed_dim
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=lineno, path=str(path)) from None
            if not isinstance(rec, dict) or set(rec) != {"chunk_key", "vector"}:
                raise ParseError("record must have exactly chunk_key and vector", lineno, str(path))
            key, raw = rec["chunk_key"], rec["vector"]
            if not isinstance(key, str) or not isinstance(raw, list):
                raise ParseError("chunk_key must be a string and vector an array", lineno, str(path))
            if key in out:
                raise ParseError(f"duplicate chunk_key {key!r}", lineno, str(path))
            try:
                vec = np.array(raw, dtype=np.float64)
            except (TypeError, ValueError):
                raise ParseError("vector entries must be numbers", lineno, str(path)) from None
            if vec.ndim != 1 or not np.all(np.isfinite(vec)):
                raise ParseError("vector must be a flat array of finite numbers", lineno, str(path))
            if dim is None:
                dim = vec.size
            if vec.size != dim:
                raise DimensionMismatch(f"{path}:{lineno}: vector length {vec.size} != {dim}")
            # already-unit vectors keep their exact bits
            if abs(float(np.linalg.norm(vec)) - 1.0) > 1e-12:
                vec = normalize(vec)
            vec.flags.writeable = False
            out[key] = vec
    return out
