"""Caption embeddings.

Two sources of the conditioning vector z: a seeded hashed bag-of-words
encoder (desk-scale, handles unseen captions), and a lookup table of
precomputed sentence embeddings loaded from disk.  The null embedding is
a distinguished token whose learned representation lives in the
denoiser's fusion projection; here it is the zero vector plus a flag.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedFileError, ShapeMismatchError, ValidationError

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class TextEmbedding:
    values: np.ndarray
    is_null: bool = False

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ShapeMismatchError(f"embedding must be a nonempty 1-D vector, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError("embedding contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def null_embedding(dim: int) -> TextEmbedding:
    """The 'no text' token: zeros in, so the fusion bias alone represents it."""
    if dim < 1:
        raise ValidationError("embedding dim must be >= 1")
    return TextEmbedding(np.zeros(dim), is_null=True)


def _token_hash(token: str, seed: int) -> tuple[int, int]:
    digest = hashlib.blake2b(
        token.encode("utf-8"), key=(seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little"), digest_size=9
    ).digest()
    bucket = int.from_bytes(digest[:8], "little")
    sign = 1 if digest[8] & 1 else -1
    return bucket, sign


def encode_hashed_bow(text: str, dim: int, seed: int) -> TextEmbedding:
    """Signed feature hashing of lowercased tokens, L2-normalized.

    Deterministic for fixed (text, dim, seed) and invariant to token
    order.  Raises on captions with no alphanumeric tokens.
    """
    if dim < 1:
        raise ValidationError("embedding dim must be >= 1")
    tokens = _TOKEN_RE.findall(text.lower()) if isinstance(text, str) else []
    if not tokens:
        raise ValidationError(f"caption {text!r} has no encodable tokens")
    v = np.zeros(dim)
    for tok in tokens:
        bucket, sign = _token_hash(tok, seed)
        v[bucket % dim] += sign
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        # opposite-sign collisions cancelled every bucket; nudge with a
        # deterministic tie-breaker so the result is still unit length
        bucket, sign = _token_hash("\x00".join(sorted(tokens)), seed)
        v[bucket % dim] = sign
        norm = 1.0
    return TextEmbedding(v / norm)


# ---------------------------------------------------------------------------
# Embedding table: JSON-Lines, one {"text": str, "embedding": [D floats]}.
# ---------------------------------------------------------------------------


def save_embedding_table(table: dict[str, TextEmbedding], path: str | Path) -> None:
    lines = [
        json.dumps({"text": t, "embedding": [float(x) for x in e.values]})
        for t, e in table.items()
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_embedding_table(path: str | Path) -> dict[str, TextEmbedding]:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedFileError(f"cannot read embedding table {path}: {exc}") from exc
    table: dict[str, TextEmbedding] = {}
    width = None
    for i, line in enumerate(raw.splitlines()):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedFileError(f"{path}: line {i + 1} is not valid JSON") from exc
        if not isinstance(doc, dict) or "text" not in doc or "embedding" not in doc:
            raise MalformedFileError(f"{path}: line {i + 1} is missing text/embedding keys")
        text, emb = doc["text"], doc["embedding"]
        if not isinstance(text, str) or not text:
            raise MalformedFileError(f"{path}: line {i + 1} has an invalid text key")
        if not isinstance(emb, list) or not all(isinstance(x, (int, float)) for x in emb):
            raise MalformedFileError(f"{path}: line {i + 1} embedding is not a number list")
        if text in table:
            raise ValidationError(f"{path}: duplicate caption {text!r} at line {i + 1}")
        if width is None:
            width = len(emb)
        elif len(emb) != width:
            raise ShapeMismatchError(
                f"{path}: line {i + 1} has width {len(emb)}, expected {width}"
            )
        table[text] = TextEmbedding(np.array(emb, dtype=np.float64))
    return table


class HashedBowEncoder:
    """Stateless encoder wrapper carrying (dim, seed)."""

    kind = "hashed_bow"

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValidationError("embedding dim must be >= 1")
        self.dim = int(dim)
        self.seed = int(seed)

    def encode(self, text: str) -> TextEmbedding:
        return encode_hashed_bow(text, self.dim, self.seed)

    def null(self) -> TextEmbedding:
        return null_embedding(self.dim)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "seed": self.seed}


class TableEncoder:
    """Exact-match lookup into a precomputed embedding table."""

    kind = "table"

    def __init__(self, table: dict[str, TextEmbedding], source: str | None = None):
        if not table:
            raise ValidationError("embedding table is empty")
        widths = {e.dim for e in table.values()}
        if len(widths) != 1:
            raise ShapeMismatchError(f"embedding table mixes widths {sorted(widths)}")
        self.table = dict(table)
        self.dim = widths.pop()
        self.source = source

    @staticmethod
    def from_file(path: str | Path) -> "TableEncoder":
        return TableEncoder(load_embedding_table(path), source=str(path))

    def encode(self, text: str) -> TextEmbedding:
        if text not in self.table:
            raise ValidationError(f"caption {text!r} is not in the embedding table")
        return self.table[text]

    def null(self) -> TextEmbedding:
        return null_embedding(self.dim)

    def descriptor(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "source": self.source}


def encoder_from_descriptor(doc: dict) -> HashedBowEncoder | TableEncoder:
    kind = doc.get("kind")
    if kind == "hashed_bow":
        return HashedBowEncoder(dim=int(doc["dim"]), seed=int(doc["seed"]))
    if kind == "table":
        if not doc.get("source"):
            raise ValidationError("table encoder descriptor has no source path")
        return TableEncoder.from_file(doc["source"])
    raise ValidationError(f"unknown text encoder kind {kind!r}")
