"""Contrast set: cosine nearest neighbours among normal training embeddings."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import SGSFError, ValidationError

log = logging.getLogger(__name__)

EPS = 1e-12
_MAGIC = b"SGCI"


@dataclass
class ContrastIndex:
    stems: list[str]
    vectors: np.ndarray  # (m, d) float32
    fingerprint: str = ""
    version: int = 0
    _pos: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if len(set(self.stems)) != len(self.stems):
            raise ValidationError("contrast index stems must be unique")
        self._pos = {s: i for i, s in enumerate(self.stems)}

    @property
    def m(self) -> int:
        return len(self.stems)

    def __contains__(self, stem: str) -> bool:
        return stem in self._pos

    def vector(self, stem: str) -> np.ndarray:
        return self.vectors[self._pos[stem]]

    def save(self, path: str | Path) -> None:
        m, d = self.vectors.shape
        with open(path, "wb") as fh:
            fh.write(_MAGIC + struct.pack("<II", d, m))
            for stem, vec in zip(self.stems, self.vectors):
                raw = stem.encode()
                fh.write(struct.pack("<H", len(raw)) + raw)
                fh.write(vec.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "ContrastIndex":
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise SGSFError(f"{path}: not a contrast index file")
        d, m = struct.unpack_from("<II", raw, 4)
        off = 12
        stems, vecs = [], []
        for _ in range(m):
            (n,) = struct.unpack_from("<H", raw, off)
            off += 2
            stems.append(raw[off:off + n].decode())
            off += n
            vecs.append(np.frombuffer(raw, dtype="<f4", count=d, offset=off))
            off += 4 * d
        return cls(stems, np.array(vecs, dtype=np.float32).reshape(m, d))


def embed(img, encoder: Callable) -> np.ndarray:
    """Spatial mean of the encoder's deepest ``h x w x d`` feature map."""
    feat = np.asarray(encoder(img), dtype=np.float64)
    return feat.reshape(-1, feat.shape[-1]).mean(axis=0)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = max(float(np.linalg.norm(u)), EPS)
    nv = max(float(np.linalg.norm(v)), EPS)
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cosine_matrix(q: np.ndarray, V: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    nq = max(float(np.linalg.norm(q)), EPS)
    nv = np.maximum(np.linalg.norm(V, axis=1), EPS)
    return np.clip(V @ q / (nv * nq), -1.0, 1.0)


def build_index(images: Sequence, stems: Sequence[str], encoder: Callable,
                fingerprint: str = "", version: int = 0) -> ContrastIndex:
    if len(images) == 0:
        raise ValidationError("cannot build a contrast index from an empty training set")
    vecs = np.stack([embed(img, encoder) for img in images])
    return ContrastIndex(list(stems), vecs.astype(np.float32), fingerprint, version)


def query(index: ContrastIndex, query_stem: str, query_emb: np.ndarray, n: int,
          mode: str = "train") -> list[tuple[str, float]]:
    """Most similar entries, excluding ``query_stem``; ties by ascending stem.

    ``mode="test"`` returns only the top-1 entry.
    """
    if index.m == 0:
        raise ValidationError("contrast index is empty")
    if mode == "train" and query_stem not in index:
        raise ValidationError(f"train-mode query stem '{query_stem}' not in index")
    sims = cosine_matrix(query_emb, index.vectors)
    ranked = sorted(
        ((s, float(t)) for s, t in zip(index.stems, sims) if s != query_stem),
        key=lambda st: (-st[1], st[0]),
    )
    if not ranked:
        raise ValidationError("no contrast candidates left after excluding the query")
    k = 1 if mode == "test" else n
    if k > len(ranked):
        log.warning("contrast set size %d clamped to %d", k, len(ranked))
        k = len(ranked)
    return ranked[:k]


def sample_guidance(cset: Sequence[tuple[str, float]], rng: np.random.Generator,
                    mode: str = "train") -> str:
    if not cset:
        raise ValidationError("empty contrast set")
    if mode == "test":
        return cset[0][0]
    return cset[int(rng.integers(len(cset)))][0]
