"""Embedding providers, the on-disk vector store, and cosine similarity.

Two provider families implement one contract: a file-backed store for
deterministic offline runs, and an HTTP client speaking the shared provider
wire protocol (``POST /embed`` with ``{model, texts[]}`` returning
``{vectors[][]}``). Vectors are stored unnormalized; norms are cached at
load time so dot products and cosines are both cheap.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .errors import DomainError, ProviderLookupError, TransportError

DEFAULT_DIMENSION = 384

_MANIFEST = "manifest.json"
_KEYS = "keys.json"
_VECTORS = "vectors.bin"


def text_key(text: str) -> str:
    """Content hash used to key cached embeddings."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors; raises on zero norms."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine undefined for zero-norm vector")
    return float(np.dot(a, b) / (na * nb))


class VectorStore:
    """Append-only store of keyed float32 vectors.

    Layout: ``manifest.json`` (dimension, model_tag, key_mode),
    ``keys.json`` (key -> row), ``vectors.bin`` (packed float32 rows).
    ``key_mode`` is ``"hash"`` for content-hash keys and ``"literal"`` for
    plain-string keys (word vectors).
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        manifest = json.loads((self.directory / _MANIFEST).read_text("utf-8"))
        self.dimension: int = manifest["dimension"]
        self.model_tag: str = manifest["model_tag"]
        self.key_mode: str = manifest.get("key_mode", "hash")
        self._rows: dict[str, int] = {}
        keys_path = self.directory / _KEYS
        if keys_path.exists():
            self._rows = json.loads(keys_path.read_text("utf-8"))
        self._matrix: np.ndarray | None = None

    @classmethod
    def create(
        cls,
        directory: str | Path,
        dimension: int,
        model_tag: str,
        key_mode: str = "hash",
    ) -> "VectorStore":
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {
            "dimension": dimension,
            "model_tag": model_tag,
            "dtype": "float32",
            "key_mode": key_mode,
        }
        (directory / _MANIFEST).write_text(
            json.dumps(manifest, ensure_ascii=False) + "\n", "utf-8"
        )
        (directory / _KEYS).write_text("{}", "utf-8")
        (directory / _VECTORS).write_bytes(b"")
        return cls(directory)

    @classmethod
    def open_or_create(
        cls,
        directory: str | Path,
        dimension: int,
        model_tag: str,
        key_mode: str = "hash",
    ) -> "VectorStore":
        directory = Path(directory)
        if (directory / _MANIFEST).exists():
            store = cls(directory)
            if store.dimension != dimension:
                raise DomainError(
                    f"store {directory} has dimension {store.dimension}, "
                    f"expected {dimension}"
                )
            return store
        return cls.create(directory, dimension, model_tag, key_mode)

    def __len__(self) -> int:
        return len(self._rows)

    def __contains__(self, key: str) -> bool:
        return key in self._rows

    def keys(self):
        return self._rows.keys()

    def _load_matrix(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[0] < len(self._rows):
            raw = (self.directory / _VECTORS).read_bytes()
            self._matrix = np.frombuffer(raw, dtype=np.float32).reshape(
                -1, self.dimension
            )
        return self._matrix

    def get(self, key: str) -> np.ndarray:
        if key not in self._rows:
            raise ProviderLookupError(
                f"no vector for key {key!r} in store {self.directory}"
            )
        return self._load_matrix()[self._rows[key]].astype(np.float64)

    def get_or_none(self, key: str) -> np.ndarray | None:
        if key not in self._rows:
            return None
        return self._load_matrix()[self._rows[key]].astype(np.float64)

    def put_many(self, items: list[tuple[str, np.ndarray]]) -> None:
        """Append vectors; keys already present are silently skipped."""
        new = [(k, v) for k, v in items if k not in self._rows]
        if not new:
            return
        with (self.directory / _VECTORS).open("ab") as fh:
            for key, vec in new:
                vec = np.asarray(vec, dtype=np.float32)
                if vec.shape != (self.dimension,):
                    raise DomainError(
                        f"vector for {key!r} has shape {vec.shape}, "
                        f"expected ({self.dimension},)"
                    )
                self._rows[key] = len(self._rows)
                fh.write(vec.tobytes())
        tmp = self.directory / (_KEYS + ".tmp")
        tmp.write_text(json.dumps(self._rows, ensure_ascii=False), "utf-8")
        tmp.replace(self.directory / _KEYS)
        self._matrix = None


class FileBackedEmbeddingProvider:
    """Deterministic provider that serves vectors from a :class:`VectorStore`."""

    kind = "file"

    def __init__(self, directory: str | Path):
        self.store = VectorStore(directory)
        self.dimension = self.store.dimension
        self.model_tag = self.store.model_tag

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dimension), dtype=np.float64)
        for i, text in enumerate(texts):
            out[i] = self.store.get(text_key(text))
        return out


def http_post_json(
    url: str,
    payload: dict,
    *,
    session=None,
    retries: int = 3,
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0),
    timeout: float = 60.0,
    sleep=time.sleep,
) -> dict:
    """POST JSON with exponential backoff on 429/5xx and transport faults."""
    import requests

    sess = session or requests
    last = None
    for attempt in range(retries + 1):
        try:
            resp = sess.post(url, json=payload, timeout=timeout)
            if resp.status_code == 200:
                return resp.json()
            last = f"HTTP {resp.status_code}: {resp.text[:200]}"
            if resp.status_code not in (429, 500, 502, 503, 504):
                break
        except requests.RequestException as exc:  # pragma: no cover - network
            last = repr(exc)
        if attempt < retries:
            sleep(backoff[min(attempt, len(backoff) - 1)])
    raise TransportError(f"POST {url} failed after {retries + 1} attempts: {last}")


class HttpEmbeddingProvider:
    """Client for the ``/embed`` provider endpoint."""

    kind = "http"

    def __init__(
        self,
        endpoint: str,
        model_tag: str,
        dimension: int = DEFAULT_DIMENSION,
        *,
        session=None,
        retries: int = 3,
        timeout: float = 60.0,
        sleep=time.sleep,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model_tag = model_tag
        self.dimension = dimension
        self._session = session
        self._retries = retries
        self._timeout = timeout
        self._sleep = sleep

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.empty((0, self.dimension), dtype=np.float64)
        body = http_post_json(
            self.endpoint + "/embed",
            {"model": self.model_tag, "texts": list(texts)},
            session=self._session,
            retries=self._retries,
            timeout=self._timeout,
            sleep=self._sleep,
        )
        vectors = np.asarray(body["vectors"], dtype=np.float64)
        if vectors.shape != (len(texts), self.dimension):
            raise TransportError(
                f"/embed returned shape {vectors.shape}, expected "
                f"({len(texts)}, {self.dimension})"
            )
        return vectors


def embed_batch(
    provider,
    texts: list[str],
    cache: VectorStore | None = None,
) -> np.ndarray:
    """Embed ``texts`` in order, consulting and filling ``cache`` by content hash."""
    for text in texts:
        if not isinstance(text, str) or not text:
            raise DomainError("texts must be non-empty strings")
    n = len(texts)
    out = np.empty((n, provider.dimension), dtype=np.float64)
    misses: list[int] = []
    if cache is not None:
        for i, text in enumerate(texts):
            key = text_key(text)
            if key in cache:
                out[i] = cache.get(key)
            else:
                misses.append(i)
    else:
        misses = list(range(n))
    if misses:
        # Deduplicate repeated texts so the provider sees each once.
        unique: dict[str, list[int]] = {}
        for i in misses:
            unique.setdefault(texts[i], []).append(i)
        unique_texts = list(unique)
        vectors = provider.embed_batch(unique_texts)
        for text, vec in zip(unique_texts, vectors):
            for i in unique[text]:
                out[i] = vec
        if cache is not None:
            cache.put_many(
                [(text_key(t), v) for t, v in zip(unique_texts, vectors)]
            )
    return out
