"""Writer for the pipeline's file-backed provider format.

Directory layout (the disk half of the provider contract):

* ``manifest.json`` — ``{"dimension", "model_tag", "dtype": "float32",
  "key_mode"}`` where ``key_mode`` is ``"hash"`` for content-hash keys or
  ``"literal"`` for plain-string keys (word vectors).
* ``keys.json`` — mapping of key to row index.
* ``vectors.bin`` — packed float32 rows, appended in key-insertion order.

Implemented against that documented layout so this package needs no
dependency on the pipeline; its readers open these directories directly.
Writes are append-with-skip: a key already present keeps its original
row, which makes repeated exports into one directory idempotent.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_MANIFEST = "manifest.json"
_KEYS = "keys.json"
_VECTORS = "vectors.bin"


class StoreError(ValueError):
    """Raised for layout violations while writing a dump."""


class CacheStoreWriter:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        manifest = json.loads((self.directory / _MANIFEST).read_text("utf-8"))
        self.dimension: int = manifest["dimension"]
        self.model_tag: str = manifest["model_tag"]
        self.key_mode: str = manifest.get("key_mode", "hash")
        self._rows: dict[str, int] = json.loads(
            (self.directory / _KEYS).read_text("utf-8")
        )

    @classmethod
    def create(
        cls,
        directory: str | Path,
        dimension: int,
        model_tag: str,
        key_mode: str = "hash",
    ) -> "CacheStoreWriter":
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
    ) -> "CacheStoreWriter":
        directory = Path(directory)
        if (directory / _MANIFEST).exists():
            store = cls(directory)
            if store.dimension != dimension:
                raise StoreError(
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

    def put_many(self, items: list[tuple[str, np.ndarray]]) -> int:
        """Append vectors, skipping keys already stored; returns rows added."""
        new = [(k, v) for k, v in items if k not in self._rows]
        if not new:
            return 0
        with (self.directory / _VECTORS).open("ab") as fh:
            for key, vec in new:
                vec = np.asarray(vec, dtype=np.float32)
                if vec.shape != (self.dimension,):
                    raise StoreError(
                        f"vector for {key!r} has shape {vec.shape}, "
                        f"expected ({self.dimension},)"
                    )
                self._rows[key] = len(self._rows)
                fh.write(vec.tobytes())
        tmp = self.directory / (_KEYS + ".tmp")
        tmp.write_text(json.dumps(self._rows, ensure_ascii=False), "utf-8")
        tmp.replace(self.directory / _KEYS)
        return len(new)

    def get(self, key: str) -> np.ndarray:
        """Read one stored row back (diagnostics; readers live client-side)."""
        if key not in self._rows:
            raise StoreError(f"no vector for key {key!r} in {self.directory}")
        raw = (self.directory / _VECTORS).read_bytes()
        matrix = np.frombuffer(raw, dtype=np.float32).reshape(-1, self.dimension)
        return matrix[self._rows[key]]
