"""Dataset ingestion and the in-repo synthetic fallbacks.

IDX is the big-endian binary container used by MNIST: a 4-byte magic
(two zero bytes, a dtype code, the dimension count), one uint32 per
dimension, then the payload. Only unsigned-byte payloads are supported.
The synthetic generators (Gaussian blobs, arithmetic/QA text pairs) let
the full acceptance suite run with no downloads.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..numerics import RngStream, derive_seed

__all__ = [
    "load_idx",
    "load_idx_images",
    "load_idx_labels",
    "write_idx",
    "gaussian_blobs",
    "bundled_corpus",
    "load_corpus_tsv",
    "write_corpus_tsv",
]

_IDX_UBYTE = 0x08


def load_idx(path) -> np.ndarray:
    """Parse one IDX file into a uint8 array of the declared shape."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset file: {path}")
    blob = path.read_bytes()
    if len(blob) < 4:
        raise ValueError(f"{path}: truncated header (file has {len(blob)} bytes)")
    if blob[0] != 0 or blob[1] != 0:
        raise ValueError(f"{path}: bad magic {blob[:4].hex()} (first two bytes must be zero)")
    dtype_code, ndim = blob[2], blob[3]
    if dtype_code != _IDX_UBYTE:
        raise ValueError(f"{path}: unsupported dtype code 0x{dtype_code:02x} (only unsigned byte 0x08)")
    header_len = 4 + 4 * ndim
    if len(blob) < header_len:
        raise ValueError(f"{path}: truncated header at offset {len(blob)} (need {header_len} bytes)")
    dims = struct.unpack(f">{ndim}I", blob[4:header_len])
    n_payload = int(np.prod(dims)) if ndim else 1
    payload = blob[header_len : header_len + n_payload]
    if len(payload) < n_payload:
        raise ValueError(
            f"{path}: truncated payload at offset {header_len + len(payload)} "
            f"(expected {n_payload} bytes after the header)"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx_images(path) -> np.ndarray:
    """IDX image tensor scaled to floats in [0, 1]."""
    raw = load_idx(path)
    if raw.ndim < 2:
        raise ValueError(f"{path}: expected an image tensor, got {raw.ndim} dimension(s)")
    return raw.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    raw = load_idx(path)
    if raw.ndim != 1:
        raise ValueError(f"{path}: expected a 1-D label vector, got shape {raw.shape}")
    return raw.astype(np.int64)


def write_idx(path, array) -> None:
    """Write a uint8 array in IDX form (inverse of load_idx)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    header = bytes([0, 0, _IDX_UBYTE, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def gaussian_blobs(n_train: int, n_test: int, dim: int, n_classes: int, spread: float, seed: int):
    """Class-blob classification data: centers ~ 3*N(0,I), points center + spread*N.

    Returns (X_train, y_train, X_test, y_test) with classes cycled evenly.
    """
    rng = RngStream(derive_seed(seed, "blobs"))
    centers = rng.normal((n_classes, dim)) * 3.0
    y_train = np.arange(n_train) % n_classes
    y_test = np.arange(n_test) % n_classes
    X_train = centers[y_train] + spread * rng.normal((n_train, dim))
    X_test = centers[y_test] + spread * rng.normal((n_test, dim))
    perm = rng.permutation(n_train)
    return X_train[perm], y_train[perm], X_test, y_test


# ---- bundled text corpus ------------------------------------------------------

_QA_FACTS = [
    ("what color is the sky?", "blue"),
    ("what color is grass?", "green"),
    ("what color is snow?", "white"),
    ("what color is coal?", "black"),
    ("what sound does a dog make?", "woof"),
    ("what sound does a cat make?", "meow"),
    ("what sound does a cow make?", "moo"),
    ("how many legs has a spider?", "8"),
    ("how many legs has an ant?", "6"),
    ("how many days in a week?", "7"),
    ("what is the opposite of hot?", "cold"),
    ("what is the opposite of up?", "down"),
]


def bundled_corpus() -> list[tuple[str, str]]:
    """The in-repo prompt/response corpus: small arithmetic plus template QA."""
    pairs: list[tuple[str, str]] = []
    for a in range(10):
        for b in range(10):
            pairs.append((f"{a}+{b}=?", str(a + b)))
    for a in range(10):
        for b in range(a + 1):
            pairs.append((f"{a}-{b}=?", str(a - b)))
    for a in range(2, 8):
        for b in range(2, 8):
            pairs.append((f"{a}*{b}=?", str(a * b)))
    pairs.extend(_QA_FACTS)
    return pairs


def load_corpus_tsv(path) -> list[tuple[str, str]]:
    """One prompt/response pair per line, tab-separated, UTF-8."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such corpus file: {path}")
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line:
            continue
        if "\t" not in line:
            raise ValueError(f"{path}:{lineno}: expected a tab between prompt and response")
        prompt, response = line.split("\t", 1)
        pairs.append((prompt, response))
    if not pairs:
        raise ValueError(f"{path}: empty corpus")
    return pairs


def write_corpus_tsv(path, pairs) -> None:
    text = "\n".join(f"{p}\t{r}" for p, r in pairs) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")
