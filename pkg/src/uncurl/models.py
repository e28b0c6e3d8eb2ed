"""The four desk-scale model families the experiments train.

Linear systems and polynomials are plain numpy with closed-form gradients
(the tensor graph route exists alongside for gradient checking); the MLP
classifier and the tiny causal LM are built on the autodiff tape with
dropout sites after each hidden activation.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    RngStream,
    Tensor,
    derive_seed,
    dropout_mask,
    embedding,
    matmul,
    softmax_probs,
    take_per_row,
)

__all__ = [
    "LinearSystem",
    "PolynomialModel",
    "MlpClassifier",
    "CharVocab",
    "TinyCausalLM",
    "linear_residual",
    "linear_loss",
    "linear_loss_tensor",
    "linear_gd_step",
    "poly_eval",
    "vandermonde",
    "mlp_forward",
    "lm_token_log_probs",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT_VERSION",
]


# ---- linear systems ---------------------------------------------------------


@dataclass
class LinearSystem:
    """The (Z, d, w, lambda) bundle for data-subset gradient descent."""

    Z: np.ndarray
    d: np.ndarray
    w: np.ndarray
    lam: float

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.Z.ndim != 2 or self.Z.shape[0] < 1 or self.Z.shape[1] < 1:
            raise ValueError("Z must be [N, D] with N, D >= 1")
        if self.d.shape != (self.Z.shape[0],):
            raise ValueError("d must have one entry per row of Z")
        if self.w.shape != (self.Z.shape[1],):
            raise ValueError("w must have one entry per column of Z")
        if not self.lam > 0:
            raise ValueError("step size lambda must be positive")


def linear_residual(sys: LinearSystem) -> np.ndarray:
    """Residual Zw - d."""
    return sys.Z @ sys.w - sys.d


def linear_loss(sys: LinearSystem) -> float:
    """0.5 * ||Zw - d||^2."""
    eps = linear_residual(sys)
    return 0.5 * float(eps @ eps)


def linear_loss_tensor(Z: np.ndarray, d: np.ndarray, w: Tensor) -> Tensor:
    """The same loss built on the autodiff tape, for gradient checks."""
    resid = matmul(Tensor(Z), w) - Tensor(d)
    return (resid * resid).sum() * 0.5


def linear_gd_step(sys: LinearSystem, mask=None) -> np.ndarray:
    """One masked gradient step: w <- w - lambda * (Diag(mask) Z)^T (Zw - d).

    `mask` is an [N] 0/1 (or boolean) row indicator; absent means all ones.
    Updates sys.w in place and returns it.
    """
    eps = linear_residual(sys)
    if mask is None:
        m = np.ones(sys.Z.shape[0])
    else:
        m = np.asarray(getattr(mask, "indicator", mask), dtype=np.float64)
        if m.shape != (sys.Z.shape[0],):
            raise ValueError("mask must have one entry per data row")
    grad = sys.Z.T @ (m * eps)
    sys.w = sys.w - sys.lam * grad
    return sys.w


# ---- polynomials -------------------------------------------------------------


@dataclass
class PolynomialModel:
    """y = sum_j coefficients[j] * x^j."""

    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.ndim != 1 or self.coefficients.size < 1:
            raise ValueError("coefficients must be a non-empty vector")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("non-finite coefficients")

    @property
    def degree(self) -> int:
        return self.coefficients.size - 1


def poly_eval(model: PolynomialModel, xs) -> np.ndarray:
    """Evaluate via Horner's rule."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.zeros_like(x)
    for c in model.coefficients[::-1]:
        y = y * x + c
    return y


def vandermonde(xs, degree: int) -> np.ndarray:
    """Feature matrix [n, degree+1] with columns x^0 .. x^degree."""
    x = np.asarray(xs, dtype=np.float64)
    return np.power.outer(x, np.arange(degree + 1, dtype=np.float64))


# ---- MLP classifier -----------------------------------------------------------


class MlpClassifier:
    """ReLU MLP with dropout after each hidden activation (hidden 32/16 default)."""

    def __init__(self, input_dim: int, n_classes: int, hidden=(32, 16), seed: int = 0):
        if input_dim < 1 or n_classes < 2:
            raise ValueError("need input_dim >= 1 and n_classes >= 2")
        self.input_dim = int(input_dim)
        self.n_classes = int(n_classes)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = int(seed)
        rng = RngStream(derive_seed(seed, "mlp-init"))
        widths = [self.input_dim, *self.hidden, self.n_classes]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths, widths[1:])):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(Tensor(rng.normal((fan_in, fan_out)) * scale, requires_grad=True))
            # small positive hidden bias keeps relu units off their kink at init
            init_b = 0.01 if i < len(self.hidden) else 0.0
            self.biases.append(Tensor(np.full(fan_out, init_b), requires_grad=True))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    @property
    def n_dropout_sites(self) -> int:
        return len(self.hidden)

    def forward(self, batch, rng: RngStream | None = None, dropout_rate: float = 0.0) -> Tensor:
        """Logits [B, n_classes]; train mode draws one mask per hidden layer."""
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(f"batch width {x.shape} does not match input_dim {self.input_dim}")
        h = Tensor(x)
        train = rng is not None and dropout_rate > 0.0
        for i in range(len(self.hidden)):
            h = (h.matmul(self.weights[i]) + self.biases[i]).relu()
            if train:
                h = h * dropout_mask(h.shape, dropout_rate, rng)
        return h.matmul(self.weights[-1]) + self.biases[-1]

    def predict_probs(self, batch, rng: RngStream | None = None, dropout_rate: float = 0.0) -> np.ndarray:
        return softmax_probs(self.forward(batch, rng=rng, dropout_rate=dropout_rate).data)


def mlp_forward(model: MlpClassifier, batch, rng: RngStream | None = None, dropout_rate: float = 0.0) -> Tensor:
    return model.forward(batch, rng=rng, dropout_rate=dropout_rate)


# ---- tiny causal LM ------------------------------------------------------------


@dataclass(frozen=True)
class CharVocab:
    """Character vocabulary with reserved pad/bos/eor symbols at ids 0..2."""

    chars: str

    PAD = 0
    BOS = 1
    EOR = 2
    N_RESERVED = 3
    _RESERVED_NAMES = ("<pad>", "<bos>", "<eor>")

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("duplicate characters in vocabulary")

    @classmethod
    def from_text(cls, text: str) -> "CharVocab":
        return cls("".join(sorted(set(text))))

    @property
    def size(self) -> int:
        return self.N_RESERVED + len(self.chars)

    def encode(self, text: str) -> list[int]:
        lookup = {c: i + self.N_RESERVED for i, c in enumerate(self.chars)}
        try:
            return [lookup[c] for c in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} not in vocabulary") from None

    def token_text(self, token_id: int) -> str:
        if token_id < self.N_RESERVED:
            return self._RESERVED_NAMES[token_id]
        if token_id >= self.size:
            raise ValueError("token id out of range")
        return self.chars[token_id - self.N_RESERVED]


class TinyCausalLM:
    """Fixed-window feed-forward character LM.

    Position t is predicted from the embeddings of the last `context_window`
    tokens before t (left-padded), concatenated and pushed through two hidden
    relu layers with dropout, then projected to vocabulary logits. The window
    construction is what enforces causality.
    """

    def __init__(
        self,
        vocab: CharVocab,
        context_window: int = 8,
        embed_dim: int = 8,
        hidden=(64, 64),
        seed: int = 0,
    ):
        if context_window < 1:
            raise ValueError("context_window must be >= 1")
        self.vocab = vocab
        self.context_window = int(context_window)
        self.embed_dim = int(embed_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = int(seed)
        rng = RngStream(derive_seed(seed, "lm-init"))
        V = vocab.size
        self.emb = Tensor(rng.normal((V, self.embed_dim)) * 0.1, requires_grad=True)
        widths = [self.context_window * self.embed_dim, *self.hidden]
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(widths, widths[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(Tensor(rng.normal((fan_in, fan_out)) * scale, requires_grad=True))
            self.biases.append(Tensor(np.full(fan_out, 0.01), requires_grad=True))
        self.w_out = Tensor(rng.normal((widths[-1], V)) * np.sqrt(1.0 / widths[-1]), requires_grad=True)
        self.b_out = Tensor(np.zeros(V), requires_grad=True)

    @property
    def params(self) -> list[Tensor]:
        out = [self.emb]
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        out.extend([self.w_out, self.b_out])
        return out

    @property
    def n_dropout_sites(self) -> int:
        return len(self.hidden)

    def _context_ids(self, ids: np.ndarray) -> np.ndarray:
        """[L-1, W] window of the tokens strictly before each prediction site."""
        L = ids.size
        W = self.context_window
        padded = np.concatenate([np.full(W, CharVocab.PAD, dtype=np.int64), ids[:-1]])
        return np.stack([padded[t : t + W] for t in range(L - 1)])

    def logits(self, token_ids, rng: RngStream | None = None, dropout_rate: float = 0.0) -> Tensor:
        """Logits [L-1, V]; row t scores the token at position t+1."""
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size < 2:
            raise ValueError("need a token sequence of length >= 2")
        if ids.min() < 0 or ids.max() >= self.vocab.size:
            raise ValueError("token id out of range")
        h = embedding(self.emb, self._context_ids(ids))
        train = rng is not None and dropout_rate > 0.0
        for w, b in zip(self.weights, self.biases):
            h = (h.matmul(w) + b).relu()
            if train:
                h = h * dropout_mask(h.shape, dropout_rate, rng)
        return h.matmul(self.w_out) + self.b_out

    def log_probs(self, token_ids, rng: RngStream | None = None, dropout_rate: float = 0.0) -> Tensor:
        return self.logits(token_ids, rng=rng, dropout_rate=dropout_rate).log_softmax()

    def predict_probs(self, token_ids, rng: RngStream | None = None, dropout_rate: float = 0.0) -> np.ndarray:
        return softmax_probs(self.logits(token_ids, rng=rng, dropout_rate=dropout_rate).data)

    def realized_nll(self, log_probs: Tensor, token_ids) -> Tensor:
        """Per-site -log p of the realized next tokens, kept on the tape."""
        ids = np.asarray(token_ids, dtype=np.int64)
        return -take_per_row(log_probs, ids[1:])


def lm_token_log_probs(model: TinyCausalLM, token_ids, rng: RngStream | None = None, dropout_rate: float = 0.0):
    """Per-site log-probability rows and the realized-token NLL, as arrays."""
    lp = model.log_probs(token_ids, rng=rng, dropout_rate=dropout_rate).data
    ids = np.asarray(token_ids, dtype=np.int64)
    nll = -lp[np.arange(ids.size - 1), ids[1:]]
    return lp, nll


# ---- checkpoints ----------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


def _param_entry(name: str, t: Tensor) -> tuple[str, dict]:
    return name, {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}


def _model_payload(model) -> dict:
    if isinstance(model, MlpClassifier):
        names = []
        for i in range(len(model.weights)):
            names.extend([(f"w{i}", model.weights[i]), (f"b{i}", model.biases[i])])
        return {
            "kind": "mlp_classifier",
            "config": {
                "input_dim": model.input_dim,
                "n_classes": model.n_classes,
                "hidden": list(model.hidden),
                "seed": model.seed,
            },
            "params": dict(_param_entry(n, t) for n, t in names),
        }
    if isinstance(model, TinyCausalLM):
        names = [("emb", model.emb)]
        for i in range(len(model.weights)):
            names.extend([(f"w{i}", model.weights[i]), (f"b{i}", model.biases[i])])
        names.extend([("w_out", model.w_out), ("b_out", model.b_out)])
        return {
            "kind": "tiny_causal_lm",
            "config": {
                "chars": model.vocab.chars,
                "context_window": model.context_window,
                "embed_dim": model.embed_dim,
                "hidden": list(model.hidden),
                "seed": model.seed,
            },
            "params": dict(_param_entry(n, t) for n, t in names),
        }
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save_checkpoint(model, path) -> None:
    """Write a versioned JSON checkpoint (config header + row-major arrays)."""
    payload = {"format_version": CHECKPOINT_FORMAT_VERSION, **_model_payload(model)}
    text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _restore_params(model_params: list[tuple[str, Tensor]], stored: dict) -> None:
    for name, tensor in model_params:
        entry = stored.get(name)
        if entry is None:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != tensor.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}")
        tensor.data = arr


def load_checkpoint(path):
    """Rebuild a model from a checkpoint written by save_checkpoint."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"checkpoint format version mismatch: file has {version!r}, "
            f"this build reads {CHECKPOINT_FORMAT_VERSION}"
        )
    kind = payload.get("kind")
    cfg = payload.get("config", {})
    if kind == "mlp_classifier":
        model = MlpClassifier(cfg["input_dim"], cfg["n_classes"], hidden=tuple(cfg["hidden"]), seed=cfg["seed"])
        pairs = []
        for i in range(len(model.weights)):
            pairs.extend([(f"w{i}", model.weights[i]), (f"b{i}", model.biases[i])])
        _restore_params(pairs, payload["params"])
        return model
    if kind == "tiny_causal_lm":
        model = TinyCausalLM(
            CharVocab(cfg["chars"]),
            context_window=cfg["context_window"],
            embed_dim=cfg["embed_dim"],
            hidden=tuple(cfg["hidden"]),
            seed=cfg["seed"],
        )
        pairs = [("emb", model.emb)]
        for i in range(len(model.weights)):
            pairs.extend([(f"w{i}", model.weights[i]), (f"b{i}", model.biases[i])])
        pairs.extend([("w_out", model.w_out), ("b_out", model.b_out)])
        _restore_params(pairs, payload["params"])
        return model
    raise ValueError(f"unknown checkpoint kind: {kind!r}")
