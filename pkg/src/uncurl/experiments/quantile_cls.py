"""Loss-quantile-band classifier training.

Trains one MLP per decile band: every step computes per-example losses over
the batch, ranks them in-batch, and backpropagates only through examples
whose loss falls inside the band. Data is either MNIST-style IDX files or
the synthetic Gaussian-blob fallback; test accuracy is recorded per epoch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..models import MlpClassifier, mlp_forward
from ..numerics import RngStream, SgdConfig, Tensor, backward, derive_seed, sgd_step, take_per_row, zero_grads
from .datasets import gaussian_blobs, load_idx_images, load_idx_labels
from .recording import RunResult, config_hash

__all__ = ["QuantileClsConfig", "run_quantile_classification"]

N_BANDS = 10


@dataclass(frozen=True)
class QuantileClsConfig:
    seed: int = 0
    epochs: int = 20
    lr: float = 0.01
    batch_size: int = 256
    hidden: tuple = (32, 16)
    bands: tuple = tuple(range(N_BANDS))
    dataset: str = "synthetic"
    idx_train_images: str | None = None
    idx_train_labels: str | None = None
    idx_test_images: str | None = None
    idx_test_labels: str | None = None
    synth_train: int = 5120
    synth_test: int = 1024
    synth_dim: int = 16
    synth_classes: int = 10
    synth_spread: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "bands", tuple(int(b) for b in self.bands))
        if self.dataset not in ("synthetic", "idx"):
            raise ValueError("dataset must be 'synthetic' or 'idx'")
        if any(not 0 <= b < N_BANDS for b in self.bands):
            raise ValueError(f"bands must be decile indices 0..{N_BANDS - 1}")
        if self.dataset == "idx" and not all(
            (self.idx_train_images, self.idx_train_labels, self.idx_test_images, self.idx_test_labels)
        ):
            raise ValueError("idx dataset needs all four idx_* paths")

    def semantic(self) -> dict:
        return {"experiment": "quantile-cls", **asdict(self)}


def _load_data(config: QuantileClsConfig):
    if config.dataset == "idx":
        X = load_idx_images(config.idx_train_images)
        X = X.reshape(X.shape[0], -1)
        y = load_idx_labels(config.idx_train_labels)
        Xt = load_idx_images(config.idx_test_images)
        Xt = Xt.reshape(Xt.shape[0], -1)
        yt = load_idx_labels(config.idx_test_labels)
        if X.shape[0] != y.shape[0] or Xt.shape[0] != yt.shape[0]:
            raise ValueError("image/label counts disagree")
        return X, y, Xt, yt, int(y.max()) + 1
    X, y, Xt, yt = gaussian_blobs(
        config.synth_train, config.synth_test, config.synth_dim,
        config.synth_classes, config.synth_spread, config.seed,
    )
    return X, y, Xt, yt, config.synth_classes


def _band_slice(losses: np.ndarray, band: int) -> np.ndarray:
    """Indices of the batch rows whose loss ranks inside decile `band`."""
    B = losses.size
    order = np.argsort(losses, kind="stable")
    lo = (band * B) // N_BANDS
    hi = ((band + 1) * B) // N_BANDS
    return order[lo:hi]


def _selected_mean(nll: Tensor, indices) -> Tensor:
    """Mean of the chosen entries of a 1-D NLL tensor, kept on the tape."""
    sel = np.zeros(nll.shape[0])
    sel[indices] = 1.0 / max(1, len(indices))
    return (nll * Tensor(sel)).sum()


def _test_accuracy(model: MlpClassifier, Xt, yt, chunk=2048) -> float:
    hits = 0
    for start in range(0, Xt.shape[0], chunk):
        logits = mlp_forward(model, Xt[start : start + chunk]).data
        hits += int((np.argmax(logits, axis=1) == yt[start : start + chunk]).sum())
    return hits / Xt.shape[0]


def run_quantile_classification(config: QuantileClsConfig) -> RunResult:
    X, y, Xt, yt, n_classes = _load_data(config)
    n_batches = X.shape[0] // config.batch_size
    if n_batches < 1:
        raise ValueError("training set smaller than one batch")

    columns = ("step", "band", "test_accuracy", "mean_selected_loss")
    rows: list[tuple] = []
    sgd = SgdConfig(config.lr)

    for band in config.bands:
        model = MlpClassifier(X.shape[1], n_classes, hidden=config.hidden,
                              seed=derive_seed(config.seed, "quantile-model"))
        step = 0
        for epoch in range(1, config.epochs + 1):
            order = RngStream(derive_seed(config.seed, "order", epoch)).permutation(X.shape[0])
            epoch_losses = []
            for b in range(n_batches):
                idx = order[b * config.batch_size : (b + 1) * config.batch_size]
                lp = mlp_forward(model, X[idx]).log_softmax()
                per_example = -lp.data[np.arange(idx.size), y[idx]]
                chosen = _band_slice(per_example, band)
                nll = -take_per_row(lp, y[idx])
                selected = _selected_mean(nll, chosen)
                zero_grads(model.params)
                backward(selected)
                sgd_step(model.params, [p.grad for p in model.params], sgd, step)
                step += 1
                epoch_losses.append(selected.item())
            rows.append((epoch, f"decile_{band}", _test_accuracy(model, Xt, yt), float(np.mean(epoch_losses))))

    rows.sort(key=lambda r: (r[0], r[1]))
    semantic = config.semantic()
    return RunResult(
        experiment="quantile-cls",
        config=semantic,
        config_hash=config_hash(semantic),
        seed=config.seed,
        columns=columns,
        rows=rows,
        summary={"n_classes": n_classes, "n_train": int(X.shape[0]), "n_test": int(Xt.shape[0])},
    )
