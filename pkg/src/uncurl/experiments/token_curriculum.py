"""Token-level curriculum training of the tiny causal LM.

Trains the same initialization under three objectives: vanilla MLE, masked
MLE (top-q highest-NLL response tokens only), and masked MLE + distillation
where the vanilla-MLE model, trained first and frozen, provides the
reference distribution on the unselected tokens. All objectives share the
batch order and per-step dropout streams, so the q=1 combined run retraces
the vanilla run exactly. Probe passes log per-token NLL/entropy and the
MC-dropout decomposition as TokenTraces.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..models import CharVocab, TinyCausalLM
from ..numerics import RngStream, SgdConfig, Tensor, backward, derive_seed, sgd_step, zero_grads
from ..objectives import select_mask_by_quantile
from ..uncertainty import EnsembleConfig, decompose, mc_ensemble, pearson
from .datasets import bundled_corpus, load_corpus_tsv
from .recording import RunResult, TokenTrace, config_hash

__all__ = ["TokenCurriculumConfig", "encode_pair", "run_token_curriculum", "build_token_trace"]

OBJECTIVES = ("mle", "masked_mle", "combined")

SEPARATOR = "\t"


@dataclass(frozen=True)
class TokenCurriculumConfig:
    seed: int = 0
    corpus: str = "bundled"
    context_window: int = 8
    embed_dim: int = 8
    hidden: tuple = (48, 48)
    epochs: int = 8
    batch_size: int = 16
    lr: float = 0.3
    lr_schedule: str = "cosine"
    q: float = 0.25
    objectives: tuple = OBJECTIVES
    train_dropout: float = 0.1
    holdout_fraction: float = 0.2
    probe_sequences: int = 8
    trace_epochs: tuple = ()
    mcdo_samples: int = 100
    mcdo_rate: float = 0.1
    scope: str = "per_batch"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "trace_epochs", tuple(int(e) for e in self.trace_epochs))
        unknown = set(self.objectives) - set(OBJECTIVES)
        if unknown:
            raise ValueError(f"unknown objectives: {sorted(unknown)}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must be in [0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def semantic(self) -> dict:
        return {"experiment": "token-curriculum", **asdict(self)}

    def effective_trace_epochs(self) -> tuple:
        if self.trace_epochs:
            return tuple(sorted(set(self.trace_epochs)))
        mid = max(1, self.epochs // 2)
        return tuple(sorted({1, mid, self.epochs}))


def encode_pair(vocab: CharVocab, prompt: str, response: str):
    """Token ids [BOS prompt TAB response EOR] and per-site response eligibility.

    Site s predicts ids[s+1]; a site is eligible when its target lies strictly
    after the separator, so losses cover response tokens and the final EOR but
    never prompt or separator tokens.
    """
    ids = np.array(
        [CharVocab.BOS, *vocab.encode(prompt + SEPARATOR + response), CharVocab.EOR],
        dtype=np.int64,
    )
    sep_pos = 1 + len(prompt)  # index of the separator token within ids
    targets = np.arange(1, ids.size)
    eligible = targets > sep_pos
    return ids, eligible


def _load_pairs(config: TokenCurriculumConfig):
    if config.corpus == "bundled":
        return bundled_corpus()
    return load_corpus_tsv(config.corpus)


def _prepare(config: TokenCurriculumConfig):
    pairs = _load_pairs(config)
    vocab = CharVocab.from_text("".join(p + SEPARATOR + r for p, r in pairs))
    encoded = [encode_pair(vocab, p, r) for p, r in pairs]
    total_tokens = sum(ids.size for ids, _ in encoded)
    if total_tokens < config.context_window:
        raise ValueError("corpus smaller than context window")
    perm = RngStream(derive_seed(config.seed, "split")).permutation(len(encoded))
    n_holdout = max(1, int(math.ceil(config.holdout_fraction * len(encoded))))
    if n_holdout >= len(encoded):
        raise ValueError("holdout fraction leaves no training sequences")
    holdout_idx = perm[:n_holdout]
    train_idx = perm[n_holdout:]
    train = [encoded[i] for i in train_idx]
    holdout = [encoded[i] for i in holdout_idx]
    probe = holdout[: min(config.probe_sequences, len(holdout))]
    return pairs, vocab, train, holdout, probe


def _batch_loss(objective, model, batch, q, scope, dropout_rng, rate, ref_model):
    """Pooled-per-batch objective loss over a list of (ids, eligible) sequences."""
    lps = [model.log_probs(ids, rng=dropout_rng, dropout_rate=rate) for ids, _ in batch]
    nlls = [(-lp.data[np.arange(ids.size - 1), ids[1:]]) for lp, (ids, _) in zip(lps, batch)]
    elig_flat = np.concatenate([elig for _, elig in batch])
    metric_flat = np.concatenate(nlls)
    n_eligible = int(elig_flat.sum())
    if n_eligible == 0:
        raise ValueError("batch has no eligible tokens")

    if objective == "mle":
        flags = elig_flat.copy()
        norm = n_eligible
    else:
        mask = select_mask_by_quantile(metric_flat, q, scope=scope, eligible=elig_flat)
        flags = mask.flags
        norm = int(flags.sum()) if objective == "masked_mle" else n_eligible
        if norm == 0:
            raise ValueError("empty selection")

    total = None
    offset = 0
    for lp, (ids, elig) in zip(lps, batch):
        T, V = lp.shape
        seq_flags = flags[offset : offset + T]
        w = np.zeros((T, V))
        sites = np.arange(T)
        w[sites[seq_flags], ids[1:][seq_flags]] = 1.0
        if objective == "combined":
            rest = elig & ~seq_flags
            if rest.any():
                ref_probs = np.exp(ref_model.log_probs(ids).data)
                w[rest] = ref_probs[rest]
        term = -(lp * Tensor(w)).sum()
        total = term if total is None else total + term
        offset += T
    return total / norm


def _holdout_perplexity(model, seqs) -> float:
    total_nll = 0.0
    count = 0
    for ids, elig in seqs:
        lp = model.log_probs(ids).data
        nll = -lp[np.arange(ids.size - 1), ids[1:]]
        total_nll += float(nll[elig].sum())
        count += int(elig.sum())
    return float(np.exp(total_nll / count))


def build_token_trace(
    model: TinyCausalLM,
    pairs,
    q: float,
    n_samples: int,
    dropout_rate: float,
    seed: int,
    epoch: int = 0,
    metadata: dict | None = None,
) -> TokenTrace:
    """Probe pass: per response token, NLL, entropy, MCDO decomposition, mask flag.

    The mask flags are select_mask_by_quantile over this trace's own NLL
    column (pooled across its sequences), so a reader can recompute them.
    """
    seqs = [encode_pair(model.vocab, p, r) for p, r in pairs]
    cfg = EnsembleConfig(n_samples=n_samples, dropout_rate=dropout_rate)
    rows = []
    for s_idx, (ids, elig) in enumerate(seqs):
        lp = model.log_probs(ids).data
        sites = np.arange(ids.size - 1)
        nll = -lp[sites, ids[1:]]
        probs = np.exp(lp)
        with np.errstate(divide="ignore", invalid="ignore"):
            ent = -np.where(probs > 0, probs * lp, 0.0).sum(axis=-1)
        ensemble = mc_ensemble(model, ids, cfg, RngStream(derive_seed(seed, "probe-mcdo", s_idx)))
        for t in sites[elig]:
            dec = decompose(ensemble[t])
            rows.append(
                {
                    "sequence": s_idx,
                    "position": int(t),
                    "token_id": int(ids[t + 1]),
                    "token_text": model.vocab.token_text(int(ids[t + 1])),
                    "nll": float(nll[t]),
                    "entropy": float(ent[t]),
                    "total": dec.total,
                    "aleatoric": dec.aleatoric,
                    "epistemic": dec.epistemic,
                }
            )
    mask = select_mask_by_quantile(np.array([r["nll"] for r in rows]), q)
    for r, flag in zip(rows, mask.flags):
        r["masked"] = bool(flag)
    meta = {
        "quantile": q,
        "mcdo_samples": n_samples,
        "mcdo_rate": dropout_rate,
        "n_sequences": len(seqs),
        **(metadata or {}),
    }
    return TokenTrace(epoch=epoch, records=rows, metadata=meta)


def _trace_correlations(records) -> dict:
    nll = np.array([r["nll"] for r in records])
    ent = np.array([r["entropy"] for r in records])
    epis = np.array([r["epistemic"] for r in records])
    alea = np.array([r["aleatoric"] for r in records])
    out = {}
    for name, (a, b) in {
        "epistemic_vs_nll": (epis, nll),
        "epistemic_vs_entropy": (epis, ent),
        "aleatoric_vs_nll": (alea, nll),
        "aleatoric_vs_entropy": (alea, ent),
    }.items():
        try:
            out[name] = pearson(a, b)
        except ValueError:
            out[name] = None  # degenerate sample, flagged by absence
    return out


def _train_objective(objective, config, vocab, train, holdout, probe, probe_pairs, ref_model):
    model = TinyCausalLM(
        vocab,
        context_window=config.context_window,
        embed_dim=config.embed_dim,
        hidden=config.hidden,
        seed=derive_seed(config.seed, "model"),
    )
    n = len(train)
    steps_per_epoch = math.ceil(n / config.batch_size)
    sgd = SgdConfig(config.lr, schedule=config.lr_schedule,
                    total_steps=config.epochs * steps_per_epoch if config.lr_schedule == "cosine" else None)
    trace_epochs = config.effective_trace_epochs()
    step_losses = []
    epoch_rows = []
    traces = []
    global_step = 0
    for epoch in range(1, config.epochs + 1):
        order = RngStream(derive_seed(config.seed, "order", epoch)).permutation(n)
        epoch_losses = []
        for b in range(steps_per_epoch):
            batch = [train[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
            dropout_rng = RngStream(derive_seed(config.seed, "dropout", epoch, b))
            loss = _batch_loss(objective, model, batch, config.q, config.scope,
                               dropout_rng, config.train_dropout, ref_model)
            zero_grads(model.params)
            backward(loss)
            sgd_step(model.params, [p.grad for p in model.params], sgd, global_step)
            global_step += 1
            step_losses.append(loss.item())
            epoch_losses.append(loss.item())
        ppl = _holdout_perplexity(model, holdout)
        epoch_rows.append((epoch, objective, float(np.mean(epoch_losses)), ppl))
        if epoch in trace_epochs and probe_pairs:
            traces.append(
                build_token_trace(
                    model, probe_pairs, config.q, config.mcdo_samples, config.mcdo_rate,
                    seed=derive_seed(config.seed, "probe", objective),
                    epoch=epoch,
                    metadata={"objective": objective, "scope": config.scope},
                )
            )
    return model, epoch_rows, step_losses, traces


def run_token_curriculum(config: TokenCurriculumConfig) -> RunResult:
    pairs, vocab, train, holdout, probe = _prepare(config)
    probe_pairs = []
    if probe:
        # recover the (prompt, response) text for probe traces
        probe_set = {tuple(ids.tolist()) for ids, _ in probe}
        for p, r in pairs:
            ids, _ = encode_pair(vocab, p, r)
            if tuple(ids.tolist()) in probe_set:
                probe_pairs.append((p, r))
                if len(probe_pairs) == len(probe):
                    break

    ordered = ["mle"] + [o for o in config.objectives if o != "mle"]
    rows: list[tuple] = []
    traces: list[TokenTrace] = []
    step_losses: dict[str, list] = {}
    ppl_final: dict[str, float] = {}
    correlations: dict[str, dict] = {}
    checkpoints: dict[str, TinyCausalLM] = {}

    ref_model = None
    for objective in ordered:
        model, epoch_rows, losses, obj_traces = _train_objective(
            objective, config, vocab, train, holdout, probe, probe_pairs, ref_model
        )
        if objective == "mle":
            ref_model = model
        if objective in config.objectives:
            rows.extend(epoch_rows)
            traces.extend(obj_traces)
            step_losses[objective] = losses
            ppl_final[objective] = epoch_rows[-1][3]
            if obj_traces:
                correlations[objective] = _trace_correlations(obj_traces[-1].records)
            checkpoints[objective] = model

    rows.sort(key=lambda r: (r[0], ordered.index(r[1])))
    semantic = config.semantic()
    return RunResult(
        experiment="token-curriculum",
        config=semantic,
        config_hash=config_hash(semantic),
        seed=config.seed,
        columns=("step", "objective", "train_loss", "holdout_perplexity"),
        rows=rows,
        summary={
            "vocab_size": vocab.size,
            "n_train_sequences": len(train),
            "n_holdout_sequences": len(holdout),
            "step_losses": step_losses,
            "holdout_perplexity": ppl_final,
            "correlations": correlations,
            "trace_epochs": list(config.effective_trace_epochs()),
        },
        traces=traces,
        checkpoints=checkpoints,
    )
