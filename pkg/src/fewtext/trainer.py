"""Episodic training loop: adapter -> query augmentation -> prototype head.

One optimizer step per episode (AdamW with decoupled weight decay and
linear warmup), validation-based early stopping, and evaluation with a
normal-approximation 95% confidence interval over test episodes.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adapter as la
from . import protonet, transport
from .episodes import LabeledCorpus, sample_episode

log = logging.getLogger(__name__)

_TRAIN_STREAM, _VAL_STREAM, _TEST_STREAM, _INIT_STREAM = 0, 1, 2, 3


@dataclass
class TrainConfig:
    n_way: int = 5
    k_shot: int = 1
    m_query: int = 25
    r: int = 10
    epochs: int = 100
    episodes_train: int = 100
    episodes_val: int = 100
    episodes_test: int = 1000
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    weight_decay: float = 0.1
    dropout: float = 0.1
    patience: int = 20
    seed: int = 0
    ot_epsilon: float = 0.05  # relative to mean cost; see transport module
    ot_tol: float = 1e-6
    ot_max_iter: int = 1000
    dim: int = 0  # 0: infer from the corpus
    heads: int = 4
    use_scaling: bool = True
    bypass_adapter: bool = False
    bypass_qda: bool = False

    def __post_init__(self):
        counts = (self.n_way, self.k_shot, self.m_query, self.epochs,
                  self.episodes_train, self.episodes_val, self.episodes_test)
        if min(counts) < 1:
            raise ValueError("all episode/epoch counts must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")

    def variant(self) -> str:
        qda_off = self.bypass_qda or self.r == 0
        if self.bypass_adapter and qda_off:
            return "pn"
        if self.bypass_adapter:
            return "qda-only"
        if qda_off:
            return "qda-off"
        return "full"

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, param_arrays: dict) -> "OptimizerState":
        return cls(m={k: np.zeros_like(a) for k, a in param_arrays.items()},
                   v={k: np.zeros_like(a) for k, a in param_arrays.items()})


@dataclass
class RunReport:
    per_epoch: list = field(default_factory=list)  # {train_loss, val_acc}
    test_acc_mean: float = None
    test_acc_ci95: float = None
    best_epoch: int = None
    wall_clock: float = 0.0
    variant: str = "full"
    episodes_failed: int = 0
    per_episode_acc: list = None

    def to_dict(self) -> dict:
        # wall_clock is deliberately left out: serialized reports must be
        # byte-identical across reruns of the same config and seed
        out = {
            "test_acc_mean": self.test_acc_mean,
            "test_acc_ci95": self.test_acc_ci95,
            "per_epoch": self.per_epoch,
            "best_epoch": self.best_epoch,
            "variant": self.variant,
            "episodes_failed": self.episodes_failed,
        }
        if self.per_episode_acc is not None:
            out["per_episode_acc"] = self.per_episode_acc
        return out


@dataclass
class Checkpoint:
    params: la.AdapterParams
    config: TrainConfig
    best_val_accuracy: float = None
    fingerprints: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_checkpoint(),
            "config": asdict(self.config),
            "best_val_accuracy": self.best_val_accuracy,
            "fingerprints": self.fingerprints,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        config = TrainConfig.from_dict(obj["config"])
        params = la.AdapterParams.from_checkpoint(
            obj["params"], dropout_rate=config.dropout)
        return cls(params=params, config=config,
                   best_val_accuracy=obj.get("best_val_accuracy"),
                   fingerprints=obj.get("fingerprints", {}))


def _episode_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


@dataclass
class EpisodeState:
    """Intermediates of one episode forward pass, kept for the backward."""
    support_reps: np.ndarray  # (N, K, d)
    query_reps: np.ndarray  # (N*M, d)
    support_caches: list
    query_caches: list
    prototypes: protonet.PrototypeSet
    augmented: list  # AugmentedClass per class (empty when QDA is off)
    weights: list  # frozen convex weights per class
    targets: np.ndarray


def episode_forward(params, episode, config: TrainConfig, train_mode=False,
                    rng=None, frozen_aug=None):
    """Forward pass through the full pipeline for one episode.

    ``frozen_aug`` replays previously computed (retrieved, weights) pairs
    instead of re-solving the transport problem; used by finite-difference
    oracles, which must hold the transport weights constant.
    """
    sup_reps, qry_reps, sup_caches, qry_caches = la.represent_episode(
        params, episode, train_mode=train_mode, rng=rng,
        bypass=config.bypass_adapter)
    n, k, d = sup_reps.shape
    qda_off = config.bypass_qda or config.r == 0

    if frozen_aug is not None:
        protos = []
        for c, (retrieved, w) in enumerate(frozen_aug):
            sup = sup_reps[c]
            if len(retrieved) == 0:
                protos.append(sup.mean(axis=0))
            else:
                mapped = w.T @ qry_reps[retrieved]
                protos.append(np.vstack([sup, mapped]).mean(axis=0))
        protos = np.array(protos)
        aug_pairs = frozen_aug
        weights = [w for _, w in aug_pairs]
    elif qda_off:
        protos = sup_reps.mean(axis=1)
        aug_pairs = [([], np.empty((0, k))) for _ in range(n)]
        weights = [w for _, w in aug_pairs]
    else:
        protos, augmented, weights = transport.estimate_prototype_weights(
            [sup_reps[c] for c in range(n)], qry_reps, config.r,
            epsilon_scale=config.ot_epsilon, tol=config.ot_tol,
            max_iter=config.ot_max_iter)
        aug_pairs = [(aug.retrieved_query_indices, w)
                     for aug, w in zip(augmented, weights)]

    proto_set = protonet.PrototypeSet(
        class_ids=episode.label_names.names, vectors=protos)
    targets = episode.query_targets()
    posterior = protonet.class_posteriors(qry_reps, proto_set)
    loss = protonet.cross_entropy(posterior, targets)
    acc = protonet.accuracy(qry_reps, proto_set, targets)
    state = EpisodeState(
        support_reps=sup_reps, query_reps=qry_reps,
        support_caches=sup_caches, query_caches=qry_caches,
        prototypes=proto_set, augmented=aug_pairs, weights=weights,
        targets=targets)
    return loss, acc, state


def episode_backward(params, config: TrainConfig, state: EpisodeState) -> dict:
    """Parameter gradients of the episode loss, transport weights frozen."""
    d_query, d_protos = protonet.classifier_backward(
        state.query_reps, state.prototypes, state.targets)
    n, k, d = state.support_reps.shape

    d_sup = np.zeros_like(state.support_reps)
    d_qry = d_query.copy()
    for c in range(n):
        retrieved, w = state.augmented[c]
        if len(retrieved) == 0:
            d_sup[c] += d_protos[c][None, :] / k
        else:
            # P_c = (sum_j s_j + sum_j sum_i w_ij q_i) / (2k)
            d_sup[c] += d_protos[c][None, :] / (2 * k)
            share = w.sum(axis=1) / (2 * k)  # (R,)
            for pos, qi in enumerate(retrieved):
                d_qry[qi] += share[pos] * d_protos[c]

    grads = {name: np.zeros_like(arr) for name, arr in params.as_dict().items()}
    if config.bypass_adapter:
        return grads

    def accumulate(cache, upstream):
        g = la.adapter_backward(params, cache, upstream)
        for name, val in g.param_dict().items():
            grads[name] += val

    for c in range(n):
        for j in range(k):
            accumulate(state.support_caches[c][j], d_sup[c, j])
    for i, cache in enumerate(state.query_caches):
        accumulate(cache, d_qry[i])
    return grads


def episode_step(params, episode, config: TrainConfig, rng=None,
                 train_mode=False):
    """One episode: forward; gradients are returned only in train mode."""
    loss, acc, state = episode_forward(params, episode, config,
                                       train_mode=train_mode, rng=rng)
    grads = episode_backward(params, config, state) if train_mode else None
    return loss, acc, grads


def lr_schedule(step: int, warmup_steps: int, base_lr: float) -> float:
    """Linear ramp from 0 to base_lr over warmup_steps, then constant."""
    if step < 1:
        raise ValueError("step counts from 1")
    if warmup_steps <= 0 or step >= warmup_steps:
        return base_lr
    return base_lr * step / warmup_steps


def adamw_step(param_arrays: dict, grads: dict, state: OptimizerState,
               lr_effective: float, weight_decay: float,
               beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> None:
    """In-place AdamW update with decoupled weight decay.

    Parameters are first shrunk by (1 - lr * weight_decay), then moved by
    the bias-corrected moment estimate.
    """
    if lr_effective < 0:
        raise ValueError("lr_effective must be >= 0")
    state.step += 1
    t = state.step
    for name, p in param_arrays.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise ArithmeticError(f"non-finite gradient for parameter {name!r}")
        p *= 1.0 - lr_effective * weight_decay
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** t)
        v_hat = state.v[name] / (1 - beta2 ** t)
        p -= lr_effective * m_hat / (np.sqrt(v_hat) + eps)


def init_params(config: TrainConfig, dim: int) -> la.AdapterParams:
    rng = _episode_rng(config.seed, _INIT_STREAM, 0)
    return la.AdapterParams.near_identity(
        dim, config.heads, rng, dropout_rate=config.dropout,
        use_scaling=config.use_scaling)


def train(config: TrainConfig, train_corpus: LabeledCorpus,
          valid_corpus: LabeledCorpus, label_embedder=None):
    """Episodic training with per-episode AdamW steps and early stopping.

    Validation episodes are resampled each epoch with epoch-derived seeds.
    Returns (Checkpoint of the best-validation parameters, RunReport).
    """
    start = time.time()
    dim = config.dim or train_corpus.dim
    params = init_params(config, dim)
    param_arrays = params.as_dict()
    opt = OptimizerState.zeros_like(param_arrays)

    best_val = -np.inf
    best_epoch = 0
    best_snapshot = params.to_checkpoint()
    report = RunReport(variant=config.variant())

    global_step = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for t in range(config.episodes_train):
            idx = (epoch - 1) * config.episodes_train + t
            rng = _episode_rng(config.seed, _TRAIN_STREAM, idx)
            episode = sample_episode(train_corpus, config.n_way, config.k_shot,
                                     config.m_query, rng,
                                     label_embedder=label_embedder,
                                     episode_seed=idx)
            loss, _, grads = episode_step(params, episode, config, rng=rng,
                                          train_mode=True)
            global_step += 1
            lr = lr_schedule(global_step, config.warmup_steps,
                             config.learning_rate)
            adamw_step(param_arrays, grads, opt, lr, config.weight_decay)
            losses.append(loss)

        val_accs = []
        for t in range(config.episodes_val):
            idx = (epoch - 1) * config.episodes_val + t
            rng = _episode_rng(config.seed, _VAL_STREAM, idx)
            episode = sample_episode(valid_corpus, config.n_way, config.k_shot,
                                     config.m_query, rng,
                                     label_embedder=label_embedder,
                                     episode_seed=idx)
            _, acc, _ = episode_step(params, episode, config, train_mode=False)
            val_accs.append(acc)
        val_acc = float(np.mean(val_accs))
        report.per_epoch.append(
            {"train_loss": float(np.mean(losses)), "val_acc": val_acc})
        log.info("epoch %d: train_loss=%.4f val_acc=%.4f", epoch,
                 np.mean(losses), val_acc)

        if val_acc > best_val:
            best_val = val_acc
            best_epoch = epoch
            best_snapshot = params.to_checkpoint()
        if epoch - best_epoch >= config.patience:
            break

    report.best_epoch = best_epoch
    report.wall_clock = time.time() - start
    best_params = la.AdapterParams.from_checkpoint(
        best_snapshot, dropout_rate=config.dropout)
    checkpoint = Checkpoint(
        params=best_params, config=config, best_val_accuracy=float(best_val),
        fingerprints={"train_corpus": train_corpus.fingerprint(),
                      "valid_corpus": valid_corpus.fingerprint()})
    return checkpoint, report


def evaluate(checkpoint: Checkpoint, corpus: LabeledCorpus,
             config: TrainConfig = None, label_embedder=None,
             keep_per_episode: bool = False) -> RunReport:
    """Accuracy over ``episodes_test`` tasks with a 95% confidence interval.

    A failed episode is recorded and skipped. Episodes are seeded
    independently, so results do not depend on evaluation order.
    """
    config = config or checkpoint.config
    dim = config.dim or corpus.dim
    if checkpoint.params.dim != dim:
        raise ValueError(
            f"checkpoint dim {checkpoint.params.dim} != corpus dim {dim}")
    small = [lab for lab, idxs in corpus.classes.items()
             if len(idxs) < config.k_shot + config.m_query]
    if corpus.n_classes() - len(small) < config.n_way:
        raise ValueError(
            f"test corpus cannot supply {config.n_way}-way episodes; "
            f"deficient classes: {sorted(small)}")

    start = time.time()
    accs = []
    failed = 0
    for t in range(config.episodes_test):
        rng = _episode_rng(config.seed, _TEST_STREAM, t)
        try:
            episode = sample_episode(corpus, config.n_way, config.k_shot,
                                     config.m_query, rng,
                                     label_embedder=label_embedder,
                                     episode_seed=t)
            _, acc, _ = episode_step(checkpoint.params, episode, config,
                                     train_mode=False)
            accs.append(acc)
        except (ValueError, ArithmeticError) as exc:
            failed += 1
            log.warning("evaluation episode %d failed: %s", t, exc)
    accs = np.array(accs)
    mean = float(accs.mean()) if accs.size else float("nan")
    if accs.size > 1:
        half = float(1.96 * accs.std(ddof=1) / np.sqrt(accs.size))
    else:
        half = 0.0
    return RunReport(
        test_acc_mean=mean, test_acc_ci95=half,
        wall_clock=time.time() - start, variant=config.variant(),
        episodes_failed=failed,
        per_episode_acc=[float(a) for a in accs] if keep_per_episode else None)


def save_report(report: RunReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
