"""Label-conditioned attention block producing task-adapted sample vectors.

Each sample's token vectors are prefixed with their mean and suffixed with
the episode's label-name vectors; a multi-head attention read-out at the
prefix position yields the adapted representation. Forward and backward
are implemented analytically in numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .episodes import Episode
from .wordrep import TokenSequence


class NumericError(ArithmeticError):
    """Raised when a non-finite value appears during the forward pass."""


class CacheMismatchError(ValueError):
    """Raised when a backward cache does not match the given parameters."""


@dataclass
class AdapterParams:
    """Trainable attention parameters.

    wq/wk/wv have shape (heads, dim, dim/heads); wo has shape (dim, dim).
    """

    dim: int
    heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    dropout_rate: float = 0.0
    use_scaling: bool = True

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        dh = self.dim // self.heads
        for name, mat, shape in (
            ("wq", self.wq, (self.heads, self.dim, dh)),
            ("wk", self.wk, (self.heads, self.dim, dh)),
            ("wv", self.wv, (self.heads, self.dim, dh)),
            ("wo", self.wo, (self.dim, self.dim)),
        ):
            if mat.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {mat.shape}")
            if not np.all(np.isfinite(mat)):
                raise ValueError(f"{name} contains non-finite values")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @classmethod
    def identity(cls, dim: int, heads: int = 1, dropout_rate: float = 0.0,
                 use_scaling: bool = True) -> "AdapterParams":
        """Identity-partitioned projections; the block then averages inputs
        with softmax weights and projects through an identity output map."""
        dh = dim // heads
        eye = np.eye(dim)
        slices = np.stack([eye[:, h * dh:(h + 1) * dh] for h in range(heads)])
        return cls(dim=dim, heads=heads, wq=slices.copy(), wk=slices.copy(),
                   wv=slices.copy(), wo=np.eye(dim), dropout_rate=dropout_rate,
                   use_scaling=use_scaling)

    @classmethod
    def near_identity(cls, dim: int, heads: int, rng: np.random.Generator,
                      noise: float = 0.02, dropout_rate: float = 0.0,
                      use_scaling: bool = True) -> "AdapterParams":
        """Identity projections perturbed by small Gaussian noise.

        Starting close to the identity keeps early-training representations
        near the raw prefix/token geometry, so optimization refines a
        sensible classifier instead of recovering from a random rotation.
        """
        base = cls.identity(dim, heads, dropout_rate=dropout_rate,
                            use_scaling=use_scaling)
        dh = dim // heads
        return cls(
            dim=dim, heads=heads,
            wq=base.wq + rng.normal(0.0, noise, (heads, dim, dh)),
            wk=base.wk + rng.normal(0.0, noise, (heads, dim, dh)),
            wv=base.wv + rng.normal(0.0, noise, (heads, dim, dh)),
            wo=base.wo + rng.normal(0.0, noise, (dim, dim)),
            dropout_rate=dropout_rate, use_scaling=use_scaling,
        )

    @classmethod
    def random(cls, dim: int, heads: int, rng: np.random.Generator,
               scale: float = None, dropout_rate: float = 0.0,
               use_scaling: bool = True) -> "AdapterParams":
        dh = dim // heads
        if scale is None:
            scale = 1.0 / np.sqrt(dim)
        return cls(
            dim=dim, heads=heads,
            wq=rng.normal(0.0, scale, (heads, dim, dh)),
            wk=rng.normal(0.0, scale, (heads, dim, dh)),
            wv=rng.normal(0.0, scale, (heads, dim, dh)),
            wo=rng.normal(0.0, scale, (dim, dim)),
            dropout_rate=dropout_rate, use_scaling=use_scaling,
        )

    def as_dict(self) -> dict:
        out = {}
        for h in range(self.heads):
            out[f"wq{h}"] = self.wq[h]
            out[f"wk{h}"] = self.wk[h]
            out[f"wv{h}"] = self.wv[h]
        out["wo"] = self.wo
        return out

    def to_checkpoint(self) -> dict:
        return {
            "dim": self.dim,
            "heads": self.heads,
            "use_scaling": self.use_scaling,
            "matrices": {name: mat.tolist() for name, mat in self.as_dict().items()},
        }

    @classmethod
    def from_checkpoint(cls, obj: dict, dropout_rate: float = 0.0) -> "AdapterParams":
        dim, heads = obj["dim"], obj["heads"]
        mats = {name: np.array(vals, dtype=float)
                for name, vals in obj["matrices"].items()}
        return cls(
            dim=dim, heads=heads,
            wq=np.stack([mats[f"wq{h}"] for h in range(heads)]),
            wk=np.stack([mats[f"wk{h}"] for h in range(heads)]),
            wv=np.stack([mats[f"wv{h}"] for h in range(heads)]),
            wo=mats["wo"],
            dropout_rate=dropout_rate,
            use_scaling=bool(obj["use_scaling"]),
        )


@dataclass(frozen=True)
class AdapterInput:
    prefix: np.ndarray  # (d,)
    sentence: np.ndarray  # (n, d)
    labels: np.ndarray  # (N, d)

    def __post_init__(self):
        d = self.prefix.shape[0]
        if self.sentence.ndim != 2 or self.sentence.shape[1] != d:
            raise ValueError("sentence vectors must be (n, d)")
        if self.labels.ndim != 2 or self.labels.shape[1] != d:
            raise ValueError("label vectors must be (N, d)")
        if self.sentence.shape[0] < 1 or self.labels.shape[0] < 1:
            raise ValueError("need n >= 1 sentence and N >= 1 label vectors")

    def stacked(self) -> np.ndarray:
        return np.vstack([self.prefix[None, :], self.sentence, self.labels])


@dataclass
class AdapterGradients:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    prefix: np.ndarray
    sentence: np.ndarray
    labels: np.ndarray

    def param_dict(self) -> dict:
        out = {}
        for h in range(self.wq.shape[0]):
            out[f"wq{h}"] = self.wq[h]
            out[f"wk{h}"] = self.wk[h]
            out[f"wv{h}"] = self.wv[h]
        out["wo"] = self.wo
        return out


@dataclass
class ForwardCache:
    dim: int
    heads: int
    z: np.ndarray  # (L, d) stacked input
    n_sentence: int
    q0: np.ndarray  # (H, dh) prefix queries
    keys: np.ndarray  # (H, L, dh)
    values: np.ndarray  # (H, L, dh)
    weights: np.ndarray  # (H, L) softmax rows (pre-dropout)
    drop_mask: np.ndarray  # (H, L) scaled dropout mask, ones in eval mode
    head_out: np.ndarray  # (H, dh)


def init_prefix(sequence: TokenSequence) -> np.ndarray:
    """Prefix vector: the mean of the sentence's token vectors."""
    return sequence.vectors.mean(axis=0)


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def adapter_forward(params: AdapterParams, inp: AdapterInput,
                    train_mode: bool = False, rng: np.random.Generator = None):
    """Attention read-out at the prefix position.

    Returns (v, cache): the adapted d-vector and the intermediates needed
    by :func:`adapter_backward`. Only the prefix row attends, so keys and
    values span the whole sequence while queries are the prefix alone.
    """
    d, H, dh = params.dim, params.heads, params.head_dim
    if inp.prefix.shape[0] != d:
        raise ValueError(f"input dim {inp.prefix.shape[0]} != params dim {d}")
    z = inp.stacked()  # (L, d)
    L = z.shape[0]
    scale = 1.0 / np.sqrt(dh) if params.use_scaling else 1.0

    use_dropout = train_mode and params.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("rng required in train mode with dropout")

    q0 = np.empty((H, dh))
    keys = np.empty((H, L, dh))
    values = np.empty((H, L, dh))
    weights = np.empty((H, L))
    drop_mask = np.ones((H, L))
    head_out = np.empty((H, dh))
    for h in range(H):
        q0[h] = z[0] @ params.wq[h]
        keys[h] = z @ params.wk[h]
        values[h] = z @ params.wv[h]
        scores = (keys[h] @ q0[h]) * scale
        if not np.all(np.isfinite(scores)):
            raise NumericError(f"non-finite attention scores in head {h}")
        weights[h] = _softmax(scores)
        if use_dropout:
            keep = (rng.random(L) >= params.dropout_rate).astype(float)
            drop_mask[h] = keep / (1.0 - params.dropout_rate)
        head_out[h] = (weights[h] * drop_mask[h]) @ values[h]
    v = np.concatenate(head_out) @ params.wo
    if not np.all(np.isfinite(v)):
        raise NumericError("non-finite adapter output")
    cache = ForwardCache(dim=d, heads=H, z=z, n_sentence=inp.sentence.shape[0],
                         q0=q0, keys=keys, values=values, weights=weights,
                         drop_mask=drop_mask, head_out=head_out)
    return v, cache


def adapter_backward(params: AdapterParams, cache: ForwardCache,
                     upstream: np.ndarray) -> AdapterGradients:
    """Exact gradients of ``upstream . v`` w.r.t. parameters and inputs."""
    d, H, dh = params.dim, params.heads, params.head_dim
    if cache.dim != d or cache.heads != H:
        raise CacheMismatchError(
            f"cache built for dim={cache.dim}, heads={cache.heads}; "
            f"params have dim={d}, heads={H}"
        )
    z = cache.z
    L = z.shape[0]
    scale = 1.0 / np.sqrt(dh) if params.use_scaling else 1.0

    # v = concat(head_out) @ wo
    concat = np.concatenate(cache.head_out)
    d_wo = np.outer(concat, upstream)
    d_concat = params.wo @ upstream

    d_wq = np.zeros_like(params.wq)
    d_wk = np.zeros_like(params.wk)
    d_wv = np.zeros_like(params.wv)
    d_z = np.zeros_like(z)
    for h in range(H):
        d_out = d_concat[h * dh:(h + 1) * dh]
        a = cache.weights[h] * cache.drop_mask[h]  # effective weights
        # head_out = a @ values
        d_values = np.outer(a, d_out)
        d_a = cache.values[h] @ d_out
        # dropout is elementwise multiplication by a constant mask
        d_w = d_a * cache.drop_mask[h]
        # softmax backward
        w = cache.weights[h]
        d_scores = w * (d_w - np.dot(w, d_w))
        # scores = scale * keys @ q0
        d_q0 = scale * (cache.keys[h].T @ d_scores)
        d_keys = scale * np.outer(d_scores, cache.q0[h])
        # projections
        d_wq[h] = np.outer(z[0], d_q0)
        d_z[0] += params.wq[h] @ d_q0
        d_wk[h] = z.T @ d_keys
        d_z += d_keys @ params.wk[h].T
        d_wv[h] = z.T @ d_values
        d_z += d_values @ params.wv[h].T

    n = cache.n_sentence
    return AdapterGradients(
        wq=d_wq, wk=d_wk, wv=d_wv, wo=d_wo,
        prefix=d_z[0].copy(),
        sentence=d_z[1:1 + n].copy(),
        labels=d_z[1 + n:].copy(),
    )


def represent_sample(params: AdapterParams, sequence: TokenSequence,
                     label_vectors: np.ndarray, train_mode: bool = False,
                     rng: np.random.Generator = None, bypass: bool = False):
    """Adapted representation of one sample. With ``bypass`` the adapter is
    skipped and the representation is the plain mean of word vectors."""
    prefix = init_prefix(sequence)
    if bypass:
        return prefix, None
    inp = AdapterInput(prefix=prefix, sentence=sequence.vectors,
                       labels=label_vectors)
    return adapter_forward(params, inp, train_mode=train_mode, rng=rng)


def represent_episode(params: AdapterParams, episode: Episode,
                      train_mode: bool = False, rng: np.random.Generator = None,
                      bypass: bool = False):
    """Adapted representations for a whole episode.

    Returns (support_reps, query_reps, support_caches, query_caches) with
    support_reps shaped (N, K, d) class-major and query_reps (N*M, d) in
    sampler order. Caches are None when bypassing.
    """
    labels = episode.label_names.vectors
    sup_reps, sup_caches = [], []
    for group in episode.support:
        reps, caches = [], []
        for seq in group:
            v, cache = represent_sample(params, seq, labels, train_mode=train_mode,
                                        rng=rng, bypass=bypass)
            reps.append(v)
            caches.append(cache)
        sup_reps.append(reps)
        sup_caches.append(caches)
    qry_reps, qry_caches = [], []
    for seq in episode.query:
        v, cache = represent_sample(params, seq, labels, train_mode=train_mode,
                                    rng=rng, bypass=bypass)
        qry_reps.append(v)
        qry_caches.append(cache)
    return (np.array(sup_reps), np.array(qry_reps), sup_caches, qry_caches)
