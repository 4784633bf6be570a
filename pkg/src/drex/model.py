"""The fusion regressor: two projected branches, learned attention over
them, a residual mix, and a small MLP head.

Each branch is Linear -> LayerNorm -> GELU into a shared width. A
two-layer MLP over the concatenated projections produces two logits; a
temperature softmax turns them into branch weights (w_d, w_r). The fused
vector w_d*d' + w_r*r' + alpha*(d' + r') is LayerNorm'd and regressed to
a scalar by a progressively narrowing GELU MLP with dropout between the
hidden layers.

The temperature is stored as a log value and exponentiated, so it stays
positive without clamping.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ParamStore,
    Tensor,
    add,
    concat_cols,
    dropout,
    exp,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    slice_cols,
    softmax_temperature,
    tensor_sum,
)
from .exceptions import DimensionMismatchError
from .features import FeatureRecord

LAYER_NORM_EPS = 1e-5


@dataclass
class FusionConfig:
    """All architecture hyperparameters plus the initialization seed."""

    dino_dim: int = 384
    resnet_dim: int = 3840
    proj_dim: int = 384
    attn_hidden: int = 128
    head_dims: tuple[int, ...] = (128, 64, 32)
    dropout_p: float = 0.1
    tau_init: float = 1.0
    alpha_init: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.head_dims = tuple(int(d) for d in self.head_dims)
        dims = (self.dino_dim, self.resnet_dim, self.proj_dim, self.attn_hidden, *self.head_dims)
        if any(d <= 0 for d in dims):
            raise ValueError(f"all dimensions must be positive, got {dims}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.tau_init <= 0:
            raise ValueError(f"tau_init must be positive, got {self.tau_init}")

    def to_dict(self) -> dict:
        return {
            "dino_dim": self.dino_dim,
            "resnet_dim": self.resnet_dim,
            "proj_dim": self.proj_dim,
            "attn_hidden": self.attn_hidden,
            "head_dims": list(self.head_dims),
            "dropout_p": self.dropout_p,
            "tau_init": self.tau_init,
            "alpha_init": self.alpha_init,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionConfig":
        d = dict(d)
        d["head_dims"] = tuple(d.get("head_dims", (128, 64, 32)))
        return cls(**d)


class DrexParameters:
    """Configured parameter set; the store's insertion order is canonical."""

    def __init__(self, config: FusionConfig, store: ParamStore):
        self.config = config
        self.store = store

    @property
    def tau(self) -> float:
        return float(np.exp(self.store["log_tau"].data))

    @property
    def alpha(self) -> float:
        return float(self.store["alpha"].data)

    @property
    def dtype(self):
        return self.store["dino_proj.weight"].data.dtype

    def astype(self, dtype) -> "DrexParameters":
        return DrexParameters(self.config, self.store.copy(dtype=dtype))

    def head_layer_names(self) -> list[str]:
        names = [f"head.fc{i + 1}" for i in range(len(self.config.head_dims))]
        return names + ["head.out"]


def init_params(config: FusionConfig, dtype=np.float32) -> DrexParameters:
    """Deterministic initialization: same seed, same bits.

    Linear weights and biases are uniform in +-sqrt(1/fan_in);
    normalization gains start at 1, offsets at 0; tau and alpha start at
    their configured values. Draw order is fixed by the parameter order
    below, so adding parameters elsewhere cannot silently reshuffle draws.
    """
    rng = np.random.default_rng([config.seed, 0])

    def linear(fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
        bound = float(np.sqrt(1.0 / fan_in))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        return w.astype(dtype), b.astype(dtype)

    def norm(width: int) -> tuple[np.ndarray, np.ndarray]:
        return np.ones(width, dtype=dtype), np.zeros(width, dtype=dtype)

    p: dict[str, np.ndarray] = {}
    p["dino_proj.weight"], p["dino_proj.bias"] = linear(config.dino_dim, config.proj_dim)
    p["dino_norm.gain"], p["dino_norm.offset"] = norm(config.proj_dim)
    p["resnet_proj.weight"], p["resnet_proj.bias"] = linear(config.resnet_dim, config.proj_dim)
    p["resnet_norm.gain"], p["resnet_norm.offset"] = norm(config.proj_dim)
    p["attn.fc1.weight"], p["attn.fc1.bias"] = linear(2 * config.proj_dim, config.attn_hidden)
    p["attn.fc2.weight"], p["attn.fc2.bias"] = linear(config.attn_hidden, 2)
    p["log_tau"] = np.asarray(np.log(config.tau_init), dtype=dtype)
    p["alpha"] = np.asarray(config.alpha_init, dtype=dtype)
    p["fused_norm.gain"], p["fused_norm.offset"] = norm(config.proj_dim)
    widths = (config.proj_dim, *config.head_dims, 1)
    for i in range(len(config.head_dims)):
        p[f"head.fc{i + 1}.weight"], p[f"head.fc{i + 1}.bias"] = linear(widths[i], widths[i + 1])
    p["head.out.weight"], p["head.out.bias"] = linear(widths[-2], widths[-1])

    store = ParamStore({name: Tensor(arr) for name, arr in p.items()})
    return DrexParameters(config, store)


def param_count(params: DrexParameters) -> int:
    """Exact number of trainable scalars."""
    return params.store.n_params


def _linear(x: Tensor, store: ParamStore, name: str) -> Tensor:
    return add(matmul(x, store[f"{name}.weight"]), store[f"{name}.bias"])


@dataclass
class ForwardPass:
    """Every interesting intermediate of one forward pass, as graph nodes."""

    pred: Tensor  # (B,)
    weights: Tensor  # (B, 2) attention weights, rows sum to 1
    d_prime: Tensor  # (B, proj_dim) projected transformer branch
    r_prime: Tensor  # (B, proj_dim) projected convolutional branch
    fused_pre: Tensor  # (B, proj_dim) before the final LayerNorm
    fused: Tensor  # (B, proj_dim) after the final LayerNorm
    dino_input: Tensor
    resnet_input: Tensor


def forward_graph(
    params: DrexParameters,
    dino: np.ndarray,
    resnet: np.ndarray,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    zero_branch: str | None = None,
    input_grads: bool = False,
) -> ForwardPass:
    """Build the differentiable graph for a (B, dims) batch.

    zero_branch replaces the named branch's *projected* embedding with
    zeros after projection; attention and the residual path then see the
    zeroed vector, which is exactly the branch-ablation forward pass.
    """
    cfg = params.config
    store = params.store
    if dino.ndim != 2 or resnet.ndim != 2:
        raise ValueError("forward_graph expects 2-D (batch, dim) inputs")
    if dino.shape[1] != cfg.dino_dim or resnet.shape[1] != cfg.resnet_dim:
        raise DimensionMismatchError(
            f"inputs carry dims ({dino.shape[1]}, {resnet.shape[1]}), "
            f"model expects ({cfg.dino_dim}, {cfg.resnet_dim})"
        )
    if zero_branch not in (None, "dino", "resnet"):
        raise ValueError(f"unknown branch {zero_branch!r}; expected 'dino' or 'resnet'")

    d_in = Tensor(dino, requires_grad=input_grads)
    r_in = Tensor(resnet, requires_grad=input_grads)

    d_prime = gelu(
        layer_norm(_linear(d_in, store, "dino_proj"), store["dino_norm.gain"], store["dino_norm.offset"], LAYER_NORM_EPS)
    )
    r_prime = gelu(
        layer_norm(_linear(r_in, store, "resnet_proj"), store["resnet_norm.gain"], store["resnet_norm.offset"], LAYER_NORM_EPS)
    )
    if zero_branch == "dino":
        d_prime = Tensor(np.zeros_like(d_prime.data))
    elif zero_branch == "resnet":
        r_prime = Tensor(np.zeros_like(r_prime.data))

    joint = concat_cols([d_prime, r_prime])
    hidden = gelu(_linear(joint, store, "attn.fc1"))
    logits = _linear(hidden, store, "attn.fc2")
    weights = softmax_temperature(logits, exp(store["log_tau"]))
    w_d = slice_cols(weights, 0, 1)
    w_r = slice_cols(weights, 1, 2)

    fused_pre = add(
        add(mul(w_d, d_prime), mul(w_r, r_prime)),
        mul(store["alpha"], add(d_prime, r_prime)),
    )
    fused = layer_norm(fused_pre, store["fused_norm.gain"], store["fused_norm.offset"], LAYER_NORM_EPS)

    x = fused
    for i in range(len(cfg.head_dims)):
        x = gelu(_linear(x, store, f"head.fc{i + 1}"))
        x = dropout(x, cfg.dropout_p, training, rng)
    out = _linear(x, store, "head.out")
    pred = reshape(out, (dino.shape[0],))

    return ForwardPass(
        pred=pred,
        weights=weights,
        d_prime=d_prime,
        r_prime=r_prime,
        fused_pre=fused_pre,
        fused=fused,
        dino_input=d_in,
        resnet_input=r_in,
    )


def _batched(vec: np.ndarray) -> tuple[np.ndarray, bool]:
    arr = np.asarray(vec)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def fuse(
    params: DrexParameters,
    dino: np.ndarray,
    resnet: np.ndarray,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Fused representation (after final normalization) plus branch weights.

    Accepts a single (dim,) pair or (B, dim) batches; the return shapes
    follow the input.
    """
    d, single = _batched(dino)
    r, _ = _batched(resnet)
    fp = forward_graph(params, d, r, training=training, rng=rng)
    fused = fp.fused.data
    w = fp.weights.data
    if single:
        return fused[0], float(w[0, 0]), float(w[0, 1])
    return fused, w[:, 0].copy(), w[:, 1].copy()


def predict(
    params: DrexParameters,
    record: FeatureRecord,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Predicted complexity and the transformer-branch attention weight."""
    fp = forward_graph(
        params, record.dino[None, :], record.resnet[None, :], training=training, rng=rng
    )
    return float(fp.pred.data[0]), float(fp.weights.data[0, 0])


def predict_batch(
    params: DrexParameters,
    dino: np.ndarray,
    resnet: np.ndarray,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
    zero_branch: str | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(predictions, w_d) over a (B, dim) batch."""
    fp = forward_graph(
        params, dino, resnet, training=training, rng=rng, zero_branch=zero_branch
    )
    return fp.pred.data, fp.weights.data[:, 0].copy()


def input_gradients(
    params: DrexParameters, dino: np.ndarray, resnet: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample d(pred)/d(input) for both raw feature vectors.

    Rows are independent (all mixing happens within a sample), so seeding
    the backward pass with sum(pred) yields each sample's own gradient.
    Returns (dino grads, resnet grads, predictions).
    """
    fp = forward_graph(params, dino, resnet, input_grads=True)
    tensor_sum(fp.pred).backward()
    d_grad, r_grad = fp.dino_input.grad, fp.resnet_input.grad
    params.store.zero_grad()  # don't leave stray accumulation on the weights
    return d_grad, r_grad, fp.pred.data
