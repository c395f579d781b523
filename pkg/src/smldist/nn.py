"""Plain 1-D conv backbones, linear / Hopfield heads and the head ensemble."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from . import core
from .core import ShapeError, Tensor


class Module:
    """Parameter container; attributes are walked in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"{k}: expected {p.shape}, got {state[k].shape}")
            p.data = np.array(state[k], dtype=p.dtype)


def param_count(module: Module) -> int:
    return sum(p.size for _, p in module.named_parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


# ---------------------------------------------------------------------------
# backbone


class Conv1d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int, rng, dtype=np.float32):
        self.stride = stride
        self.pad = kernel // 2
        fan_in = cin * kernel
        # He-style scale so deep plain stacks keep their activations alive
        self.weight = Tensor(
            (rng.standard_normal((cout, cin, kernel)) * np.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True
        )
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)

    @property
    def kernel(self) -> int:
        return self.weight.shape[2]

    def out_length(self, length: int) -> int:
        return core.conv1d_out_length(length, self.kernel, self.stride, self.pad)

    def __call__(self, x: Tensor) -> Tensor:
        return core.conv1d(x, self.weight, self.bias, self.stride, self.pad)


class ConvStage(Module):
    """A run of conv -> bias -> activation blocks; only the first block strides."""

    def __init__(self, cin: int, cout: int, hidden: list[int], kernel: int, stride: int, activation: str, rng, dtype):
        widths = [cin, *hidden, cout]
        self.blocks = [
            Conv1d(widths[j], widths[j + 1], kernel, stride if j == 0 else 1, rng, dtype) for j in range(len(widths) - 1)
        ]
        self.activation = activation
        self.out_channels = cout

    def out_length(self, length: int) -> int:
        for b in self.blocks:
            length = b.out_length(length)
        return length

    def __call__(self, x: Tensor) -> Tensor:
        act = core.ACTIVATIONS[self.activation]
        for b in self.blocks:
            x = act(b(x))
        return x


class Backbone(Module):
    def __init__(self, stages: list[ConvStage], in_channels: int, input_length: int, norm_pooled: bool = True):
        if not stages:
            raise ValueError("backbone needs at least one stage")
        self.stages = stages
        self.in_channels = in_channels
        self.input_length = input_length
        self.norm_pooled = norm_pooled

    def stage_shapes(self) -> list[tuple[int, int]]:
        shapes, length = [], self.input_length
        for s in self.stages:
            length = s.out_length(length)
            shapes.append((s.out_channels, length))
        return shapes

    @property
    def out_dim(self) -> int:
        return self.stages[-1].out_channels

    def check_input(self, x: Tensor):
        if x.ndim != 3 or x.shape[1:] != (self.in_channels, self.input_length):
            raise ShapeError(
                f"backbone expects (B, {self.in_channels}, {self.input_length}), got {x.shape}"
            )

    def prefix(self, x: Tensor, n_stages: int) -> Tensor:
        """Output of the first ``n_stages`` stages."""
        self.check_input(x)
        for s in self.stages[:n_stages]:
            x = s(x)
        return x

    def __call__(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        self.check_input(x)
        feats = []
        for s in self.stages:
            x = s(x)
            feats.append(x)
        pooled = core.mean(x, axis=2)
        return feats, core.layer_norm(pooled, axis=1) if self.norm_pooled else pooled


# ---------------------------------------------------------------------------
# heads


class LinearHead(Module):
    kind = "linear"

    def __init__(self, dim: int, n_classes: int, rng, dtype=np.float32):
        self.weight = _uniform(rng, (dim, n_classes), dim, dtype)
        self.bias = Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True)

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def signature(self) -> tuple:
        return (self.kind, self.dim, self.n_classes)

    def __call__(self, pooled: Tensor) -> Tensor:
        return core.dense(pooled, self.weight, self.bias)


class HopfieldHead(Module):
    """One modern-Hopfield retrieval step over stored patterns, then a linear map.

    ``xi' = softmax(beta * ln(xi) @ ln(P).T) @ P``; logits = ``xi' @ W + b``.
    ``ln`` is a per-vector layer norm, so the retrieval softmax does not
    saturate when pooled features grow large.
    """

    kind = "hopfield"

    def __init__(self, dim: int, n_classes: int, n_patterns: int, rng, beta: float | None = None, dtype=np.float32):
        if n_patterns < 1:
            raise ValueError("Hopfield head needs at least one stored pattern")
        self.beta = float(1.0 / np.sqrt(dim) if beta is None else beta)
        if not np.isfinite(self.beta) or self.beta < 0:
            raise ValueError(f"beta must be finite and non-negative, got {self.beta}")
        self.patterns = Tensor(rng.standard_normal((n_patterns, dim)).astype(dtype), requires_grad=True)
        self.weight = _uniform(rng, (dim, n_classes), dim, dtype)
        self.bias = Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True)

    @property
    def dim(self) -> int:
        return self.patterns.shape[1]

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    @property
    def n_classes(self) -> int:
        return self.weight.shape[1]

    def signature(self) -> tuple:
        return (self.kind, self.dim, self.n_classes, self.n_patterns)

    def retrieve(self, xi: Tensor) -> Tensor:
        if xi.ndim != 2 or xi.shape[1] != self.dim:
            raise ShapeError(f"hopfield: query dim {xi.shape} does not match patterns {self.patterns.shape}")
        keys = core.layer_norm(self.patterns, axis=1)
        scores = core.matmul(core.layer_norm(xi, axis=1), core.transpose(keys)) * self.beta
        return core.matmul(core.softmax(scores, axis=1), self.patterns)

    def __call__(self, pooled: Tensor) -> Tensor:
        return core.dense(self.retrieve(pooled), self.weight, self.bias)


class HeadEnsemble(Module):
    """Heads combined as ``sum_h h(P) * softmax(W)_h``."""

    def __init__(self, heads: list, dtype=np.float32):
        if not heads:
            raise ValueError("ensemble needs at least one head")
        self.heads = heads
        self.weights = Tensor(np.zeros(len(heads), dtype=dtype), requires_grad=True)

    @property
    def dim(self) -> int:
        return self.heads[0].dim

    @property
    def n_classes(self) -> int:
        return self.heads[0].n_classes

    def importance(self) -> np.ndarray:
        return core._softmax_np(self.weights.data.astype(np.float64), 0)

    def best_head(self) -> int:
        # taken on W itself: softmax may round nearly equal weights to a tie
        return int(np.argmax(self.weights.data))

    def __call__(self, pooled: Tensor) -> Tensor:
        if pooled.ndim != 2 or pooled.shape[1] != self.dim:
            raise ShapeError(f"ensemble: pooled {pooled.shape} does not match head dim {self.dim}")
        q = core.softmax(self.weights, axis=0)
        out = None
        for h, head in enumerate(self.heads):
            term = head(pooled) * q[h]
            out = term if out is None else out + term
        return out


def head_importance(ens: HeadEnsemble) -> np.ndarray:
    return ens.importance()


# ---------------------------------------------------------------------------
# configs and the full network


@dataclass
class ModelConfig:
    """Architecture of a plain conv classifier.

    Each stage has ``depth`` conv blocks; the inner ones are ``width`` wide and
    the last one emits ``channels[i]``. ``channels`` and ``strides`` fix the
    stage boundary shapes, so teacher and student must agree on them.
    """

    channels: list[int] = field(default_factory=lambda: [16, 32, 32])
    strides: list[int] = field(default_factory=lambda: [2, 2, 2])
    kernel: int = 5
    width: int = 32
    depth: int = 2
    heads: list[str] = field(default_factory=lambda: ["linear", "hopfield"])
    n_patterns: int = 16
    beta: float | None = None
    activation: str = "silu"
    ensemble: bool = True

    def validate(self):
        if len(self.channels) < 1 or len(self.channels) != len(self.strides):
            raise ValueError("channels and strides must be non-empty and equally long")
        if self.depth < 1 or self.width < 1 or self.kernel < 1:
            raise ValueError("depth, width and kernel must be positive")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd")
        if not self.heads or any(h not in ("linear", "hopfield") for h in self.heads):
            raise ValueError(f"heads must be a non-empty list of 'linear'/'hopfield', got {self.heads}")
        if self.activation not in core.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not self.ensemble and len(self.heads) != 1:
            raise ValueError("a non-ensemble model has exactly one head")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def scaled(self, width_mult: float = 1.0, depth_mult: float = 1.0) -> "ModelConfig":
        return replace(
            self,
            width=max(1, int(round(self.width * width_mult))),
            depth=max(1, int(round(self.depth * depth_mult))),
        )


class Network(Module):
    def __init__(self, backbone: Backbone, head, config: ModelConfig, n_classes: int):
        self.backbone = backbone
        self.head = head
        self.config = config
        self.n_classes = n_classes
        if head.dim != backbone.out_dim:
            raise ShapeError(f"head dim {head.dim} != pooled dim {backbone.out_dim}")

    @property
    def ensemble(self) -> HeadEnsemble | None:
        return self.head if isinstance(self.head, HeadEnsemble) else None

    @property
    def in_channels(self) -> int:
        return self.backbone.in_channels

    @property
    def input_length(self) -> int:
        return self.backbone.input_length

    def forward_features(self, x: Tensor) -> tuple[list[Tensor], Tensor]:
        return self.backbone(x)

    def __call__(self, x: Tensor) -> Tensor:
        _, pooled = self.backbone(x)
        return self.head(pooled)

    def predict(self, X: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Logits for a numpy batch, evaluated without recording a graph."""
        dtype = self.backbone.stages[0].blocks[0].weight.dtype
        out = []
        with core.no_grad():
            for i in range(0, len(X), batch_size):
                out.append(self(Tensor(X[i : i + batch_size].astype(dtype, copy=False))).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.n_classes), dtype=dtype)

    def arch_dict(self) -> dict:
        return {
            "model": self.config.to_dict(),
            "in_channels": self.in_channels,
            "input_length": self.input_length,
            "n_classes": self.n_classes,
        }


def build_head(kind: str, dim: int, n_classes: int, cfg: ModelConfig, rng, dtype):
    if kind == "linear":
        return LinearHead(dim, n_classes, rng, dtype)
    return HopfieldHead(dim, n_classes, cfg.n_patterns, rng, cfg.beta, dtype)


def build_network(
    cfg: ModelConfig, in_channels: int, input_length: int, n_classes: int, seed: int = 0, dtype=np.float32
) -> Network:
    cfg.validate()
    rng = np.random.default_rng(seed)
    stages, cin = [], in_channels
    for cout, stride in zip(cfg.channels, cfg.strides):
        stages.append(ConvStage(cin, cout, [cfg.width] * (cfg.depth - 1), cfg.kernel, stride, cfg.activation, rng, dtype))
        cin = cout
    backbone = Backbone(stages, in_channels, input_length)
    for i, (_, L) in enumerate(backbone.stage_shapes()):
        if L < 1:
            raise ShapeError(f"stage {i} has non-positive output length")
    heads = [build_head(k, backbone.out_dim, n_classes, cfg, rng, dtype) for k in cfg.heads]
    head = HeadEnsemble(heads, dtype) if cfg.ensemble else heads[0]
    return Network(backbone, head, cfg, n_classes)


def network_from_arch(arch: dict, dtype=np.float32) -> Network:
    return build_network(
        ModelConfig.from_dict(arch["model"]), arch["in_channels"], arch["input_length"], arch["n_classes"], 0, dtype
    )
