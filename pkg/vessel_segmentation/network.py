"""
Purpose: Residual U-net with deeply supervised side outputs

High-level Overview:
The encoder runs a stem convolution and then one DownBlock per stage. Each
DownBlock is a residual unit followed by a stride-2 convolution. A residual
bottleneck follows. The decoder mirrors the encoder with UpBlocks (2x2
deconvolution, concatenation with the encoder features of the same
resolution, residual unit). Every decoder stage has a 1x1 side head that
produces 5-class logits, bilinearly upsampled to the input size. The fused
head is a 1x1 convolution over the concatenated side logits. All maps leave
the network as per-pixel softmax probabilities.

Blocks keep the caches of their last forward pass so `backward` can accumulate
exact gradients into the `ParamStore`.

Key Components:
- `ParamStore`: named parameters, gradient slots and batch-norm running statistics
- He-normal initialization of conv/deconv kernels
- Stem, residual unit, DownBlock, UpBlock, side heads and fused head
- Forward in train mode (batch statistics, dropout) or eval mode (running statistics)

Functions/Classes:
- `class NetConfig`: Architecture hyper-parameters (`net.*` keys)
- `class ParamSpec`: Name, shape and fan-in of one tensor
- `class ParamStore`: Parameters, gradients and buffers
- `class SideOutputSet`: Side probability maps plus the fused map
- `class ResidualUnit`, `class DownBlock`, `class UpBlock`, `class ResidualUNet`
- `init_store(specs, seed)`: Initialize any set of parameter specs
- `init_params(cfg, seed)`: Initialize a full network
- `block_forward(block, x, params, mode, ...)`: Run one block
- `unet_forward(x, params, mode, ...)`: Run the whole network
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import Config
from .errors import ArgumentError, ConfigError, ShapeError
from .layers import (
    batch_norm, batch_norm_backward, conv2d, conv2d_backward, deconv2d, deconv2d_backward,
    dropout, dropout_backward, relu, relu_backward, softmax, upsample, upsample_backward,
)

MODES = ("train", "eval")
BUFFER_KINDS = ("running_mean", "running_var")


@dataclass
class NetConfig:
    """Architecture hyper-parameters; one encoder stage per entry of `channels`."""
    in_channels: int = 1
    channels: Tuple[int, ...] = (16, 32, 64, 128)
    num_classes: int = 5
    dropout: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    @property
    def stages(self) -> int:
        return len(self.channels)

    @property
    def bottleneck_channels(self) -> int:
        return 2 * self.channels[-1]

    @property
    def input_multiple(self) -> int:
        """Spatial sizes must be divisible by this."""
        return 2 ** self.stages

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigError(f"net.in_channels must be positive, got {self.in_channels}")
        if not self.channels or min(self.channels) < 1:
            raise ConfigError(f"net.channels must be positive integers, got {self.channels}")
        if self.num_classes != Config.NUM_CLASSES:
            raise ConfigError(f"net.num_classes must be {Config.NUM_CLASSES}, got {self.num_classes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"net.dropout must lie in [0, 1), got {self.dropout}")
        if self.bn_eps <= 0 or not 0.0 < self.bn_momentum <= 1.0:
            raise ConfigError("net.bn_eps must be positive and net.bn_momentum in (0, 1]")

    @classmethod
    def from_store(cls, store: "ParamStore", **overrides) -> "NetConfig":
        """Recover the channel plan from parameter shapes."""
        stages = 0
        while f"enc{stages + 1}.res.conv1.weight" in store.params:
            stages += 1
        if stages == 0 or "stem.conv.weight" not in store.params:
            raise ShapeError("parameter store does not hold a residual U-net")
        channels = tuple(int(store.params[f"enc{i}.res.conv1.weight"].shape[0]) for i in range(1, stages + 1))
        in_channels = int(store.params["stem.conv.weight"].shape[1])
        cfg = cls(in_channels=in_channels, channels=channels)
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: Tuple[int, ...]
    fan_in: int = 0

    @property
    def kind(self) -> str:
        return param_kind(self.name)


def param_kind(name: str) -> str:
    """Trailing name component: weight, bias, gamma, beta, running_mean or running_var."""
    return name.rsplit(".", 1)[-1]


class ParamStore:
    """Named parameters with gradient slots of identical shape, plus buffers."""

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params or name in self.buffers:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        value = np.asarray(value)
        if param_kind(name) in BUFFER_KINDS:
            self.buffers[name] = value
        else:
            self.params[name] = value
            self.grads[name] = np.zeros_like(value)

    def __len__(self) -> int:
        return len(self.params)

    def __contains__(self, name: str) -> bool:
        return name in self.params or name in self.buffers

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name] if name in self.params else self.buffers[name]

    def names(self) -> List[str]:
        return list(self.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_values(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def kernel_names(self) -> List[str]:
        """Conv and deconv kernels, the tensors the L2 term applies to."""
        return [name for name in self.params if param_kind(name) == "weight"]

    def zero_grad(self) -> None:
        for grad in self.grads.values():
            grad.fill(0)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        slot = self.grads[name]
        if grad.shape != slot.shape:
            raise ShapeError(f"gradient for {name} has shape {grad.shape}, expected {slot.shape}")
        slot += grad.astype(slot.dtype, copy=False)

    def astype(self, dtype) -> "ParamStore":
        """Deep copy with every tensor cast to `dtype`."""
        other = ParamStore()
        for name, value in self.params.items():
            other.add(name, value.astype(dtype, copy=True))
        for name, value in self.buffers.items():
            other.add(name, value.astype(dtype, copy=True))
        return other

    def copy(self) -> "ParamStore":
        return self.astype(self.dtype)

    def to_tensors(self) -> Dict[str, np.ndarray]:
        """Flat tensor dict for checkpoints; buffers carry a `buffer/` prefix."""
        tensors = dict(self.params)
        tensors.update({f"buffer/{name}": value for name, value in self.buffers.items()})
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "ParamStore":
        """Inverse of `to_tensors`; other prefixed entries (e.g. velocities) are skipped."""
        store = cls()
        for name, value in tensors.items():
            if name.startswith("buffer/"):
                store.add(name[len("buffer/"):], np.array(value, dtype=np.float32))
            elif "/" not in name:
                store.add(name, np.array(value, dtype=np.float32))
        return store


@dataclass
class SideOutputSet:
    """Side probability maps (decoding order, coarsest first) and the fused map."""
    sides: List[np.ndarray]
    fused: np.ndarray
    side_logits: List[np.ndarray] = field(default_factory=list, repr=False)
    fused_logits: Optional[np.ndarray] = field(default=None, repr=False)
    tape: Optional["ResidualUNet"] = field(default=None, repr=False, compare=False)

    @property
    def num_sides(self) -> int:
        return len(self.sides)

    def maps(self) -> List[np.ndarray]:
        return list(self.sides) + [self.fused]


@dataclass
class _Context:
    train: bool
    rng: Optional[np.random.Generator]
    dropout: float
    momentum: float
    eps: float


class _Layered:
    """Shared conv/bn plumbing; caches are keyed by layer name."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._caches: Dict[str, object] = {}

    def key(self, name: str) -> str:
        return f"{self.prefix}.{name}"

    def conv_specs(self, name: str, cout: int, cin: int, k: int) -> List[ParamSpec]:
        return [ParamSpec(self.key(f"{name}.weight"), (cout, cin, k, k), cin * k * k),
                ParamSpec(self.key(f"{name}.bias"), (cout,))]

    def bn_specs(self, name: str, channels: int) -> List[ParamSpec]:
        return [ParamSpec(self.key(f"{name}.{kind}"), (channels,))
                for kind in ("gamma", "beta", "running_mean", "running_var")]

    def conv(self, store: ParamStore, name: str, x: np.ndarray, stride: int = 1, padding: int = 1) -> np.ndarray:
        out, self._caches[name] = conv2d(
            x, store.params[self.key(f"{name}.weight")], store.params[self.key(f"{name}.bias")], stride, padding)
        return out

    def conv_back(self, store: ParamStore, name: str, dout: np.ndarray) -> np.ndarray:
        dx, dw, db = conv2d_backward(dout, self._caches[name])
        store.accumulate(self.key(f"{name}.weight"), dw)
        store.accumulate(self.key(f"{name}.bias"), db)
        return dx

    def bn(self, store: ParamStore, name: str, x: np.ndarray, ctx: _Context) -> np.ndarray:
        mean_key, var_key = self.key(f"{name}.running_mean"), self.key(f"{name}.running_var")
        out, self._caches[name], (new_mean, new_var) = batch_norm(
            x, store.params[self.key(f"{name}.gamma")], store.params[self.key(f"{name}.beta")],
            store.buffers[mean_key], store.buffers[var_key], ctx.train, ctx.momentum, ctx.eps)
        if ctx.train:
            store.buffers[mean_key] = new_mean
            store.buffers[var_key] = new_var
        return out

    def bn_back(self, store: ParamStore, name: str, dout: np.ndarray) -> np.ndarray:
        dx, dgamma, dbeta = batch_norm_backward(dout, self._caches[name])
        store.accumulate(self.key(f"{name}.gamma"), dgamma)
        store.accumulate(self.key(f"{name}.beta"), dbeta)
        return dx

    def conv_bn_relu(self, store, conv_name, bn_name, x, ctx, stride=1) -> np.ndarray:
        h = self.conv(store, conv_name, x, stride=stride, padding=1)
        h = self.bn(store, bn_name, h, ctx)
        h, self._caches[f"{bn_name}.relu"] = relu(h)
        return h

    def conv_bn_relu_back(self, store, conv_name, bn_name, dout) -> np.ndarray:
        d = relu_backward(dout, self._caches[f"{bn_name}.relu"])
        d = self.bn_back(store, bn_name, d)
        return self.conv_back(store, conv_name, d)


class Stem(_Layered):
    """3x3 conv, batch norm, ReLU from the input channels to the first stage width."""

    def __init__(self, cin: int, cout: int, prefix: str = "stem"):
        super().__init__(prefix)
        self.cin, self.cout = cin, cout

    def param_specs(self) -> List[ParamSpec]:
        return self.conv_specs("conv", self.cout, self.cin, 3) + self.bn_specs("bn", self.cout)

    def forward(self, store, x, ctx):
        return self.conv_bn_relu(store, "conv", "bn", x, ctx)

    def backward(self, store, dout):
        return self.conv_bn_relu_back(store, "conv", "bn", dout)


class ResidualUnit(_Layered):
    """conv-BN-ReLU, conv-BN, add the (projected) input, ReLU, dropout."""

    def __init__(self, prefix: str, cin: int, cout: int):
        super().__init__(prefix)
        self.cin, self.cout = cin, cout
        self.project = cin != cout

    def param_specs(self) -> List[ParamSpec]:
        specs = self.conv_specs("conv1", self.cout, self.cin, 3) + self.bn_specs("bn1", self.cout)
        specs += self.conv_specs("conv2", self.cout, self.cout, 3) + self.bn_specs("bn2", self.cout)
        if self.project:
            specs += self.conv_specs("proj", self.cout, self.cin, 1)
        return specs

    def forward(self, store: ParamStore, x: np.ndarray, ctx: _Context) -> np.ndarray:
        if x.shape[1] != self.cin:
            raise ShapeError(f"{self.prefix} expects {self.cin} channels, got input {x.shape}")
        h = self.conv_bn_relu(store, "conv1", "bn1", x, ctx)
        h = self.conv(store, "conv2", h)
        h = self.bn(store, "bn2", h, ctx)
        skip = self.conv(store, "proj", x, padding=0) if self.project else x
        y, self._caches["out.relu"] = relu(h + skip)
        y, self._caches["dropout"] = dropout(y, ctx.dropout, ctx.train, ctx.rng)
        return y

    def backward(self, store: ParamStore, dout: np.ndarray) -> np.ndarray:
        d = dropout_backward(dout, self._caches["dropout"])
        d = relu_backward(d, self._caches["out.relu"])
        dx = self.conv_back(store, "proj", d) if self.project else d
        h = self.bn_back(store, "bn2", d)
        h = self.conv_back(store, "conv2", h)
        return dx + self.conv_bn_relu_back(store, "conv1", "bn1", h)


class DownBlock(_Layered):
    """Residual unit at `cin` channels, then a stride-2 conv-BN-ReLU to `cout`."""

    def __init__(self, prefix: str, cin: int, cout: int):
        super().__init__(prefix)
        self.cin, self.cout = cin, cout
        self.res = ResidualUnit(f"{prefix}.res", cin, cin)

    def param_specs(self) -> List[ParamSpec]:
        return self.res.param_specs() + self.conv_specs("down.conv", self.cout, self.cin, 3) \
            + self.bn_specs("down.bn", self.cout)

    def forward(self, store, x, ctx) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (skip features at full resolution, downsampled output)."""
        skip = self.res.forward(store, x, ctx)
        return skip, self.conv_bn_relu(store, "down.conv", "down.bn", skip, ctx, stride=2)

    def backward(self, store, dout: np.ndarray, dskip: Optional[np.ndarray] = None) -> np.ndarray:
        d = self.conv_bn_relu_back(store, "down.conv", "down.bn", dout)
        if dskip is not None:
            d = d + dskip
        return self.res.backward(store, d)


class UpBlock(_Layered):
    """2x2 stride-2 deconvolution, concatenation with encoder features, residual unit."""

    def __init__(self, prefix: str, cin: int, cout: int):
        super().__init__(prefix)
        self.cin, self.cout = cin, cout
        self.res = ResidualUnit(f"{prefix}.res", 2 * cout, cout)

    def param_specs(self) -> List[ParamSpec]:
        return [ParamSpec(self.key("up.weight"), (self.cin, self.cout, 2, 2), self.cin),
                ParamSpec(self.key("up.bias"), (self.cout,))] + self.res.param_specs()

    def forward(self, store, x, skip, ctx) -> np.ndarray:
        up, self._caches["up"] = deconv2d(x, store.params[self.key("up.weight")], store.params[self.key("up.bias")])
        if skip is None or skip.shape[0] != up.shape[0] or skip.shape[2:] != up.shape[2:] or skip.shape[1] != self.cout:
            raise ShapeError(f"{self.prefix}: skip features {None if skip is None else skip.shape} "
                             f"do not match upsampled {up.shape}")
        return self.res.forward(store, np.concatenate([up, skip], axis=1), ctx)

    def backward(self, store, dout) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (gradient w.r.t. the block input, gradient w.r.t. the skip features)."""
        dcat = self.res.backward(store, dout)
        dx, dw, db = deconv2d_backward(dcat[:, :self.cout], self._caches["up"])
        store.accumulate(self.key("up.weight"), dw)
        store.accumulate(self.key("up.bias"), db)
        return dx, dcat[:, self.cout:]


class ResidualUNet(_Layered):
    """The full network; side k (1-based) taps decoder stage k in decoding order."""

    def __init__(self, cfg: NetConfig):
        super().__init__("")
        self.cfg = cfg
        ch = list(cfg.channels)
        stages = cfg.stages
        bottleneck = cfg.bottleneck_channels

        self.stem = Stem(cfg.in_channels, ch[0])
        self.encoders = [
            DownBlock(f"enc{i}", ch[i - 1], ch[i] if i < stages else bottleneck)
            for i in range(1, stages + 1)
        ]
        self.bottleneck = ResidualUnit("bottleneck.res", bottleneck, bottleneck)
        self.decoders: List[UpBlock] = []
        self.side_stages: List[int] = []
        for k in range(1, stages + 1):
            stage = stages - k + 1
            cin = bottleneck if k == 1 else ch[stage]
            self.decoders.append(UpBlock(f"dec{k}", cin, ch[stage - 1]))
            self.side_stages.append(stage)

    def key(self, name: str) -> str:
        return name

    def param_specs(self) -> List[ParamSpec]:
        n = self.cfg.num_classes
        specs = self.stem.param_specs()
        for block in self.encoders:
            specs += block.param_specs()
        specs += self.bottleneck.param_specs()
        for k, block in enumerate(self.decoders, start=1):
            specs += block.param_specs()
            specs += self.conv_specs(f"side{k}", n, block.cout, 1)
        specs += self.conv_specs("fuse", n, n * len(self.decoders), 1)
        return specs

    def check_input(self, x: np.ndarray) -> None:
        multiple = self.cfg.input_multiple
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"network input must be (batch, {self.cfg.in_channels}, H, W), got {x.shape}")
        if x.shape[0] < 1 or x.shape[2] < multiple or x.shape[2] % multiple or x.shape[3] % multiple \
                or x.shape[3] < multiple:
            raise ShapeError(f"network input spatial size {x.shape[2:]} must be a positive multiple of {multiple}")

    def forward(self, store: ParamStore, x: np.ndarray, ctx: _Context) -> SideOutputSet:
        self.check_input(x)
        h = self.stem.forward(store, x, ctx)
        skips = []
        for block in self.encoders:
            skip, h = block.forward(store, h, ctx)
            skips.append(skip)
        h = self.bottleneck.forward(store, h, ctx)

        side_logits = []
        for k, (block, stage) in enumerate(zip(self.decoders, self.side_stages), start=1):
            h = block.forward(store, h, skips[stage - 1], ctx)
            logits = self.conv(store, f"side{k}", h, padding=0)
            up, self._caches[f"side{k}.up"] = upsample(logits, 2 ** (stage - 1))
            side_logits.append(up)

        fused_logits = self.conv(store, "fuse", np.concatenate(side_logits, axis=1), padding=0)
        return SideOutputSet(
            sides=[softmax(logits) for logits in side_logits],
            fused=softmax(fused_logits),
            side_logits=side_logits,
            fused_logits=fused_logits,
            tape=self,
        )

    def backward(self, store: ParamStore, d_fused_logits: np.ndarray,
                 d_side_logits: Optional[List[Optional[np.ndarray]]] = None) -> np.ndarray:
        """Accumulate parameter gradients from logit gradients; returns the input gradient."""
        n = self.cfg.num_classes
        sides = len(self.decoders)
        d_side_logits = d_side_logits or [None] * sides
        dcat = self.conv_back(store, "fuse", d_fused_logits)

        skip_grads: Dict[int, np.ndarray] = {}
        d_h = None
        for k in range(sides, 0, -1):
            block, stage = self.decoders[k - 1], self.side_stages[k - 1]
            d_up = dcat[:, n * (k - 1):n * k]
            if d_side_logits[k - 1] is not None:
                d_up = d_up + d_side_logits[k - 1]
            d_logits = upsample_backward(d_up, self._caches[f"side{k}.up"])
            d_out = self.conv_back(store, f"side{k}", d_logits)
            if d_h is not None:
                d_out = d_out + d_h
            d_h, skip_grads[stage] = block.backward(store, d_out)

        d_h = self.bottleneck.backward(store, d_h)
        for i in range(sides, 0, -1):
            d_h = self.encoders[i - 1].backward(store, d_h, skip_grads[i])
        return self.stem.backward(store, d_h)


def init_store(specs: List[ParamSpec], seed: int) -> ParamStore:
    """He-normal kernels, zero biases/shifts/means, unit scales/variances, float32."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for spec in specs:
        kind = spec.kind
        if kind == "weight":
            std = np.sqrt(2.0 / spec.fan_in)
            value = rng.standard_normal(spec.shape) * std
        elif kind in ("gamma", "running_var"):
            value = np.ones(spec.shape)
        else:
            value = np.zeros(spec.shape)
        store.add(spec.name, value.astype(np.float32))
    return store


def init_params(cfg: NetConfig, seed: int = 0) -> ParamStore:
    """Deterministic initialization of the full network for a given seed."""
    cfg.validate()
    store = init_store(ResidualUNet(cfg).param_specs(), seed)
    logging.info(f"Initialized residual U-net {cfg.channels} with {store.num_values()} parameters")
    return store


def make_context(mode: str, cfg: NetConfig, rng: Optional[np.random.Generator] = None) -> _Context:
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of {MODES}, got {mode!r}")
    return _Context(train=mode == "train", rng=rng, dropout=cfg.dropout,
                    momentum=cfg.bn_momentum, eps=cfg.bn_eps)


def block_forward(block, x: np.ndarray, params: ParamStore, mode: str = "train",
                  skip: Optional[np.ndarray] = None, rng: Optional[np.random.Generator] = None,
                  cfg: Optional[NetConfig] = None) -> np.ndarray:
    """Run a single block; a DownBlock returns its downsampled output, an UpBlock needs `skip`."""
    ctx = make_context(mode, cfg or NetConfig(), rng)
    x = np.asarray(x, dtype=params.dtype)
    if isinstance(block, DownBlock):
        return block.forward(params, x, ctx)[1]
    if isinstance(block, UpBlock):
        return block.forward(params, x, skip, ctx)
    return block.forward(params, x, ctx)


def unet_forward(x: np.ndarray, params: ParamStore, mode: str = "eval",
                 cfg: Optional[NetConfig] = None, rng: Optional[np.random.Generator] = None) -> SideOutputSet:
    """Forward pass of the full network; the result's `tape` can run the backward pass."""
    cfg = cfg or NetConfig.from_store(params)
    net = ResidualUNet(cfg)
    x = np.asarray(x, dtype=params.dtype)
    return net.forward(params, x, make_context(mode, cfg, rng))

