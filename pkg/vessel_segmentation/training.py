"""
Purpose: Loss functions, optimizer and the training loop

High-level Overview:
The objective is class-weighted cross-entropy on the fused map plus the same
loss on every side map, plus an L2 term over convolution kernels. Parameters
are updated by SGD with momentum. The learning rate halves every
`halving_period` epochs. The `Trainer` owns the epoch loop: it shuffles patches
with a generator derived from (seed, epoch), augments them, runs
forward/backward and logs per-epoch means. It writes resumable checkpoints
every `checkpoint_every` epochs.

Key Components:
- Weighted cross-entropy with probability floor 1e-7 and its logit gradient
- Total loss with side-loss coefficient and L2 penalty
- Step learning-rate schedule and momentum SGD
- Epoch loop with tqdm progress, divergence detection and checkpointing

Functions/Classes:
- `class TrainConfig`: Training hyper-parameters (`train.*` keys)
- `class OptimizerState`: Momentum velocities
- `class LossBreakdown`: Fused, side and L2 terms of one evaluation
- `class TrainLog`: Per-epoch records, CSV through pandas
- `weighted_cross_entropy(pred, target, weights)`: Scalar loss
- `cross_entropy_with_grad(prob, target, weights)`: Loss and logit gradient
- `l2_penalty(params, lam)`: (lam/2) * sum of squared kernels
- `total_loss(outputs, target, weights, params, lam, ...)`: Loss and gradients
- `lr_at_epoch(cfg, epoch)`: Learning rate of an epoch
- `sgd_step(params, grads, state, rate, momentum)`: In-place momentum update
- `load_training_samples(manifest, run)`: Patches and class maps of the train split
- `class Trainer`: Epoch loop, checkpoints and resume
- `train(manifest, run, output_dir, ...)`: Train from a manifest
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import Config
from .dataio import Checkpoint, DatasetManifest, load_image, load_mask, read_checkpoint, write_checkpoint
from .errors import ArgumentError, ConfigError, ShapeError, TrainingDivergedError
from .labelgen import ClassMap, ClassWeights, build_class_map, weights_from_frequencies
from .network import NetConfig, ParamStore, ResidualUNet, SideOutputSet, init_params, make_context
from .preprocess import PatchSample, augment, derive_rng, extract_patches, to_gray_clahe

if TYPE_CHECKING:
    from .runconfig import RunConfig

PROBABILITY_FLOOR = 1e-7


@dataclass
class TrainConfig:
    """Training hyper-parameters; `class_weights` is "auto" or five comma-separated numbers."""
    epochs: int = 200
    learning_rate: float = 0.01
    halving_period: int = 100
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 8
    class_weights: str = "1,2,4,2,4"
    weight_boost: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0)
    side_loss_weight: float = 1.0
    checkpoint_every: int = 10
    patch_stride: int = 48
    augment: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"train.learning_rate must be positive, got {self.learning_rate}")
        if self.halving_period < 1:
            raise ConfigError(f"train.halving_period must be >= 1, got {self.halving_period}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"train.momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0 or self.side_loss_weight < 0:
            raise ConfigError("train.weight_decay and train.side_loss_weight must be non-negative")
        if self.batch_size < 1 or self.checkpoint_every < 1 or self.patch_stride < 1:
            raise ConfigError("train.batch_size, train.checkpoint_every and train.patch_stride must be >= 1")
        if len(self.weight_boost) != Config.NUM_CLASSES or min(self.weight_boost) <= 0:
            raise ConfigError(f"train.weight_boost needs {Config.NUM_CLASSES} positive values")
        if self.class_weights.strip().lower() != "auto":
            self.fixed_class_weights()

    def fixed_class_weights(self) -> ClassWeights:
        try:
            values = [float(v) for v in self.class_weights.split(",") if v.strip()]
            return ClassWeights(tuple(values))
        except ValueError as e:
            raise ConfigError(f"train.class_weights must be 'auto' or five positive numbers: {e}")

    def resolve_class_weights(self, maps: Sequence[ClassMap]) -> ClassWeights:
        if self.class_weights.strip().lower() == "auto":
            return weights_from_frequencies(maps, self.weight_boost)
        return self.fixed_class_weights()


@dataclass
class OptimizerState:
    """Velocity per parameter, shape-matched and zero-initialized."""
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "OptimizerState":
        return cls({name: np.zeros_like(value) for name, value in params.items()})

    def to_tensors(self) -> Dict[str, np.ndarray]:
        return {f"velocity/{name}": value for name, value in self.velocity.items()}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray], params: Dict[str, np.ndarray]) -> "OptimizerState":
        state = cls.zeros_like(params)
        for name in params:
            key = f"velocity/{name}"
            if key in tensors:
                state.velocity[name] = np.array(tensors[key], dtype=params[name].dtype)
        return state


@dataclass
class LossBreakdown:
    fused: float
    sides: List[float]
    l2: float = 0.0
    side_loss_weight: float = 1.0

    @property
    def total(self) -> float:
        return self.fused + self.side_loss_weight * sum(self.sides) + self.l2


class TrainLog:
    """One record per completed epoch: epoch, lr, total, fused, side1..sideN, seconds."""

    def __init__(self, num_sides: int = 4):
        self.num_sides = num_sides
        self.records: List[Dict[str, float]] = []

    @property
    def columns(self) -> List[str]:
        return ["epoch", "lr", "total", "fused"] + [f"side{k}" for k in range(1, self.num_sides + 1)] + ["seconds"]

    def append(self, record: Dict[str, float]) -> None:
        self.records.append({column: record[column] for column in self.columns})

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=self.columns)

    def write_csv(self, path: Path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.9g")

    @classmethod
    def read_csv(cls, path: Path) -> "TrainLog":
        frame = pd.read_csv(path)
        log = cls(num_sides=sum(1 for c in frame.columns if c.startswith("side")))
        for row in frame.to_dict(orient="records"):
            row["epoch"] = int(row["epoch"])
            log.append(row)
        return log


def _check_target(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    if pred.ndim != 4 or pred.shape[1] != Config.NUM_CLASSES:
        raise ShapeError(f"prediction must be (batch, {Config.NUM_CLASSES}, H, W), got {pred.shape}")
    if target.shape != (pred.shape[0],) + pred.shape[2:]:
        raise ShapeError(f"target {target.shape} does not match prediction {pred.shape}")
    return target.astype(np.intp)


def weighted_cross_entropy(pred: np.ndarray, target: np.ndarray, weights: ClassWeights) -> float:
    """Mean over pixels of -weight[c] * log(max(pred[c], 1e-7)) with c the target class."""
    target = _check_target(pred, target)
    p_target = np.take_along_axis(pred, target[:, None], axis=1)[:, 0]
    w = weights.as_array(np.float64)[target]
    return float(np.mean(-w * np.log(np.maximum(p_target.astype(np.float64), PROBABILITY_FLOOR))))


def cross_entropy_with_grad(prob: np.ndarray, target: np.ndarray, weights: ClassWeights) -> Tuple[float, np.ndarray]:
    """Weighted CE of softmax probabilities and its gradient with respect to the logits."""
    target = _check_target(prob, target)
    loss = weighted_cross_entropy(prob, target, weights)
    p_target = np.take_along_axis(prob, target[:, None], axis=1)
    w = weights.as_array(prob.dtype)[target][:, None]
    onehot = np.zeros_like(prob)
    np.put_along_axis(onehot, target[:, None], 1.0, axis=1)
    pixels = target.size
    # floor-clamped pixels have zero gradient
    grad = (w / pixels) * (prob - onehot) * (p_target > PROBABILITY_FLOOR)
    return loss, grad.astype(prob.dtype, copy=False)


def l2_penalty(params: ParamStore, lam: float) -> float:
    """(lam / 2) * sum of squared conv/deconv kernel values."""
    return 0.5 * lam * sum(float(np.sum(np.square(params.params[name], dtype=np.float64)))
                           for name in params.kernel_names())


def total_loss(outputs: SideOutputSet, target: np.ndarray, weights: ClassWeights, params: ParamStore,
               lam: float, side_loss_weight: float = 1.0, compute_grads: bool = True) -> LossBreakdown:
    """Fused CE + side_loss_weight * sum of side CEs + L2.

    With `compute_grads` the parameter gradients of the total are left in
    `params.grads` (zeroed first); this needs the outputs of a forward pass.
    """
    fused, d_fused = cross_entropy_with_grad(outputs.fused, target, weights)
    side_values, d_sides = [], []
    for side in outputs.sides:
        value, grad = cross_entropy_with_grad(side, target, weights)
        side_values.append(value)
        d_sides.append(grad * side_loss_weight if side_loss_weight else None)
    breakdown = LossBreakdown(fused, side_values, l2_penalty(params, lam), side_loss_weight)

    if compute_grads:
        if outputs.tape is None:
            raise ArgumentError("gradients need the outputs of a network forward pass")
        params.zero_grad()
        outputs.tape.backward(params, d_fused, d_sides)
        if lam:
            for name in params.kernel_names():
                params.accumulate(name, lam * params.params[name])
    return breakdown


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """initial_rate / 2^floor(epoch / halving_period) for 0 <= epoch < epochs."""
    if not 0 <= epoch < cfg.epochs:
        raise ArgumentError(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.learning_rate / (2 ** (epoch // cfg.halving_period))


def sgd_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState,
             rate: float, momentum: float) -> None:
    """v <- momentum * v + g; w <- w - rate * v, in place."""
    for name, value in params.items():
        grad = grads[name]
        velocity = state.velocity.setdefault(name, np.zeros_like(value))
        if grad.shape != value.shape or velocity.shape != value.shape:
            raise ShapeError(f"{name}: parameter {value.shape}, gradient {grad.shape}, velocity {velocity.shape}")
        velocity *= momentum
        velocity += grad
        value -= (rate * velocity).astype(value.dtype, copy=False)


def load_training_samples(manifest: DatasetManifest, run: "RunConfig") -> Tuple[List[PatchSample], List[ClassMap]]:
    """CLAHE inputs and class maps of the train split, cut into patches."""
    entries = manifest.split("train")
    if not entries:
        raise ArgumentError("manifest has no entries in the 'train' split")
    samples: List[PatchSample] = []
    maps: List[ClassMap] = []
    for index, entry in enumerate(entries):
        image = load_image(entry.image)
        vessels = load_mask(entry.ground_truth)
        if vessels.shape != (image.height, image.width):
            raise ShapeError(f"{entry.ground_truth}: mask {vessels.shape} does not match image "
                             f"{(image.height, image.width)}")
        class_map = build_class_map(vessels, run.label.band_radius, run.label.scheme)
        gray = to_gray_clahe(image, run.pre.clahe_tiles, run.pre.clahe_clip)
        samples.extend(extract_patches(gray, class_map, run.pre.patch_size, run.train.patch_stride, index))
        maps.append(class_map)
    logging.info(f"Prepared {len(samples)} training patches from {len(entries)} images")
    return samples, maps


class Trainer:
    """Seeded epoch loop over a fixed list of patches."""

    def __init__(self, run: "RunConfig", samples: Sequence[PatchSample], weights: ClassWeights,
                 params: Optional[ParamStore] = None, output_dir: Optional[Path] = None, quiet: bool = False):
        if not samples:
            raise ArgumentError("no training samples")
        self.run = run
        self.cfg: TrainConfig = run.train
        self.net_cfg: NetConfig = run.net
        patch = samples[0].input.data.shape
        if patch[0] % self.net_cfg.input_multiple or patch[1] % self.net_cfg.input_multiple:
            raise ConfigError(f"patch size {patch} must be a multiple of {self.net_cfg.input_multiple} "
                              f"for {self.net_cfg.stages} stages")
        self.samples = list(samples)
        self.weights = weights
        self.params = params if params is not None else init_params(self.net_cfg, self.cfg.seed)
        self.state = OptimizerState.zeros_like(self.params.params)
        self.network = ResidualUNet(self.net_cfg)
        self.log = TrainLog(self.net_cfg.stages)
        self.epoch = 0
        self.output_dir = Path(output_dir) if output_dir else None
        self.quiet = quiet

    def restore(self, ckpt: Checkpoint, log: Optional[TrainLog] = None) -> None:
        """Continue from a training checkpoint (parameters, running stats, velocities)."""
        if ckpt.digest and ckpt.digest != self.run.digest():
            logging.warning("Resuming with a configuration that differs from the checkpoint's")
        self.params = ParamStore.from_tensors(ckpt.tensors)
        self.state = OptimizerState.from_tensors(ckpt.tensors, self.params.params)
        self.epoch = ckpt.epoch
        if log is not None:
            self.log.records = [r for r in log.records if r["epoch"] <= ckpt.epoch]

    def checkpoint(self) -> Checkpoint:
        tensors = self.params.to_tensors()
        tensors.update(self.state.to_tensors())
        return Checkpoint(epoch=self.epoch, tensors=tensors, digest=self.run.digest())

    def _batch(self, indices: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        batch = [self.samples[i] for i in indices]
        if self.cfg.augment:
            batch = [augment(sample, self.run.aug, rng) for sample in batch]
        x = np.stack([sample.input.data for sample in batch])[:, None]
        target = np.stack([sample.labels.data for sample in batch])
        return x.astype(self.params.dtype), target

    def run_epoch(self) -> Dict[str, float]:
        """Train one epoch and append its record to the log."""
        epoch = self.epoch
        rate = lr_at_epoch(self.cfg, epoch)
        rng = derive_rng(self.cfg.seed, epoch)
        order = rng.permutation(len(self.samples))
        starts = range(0, len(order), self.cfg.batch_size)
        sums = np.zeros(2 + self.net_cfg.stages, dtype=np.float64)
        started = time.perf_counter()

        progress = tqdm(starts, desc=f"Epoch {epoch + 1}/{self.cfg.epochs}", unit="batch",
                        leave=False, disable=True if self.quiet else None)
        for batch_index, start in enumerate(progress):
            x, target = self._batch(order[start:start + self.cfg.batch_size], rng)
            outputs = self.network.forward(self.params, x, make_context("train", self.net_cfg, rng))
            loss = total_loss(outputs, target, self.weights, self.params, self.cfg.weight_decay,
                              self.cfg.side_loss_weight)
            if not np.isfinite(loss.total):
                raise TrainingDivergedError(epoch + 1, batch_index, loss.total)
            sgd_step(self.params.params, self.params.grads, self.state, rate, self.cfg.momentum)
            sums += [loss.total, loss.fused] + loss.sides
            progress.set_postfix(loss=f"{loss.total:.4f}")

        means = sums / len(starts)
        record = {"epoch": epoch + 1, "lr": rate, "total": means[0], "fused": means[1],
                  "seconds": time.perf_counter() - started}
        record.update({f"side{k}": means[1 + k] for k in range(1, self.net_cfg.stages + 1)})
        self.log.append(record)
        self.epoch += 1
        logging.info(f"Epoch {epoch + 1}/{self.cfg.epochs}: lr={rate:g} loss={means[0]:.5f} fused={means[1]:.5f}")
        return record

    def fit(self, until: Optional[int] = None) -> TrainLog:
        """Run epochs up to `until` (default: the configured count), checkpointing as configured."""
        until = self.cfg.epochs if until is None else min(until, self.cfg.epochs)
        while self.epoch < until:
            self.run_epoch()
            if self.output_dir is not None:
                self.log.write_csv(self.output_dir / "train_log.csv")
                if self.epoch % self.cfg.checkpoint_every == 0 or self.epoch == self.cfg.epochs:
                    self._save(self.output_dir / "checkpoints" / f"epoch_{self.epoch:04d}{Config.CHECKPOINT_SUFFIX}")
        if self.output_dir is not None:
            self._save(self.output_dir / f"model{Config.CHECKPOINT_SUFFIX}")
        return self.log

    def _save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_checkpoint(self.checkpoint(), path)
        logging.info(f"Wrote checkpoint {path}")


def train(manifest: DatasetManifest, run: "RunConfig", output_dir: Optional[Path] = None,
          resume: Optional[Path] = None, quiet: bool = False) -> Tuple[Checkpoint, TrainLog]:
    """Train on the manifest's train split; optionally resume from a checkpoint file."""
    output_dir = Path(output_dir or run.output_dir)
    samples, maps = load_training_samples(manifest, run)
    weights = run.train.resolve_class_weights(maps)
    logging.info(f"Class weights: {weights.values}")

    trainer = Trainer(run, samples, weights, output_dir=output_dir, quiet=quiet)
    if resume is not None:
        log_path = output_dir / "train_log.csv"
        trainer.restore(read_checkpoint(resume), TrainLog.read_csv(log_path) if log_path.exists() else None)
    trainer.fit()
    return trainer.checkpoint(), trainer.log
