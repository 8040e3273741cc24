"""Joint prediction+reconstruction training with early stopping.

Each mini-batch runs the full forward pass, combines the two RMSE losses by
the scheduled weights, and takes one Adam step.  The learning rate decays
per epoch; training stops when the validation loss has not improved for
``patience`` consecutive epochs, and the best-validation parameters are
restored before returning.
"""

from dataclasses import dataclass, field, fields, asdict
from typing import List, Optional, Tuple

import numpy as np

from canet.data import WindowedDataset
from canet.model import ABLATIONS, CanModel, ModelConfig, can_forward
from canet.optim import Adam
from canet.tensor import Tensor, backward, sqrt


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class ConfigError(ValueError):
    """Bad training-configuration key or value."""


@dataclass
class TrainConfig:
    """Model and training knobs; mirrored 1:1 by the key=value config file."""

    window: int = 5
    layers: int = 3
    heads: int = 8
    model_dim: int = 32
    embed_dim: int = 10
    neighbor_k: int = 10
    retain: float = 0.8
    local_dim: int = 0                 # 0 picks model_dim
    adjacency_norm: str = "row"
    learned_positions: bool = False
    ablation: str = "none"

    batch_size: int = 32
    lr: float = 1e-4
    lr_decay: float = 0.95
    max_epochs: int = 100
    patience: int = 5
    val_fraction: float = 0.1
    phi_start: float = 0.2             # prediction weight for early epochs
    phi_late: float = 0.8              # prediction weight after the switch
    switch_epoch: int = 4              # last epoch on the early weights
    seed: int = 0

    score_sensors: int = 2             # deviations aggregated per timestamp
    calibration: str = "self"
    can_plus: bool = False
    downsample: int = 1

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if not 0.0 <= self.phi_start <= 1.0 or not 0.0 <= self.phi_late <= 1.0:
            raise ConfigError("loss weights must lie in [0, 1]")
        if self.calibration not in ("self", "train"):
            raise ConfigError(f"calibration must be 'self' or 'train', got {self.calibration!r}")

    def loss_weights(self, epoch: int) -> Tuple[float, float]:
        """(phi, psi) for a 1-based epoch; phi + psi = 1 always."""
        phi = self.phi_start if epoch <= self.switch_epoch else self.phi_late
        return phi, 1.0 - phi

    def model_config(self, n_sensors: int) -> ModelConfig:
        return ModelConfig(
            n_sensors=n_sensors,
            window=self.window,
            layers=self.layers,
            heads=self.heads,
            model_dim=self.model_dim,
            embed_dim=self.embed_dim,
            neighbor_k=self.neighbor_k,
            retain=self.retain,
            local_dim=self.local_dim or None,
            adjacency_norm=self.adjacency_norm,
            learned_positions=self.learned_positions,
            ablation=self.ablation,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        """Build from string-valued key=value pairs; unknown keys fail with
        the list of valid ones."""
        valid = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in valid:
                raise ConfigError(
                    f"unknown config key {key!r}; valid keys: {', '.join(sorted(valid))}")
            kwargs[key] = _coerce(raw, valid[key], key)
        return cls(**kwargs)


def _coerce(raw, annotation, key):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if annotation in (bool, "bool"):
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key!r} expects true/false, got {raw!r}")
    if annotation in (int, "int"):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"config key {key!r} expects an integer, got {raw!r}") from None
    if annotation in (float, "float"):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"config key {key!r} expects a number, got {raw!r}") from None
    return text


def prediction_loss(y_pred: Tensor, target: Tensor) -> Tensor:
    """RMSE over sensors; extra leading axes average their per-window RMSEs."""
    diff = y_pred - target
    per_window = sqrt((diff * diff).mean(axis=-1))
    return per_window.mean()


def reconstruction_loss(y_rec: Tensor, history: Tensor) -> Tensor:
    """RMSE over all sensor/timestamp cells of the window."""
    diff = y_rec - history
    per_window = sqrt((diff * diff).mean(axis=(-2, -1)))
    return per_window.mean()


def joint_loss(l_pre: Tensor, l_rec: Tensor, phi: float, psi: float) -> Tensor:
    if phi < 0 or psi < 0 or abs(phi + psi - 1.0) > 1e-9:
        raise ValueError(f"loss weights must be non-negative and sum to 1, got {phi}, {psi}")
    return phi * l_pre + psi * l_rec


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch; returns True when training should stop."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainLog:
    epochs: List[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = np.inf
    stopped_early: bool = False
    n_parameters: int = 0


def train(dataset: WindowedDataset, cfg: TrainConfig) -> Tuple[CanModel, TrainLog]:
    """Train on a windowed series; the tail ``val_fraction`` of windows is
    held out for early stopping and best-checkpoint selection."""
    if len(dataset) < 2:
        raise ValueError(f"dataset has {len(dataset)} windows; need at least 2")
    if dataset.window != cfg.window:
        raise ValueError(
            f"dataset window {dataset.window} does not match config window {cfg.window}")

    n_windows = len(dataset)
    n_val = max(1, int(round(cfg.val_fraction * n_windows)))
    n_train = n_windows - n_val
    if n_train < 1:
        raise ValueError("validation split leaves no training windows")
    val_indices = np.arange(n_train, n_windows)

    model = CanModel(cfg.model_config(dataset.n_sensors), seed=cfg.seed)
    optimizer = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopper(cfg.patience)
    log = TrainLog(n_parameters=model.num_parameters())
    best_state: Optional[dict] = None

    for epoch in range(1, cfg.max_epochs + 1):
        phi, psi = cfg.loss_weights(epoch)
        lr_now = optimizer.lr
        order = rng.permutation(n_train)

        total = 0.0
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss = _batch_loss(model, dataset, batch, phi, psi)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(
                    f"non-finite training loss {value} at epoch {epoch}, "
                    f"batch starting {start}")
            optimizer.zero_grad()
            backward(loss)
            optimizer.step()
            total += value * len(batch)
        train_loss = total / n_train

        val_loss = _batch_loss(model, dataset, val_indices, phi, psi).item()
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")

        log.epochs.append({"epoch": epoch, "train_loss": train_loss,
                           "val_loss": val_loss, "phi": phi, "lr": lr_now})
        improved = val_loss < stopper.best
        should_stop = stopper.update(epoch, val_loss)
        if improved:
            best_state = {name: p.data.copy() for name, p in model.named_parameters()}
        optimizer.lr *= cfg.lr_decay
        if should_stop:
            log.stopped_early = True
            break

    log.best_epoch = stopper.best_epoch
    log.best_val_loss = stopper.best
    if best_state is not None:
        for name, p in model.named_parameters():
            p.data = best_state[name]
    return model, log


def _batch_loss(model: CanModel, dataset: WindowedDataset, indices,
                phi: float, psi: float) -> Tensor:
    hist, targets = dataset.batch(indices)
    out = can_forward(Tensor(hist), model)
    l_pre = prediction_loss(out.y_pred, Tensor(targets))
    if out.y_rec is None:
        return l_pre
    l_rec = reconstruction_loss(out.y_rec, Tensor(hist))
    return joint_loss(l_pre, l_rec, phi, psi)
