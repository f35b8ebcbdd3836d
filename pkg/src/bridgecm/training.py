"""Consistency training loop over bridge-perturbed spectrogram pairs.

Each optimizer step draws one grid index n, builds adjacent states
x(t_n), x(t_{n+1}) from shared noise, and regresses the online model's
output at t_{n+1} onto the EMA target's output at t_n (squared l2,
mean-reduced). Gradients accumulate over a fixed number of micro-batches
before a single Adam update, after which the target weights take one EMA
step. The target branch never receives gradients.
"""

from __future__ import annotations

import base64
import copy
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .bridge import BridgeSchedule
from .model import ConsistencyModel, load_checkpoint, save_checkpoint


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    grad_accum: int = 4
    ema_decay: float = 0.999
    max_steps: int = 2000
    seed: int = 0
    loss_distance: str = "l2"
    lambda_weight: float = 1.0
    crop_frames: int = 64
    checkpoint_interval: int = 500
    early_stop: bool = False
    early_stop_window: int = 100
    early_stop_threshold: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ValueError("batch_size and grad_accum must be >= 1")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must be in [0, 1), got {self.ema_decay}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.loss_distance != "l2":
            raise ValueError(f"unsupported loss_distance {self.loss_distance!r}")
        if self.lambda_weight <= 0:
            raise ValueError(f"lambda_weight must be > 0, got {self.lambda_weight}")
        if self.crop_frames < 4:
            raise ValueError(f"crop_frames must be >= 4, got {self.crop_frames}")


@dataclass
class TrainRecord:
    """One log line per optimizer step."""

    k: int
    n: int
    t_n: float
    t_next: float
    loss: float
    ema_decay: float
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrainRecord":
        return cls(**json.loads(line))


def build_pair(
    x: torch.Tensor, y: torch.Tensor, n: int, grid: np.ndarray, z: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Adjacent bridge states at grid times t_n and t_{n+1} with shared noise.

    n is 1-based and must lie in [1, N-1]; both states reuse the same z:

        x(t) = y * t + x * (1 - t) + sqrt(t * (1 - t)) * z
    """
    n_grid = len(grid)
    if not 1 <= n <= n_grid - 1:
        raise ValueError(f"n must be in [1, {n_grid - 1}], got {n}")
    if x.shape != y.shape or x.shape != z.shape:
        raise ValueError(
            f"shape mismatch: x {tuple(x.shape)}, y {tuple(y.shape)}, z {tuple(z.shape)}"
        )
    t_n = float(grid[n - 1])
    t_n1 = float(grid[n])
    x_n = y * t_n + x * (1.0 - t_n) + math.sqrt(t_n * (1.0 - t_n)) * z
    x_n1 = y * t_n1 + x * (1.0 - t_n1) + math.sqrt(t_n1 * (1.0 - t_n1)) * z
    return x_n, x_n1


def consistency_loss(
    model: ConsistencyModel,
    target_model: ConsistencyModel,
    x_n: torch.Tensor,
    x_n1: torch.Tensor,
    y: torch.Tensor,
    t_n: float,
    t_n1: float,
    weight: float = 1.0,
) -> torch.Tensor:
    """Squared l2 between online output at t_{n+1} and target output at t_n.

    Mean-reduced over batch and elements; the target branch is evaluated
    without gradients.
    """
    if x_n.shape != x_n1.shape or x_n.shape != y.shape:
        raise ValueError("pair/conditioning shape mismatch")
    online = model(x_n1, y, t_n1)
    with torch.no_grad():
        reference = target_model(x_n, y, t_n)
    return weight * torch.mean((online - reference) ** 2)


def ema_update(
    target_model: ConsistencyModel, model: ConsistencyModel, decay: float
) -> None:
    """target <- decay * target + (1 - decay) * model, outside the autograd graph."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must be in [0, 1], got {decay}")
    t_params = dict(target_model.named_parameters())
    m_params = dict(model.named_parameters())
    if t_params.keys() != m_params.keys():
        raise ValueError("target and online parameter manifests differ")
    with torch.no_grad():
        for name, pt in t_params.items():
            pt.mul_(decay).add_(m_params[name], alpha=1.0 - decay)


class Trainer:
    """Stateful training loop: data sampling, optimizer, EMA, checkpoints.

    All randomness (grid index, batch indices, crop offsets, bridge noise)
    derives from TrainConfig.seed, so two runs with the same seed and data
    produce identical records.
    """

    def __init__(
        self,
        model: ConsistencyModel,
        schedule: BridgeSchedule,
        config: TrainConfig,
        pairs: list[tuple[torch.Tensor, torch.Tensor]],
        target_model: ConsistencyModel | None = None,
        log_path: str | Path | None = None,
        checkpoint_dir: str | Path | None = None,
        meta_extra: dict | None = None,
    ):
        if not pairs:
            raise ValueError("training requires at least one (clean, noisy) pair")
        self.model = model
        self.meta_extra = dict(meta_extra or {})
        if target_model is None:
            # k = 0 contract: the target starts as an exact copy
            target_model = copy.deepcopy(model)
        for p in target_model.parameters():
            p.requires_grad_(False)
        self.target = target_model
        self.schedule = schedule
        self.config = config
        self.pairs = pairs
        self.k = 0
        self.log_path = Path(log_path) if log_path else None
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self._loss_history: list[float] = []

        ss = np.random.SeedSequence([config.seed, 1])
        self.rng = np.random.default_rng(ss)
        self.torch_gen = torch.Generator().manual_seed(
            int(np.random.SeedSequence([config.seed, 2]).generate_state(1)[0])
        )
        self.opt = torch.optim.Adam(
            model.parameters(), lr=config.learning_rate,
            betas=(0.9, 0.999), eps=1e-8,
        )

    def sample_n(self) -> int:
        """Uniform grid index on [1, N-1]."""
        return int(self.rng.integers(1, self.schedule.n_steps))

    def _sample_batch(self) -> tuple[torch.Tensor, torch.Tensor]:
        crop = self.config.crop_frames
        idx = self.rng.integers(0, len(self.pairs), size=self.config.batch_size)
        xs, ys = [], []
        for i in idx:
            x, y = self.pairs[int(i)]
            n_frames = x.shape[-1]
            if n_frames > crop:
                off = int(self.rng.integers(0, n_frames - crop + 1))
                x, y = x[..., off : off + crop], y[..., off : off + crop]
            xs.append(x)
            ys.append(y)
        return torch.stack(xs), torch.stack(ys)

    def train_step(self) -> TrainRecord:
        """One optimizer update: accumulate, step Adam, EMA, advance k."""
        cfg = self.config
        start = time.perf_counter()
        n = self.sample_n()
        grid = self.schedule.grid
        t_n, t_n1 = float(grid[n - 1]), float(grid[n])

        self.opt.zero_grad()
        loss_sum = 0.0
        for micro in range(cfg.grad_accum):
            xb, yb = self._sample_batch()
            z = torch.empty(xb.shape, dtype=xb.dtype).normal_(generator=self.torch_gen)
            x_n, x_n1 = build_pair(xb, yb, n, grid, z)
            loss = consistency_loss(
                self.model, self.target, x_n, x_n1, yb, t_n, t_n1, cfg.lambda_weight
            )
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at step {self.k}, micro-batch {micro}"
                )
            (loss / cfg.grad_accum).backward()
            loss_sum += float(loss.detach())
        self.opt.step()
        ema_update(self.target, self.model, cfg.ema_decay)
        self.k += 1

        wall_ms = (time.perf_counter() - start) * 1000.0
        rec = TrainRecord(
            k=self.k, n=n, t_n=t_n, t_next=t_n1,
            loss=loss_sum / cfg.grad_accum,
            ema_decay=cfg.ema_decay, wall_ms=wall_ms,
        )
        self._loss_history.append(rec.loss)
        return rec

    def _should_early_stop(self) -> bool:
        cfg = self.config
        w = cfg.early_stop_window
        if not cfg.early_stop or len(self._loss_history) < 2 * w:
            return False
        recent = self._loss_history[-w:]
        previous = self._loss_history[-2 * w : -w]
        ma_now = sum(recent) / w
        ma_prev = sum(previous) / w
        if ma_prev <= 0:
            return False
        return (ma_prev - ma_now) / ma_prev < cfg.early_stop_threshold

    def run(self, max_steps: int | None = None) -> list[TrainRecord]:
        """Train until max_steps (or early stop), logging and checkpointing."""
        cfg = self.config
        total = cfg.max_steps if max_steps is None else max_steps
        records: list[TrainRecord] = []
        log_f = open(self.log_path, "a") if self.log_path else None
        try:
            if self.k == 0 and total == 0 and self.checkpoint_dir:
                self.save(self.checkpoint_dir / "step_000000.ckpt")
            while self.k < total:
                rec = self.train_step()
                records.append(rec)
                if log_f:
                    log_f.write(rec.to_json() + "\n")
                    log_f.flush()
                if self.checkpoint_dir and (
                    self.k % cfg.checkpoint_interval == 0 or self.k == total
                ):
                    self.save(self.checkpoint_dir / f"step_{self.k:06d}.ckpt")
                if self._should_early_stop():
                    break
        finally:
            if log_f:
                log_f.close()
        return records

    # -- checkpointing ------------------------------------------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        extra: dict[str, torch.Tensor] = {}
        adam_step = 0
        for name, p in self.model.named_parameters():
            state = self.opt.state.get(p)
            if state:
                extra[f"opt/exp_avg/{name}"] = state["exp_avg"]
                extra[f"opt/exp_avg_sq/{name}"] = state["exp_avg_sq"]
                adam_step = int(state["step"].item()) if isinstance(
                    state["step"], torch.Tensor
                ) else int(state["step"])
        meta = {
            "step": self.k,
            "adam_step": adam_step,
            "train_config": asdict(self.config),
            "schedule": {
                "epsilon": self.schedule.epsilon,
                "t_max": self.schedule.t_max,
                "rho": self.schedule.rho,
                "n_steps": self.schedule.n_steps,
            },
            "torch_rng": base64.b64encode(
                self.torch_gen.get_state().numpy().tobytes()
            ).decode("ascii"),
            "np_rng": _np_state_to_json(self.rng),
            "extra": self.meta_extra,
        }
        save_checkpoint(path, self.model, self.target, meta=meta, extra_tensors=extra)

    @classmethod
    def restore(
        cls,
        path: str | Path,
        pairs: list[tuple[torch.Tensor, torch.Tensor]],
        log_path: str | Path | None = None,
        checkpoint_dir: str | Path | None = None,
        config: TrainConfig | None = None,
    ) -> "Trainer":
        """Rebuild a trainer (weights, optimizer moments, RNG, counter)."""
        model, target, meta, extras = load_checkpoint(path)
        schedule = BridgeSchedule(**meta["schedule"])
        cfg = config if config is not None else TrainConfig(**meta["train_config"])
        trainer = cls(
            model, schedule, cfg, pairs, target_model=target,
            log_path=log_path, checkpoint_dir=checkpoint_dir,
            meta_extra=meta.get("extra"),
        )
        trainer.k = int(meta["step"])

        named = dict(model.named_parameters())
        if any(k.startswith("opt/exp_avg/") for k in extras):
            state: dict[int, dict] = {}
            fresh_sd = trainer.opt.state_dict()
            param_ids = fresh_sd["param_groups"][0]["params"]
            for i, (name, _) in enumerate(model.named_parameters()):
                state[param_ids[i]] = {
                    "step": torch.tensor(float(meta.get("adam_step", 0))),
                    "exp_avg": torch.from_numpy(
                        extras[f"opt/exp_avg/{name}"].copy()
                    ).to(named[name].dtype),
                    "exp_avg_sq": torch.from_numpy(
                        extras[f"opt/exp_avg_sq/{name}"].copy()
                    ).to(named[name].dtype),
                }
            fresh_sd["state"] = state
            trainer.opt.load_state_dict(fresh_sd)

        if "torch_rng" in meta:
            raw = base64.b64decode(meta["torch_rng"])
            trainer.torch_gen.set_state(
                torch.from_numpy(np.frombuffer(raw, dtype=np.uint8).copy())
            )
        if "np_rng" in meta:
            trainer.rng.bit_generator.state = _np_state_from_json(meta["np_rng"])
        return trainer


def _np_state_to_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": {k: str(v) for k, v in st["state"].items()},
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _np_state_from_json(doc: dict) -> dict:
    return {
        "bit_generator": doc["bit_generator"],
        "state": {k: int(v) for k, v in doc["state"].items()},
        "has_uint32": doc["has_uint32"],
        "uinteger": doc["uinteger"],
    }
