"""SGD training loops with seeded reproducibility and checkpointing.

Three modes: "ordinary" (plain reconstruction, optionally with random-shift
augmentation for the baseline), "invariant" (the full weighted cost), and
"regressor" (shift-parameter inference against a frozen autoencoder).
Sampling is uniform with replacement. Batch sampling and augmentation use
independent derived PRNG streams, so augmentation with an identity-only grid
reproduces unaugmented training bit for bit under the same seed.

A run is deterministic given (seed, config, data): two identical runs write
byte-identical loss CSVs and checkpoints, and resuming from a checkpoint
continues the exact trajectory of an uninterrupted run.

Divergence policy: the first non-finite value aborts with the step and the
cost component responsible; nothing is skipped or patched over.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteValueError, backward
from .data import Dataset
from .layers import Sequential, load_params, save_params
from .losses import (
    LossBreakdown,
    LossWeights,
    cost_ordinary,
    cost_param_inference,
    cost_total,
    param_inference_targets,
)
from .rng import SplitMix64, derive_seed
from .transforms import TransformGrid, apply_shift, paper_grid

MODES = ("ordinary", "invariant", "regressor")


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, component: str):
        super().__init__(
            f"non-finite loss at step {step} (component: {component})")
        self.step = step
        self.component = component


@dataclass
class TrainConfig:
    mode: str = "invariant"
    learning_rate: float = 1.0e-3
    batch_size: int = 50
    total_updates: int = 100_000
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    grid: TransformGrid = field(default_factory=paper_grid)
    checkpoint_every: int = 10_000
    log_every: int = 100
    augment: bool = False   # ordinary mode: replace samples by random shifts
    cotrain_regressor: bool = False  # invariant mode: update a regressor too

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("learning_rate", "batch_size", "total_updates",
                     "checkpoint_every", "log_every"):
            val = getattr(self, name)
            if name == "total_updates":
                if val < 0:
                    raise ValueError(f"{name} must be >= 0")
            elif val <= 0:
                raise ValueError(f"{name} must be positive")

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "total_updates": self.total_updates,
            "weights": {"inv": self.weights.lambda_inv,
                        "res": self.weights.lambda_res,
                        "spa": self.weights.lambda_spa},
            "seed": self.seed,
            "grid": self.grid.to_pairs(),
            "checkpoint_every": self.checkpoint_every,
            "log_every": self.log_every,
            "augment": self.augment,
            "cotrain_regressor": self.cotrain_regressor,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "TrainConfig":
        w = d.get("weights", {})
        return TrainConfig(
            mode=d.get("mode", "invariant"),
            learning_rate=d.get("learning_rate", 1.0e-3),
            batch_size=d.get("batch_size", 50),
            total_updates=d.get("total_updates", 100_000),
            weights=LossWeights(lambda_inv=w.get("inv", 1.0),
                                lambda_res=w.get("res", 1.0),
                                lambda_spa=w.get("spa", 0.01)),
            seed=d.get("seed", 0),
            grid=(TransformGrid.from_pairs(d["grid"])
                  if "grid" in d else paper_grid()),
            checkpoint_every=d.get("checkpoint_every", 10_000),
            log_every=d.get("log_every", 100),
            augment=d.get("augment", False),
            cotrain_regressor=d.get("cotrain_regressor", False),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass
class TrainResult:
    steps: list[int]
    breakdowns: list[LossBreakdown]
    final_step: int

    def totals(self) -> np.ndarray:
        return np.array([b.total for b in self.breakdowns])


def _sample_batch(data: Dataset, cfg: TrainConfig, sample_rng: SplitMix64,
                  aug_rng: SplitMix64, augment: bool) -> np.ndarray:
    n = len(data)
    idx = [sample_rng.randint(n) for _ in range(cfg.batch_size)]
    batch = data.images[idx].copy()
    if augment:
        for i in range(cfg.batch_size):
            p = cfg.grid[aug_rng.randint(len(cfg.grid))]
            batch[i] = apply_shift(batch[i], p)
    return batch


def _sgd_step(params, grads, lr: float, step: int) -> None:
    for p in params:
        g = grads[p]
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(step, "gradients")
        p.value -= lr * g


class _CheckpointWriter:
    def __init__(self, out_dir: Path | None, cfg: TrainConfig):
        self.out_dir = out_dir
        self.cfg = cfg

    def write(self, subdir: str, models: dict[str, Sequential], step: int,
              rng_states: dict[str, int]) -> None:
        if self.out_dir is None:
            return
        target = self.out_dir / subdir if subdir else self.out_dir
        target.mkdir(parents=True, exist_ok=True)
        for name, model in models.items():
            save_params(model, target / f"{name}.params")
        state = {"step": step, "config_hash": self.cfg.config_hash(),
                 "rng": rng_states}
        (target / "state.json").write_text(
            json.dumps(state, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8")


def load_checkpoint(checkpoint_dir: str | Path,
                    models: dict[str, Sequential],
                    expected_config_hash: str | None = None,
                    ) -> tuple[int, dict[str, int]]:
    """Load parameters and trainer state; returns (step, rng states)."""
    cdir = Path(checkpoint_dir)
    state = json.loads((cdir / "state.json").read_text(encoding="utf-8"))
    if (expected_config_hash is not None
            and state["config_hash"] != expected_config_hash):
        raise ValueError(
            f"{cdir}: checkpoint was written under a different config")
    for name, model in models.items():
        load_params(model, cdir / f"{name}.params")
    return int(state["step"]), {k: int(v) for k, v in state["rng"].items()}


class _LossCsv:
    def __init__(self, path: Path | None, header, append: bool):
        self.file = None
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        mode = "a" if (append and path.exists()) else "w"
        self.file = open(path, mode, encoding="utf-8", newline="")
        self.writer = csv.writer(self.file, lineterminator="\n")
        if mode == "w":
            self.writer.writerow(header)

    def row(self, values) -> None:
        if self.file is None:
            return
        self.writer.writerow(
            [repr(v) if isinstance(v, float) else v for v in values])
        self.file.flush()

    def close(self) -> None:
        if self.file is not None:
            self.file.close()
            self.file = None


def train(enc: Sequential, dec: Sequential, data: Dataset, cfg: TrainConfig,
          out_dir: str | Path | None = None,
          reg: Sequential | None = None,
          resume_from: str | Path | None = None) -> TrainResult:
    """SGD on the ordinary or invariant objective; models update in place.

    Ordinary mode logs its cost in the c_res column (weights (0, 1, 0) and an
    identity-only grid make the invariant objective collapse to it). When
    `cfg.cotrain_regressor` is set in invariant mode, `reg` is updated each
    step on shift targets frozen from the current autoencoder.
    """
    if cfg.mode not in ("ordinary", "invariant"):
        raise ValueError(f"train() handles ordinary/invariant, not {cfg.mode}")
    if cfg.cotrain_regressor and reg is None:
        raise ValueError("cotrain_regressor set but no regressor given")
    if len(data) == 0 and cfg.total_updates > 0:
        raise ValueError("cannot train on an empty dataset")

    models = {"encoder": enc, "decoder": dec}
    if cfg.cotrain_regressor:
        models["regressor"] = reg
    params = enc.param_vars() + dec.param_vars()

    sample_rng = SplitMix64(derive_seed(cfg.seed, "sample"))
    aug_rng = SplitMix64(derive_seed(cfg.seed, "augment"))
    start_step = 0
    if resume_from is not None:
        start_step, states = load_checkpoint(resume_from, models,
                                             cfg.config_hash())
        sample_rng.state = states["sample"]
        aug_rng.state = states["aug"]

    out = Path(out_dir) if out_dir is not None else None
    ckpt = _CheckpointWriter(out, cfg)
    log_csv = _LossCsv(out / "loss.csv" if out else None,
                       LossBreakdown.CSV_HEADER, append=start_step > 0)
    augment = cfg.augment and cfg.mode == "ordinary"

    steps: list[int] = []
    breakdowns: list[LossBreakdown] = []
    try:
        for step in range(start_step + 1, cfg.total_updates + 1):
            batch = _sample_batch(data, cfg, sample_rng, aug_rng, augment)
            try:
                if cfg.mode == "ordinary":
                    node = cost_ordinary(enc, dec, batch)
                    val = float(node.value)
                    bd = LossBreakdown(c_inv=0.0, c_res=val, c_spa=0.0,
                                       total=val)
                else:
                    node, bd = cost_total(enc, dec, batch, cfg.grid,
                                          cfg.weights)
                grads = backward(node)
            except NonFiniteValueError as e:
                raise TrainingDivergedError(step, e.op) from None
            _sgd_step(params, grads, cfg.learning_rate, step)

            if cfg.cotrain_regressor:
                try:
                    reg_node = cost_param_inference(reg, enc, dec, batch,
                                                    cfg.grid)
                    reg_grads = backward(reg_node)
                except NonFiniteValueError as e:
                    raise TrainingDivergedError(step, f"c_par:{e.op}") \
                        from None
                _sgd_step(reg.param_vars(), reg_grads, cfg.learning_rate,
                          step)

            steps.append(step)
            breakdowns.append(bd)
            if step % cfg.log_every == 0 or step == cfg.total_updates:
                log_csv.row(bd.csv_row(step))
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                ckpt.write(f"checkpoints/step_{step:07d}", models, step,
                           {"sample": sample_rng.state, "aug": aug_rng.state})
        final = max(start_step, cfg.total_updates)
        ckpt.write("", models, final,
                   {"sample": sample_rng.state, "aug": aug_rng.state})
    finally:
        log_csv.close()
    return TrainResult(steps=steps, breakdowns=breakdowns,
                       final_step=max(start_step, cfg.total_updates))


def train_ordinary_with_augmentation(enc: Sequential, dec: Sequential,
                                     data: Dataset, cfg: TrainConfig,
                                     out_dir: str | Path | None = None,
                                     ) -> TrainResult:
    """The baseline of the experiments: plain cost on randomly shifted
    samples (each sampled image is replaced online by one of its grid
    shifts, drawn uniformly)."""
    return train(enc, dec, data, cfg.with_(mode="ordinary", augment=True),
                 out_dir=out_dir)


@dataclass
class RegressorResult:
    steps: list[int]
    losses: list[float]
    holdout_mae: float
    final_step: int


def train_regressor(reg: Sequential, enc: Sequential, dec: Sequential,
                    data: Dataset, cfg: TrainConfig,
                    out_dir: str | Path | None = None,
                    holdout: Dataset | None = None,
                    augment: bool = True) -> RegressorResult:
    """SGD on the shift-inference cost with the autoencoder frozen.

    Sampled images are (by default) replaced by random grid shifts so the
    regressor sees the displacement range it must cover. Targets come from
    the brute-force grid scan each step. Returns the mean absolute error of
    raw predictions on a held-out split (the last 10% of `data` when no
    explicit holdout is given).
    """
    if len(data) == 0 and cfg.total_updates > 0:
        raise ValueError("cannot train on an empty dataset")
    if holdout is None and len(data) > 0:
        split = max(1, len(data) // 10)
        holdout = Dataset(images=data.images[-split:],
                          labels=(data.labels[-split:]
                                  if data.labels else None))

    sample_rng = SplitMix64(derive_seed(cfg.seed, "sample"))
    aug_rng = SplitMix64(derive_seed(cfg.seed, "augment"))
    out = Path(out_dir) if out_dir is not None else None
    ckpt = _CheckpointWriter(out, cfg)
    log_csv = _LossCsv(out / "loss.csv" if out else None,
                       ("step", "c_par"), append=False)

    steps: list[int] = []
    losses: list[float] = []
    try:
        for step in range(1, cfg.total_updates + 1):
            batch = _sample_batch(data, cfg, sample_rng, aug_rng, augment)
            try:
                node = cost_param_inference(reg, enc, dec, batch, cfg.grid)
                grads = backward(node)
            except NonFiniteValueError as e:
                raise TrainingDivergedError(step, f"c_par:{e.op}") from None
            _sgd_step(reg.param_vars(), grads, cfg.learning_rate, step)
            steps.append(step)
            losses.append(float(node.value))
            if step % cfg.log_every == 0 or step == cfg.total_updates:
                log_csv.row([step, float(node.value)])
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                ckpt.write(f"checkpoints/step_{step:07d}",
                           {"regressor": reg}, step,
                           {"sample": sample_rng.state, "aug": aug_rng.state})
        ckpt.write("", {"regressor": reg}, cfg.total_updates,
                   {"sample": sample_rng.state, "aug": aug_rng.state})
    finally:
        log_csv.close()

    holdout_mae = float("nan")
    if holdout is not None and len(holdout) > 0:
        targets = param_inference_targets(enc, dec, holdout.images, cfg.grid)
        preds = reg.predict(holdout.images)
        holdout_mae = float(np.mean(np.abs(preds - targets)))
    return RegressorResult(steps=steps, losses=losses,
                           holdout_mae=holdout_mae,
                           final_step=cfg.total_updates)
