"""JSON run profiles: data spec, model architectures, training settings.

Two profiles ship with the package: "paper" (the full 32x32 digit setup,
81-shift grid, 100k updates) and "desk" (16x16 synthetic motifs, 25-shift
grid, 5k updates; minutes on a laptop CPU). A profile path or one of those
names is accepted anywhere a config is expected.

All randomness in a run flows from the profile's single seed: data
generation, weight init, batch sampling, and augmentation each use a stream
derived from it by label, so overriding the seed moves everything at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .data import Dataset, SyntheticSpec, gen_synthetic, motif_bank
from .layers import Sequential, load_params
from .losses import LossWeights
from .models import build_model
from .rng import SplitMix64, derive_seed
from .training import TrainConfig
from .transforms import TransformGrid

PACKAGED_PROFILES = ("desk", "paper")


class ConfigError(ValueError):
    pass


@dataclass
class Profile:
    name: str
    seed: int
    grid: TransformGrid
    train: dict
    model_specs: dict[str, list[dict]]
    synthetic: dict | None
    source: str

    def train_config(self, mode: str, seed: int | None = None,
                     total_updates: int | None = None,
                     augment: bool | None = None) -> TrainConfig:
        t = self.train
        w = t.get("weights", {})
        return TrainConfig(
            mode=mode,
            learning_rate=t.get("learning_rate", 1.0e-3),
            batch_size=t.get("batch_size", 50),
            total_updates=(total_updates if total_updates is not None
                           else t.get("total_updates", 100_000)),
            weights=LossWeights(lambda_inv=w.get("inv", 1.0),
                                lambda_res=w.get("res", 1.0),
                                lambda_spa=w.get("spa", 0.01)),
            seed=self.seed if seed is None else seed,
            grid=self.grid,
            checkpoint_every=t.get("checkpoint_every", 10_000),
            log_every=t.get("log_every", 100),
            augment=(augment if augment is not None
                     else t.get("augment", False)),
        )

    def build(self, which: str, seed: int | None = None) -> Sequential:
        """Build a named model ('encoder'/'decoder'/'regressor') with its
        init stream derived from the run seed."""
        if which not in self.model_specs:
            raise ConfigError(f"profile has no model spec named {which!r}")
        base = self.seed if seed is None else seed
        rng = SplitMix64(derive_seed(base, f"init-{which}"))
        return build_model(self.model_specs[which], rng)

    def synthetic_dataset(self, split: str = "train",
                          seed: int | None = None) -> Dataset:
        if self.synthetic is None:
            raise ConfigError(
                f"profile {self.name!r} declares no synthetic data")
        s = self.synthetic
        base = self.seed if seed is None else seed
        if split == "train":
            spec = SyntheticSpec(
                canvas=tuple(s.get("canvas", [16, 16])),
                motifs=motif_bank(s.get("motifs", ["cross", "box", "diag"])),
                count_per_motif=s.get("count_per_motif", 100),
                seed=derive_seed(base, "data-train"),
                margin=s.get("margin", 0),
            )
        elif split == "eval":
            spec = SyntheticSpec(
                canvas=tuple(s.get("canvas", [16, 16])),
                motifs=motif_bank(s.get("motifs", ["cross", "box", "diag"])),
                count_per_motif=s.get("eval_count_per_motif", 20),
                seed=derive_seed(base, "data-eval"),
                margin=s.get("eval_margin", 0),
            )
        else:
            raise ConfigError(f"unknown synthetic split {split!r}")
        return gen_synthetic(spec)


def _require(d: dict, key: str, kind, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing field {key!r}")
    if not isinstance(d[key], kind):
        raise ConfigError(
            f"{where}: field {key!r} must be {kind.__name__}, "
            f"got {type(d[key]).__name__}")
    return d[key]


def load_profile(path_or_name: str | Path) -> Profile:
    """Load a profile by packaged name ('desk', 'paper') or file path."""
    name = str(path_or_name)
    if name in PACKAGED_PROFILES:
        text = (resources.files("tiae") / "profiles" / f"{name}.json"
                ).read_text(encoding="utf-8")
        source = f"builtin:{name}"
    else:
        p = Path(path_or_name)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        text = p.read_text(encoding="utf-8")
        source = str(p)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{source}: JSON parse error at line {e.lineno} column "
            f"{e.colno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object")

    seed = _require(raw, "seed", int, source)
    grid_pairs = _require(raw, "grid", list, source)
    try:
        grid = TransformGrid.from_pairs(grid_pairs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{source}: field 'grid': {e}") from None
    train = raw.get("train", {})
    if not isinstance(train, dict):
        raise ConfigError(f"{source}: field 'train' must be an object")
    models = _require(raw, "model", dict, source)
    for key, spec in models.items():
        if not isinstance(spec, list):
            raise ConfigError(
                f"{source}: field 'model.{key}' must be a layer list")
    synthetic = raw.get("synthetic")
    if synthetic is not None and not isinstance(synthetic, dict):
        raise ConfigError(f"{source}: field 'synthetic' must be an object")
    return Profile(
        name=raw.get("name", Path(name).stem),
        seed=seed,
        grid=grid,
        train=train,
        model_specs={k: list(v) for k, v in models.items()},
        synthetic=synthetic,
        source=source,
    )


def save_model_specs(out_dir: str | Path,
                     specs: dict[str, list[dict]]) -> None:
    """Record the architectures next to the checkpoints so a model
    directory is self-describing."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model_spec.json").write_text(
        json.dumps(specs, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model_dir(model_dir: str | Path,
                   which: list[str] | None = None) -> dict[str, Sequential]:
    """Rebuild models from a training output directory.

    Reads model_spec.json for the architectures and <name>.params for the
    weights; returns {name: model}.
    """
    d = Path(model_dir)
    spec_path = d / "model_spec.json"
    if not spec_path.exists():
        raise ConfigError(f"{d}: no model_spec.json (not a model directory?)")
    specs = json.loads(spec_path.read_text(encoding="utf-8"))
    names = which if which is not None else sorted(specs)
    out: dict[str, Sequential] = {}
    for name in names:
        if name not in specs:
            raise ConfigError(f"{d}: model_spec.json has no entry {name!r}")
        params_path = d / f"{name}.params"
        if not params_path.exists():
            raise ConfigError(f"{d}: missing {name}.params")
        model = build_model(specs[name], SplitMix64(0))
        load_params(model, params_path)
        out[name] = model
    return out
