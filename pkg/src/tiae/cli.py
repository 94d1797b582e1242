"""Command line interface: train, encode, decode, eval, infer-shift.

Heavy imports happen inside command handlers so the TIAE_THREADS cap (an
upper bound on BLAS threads) can be applied before numpy loads. Outputs go
to fresh files/directories; existing ones are refused without --force.

Exit codes: 0 success, 1 runtime/data error, 2 config or usage error,
3 training diverged (non-finite loss).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

SYNTHETIC_TOKENS = ("synthetic", "synthetic-eval")


def _apply_thread_cap() -> None:
    cap = os.environ.get("TIAE_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = cap


def _refuse_existing(path: Path, force: bool, kind: str) -> None:
    if force:
        return
    if kind == "file" and path.exists():
        raise FileExistsError(f"{path} exists; pass --force to overwrite")
    if kind == "dir" and path.exists() and any(path.iterdir()):
        raise FileExistsError(
            f"{path} is not empty; pass --force to overwrite")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_dataset(token: str, labels: str | None, profile, seed: int):
    """Resolve --data: a synthetic split token or an IDX image path."""
    from .config import ConfigError
    from .data import load_idx

    if token in SYNTHETIC_TOKENS:
        if profile is None:
            raise ConfigError(
                f"--data {token} needs --config naming a profile with a "
                "synthetic section")
        split = "train" if token == "synthetic" else "eval"
        ds = profile.synthetic_dataset(split, seed=seed)
        digest = hashlib.sha256(ds.images.tobytes()).hexdigest()
        meta = {"kind": token, "seed": seed, "sha256": digest}
        return ds, meta
    images_path = Path(token)
    if not images_path.exists():
        raise FileNotFoundError(f"data file not found: {images_path}")
    meta = {"kind": "idx", "images": str(images_path),
            "images_sha256": _sha256_file(images_path)}
    labels_path = None
    if labels:
        labels_path = Path(labels)
        if not labels_path.exists():
            raise FileNotFoundError(f"labels file not found: {labels_path}")
        meta["labels"] = str(labels_path)
        meta["labels_sha256"] = _sha256_file(labels_path)
    return load_idx(images_path, labels_path), meta


def _write_manifest(out: Path, args, cfg, data_meta: dict) -> None:
    from . import __version__
    manifest = {
        "tool": "tiae",
        "version": __version__,
        "command": " ".join(sys.argv) if sys.argv else "",
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config": cfg.to_json_dict(),
        "config_source": getattr(args, "config", None),
        "data": data_meta,
        "outputs": {"loss_csv": "loss.csv", "params": "<name>.params",
                    "checkpoints": "checkpoints/"},
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")


def cmd_train(args) -> int:
    from .config import load_profile, load_model_dir, save_model_specs
    from .training import train, train_regressor

    profile = load_profile(args.config)
    seed = args.seed if args.seed is not None else profile.seed
    augment = {"yes": True, "no": False, "auto": None}[args.augment]
    if augment is None:
        augment = args.mode == "ordinary"
    cfg = profile.train_config(
        mode=args.mode, seed=seed, total_updates=args.total_updates,
        augment=augment)
    data, data_meta = _load_dataset(args.data, args.labels, profile, seed)

    out = Path(args.out)
    _refuse_existing(out, args.force, "dir")
    _write_manifest(out, args, cfg, data_meta)

    if args.mode == "regressor":
        if not args.model:
            raise ValueError(
                "--mode regressor needs --model DIR (trained autoencoder)")
        ae = load_model_dir(args.model, ["encoder", "decoder"])
        reg = profile.build("regressor", seed)
        save_model_specs(out, {"regressor": profile.model_specs["regressor"]})
        result = train_regressor(reg, ae["encoder"], ae["decoder"], data,
                                 cfg, out_dir=out)
        print(f"trained regressor for {result.final_step} updates; "
              f"holdout shift MAE {result.holdout_mae:.4f} px")
    else:
        enc = profile.build("encoder", seed)
        dec = profile.build("decoder", seed)
        save_model_specs(out, {"encoder": profile.model_specs["encoder"],
                               "decoder": profile.model_specs["decoder"]})
        result = train(enc, dec, data, cfg, out_dir=out)
        last = result.breakdowns[-1].total if result.breakdowns else 0.0
        print(f"trained {args.mode} autoencoder for {result.final_step} "
              f"updates; final batch cost {last:.6g}")
    return EXIT_OK


def cmd_encode(args) -> int:
    from .config import load_profile, load_model_dir
    from .data import export_csv

    profile = load_profile(args.config) if args.config else None
    enc = load_model_dir(args.model, ["encoder"])["encoder"]
    seed = args.seed if args.seed is not None else (
        profile.seed if profile else 0)
    data, _ = _load_dataset(args.data, args.labels, profile, seed)
    out = Path(args.out)
    _refuse_existing(out, args.force, "file")
    desc = enc.predict(data.images, chunk=256) if len(data) else None
    dim = desc.shape[1] if desc is not None else _descriptor_dim(enc)
    header = ["id"] + [f"d{i}" for i in range(dim)]
    rows = []
    for i in range(len(data)):
        rows.append([i] + [f"{v:.17g}" for v in desc[i]])
    export_csv(rows, out, header)
    print(f"wrote {len(rows)} descriptor rows to {out}")
    return EXIT_OK


def _descriptor_dim(enc) -> int:
    from .layers import Dense
    for layer in reversed(enc.layers):
        if isinstance(layer, Dense):
            return layer.out_dim
    raise ValueError("encoder has no dense layers; descriptor dim unknown")


def cmd_decode(args) -> int:
    import csv

    import numpy as np

    from .config import load_model_dir
    from .evaluation import write_image
    from .layers import Dense

    dec = load_model_dir(args.model, ["decoder"])["decoder"]
    in_dim = next(layer.in_dim for layer in dec.layers
                  if isinstance(layer, Dense))
    out = Path(args.out)
    _refuse_existing(out, args.force, "dir")
    out.mkdir(parents=True, exist_ok=True)

    with open(args.descriptors, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or not header or header[0] != "id":
            raise ValueError(
                f"{args.descriptors}: missing descriptor CSV header")
        count = 0
        for lineno, row in enumerate(reader, start=2):
            if len(row) != in_dim + 1:
                raise ValueError(
                    f"{args.descriptors}: row {lineno}: expected "
                    f"{in_dim + 1} fields, found {len(row)}")
            try:
                item_id = row[0]
                vec = np.array([float(v) for v in row[1:]])
            except ValueError:
                raise ValueError(
                    f"{args.descriptors}: row {lineno}: non-numeric value"
                ) from None
            img = dec.predict(vec[None])[0]
            write_image(img, out, f"item_{item_id}")
            count += 1
    print(f"decoded {count} descriptors into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from .config import load_profile, load_model_dir
    from .data import export_csv
    from .evaluation import (
        invariance_report,
        projection_plane,
        project,
        restoration_gallery,
        shift_inference_table,
    )

    profile = load_profile(args.config)
    seed = args.seed if args.seed is not None else profile.seed
    grid = profile.grid
    data, _ = _load_dataset(args.data, args.labels, profile, seed)
    if data.labels is None:
        raise ValueError("eval needs labeled data for between-class stats")
    out = Path(args.out)
    _refuse_existing(out, args.force, "dir")
    out.mkdir(parents=True, exist_ok=True)

    summary: dict = {}
    model = load_model_dir(args.model, ["encoder", "decoder"])
    report = invariance_report(model["encoder"].predict,
                               model["decoder"].predict, data, grid)
    summary["model"] = report.to_json_dict()
    export_csv(
        [[i, data.labels[i], report.per_item_within_variance[i],
          report.per_item_restored_pairwise_l2[i]]
         for i in range(len(data))],
        out / "invariance_model.csv",
        ["item", "label", "within_variance", "restored_pairwise_l2"])

    if args.baseline:
        base = load_model_dir(args.baseline, ["encoder", "decoder"])
        base_report = invariance_report(base["encoder"].predict,
                                        base["decoder"].predict, data, grid)
        summary["baseline"] = base_report.to_json_dict()
        summary["ratio_model_over_baseline"] = (
            report.ratio / base_report.ratio if base_report.ratio else None)

    # Projection of descriptors onto the plane through the first three
    # class means (descriptor-distribution view).
    labels = np.array(data.labels)
    classes = sorted(set(data.labels))[:3]
    if len(classes) == 3:
        desc = model["encoder"].predict(data.images, chunk=256)
        means = np.stack([desc[labels == c].mean(axis=0) for c in classes])
        plane = projection_plane(means)
        coords = project(plane, desc)
        export_csv(
            [[i, data.labels[i], float(coords[i, 0]), float(coords[i, 1])]
             for i in range(len(data))],
            out / "projection.csv", ["id", "label", "u", "v"])

    predict_shift = None
    if args.regressor:
        reg = load_model_dir(args.regressor, ["regressor"])["regressor"]
        predict_shift = reg.predict
        stats, _ = shift_inference_table(
            predict_shift, model["encoder"].predict,
            model["decoder"].predict, data, grid)
        summary["shift_inference"] = stats.to_json_dict()

    for c in classes:
        idx = int(np.nonzero(labels == c)[0][0])
        restoration_gallery(model["encoder"].predict,
                            model["decoder"].predict,
                            data.images[idx], grid,
                            out / "gallery" / f"class{c}",
                            predict_shift=predict_shift)

    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    print(f"wrote evaluation outputs to {out}")
    return EXIT_OK


def cmd_infer_shift(args) -> int:
    from .config import load_profile, load_model_dir
    from .data import export_csv
    from .evaluation import SHIFT_CASE_HEADER, shift_inference_table

    profile = load_profile(args.config)
    seed = args.seed if args.seed is not None else profile.seed
    data, _ = _load_dataset(args.data, args.labels, profile, seed)
    model = load_model_dir(args.model, ["encoder", "decoder"])
    reg = load_model_dir(args.regressor, ["regressor"])["regressor"]
    out = Path(args.out)
    _refuse_existing(out, args.force, "file")
    stats, rows = shift_inference_table(
        reg.predict, model["encoder"].predict, model["decoder"].predict,
        data, profile.grid)
    export_csv(rows, out, list(SHIFT_CASE_HEADER))
    print(json.dumps(stats.to_json_dict(), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tiae",
        description="Transform-invariant autoencoder: training, encoding, "
                    "evaluation, and shift inference.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, default=None,
                       help="profile name ('desk', 'paper') or JSON path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the profile seed")
        p.add_argument("--labels", default=None,
                       help="IDX label file (when --data is an IDX path)")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")

    p = sub.add_parser("train", help="train an autoencoder or regressor")
    p.add_argument("--mode", required=True,
                   choices=("ordinary", "invariant", "regressor"))
    p.add_argument("--data", required=True,
                   help="'synthetic', 'synthetic-eval', or IDX image path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", default=None,
                   help="trained autoencoder dir (regressor mode)")
    p.add_argument("--total-updates", type=int, default=None,
                   help="override the profile's update count")
    p.add_argument("--augment", choices=("auto", "yes", "no"),
                   default="auto",
                   help="random-shift augmentation (auto: on for ordinary)")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="write descriptors to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    add_common(p, needs_config=False)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="restore images from descriptor CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--descriptors", required=True, help="descriptor CSV")
    p.add_argument("--out", required=True, help="output directory (PGM)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="invariance report, projection, gallery")
    p.add_argument("--model", required=True)
    p.add_argument("--baseline", default=None)
    p.add_argument("--regressor", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer-shift",
                       help="per-case inferred vs brute-force shifts")
    p.add_argument("--model", required=True)
    p.add_argument("--regressor", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    add_common(p)
    p.set_defaults(func=cmd_infer_shift)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .config import ConfigError
    from .models import ModelConfigError
    from .training import TrainingDivergedError
    try:
        return args.func(args)
    except (ConfigError, ModelConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
