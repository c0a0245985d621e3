"""Command-line entry point: simulate / train / predict / latents / evaluate / cluster-eval."""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np

from . import generative, metrics, training
from .config import apply_overrides, read_keyvalue_file, write_keyvalue_file
from .data import load_manifest, load_sequence


def _load_config(args, defaults: dict | None = None) -> dict[str, str]:
    kv = dict(defaults or {})
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        kv.update(read_keyvalue_file(path))
    kv = apply_overrides(kv, args.override or [])
    if getattr(args, "seed", None) is not None:
        kv["seed"] = str(args.seed)
    return kv


def _write_provenance(out_dir: Path, config: dict[str, str], artifacts: list[Path]) -> None:
    """Echo the effective config and hash every artifact so a run is reproducible."""
    write_keyvalue_file(out_dir / "run_config.txt", config)
    lines = {}
    for path in sorted(artifacts):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        lines[path.name] = digest
    write_keyvalue_file(out_dir / "artifacts.txt", lines)


def _repr_float(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, array: np.ndarray, fmt=_repr_float) -> None:
    array = np.atleast_2d(np.asarray(array).T).T  # column vectors stay [N x 1]
    with open(path, "w") as f:
        for row in array:
            f.write(",".join(fmt(v) for v in row) + "\n")


def cmd_simulate(args) -> int:
    defaults = {
        "n_classes": "3", "latent_dim": "2", "obs_dim": "4",
        "n_train_sequences": "2", "n_test_sequences": "1",
        "n_frames": "5000", "self_prob": "0.95",
        "dynamics_noise": "0.01", "emission_noise": "0.01",
        "sample_rate_hz": "60", "seed": "0",
    }
    config = _load_config(args, defaults)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = int(config["seed"])
    if "params_path" in config:
        params = generative.load_slds_params(config["params_path"])
    else:
        params = generative.well_separated_params(
            n_classes=int(config["n_classes"]),
            latent_dim=int(config["latent_dim"]),
            obs_dim=int(config["obs_dim"]),
            self_prob=float(config["self_prob"]),
            dynamics_noise=float(config["dynamics_noise"]),
            emission_noise=float(config["emission_noise"]),
            seed=seed,
        )
    n_train = int(config["n_train_sequences"])
    n_test = int(config["n_test_sequences"])
    n_frames = int(config["n_frames"])
    artifacts = []
    manifest = {"n_classes": str(params.n_classes)}
    for i in range(n_train + n_test):
        split = "train" if i < n_train else "test"
        traj = generative.sample_sequence(params, n_frames, seed=seed + 1000 + i)
        seq_id = f"seq{i:03d}"
        for suffix, data in (
            ("features", traj.x), ("labels", traj.y.reshape(-1, 1)), ("latents", traj.z),
        ):
            path = out_dir / f"{seq_id}_{suffix}.csv"
            _write_csv(path, data, fmt=(str if suffix == "labels" else _repr_float))
            artifacts.append(path)
        manifest[f"sequence.{seq_id}.features"] = f"{seq_id}_features.csv"
        manifest[f"sequence.{seq_id}.labels"] = f"{seq_id}_labels.csv"
        manifest[f"sequence.{seq_id}.sample_rate_hz"] = config["sample_rate_hz"]
        manifest[f"sequence.{seq_id}.split"] = split
    params_path = out_dir / "params.bin"
    generative.save_slds_params(params, params_path)
    artifacts.append(params_path)
    manifest_path = out_dir / "dataset.cfg"
    write_keyvalue_file(manifest_path, manifest)
    artifacts.append(manifest_path)
    _write_provenance(out_dir, config, artifacts)
    return 0


def cmd_train(args) -> int:
    config_kv = _load_config(args)
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    dataset = load_manifest(manifest_path, header=args.header)
    config = training.TrainConfig.from_dict(config_kv)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model = training.train(config, dataset)
    ckpt_path = out_dir / "checkpoint.bin"
    training.save_checkpoint(model, ckpt_path)
    history_path = out_dir / "history.csv"
    cols = ["epoch", "loss", "recon", "kl_z", "kl_y", "classification", "anneal"]
    with open(history_path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in model.history:
            f.write(",".join(repr(row[c]) for c in cols) + "\n")
    _write_provenance(out_dir, config.to_dict(), [ckpt_path, history_path])
    return 0


def cmd_predict(args) -> int:
    model = training.load_checkpoint(args.checkpoint)
    seq = load_sequence(args.features, header=args.header)
    labels, probs = training.predict(model, seq.features)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "probs.csv", probs)
    _write_csv(out_dir / "labels.csv", labels.reshape(-1, 1), fmt=str)
    return 0


def cmd_latents(args) -> int:
    model = training.load_checkpoint(args.checkpoint)
    seq = load_sequence(args.features, header=args.header)
    latents = training.extract_latents(model, seq.features)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "latents.csv", latents)
    return 0


def cmd_evaluate(args) -> int:
    model = training.load_checkpoint(args.checkpoint)
    dataset = load_manifest(args.manifest, header=args.header)
    if dataset.n_classes != model.n_classes:
        raise ValueError(
            f"checkpoint has {model.n_classes} classes, manifest has {dataset.n_classes}"
        )
    sequences = dataset.test if args.split == "test" else dataset.train
    if not sequences:
        raise ValueError(f"{args.split} split is empty")
    macro, pred, true, probs = training.evaluate_split(model, sequences, dataset.n_classes)
    report = metrics.evaluate_predictions(pred, true, probs, dataset.n_classes)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kv = {"macro_f1": repr(report.macro_f1), "split": args.split}
    for k in range(dataset.n_classes):
        kv[f"f1.class_{k}"] = repr(float(report.per_class_f1[k]))
        kv[f"support.class_{k}"] = str(int(report.support[k]))
        kv[f"entropy_tp.class_{k}"] = repr(float(report.entropy_tp[k]))
        kv[f"entropy_fp.class_{k}"] = repr(float(report.entropy_fp[k]))
    report_path = out_dir / "report.txt"
    write_keyvalue_file(report_path, kv)
    conf_path = out_dir / "confusion.csv"
    _write_csv(conf_path, report.confusion, fmt=str)
    _write_provenance(out_dir, kv, [report_path, conf_path])
    return 0


def cmd_cluster_eval(args) -> int:
    model = training.load_checkpoint(args.checkpoint)
    dataset = load_manifest(args.manifest, header=args.header)
    sequences = dataset.test if args.split == "test" else dataset.train
    if not sequences:
        raise ValueError(f"{args.split} split is empty")
    latents, labels = [], []
    for seq in sequences:
        z = training.extract_latents(model, seq.features)
        mask = seq.labels >= 0
        latents.append(z[mask])
        labels.append(seq.labels[mask])
    latents = np.concatenate(latents)
    labels = np.concatenate(labels)
    seed = args.seed if args.seed is not None else 0
    report = metrics.cluster_sweep(
        latents, labels, metrics.default_cluster_grid(dataset.n_classes), seed=seed
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "cluster_report.csv", "w") as f:
        f.write("n_clusters,homogeneity,completeness,v_measure\n")
        for i, n in enumerate(report.n_clusters_grid):
            f.write(f"{n},{report.homogeneity[i]!r},{report.completeness[i]!r},{report.v_measure[i]!r}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actionseg")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=False, checkpoint=False, features=False):
        p.add_argument("--config", default=None)
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--header", action="store_true", help="feature CSVs carry a header row")
        if manifest:
            p.add_argument("--manifest", required=True)
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
        if features:
            p.add_argument("--features", required=True)

    common(sub.add_parser("simulate"))
    common(sub.add_parser("train"), manifest=True)
    common(sub.add_parser("predict"), checkpoint=True, features=True)
    common(sub.add_parser("latents"), checkpoint=True, features=True)
    p_eval = sub.add_parser("evaluate")
    common(p_eval, manifest=True, checkpoint=True)
    p_eval.add_argument("--split", choices=["train", "test"], default="test")
    p_cl = sub.add_parser("cluster-eval")
    common(p_cl, manifest=True, checkpoint=True)
    p_cl.add_argument("--split", choices=["train", "test"], default="test")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "latents": cmd_latents,
    "evaluate": cmd_evaluate,
    "cluster-eval": cmd_cluster_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
