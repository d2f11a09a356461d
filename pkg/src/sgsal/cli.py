"""Batch command-line harness: data generation, training, evaluation,
label statistics, gradient verification, and external re-ranking.

Configuration files are JSON with flat dotted keys ("scene.jitter",
"train.lr"); command-line flags override file values, and the merged
effective config is echoed into every output manifest. All commands are
deterministic under --seed. Exit code 0 means every internal validation
passed.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .labels import build_salience_labels
from .metrics import read_predictions, write_predictions
from .ranking import read_salience_dump, rerank_external, write_salience_dump
from .scenes import (SceneConfig, detector_stub, frozen_projection,
                     generate_scene, read_scenes, write_scenes)
from .trainer import (TrainConfig, evaluate, load_model, save_model, train)
from .verify import run_gradcheck

SPLITS = ("train", "val", "test")


def _workers():
    try:
        return max(1, int(os.environ.get("SSG_THREADS", "1")))
    except ValueError:
        return 1


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise SystemExit("config file must hold a JSON object")
    return cfg


def _section(flat, prefix):
    out = {}
    for key, value in flat.items():
        if key.startswith(prefix + "."):
            out[key[len(prefix) + 1:]] = value
    return out


def _build_dataclass(cls, section, overrides):
    fields = {f.name for f in dataclasses.fields(cls)}
    merged = {}
    for k, v in section.items():
        if k not in fields:
            raise SystemExit(f"unknown config key for {cls.__name__}: {k}")
        merged[k] = v
    for k, v in overrides.items():
        if v is not None:
            merged[k] = v
    return cls(**merged), merged


def _effective_config(scene_cfg, train_cfg=None):
    flat = {f"scene.{k}": v for k, v in scene_cfg.to_dict().items()}
    if train_cfg is not None:
        flat.update({f"train.{k}": v for k, v in train_cfg.to_dict().items()})
    return dict(sorted(flat.items()))


def _config_hash(flat):
    return hashlib.sha256(
        json.dumps(flat, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    flat = _load_config(args.config)
    scene_cfg, _ = _build_dataclass(SceneConfig, _section(flat, "scene"),
                                    {"seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    counts = {"train": args.scenes,
              "val": max(1, args.scenes // 10),
              "test": max(1, args.scenes // 10)}
    base = scene_cfg.seed * 1000
    manifest = {"effective_config": _effective_config(scene_cfg),
                "seed": scene_cfg.seed, "splits": {}}
    manifest["config_hash"] = _config_hash(manifest["effective_config"])
    workers = _workers()
    for tag_offset, split in enumerate(SPLITS, start=1):
        scene_seed = base + tag_offset
        stub_seed = base + 10 + tag_offset
        count = counts[split]

        def make(i, seed=scene_seed):
            return generate_scene(scene_cfg, np.random.default_rng([seed, i]))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                scenes = list(pool.map(make, range(count)))
        else:
            scenes = [make(i) for i in range(count)]
        path = out / f"{split}.jsonl"
        write_scenes(path, scenes)
        manifest["splits"][split] = {"file": path.name, "count": count,
                                     "scene_seed": scene_seed,
                                     "stub_seed": stub_seed}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"wrote {sum(counts.values())} scenes to {out}")
    return 0


def _read_split(data_dir, split):
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    info = manifest["splits"][split]
    scenes = read_scenes(data_dir / info["file"])
    if len(scenes) != info["count"]:
        raise SystemExit(f"{split} split count mismatch vs manifest")
    return manifest, info, scenes


def cmd_train(args):
    flat = _load_config(args.config)
    manifest, train_info, scenes = _read_split(args.data, "train")
    scene_cfg = SceneConfig.from_dict(
        {k.split(".", 1)[1]: v
         for k, v in manifest["effective_config"].items()})
    overrides = {
        "layers": args.layers, "salience_thresh": args.thresh,
        "beta": args.beta, "alpha": args.alpha, "epochs": args.epochs,
        "seed": args.seed, "lr": args.lr, "batch_size": args.batch_size,
    }
    if args.no_isd:
        overrides["use_isd"] = False
    if args.no_gesa:
        overrides["use_gesa"] = False
    if args.no_peca:
        overrides["use_peca"] = False
    if args.no_iterative:
        overrides["iterative"] = False
    train_cfg, _ = _build_dataclass(TrainConfig, _section(flat, "train"),
                                    overrides)
    val_scenes = None
    val_stub = None
    if args.val:
        _, val_info, val_scenes = _read_split(args.data, "val")
        val_scenes = val_scenes[:args.val_scenes]
        val_stub = val_info["stub_seed"]
    log_path = Path(str(args.out) + ".log.jsonl")
    effective = _effective_config(scene_cfg, train_cfg)
    try:
        with open(log_path, "w") as log_fh:
            def log_fn(record):
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
                print(json.dumps(record))

            model, state = train(scenes, scene_cfg, train_cfg,
                                 train_info["stub_seed"], log_fn=log_fn,
                                 val_scenes=val_scenes,
                                 val_stub_seed=val_stub)
    except FloatingPointError as exc:
        print(f"aborting: non-finite loss during training: {exc}",
              file=sys.stderr)
        return 2
    save_model(args.out, model, state)
    meta_path = Path(str(args.out) + ".json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    meta["effective_config"] = effective
    meta["config_hash"] = _config_hash(effective)
    meta["data_manifest_hash"] = manifest.get("config_hash")
    meta["train_stub_seed"] = train_info["stub_seed"]
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    print(f"checkpoint written to {args.out}")
    return 0


def cmd_eval(args):
    model, _ = load_model(args.ckpt)
    manifest, info, scenes = _read_split(args.data, args.split)
    report, per_image, salience = evaluate(
        model, scenes, model.scene_cfg, info["stub_seed"],
        use_salience=not args.no_salience_rank)
    print(report.table())
    payload = json.loads(report.to_json())
    payload["split"] = args.split
    payload["salience_rank"] = not args.no_salience_rank
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
    if args.dump_preds:
        write_predictions(args.dump_preds,
                          [(i, preds) for i, (preds, _) in
                           enumerate(per_image)])
    if args.dump_salience:
        write_salience_dump(args.dump_salience, list(enumerate(salience)))
    return 0


def cmd_label(args):
    manifest, info, scenes = _read_split(args.data, args.split)
    scene_cfg = SceneConfig.from_dict(
        {k.split(".", 1)[1]: v
         for k, v in manifest["effective_config"].items()})
    w_frozen = frozen_projection(scene_cfg)
    per_scene = []
    total_pos = 0
    total_pairs = 0
    for i, gt in enumerate(scenes):
        det = detector_stub(gt, scene_cfg,
                            np.random.default_rng([info["stub_seed"], i]),
                            w_frozen=w_frozen)
        labels = build_salience_labels(det.boxes, gt, thresh=args.thresh)
        pos = int(labels.sum())
        per_scene.append(pos)
        total_pos += pos
        total_pairs += det.n * (det.n - 1)
    stats = {
        "threshold": args.thresh,
        "scenes": len(scenes),
        "positive_rate": total_pos / total_pairs if total_pairs else 0.0,
        "positives_per_scene": {
            "mean": float(np.mean(per_scene)) if per_scene else 0.0,
            "min": int(min(per_scene)) if per_scene else 0,
            "max": int(max(per_scene)) if per_scene else 0,
        },
    }
    print(json.dumps(stats, indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(args):
    rows = run_gradcheck(args.seed)
    ok = True
    for name, err, passed in rows:
        print(f"{'PASS' if passed else 'FAIL'} {name:<32} "
              f"max_rel_err={err:.3e}")
        ok = ok and passed
    return 0 if ok else 1


def cmd_rerank(args):
    preds = read_predictions(args.preds)
    salience = read_salience_dump(args.salience)
    write_predictions(args.out, rerank_external(preds, salience))
    print(f"re-ranked predictions written to {args.out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="sgsal",
        description="salience-aware scene graph experiments on synthetic "
                    "scenes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate train/val/test datasets")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train decoder (+ salience decoder)")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--thresh", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--no-isd", action="store_true")
    p.add_argument("--no-gesa", action="store_true")
    p.add_argument("--no-peca", action="store_true")
    p.add_argument("--no-iterative", action="store_true")
    p.add_argument("--val", action="store_true",
                   help="log validation metrics each epoch")
    p.add_argument("--val-scenes", type=int, default=200)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--no-salience-rank", action="store_true")
    p.add_argument("--out")
    p.add_argument("--dump-preds")
    p.add_argument("--dump-salience")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("label", help="salience label statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train", choices=SPLITS)
    p.add_argument("--thresh", type=float, default=0.6)
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("gradcheck", help="verify gradients")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("rerank", help="re-rank external predictions by "
                                      "salience")
    p.add_argument("--preds", required=True)
    p.add_argument("--salience", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_rerank)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
