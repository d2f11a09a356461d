"""End-to-end quickstart: generate data, train, evaluate, re-rank.

Runs the whole pipeline at desk scale (a few hundred scenes, a couple of
minutes) through the same CLI entry points a shell user would call, and
prints the evaluation tables with and without salience re-ranking so the
effect of the salience decoder is visible side by side.

Usage:
    python demos/quickstart.py [--out DIR] [--scenes N] [--epochs N]
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from sgsal.cli import main as sgsal  # noqa: E402


def run(argv):
    print("$ sgsal " + " ".join(argv))
    code = sgsal(argv)
    if code != 0:
        raise SystemExit(f"command failed with exit code {code}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=None, help="working directory")
    ap.add_argument("--scenes", type=int, default=400)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()

    root = Path(args.out) if args.out else Path(tempfile.mkdtemp(
        prefix="sgsal_quickstart_"))
    root.mkdir(parents=True, exist_ok=True)
    data = root / "data"
    ckpt = root / "model.bin"

    print("== 1. generate synthetic scenes ==")
    run(["gen-data", "--out", str(data), "--scenes", str(args.scenes),
         "--seed", "0"])

    print("\n== 2. inspect salience label statistics ==")
    run(["label", "--data", str(data), "--split", "train"])

    print("\n== 3. train the joint model ==")
    run(["train", "--data", str(data), "--out", str(ckpt),
         "--epochs", str(args.epochs), "--seed", "0"])

    print("\n== 4. evaluate with salience re-ranking ==")
    run(["eval", "--ckpt", str(ckpt), "--data", str(data),
         "--split", "test", "--out", str(root / "report_sal.json"),
         "--dump-preds", str(root / "preds.jsonl"),
         "--dump-salience", str(root / "salience.jsonl")])

    print("\n== 5. evaluate without salience re-ranking ==")
    run(["eval", "--ckpt", str(ckpt), "--data", str(data),
         "--split", "test", "--no-salience-rank",
         "--out", str(root / "report_plain.json")])

    print("\n== 6. re-rank the plain predictions externally ==")
    run(["rerank", "--preds", str(root / "preds.jsonl"),
         "--salience", str(root / "salience.jsonl"),
         "--out", str(root / "preds_reranked.jsonl")])

    with_sal = json.loads((root / "report_sal.json").read_text())
    plain = json.loads((root / "report_plain.json").read_text())
    print("\n== summary (F@50 harmonic mean of R@50 and mR@50) ==")
    for name, rep in [("salience re-rank", with_sal), ("plain", plain)]:
        print(f"  {name:<18} F@50={rep['F']['50']:6.2f}  "
              f"pl-AP={rep['pl_AP']:6.2f}")
    print(f"\nartifacts in {root}")


if __name__ == "__main__":
    main()
