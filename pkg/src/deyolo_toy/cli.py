"""Command-line entry point: ``deyolo-toy {synth,gradcheck,train,eval,ablation,selftest}``.

Exit codes: 0 success, 1 verification or run failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import config as cfgmod
from .config import ConfigError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("deyolo_toy")


class UsageError(Exception):
    pass


def _prepare_dir(path: Path, force: bool, what: str) -> None:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise UsageError(f"{what} {path} exists and is not empty (use --force to overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


def _config(args) -> dict:
    overrides = cfgmod.parse_assignments(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfgmod.load_config(args.config, overrides)


def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg["out.dir"])


def _load_split(root, split):
    from .synth import DatasetError, read_dataset
    if not Path(root).is_dir():
        raise UsageError(f"dataset root {root} does not exist (run `deyolo-toy synth` first)")
    try:
        samples = read_dataset(root, split)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    if not samples:
        raise UsageError(f"split {split!r} of {root} is empty")
    return samples


# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import generate, make_splits, write_dataset
    cfg = _config(args)
    root = Path(args.out or cfg["dataset.root"])
    _prepare_dir(root, args.force, "dataset root")
    n = args.n_train + args.n_val + args.n_test
    samples = generate(cfgmod.scene_config(cfg), n)
    write_dataset(samples, root, make_splits(args.n_train, args.n_val, args.n_test),
                  extra={"seed": cfg["seed"], "image_size": cfg["image_size"]})
    cfgmod.dump(cfg, root / "config.json")
    counts = [0, 0, 0]
    for s in samples:
        for c, _ in s.labels:
            counts[c] += 1
    print(f"wrote {n} pairs to {root} (train {args.n_train}, val {args.n_val}, test {args.n_test}); "
          f"objects per class {counts}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck
    cfg = _config(args)
    results = gradcheck.run(seed=cfg["seed"], corrupt=args.corrupt_vjp)
    print(gradcheck.format_report(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import TrainingDiverged, load_checkpoint, train
    cfg = _config(args)
    root = cfg["dataset.root"]
    train_set = _load_split(root, "train")
    val_set = _load_split(root, "val")
    out = _out_dir(args, cfg)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        out.mkdir(parents=True, exist_ok=True)
    else:
        _prepare_dir(out, args.force, "output directory")
    cfgmod.dump(cfg, out / "config.json")
    try:
        _, history = train(cfgmod.model_config(cfg), cfgmod.train_config(cfg), train_set, val_set,
                           out_dir=out, resume=resume, stop_after=args.stop_after)
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if history:
        last = history[-1]
        print(f"epoch {last['epoch']}: loss {last['loss_total']:.4f}, val mAP50 {last['val_map50']:.4f}")
    print(f"checkpoint written to {out / 'checkpoint.pt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import write_detections
    from .synth import read_manifest
    from .train import Batchable, evaluate, load_checkpoint, predict, to_records
    cfg = _config(args)
    root = cfg["dataset.root"]
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint {args.checkpoint} not found")
    ck = load_checkpoint(args.checkpoint)
    model = ck["model"]
    samples = _load_split(root, args.split)
    n_classes = len(read_manifest(root)["classes"])
    if n_classes != model.cfg.num_classes:
        raise UsageError(f"checkpoint has {model.cfg.num_classes} classes, dataset {root} has {n_classes}")
    if any(c >= n_classes for s in samples for c, _ in s.labels):
        raise UsageError(f"labels in {root} use class ids outside the manifest's {n_classes} classes")
    if samples[0].visible.shape[-1] != model.cfg.image_size:
        raise UsageError(f"images are {samples[0].visible.shape[-1]} px, checkpoint expects "
                         f"{model.cfg.image_size}")
    data = Batchable.from_samples(samples)
    names = [s.name for s in samples]
    report = evaluate(model, data, ck["train_config"], names)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    doc = report.to_json()
    doc.update({"split": args.split, "n_images": len(samples), "checkpoint": str(args.checkpoint)})
    path = out / f"eval_{args.split}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    tc = ck["train_config"]
    dets, _ = to_records(predict(model, data, tc.conf_thresh, tc.nms_iou), data.labels, names)
    write_detections(out / f"detections_{args.split}.jsonl", dets)
    print(json.dumps({k: doc[k] for k in ("map50", "map50_95", "lamr")}))
    print(f"report written to {path}")
    return EXIT_OK


def cmd_ablation(args) -> int:
    from .ablation import run_ablation, write_csv
    cfg = _config(args)
    root = cfg["dataset.root"]
    train_set = _load_split(root, "train")
    val_set = _load_split(root, "val")
    out = _out_dir(args, cfg)
    _prepare_dir(out, args.force, "output directory")
    cfgmod.dump(cfg, out / "config.json")
    seeds = [cfg["seed"] + i for i in range(args.seeds)]
    results = run_ablation(cfg, train_set, val_set, seeds, out_dir=out / "runs")
    write_csv(out / "ablation.csv", results)
    print(f"{'row':<18} {'mAP50':>7} {'mAP50-95':>9} {'LAMR':>7}")
    for r in results:
        print(f"{r['row']:<18} {r['map50']:>7.4f} {r['map50_95']:>9.4f} {r['lamr']:>7.4f}")
    print(f"table written to {out / 'ablation.csv'}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from . import selftest
    results = selftest.run()
    for name, ok in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(ok for _, ok in results) else EXIT_FAIL


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (flat, dotted keys)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("--out", help="output directory (overrides out.dir / dataset.root)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="deyolo-toy", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate the synthetic paired dataset")
    s.add_argument("--n-train", type=int, default=200)
    s.add_argument("--n-val", type=int, default=60)
    s.add_argument("--n-test", type=int, default=60)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gradcheck", parents=[common], help="check every VJP against finite differences")
    s.add_argument("--corrupt-vjp", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train", parents=[common], help="train a detector")
    s.add_argument("--resume", help="checkpoint (last.pt) to continue from")
    s.add_argument("--stop-after", type=int, help="stop after this many epochs (schedule unchanged)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="val", choices=("train", "val", "test"))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablation", parents=[common], help="train and evaluate the ablation rows")
    s.add_argument("--seeds", type=int, default=1, help="number of seeds; metrics are medians")
    s.set_defaults(func=cmd_ablation)

    s = sub.add_parser("selftest", parents=[common], help="run the structural invariant suite")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
