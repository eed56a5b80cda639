"""Ablation table: additive baseline, +DECA, +DEPA, +both, +both+focus, and
the two single-modality baselines, all trained with one budget and seed."""
from __future__ import annotations

import csv
import logging
import statistics
import time
from pathlib import Path
from typing import Any, Mapping, Sequence

from .config import model_config, train_config
from .synth import PairedSample
from .train import Batchable, evaluate, train

log = logging.getLogger(__name__)

# (name, modality, focus, deca, depa)
ROWS = (
    ("baseline", "cross", False, False, False),
    ("+deca", "cross", False, True, False),
    ("+depa", "cross", False, False, True),
    ("+deca+depa", "cross", False, True, True),
    ("+deca+depa+focus", "cross", True, True, True),
    ("visible_only", "visible", False, False, False),
    ("infrared_only", "infrared", False, False, False),
)
# wall-clock time is kept out of the CSV so reruns are byte-identical
FIELDS = ("row", "modality", "focus", "deca", "depa", "map50", "map50_95", "lamr", "seeds")


def row_config(cfg: Mapping[str, Any], modality: str, focus: bool, deca: bool, depa: bool,
               seed: int | None = None) -> dict[str, Any]:
    out = dict(cfg)
    out.update({"modality": modality, "focus.enabled": focus, "deca.enabled": deca,
                "depa.enabled": depa})
    if seed is not None:
        out["seed"] = seed
    return out


def run_ablation(cfg: Mapping[str, Any], train_set: Sequence[PairedSample],
                 val_set: Sequence[PairedSample], seeds: Sequence[int] | None = None,
                 rows=ROWS, out_dir=None) -> list[dict[str, Any]]:
    """One result dict per row; metrics are medians over ``seeds``."""
    seeds = list(seeds) if seeds else [cfg["seed"]]
    val = Batchable.from_samples(val_set)
    results = []
    for name, modality, focus, deca, depa in rows:
        per_seed = []
        t0 = time.perf_counter()
        for seed in seeds:
            rc = row_config(cfg, modality, focus, deca, depa, seed)
            sub = Path(out_dir) / name / f"seed{seed}" if out_dir is not None else None
            model, _ = train(model_config(rc), train_config(rc), train_set, val_set, out_dir=sub)
            per_seed.append(evaluate(model, val, train_config(rc)))
        res = {
            "row": name, "modality": modality, "focus": focus, "deca": deca, "depa": depa,
            "map50": statistics.median(r.map50 for r in per_seed),
            "map50_95": statistics.median(r.map50_95 for r in per_seed),
            "lamr": statistics.median(r.lamr for r in per_seed),
            "seeds": " ".join(map(str, seeds)),
            "train_seconds": round(time.perf_counter() - t0, 1),
        }
        log.info("%-18s mAP50 %.4f  mAP50-95 %.4f  LAMR %.4f", name, res["map50"],
                 res["map50_95"], res["lamr"])
        results.append(res)
    return results


def write_csv(path, results: Sequence[Mapping[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FIELDS, extrasaction="ignore")
        w.writeheader()
        for r in results:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
