"""Command-line entry point: ``ccl-lab {train,data,eval,compare,diagnose,gradcheck}``.

Exit codes: 0 success, 1 check failure, 2 config/input error, 3 divergence.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    MANIFEST_VERSION,
    data_spec,
    eval_config,
    load_config,
    train_config,
    variant_from_dict,
)
from .core_math import chi_mean, chi_monte_carlo, chi_variance
from .datasets import (
    Checkpoint,
    generate_distractors,
    generate_synthetic,
    load_checkpoint,
    load_features,
    load_pairs,
    make_pairs,
    save_checkpoint,
    save_features,
    save_pairs,
)
from .errors import ConfigError, TrainingDiverged
from .evaluation import build_report
from .experiments import run_variant
from .losses import LossConfig, Variant, gradient_check, l2_constrain, random_instance
from .model import embed_dataset, model_gradient_check, train

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir, command, cfg, outputs):
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "command": command,
        "config": cfg,
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(cfg):
    path = Path(cfg["output_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return "" if v is None else str(v)


def cmd_train(cfg):
    out = _out_dir(cfg)
    spec = data_spec(cfg)
    tcfg = train_config(cfg)
    result = train(tcfg, generate_synthetic(spec, "train"))
    ckpt = out / "checkpoint.json"
    save_checkpoint(ckpt, Checkpoint(result.net, result.weights, result.state, tcfg.loss, result.affine, cfg["seed"]))
    hist = out / "history.csv"
    with open(hist, "w") as fh:
        fh.write("step,loss\n")
        for i, loss in enumerate(result.history.losses):
            fh.write(f"{i},{loss:.17g}\n")
    _write_manifest(out, "train", cfg, [ckpt, hist])
    print(f"trained {len(result.history.losses)} steps; final loss {result.history.losses[-1] if result.history.losses else float('nan'):.6f}")
    return EXIT_OK


def cmd_data(cfg):
    """Write the held-out split, its pairs and a distractor set as CSV."""
    out = _out_dir(cfg)
    spec = data_spec(cfg)
    ev = eval_config(cfg)
    train_set = generate_synthetic(spec, "train")
    test_set = generate_synthetic(spec, "test")
    files = [out / "train.csv", out / "test.csv", out / "test_pairs.csv"]
    save_features(files[0], train_set.X, train_set.labels)
    save_features(files[1], test_set.X, test_set.labels)
    save_pairs(files[2], make_pairs(test_set, ev.num_positive, ev.num_negative, spec.seed, ev.hard_negatives))
    if ev.num_distractors:
        d = generate_distractors(spec, ev.num_distractors)
        files.append(out / "distractors.csv")
        save_features(files[-1], d.X, d.labels)
    _write_manifest(out, "data", cfg, files)
    return EXIT_OK


def _require_file(cfg, key):
    path = cfg["eval"].get(key)
    if not path:
        raise ConfigError(f"eval.{key} is required")
    if not os.path.isfile(path):
        raise ConfigError(f"eval.{key}: file not found: {path}")
    return path


def cmd_eval(cfg):
    ckpt = load_checkpoint(_require_file(cfg, "checkpoint"))
    X, labels = load_features(_require_file(cfg, "dataset"))
    pairs = load_pairs(_require_file(cfg, "pairs"))
    try:
        pairs.validate(len(labels))
    except IndexError as exc:
        raise ConfigError(str(exc)) from None
    ev = eval_config(cfg)
    centralized = ckpt.loss.centralizes

    def embed(inputs):
        if inputs.shape[1] != ckpt.net.layer_dims[0]:
            raise ConfigError(f"inputs have width {inputs.shape[1]}, network expects {ckpt.net.layer_dims[0]}")
        return embed_dataset(ckpt.net, ckpt.state, inputs, centralized, ckpt.affine)

    feats = embed(X)
    _, first = np.unique(labels, return_index=True)
    mask = np.zeros(labels.size, bool)
    mask[first] = True
    gallery_X, gallery_ids = feats[mask], labels[mask]
    if cfg["eval"].get("distractors"):
        DX, Dl = load_features(_require_file(cfg, "distractors"))
        gallery_X = np.vstack([gallery_X, embed(DX)])
        gallery_ids = np.concatenate([gallery_ids, Dl])
    report, hist = build_report(
        feats,
        labels,
        pairs,
        folds=ev.folds,
        num_bins=ev.num_bins,
        gallery=(gallery_X, gallery_ids),
        probes=(feats[~mask], labels[~mask]),
        seed=cfg["seed"],
    )
    out = _out_dir(cfg)
    report.to_json(out / "report.json")
    hist.to_csv(out / "histogram.csv")
    _write_manifest(out, "eval", cfg, [out / "report.json", out / "histogram.csv"])
    print(f"verification accuracy {report.verification_accuracy:.4f}, rank-1 {report.rank1_rate:.4f}")
    return EXIT_OK


COMPARE_COLUMNS = [
    "name",
    "seed",
    "final_loss",
    "verification_accuracy",
    "rank1",
    "intra_angle",
    "inter_angle",
    "orthant_coverage",
]


def cmd_compare(cfg):
    out = _out_dir(cfg)
    variants = [variant_from_dict(v) for v in cfg["compare"]["variants"]]
    if not variants:
        raise ConfigError("compare.variants is empty")
    seeds = cfg["compare"]["seeds"] or [cfg["seed"]]
    ev = eval_config(cfg)
    rows = []
    for seed in seeds:
        spec = data_spec(cfg, seed)
        base = train_config(cfg, seed, loss=variants[0].loss)
        for v in variants:
            run = run_variant(spec, base, ev, v)
            rows.append(run.row())
            print(f"seed {seed} {v.name}: acc {run.report.verification_accuracy:.4f}")
    files = [out / "compare.csv"]
    _write_rows(files[0], rows)
    if len(seeds) > 1:
        medians = []
        for v in variants:
            mine = [r for r in rows if r["name"] == v.name]
            med = {"name": v.name, "seed": "median"}
            for col in COMPARE_COLUMNS[2:]:
                vals = [r[col] for r in mine if r[col] is not None]
                med[col] = float(np.median(vals)) if vals else None
            medians.append(med)
        files.append(out / "compare_median.csv")
        _write_rows(files[1], medians)
    _write_manifest(out, "compare", cfg, files)
    return EXIT_OK


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in COMPARE_COLUMNS])


def diagnose_dims(dcfg):
    if dcfg["d_values"] is not None:
        dims = list(dcfg["d_values"])
    else:
        lo, hi, step = dcfg["d_min"], dcfg["d_max"], dcfg["d_step"]
        if step < 1 or lo > hi:
            raise ConfigError("diagnose range needs d_min <= d_max and d_step >= 1")
        dims = list(range(lo, hi + 1, step))
    if not dims or any(not isinstance(d, int) or isinstance(d, bool) or d < 1 for d in dims):
        raise ConfigError("diagnose dimensions must be positive integers")
    return dims


def cmd_diagnose(cfg):
    dcfg = cfg["diagnose"]
    dims = diagnose_dims(dcfg)
    if dcfg["mc_samples"] < 2:
        raise ConfigError("diagnose.mc_samples must be >= 2")
    out = _out_dir(cfg)
    path = out / "chi_stats.csv"
    with open(path, "w") as fh:
        fh.write("D,chi_mean,chi_variance,mc_mean,mc_var\n")
        for d in dims:
            mc_mean, mc_var = chi_monte_carlo(d, dcfg["mc_samples"], cfg["seed"])
            fh.write(f"{d},{chi_mean(d):.17g},{chi_variance(d):.17g},{mc_mean:.17g},{mc_var:.17g}\n")
    _write_manifest(out, "diagnose", cfg, [path])
    return EXIT_OK


def gradcheck_suite(instances=100, h=1e-5, seed=0):
    """Max relative gradient error per variant for the loss-level and
    whole-model checks."""
    results = {}
    for v in Variant:
        cfg = LossConfig(v)
        rng = np.random.default_rng([seed, 101])
        worst = 0.0
        for _ in range(instances):
            x, w, y = random_instance(rng, with_bias=cfg.has_bias)
            if v is Variant.L2_CONSTRAINED:
                x = l2_constrain(x, cfg.alpha)
            worst = max(worst, gradient_check(cfg, x, w, y, h))
        results[f"loss/{v.value}"] = worst
        rng = np.random.default_rng([seed, 202])
        results[f"model/{v.value}"] = max(model_gradient_check(cfg, rng, h=h) for _ in range(instances))
    return results


def cmd_gradcheck(cfg):
    g = cfg["gradcheck"]
    results = gradcheck_suite(g["instances"], g["h"], cfg["seed"])
    bad = []
    for name, err in results.items():
        ok = err < GRADCHECK_TOL
        print(f"{name:28s} max rel err {err:.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            bad.append(name)
    if bad:
        print("gradient check failed for: " + ", ".join(bad), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "data": cmd_data,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "diagnose": cmd_diagnose,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    p = argparse.ArgumentParser(prog="ccl-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON config file or run manifest")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted-path override, value parsed as JSON when possible")
    p.add_argument("--out", help="shorthand for --set output_dir=PATH")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output_dir={json.dumps(args.out)}")
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
