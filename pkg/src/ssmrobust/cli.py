"""Operator-facing command line: config-driven experiments with CSV reports.

Every subcommand resolves one flat configuration (file values overridden by
flags), embeds its hash and seed schedule in the report header, and writes a
CSV plus a markdown table. Repeated runs with the same configuration produce
byte-identical reports.
"""

import argparse
import os
import sys

from .attacks import AttackConfig, epsilon_sweep
from .autodiff import Tensor
from .config import _float, config_hash, parse_config_file, resolve_config
from .corruptions import SeveritySchedule, corruption_sweep, patchdrop_sweep
from .data import load_medmnist, synthetic_splits
from .errors import (
    BudgetError,
    ConfigError,
    FilterError,
    FormatError,
    PlanError,
    SchemaError,
    SsmRobustError,
    TaxonomyError,
    TrainingDivergedError,
)
from .faults import (
    inject_activation_faults,
    layerwise_bitflip_eval,
    random_bitflip_eval,
    worstcase_bitflip_search,
)
from .model import GROUPS, ModelConfig, SsmClassifier, decide_labels
from .reporting import EvalReport, emit_report, merge_reports, parse_csv, report_meta
from .rng import derive_seed
from .training import (
    TrainConfig,
    batch_slices,
    evaluate_accuracy,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_FORMAT = 5
EXIT_FAULT_SPEC = 6
EXIT_DIVERGED = 7
EXIT_OTHER = 1

_EPILOG = """exit codes:
  0  success
  2  usage error (unknown subcommand or flag)
  3  invalid configuration key or value
  4  missing input file (dataset or checkpoint)
  5  malformed data file (NPY/NPZ/checkpoint/report)
  6  invalid fault specification (group, filter, budget, or plan)
  7  training diverged
  1  any other error

config files use one `key = value` per line with dotted keys; `#` starts a
comment line. Flags override file values. See README for the key list.
"""


def _common_flags(p):
    p.add_argument("--config", help="config file (flat key = value lines)")
    p.add_argument("--out", dest="out_dir", help="output directory for reports")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--data-npz", dest="dataset_path", help="NPZ archive with the six split members")
    p.add_argument("--classes", type=int, help="synthetic dataset class count")
    p.add_argument("--samples-per-class", type=int, help="synthetic samples per class")
    p.add_argument("--image-size", type=int, help="image side in pixels")
    p.add_argument("--batch-size", type=int, help="evaluation batch size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssmrobust",
        description="Train a compact SSM classifier and evaluate its robustness "
        "under input attacks, corruptions, and bit-flip faults.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write a checkpoint")
    _common_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--train-batch", type=int, dest="train_batch")
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--state-dim", type=int)
    p.add_argument("--stage-depths")

    p = sub.add_parser("eval", help="clean accuracy of a checkpoint")
    _common_flags(p)

    p = sub.add_parser("attack", help="white-box FGSM/PGD epsilon sweep")
    _common_flags(p)
    p.add_argument("--eps", help="comma-separated epsilons (fractions allowed)")
    p.add_argument("--alpha", help="PGD step size, or 'auto'")
    p.add_argument("--steps", type=int)
    p.add_argument("--random-start", action="store_true", default=None)
    p.add_argument("--attack", choices=("fgsm", "pgd", "both"), dest="attack_kind")

    p = sub.add_parser("patchdrop", help="patch occlusion ratio sweep")
    _common_flags(p)
    p.add_argument("--ratios", "--ratio", dest="ratios",
                   help="comma-separated drop ratios (or one ratio)")
    p.add_argument("--grid", type=int)
    p.add_argument("--baseline", type=float)

    p = sub.add_parser("corrupt", help="noise/blur severity sweep")
    _common_flags(p)
    p.add_argument("--family", choices=("noise", "blur", "both"))
    p.add_argument("--severity", type=int, help="single severity (default: full sweep)")
    p.add_argument("--noise-sigmas")
    p.add_argument("--blur-stds")

    p = sub.add_parser("bitflip-random", help="random global bit-flip trials")
    _common_flags(p)
    p.add_argument("--budgets")
    p.add_argument("--trials", type=int)
    p.add_argument("--region", choices=("sign", "exponent", "mantissa", "any"))

    p = sub.add_parser("bitflip-layerwise", help="per-group bit-flip trials")
    _common_flags(p)
    p.add_argument("--budgets")
    p.add_argument("--trials", type=int)
    p.add_argument("--region", choices=("sign", "exponent", "mantissa", "any"))
    p.add_argument("--groups", help="comma-separated group names")

    p = sub.add_parser("bitflip-worst", help="worst-case random-search adversary")
    _common_flags(p)
    p.add_argument("--budgets")
    p.add_argument("--iters", type=int)
    p.add_argument("--fast-batches", type=int)
    p.add_argument("--region", choices=("sign", "exponent", "mantissa", "any"))
    p.add_argument("--filter", dest="key_filter")

    p = sub.add_parser("bitflip-activations", help="bit flips in one module's output")
    _common_flags(p)
    p.add_argument("--group", help="activation site name")
    p.add_argument("--budget", type=int)
    p.add_argument("--region", choices=("sign", "exponent", "mantissa", "any"))

    p = sub.add_parser("report-merge", help="combine per-dataset CSV reports")
    p.add_argument("--inputs", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--out-file", required=True)

    return parser


_FLAG_TO_KEY = {
    "out_dir": "out_dir",
    "seed": "seed",
    "checkpoint": "checkpoint",
    "dataset_path": "dataset.path",
    "classes": "dataset.classes",
    "samples_per_class": "dataset.samples_per_class",
    "image_size": "dataset.image_size",
    "batch_size": "eval.batch_size",
    "epochs": "train.epochs",
    "train_batch": "train.batch_size",
    "lr": "train.learning_rate",
    "weight_decay": "train.weight_decay",
    "patch_size": "model.patch_size",
    "embed_dim": "model.embed_dim",
    "state_dim": "model.state_dim",
    "stage_depths": "model.stage_depths",
    "eps": "attack.eps",
    "alpha": "attack.alpha",
    "steps": "attack.steps",
    "random_start": "attack.random_start",
    "attack_kind": "attack.kind",
    "ratios": "patchdrop.ratios",
    "grid": "patchdrop.grid",
    "baseline": "patchdrop.baseline",
    "noise_sigmas": "corrupt.noise_sigmas",
    "blur_stds": "corrupt.blur_stds",
    "budgets": "faults.budgets",
    "trials": "faults.trials",
    "region": "faults.region",
    "groups": "faults.groups",
    "iters": "faults.iters",
    "fast_batches": "faults.fast_batches",
    "key_filter": "faults.filter",
    "group": "faults.activation_site",
    "budget": "faults.activation_budget",
}


def _resolve(args):
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for attr, key in _FLAG_TO_KEY.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    cfg, raw = resolve_config(file_values, overrides)
    if args.dataset_path:
        raw["dataset.kind"] = cfg["dataset.kind"] = "npz"
    return cfg, raw


def _load_splits(cfg):
    if cfg["dataset.kind"] == "npz":
        if not cfg["dataset.path"]:
            raise ConfigError("dataset.kind = npz requires dataset.path")
        return load_medmnist(cfg["dataset.path"])
    if cfg["dataset.kind"] == "synthetic":
        return synthetic_splits(
            cfg["dataset.classes"],
            cfg["dataset.samples_per_class"],
            cfg["dataset.image_size"],
            derive_seed(cfg["seed"], "dataset"),
        )
    raise ConfigError(f"unknown dataset.kind {cfg['dataset.kind']!r}")


def _checkpoint_path(cfg):
    return cfg["checkpoint"] or os.path.join(cfg["out_dir"], "model.ckpt")


def _load_model(cfg):
    path = _checkpoint_path(cfg)
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    return SsmClassifier(ckpt.model_cfg), ckpt


def _meta(cfg, raw, extra=None):
    meta = {"config_hash": config_hash(raw), "seed": cfg["seed"]}
    if extra:
        meta.update(extra)
    return meta


def _emit(report: EvalReport, cfg, name):
    os.makedirs(cfg["out_dir"], exist_ok=True)
    csv_path, md_path = emit_report(report, os.path.join(cfg["out_dir"], name + ".csv"))
    print(f"wrote {csv_path}")
    print(f"wrote {md_path}")


def _write_manifest(cfg, name, blocks):
    """Fault manifests: '# budget=.. trial=.. seed=..' then key<TAB>element<TAB>bit lines."""
    os.makedirs(cfg["out_dir"], exist_ok=True)
    path = os.path.join(cfg["out_dir"], name + "_manifest.tsv")
    lines = []
    for header, plan in blocks:
        lines.append("# " + header)
        lines.extend(plan.manifest_lines())
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    print(f"wrote {path}")


def _cmd_train(cfg, raw):
    train_split, val_split, _ = _load_splits(cfg)
    model_cfg = ModelConfig(
        num_classes=train_split.num_classes,
        image_size=train_split.images.shape[2],
        in_channels=train_split.images.shape[1],
        patch_size=cfg["model.patch_size"],
        embed_dim=cfg["model.embed_dim"],
        stage_depths=cfg["model.stage_depths"],
        state_dim=cfg["model.state_dim"],
    )
    train_cfg = TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        learning_rate=cfg["train.learning_rate"],
        weight_decay=cfg["train.weight_decay"],
        seed=derive_seed(cfg["seed"], "train"),
    )
    ckpt = train(model_cfg, train_cfg, train_split, val_split)
    path = _checkpoint_path(cfg)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    save_checkpoint(ckpt, path)
    print(f"wrote {path} (best epoch {ckpt.meta['epoch']}, "
          f"val accuracy {ckpt.meta['val_accuracy']:.4f})")
    rows = [(int(e), float(l), float(a)) for e, l, a in ckpt.meta["history"]]
    report = EvalReport(
        "training", rows=rows,
        meta=report_meta("training", _meta(cfg, raw, {"seed.train": train_cfg.seed})),
    )
    _emit(report, cfg, "training")
    return EXIT_OK


def _cmd_eval(cfg, raw):
    _, _, test_split = _load_splits(cfg)
    model, ckpt = _load_model(cfg)
    acc, nonfinite = evaluate_accuracy(model, ckpt.params, test_split, cfg["eval.batch_size"])
    report = EvalReport(
        "whitebox",
        rows=[("clean", 0.0, acc, len(test_split.labels), nonfinite)],
        meta=report_meta("whitebox", _meta(cfg, raw)),
    )
    _emit(report, cfg, "eval")
    return EXIT_OK


def _cmd_attack(cfg, raw):
    _, _, test_split = _load_splits(cfg)
    model, ckpt = _load_model(cfg)
    alpha = None if cfg["attack.alpha"] in ("auto", "") else _float(cfg["attack.alpha"])
    if not cfg["attack.eps"]:
        raise ConfigError("attack.eps must list at least one epsilon")
    eps_list = sorted(cfg["attack.eps"])
    base = AttackConfig(
        epsilon=max(eps_list),
        steps=cfg["attack.steps"],
        alpha=alpha,
        random_start=cfg["attack.random_start"],
        seed=derive_seed(cfg["seed"], "attack"),
    )
    attacks = ("fgsm", "pgd") if cfg["attack.kind"] == "both" else (cfg["attack.kind"],)
    report = epsilon_sweep(
        model, ckpt.params, test_split, eps_list, base,
        batch_size=cfg["eval.batch_size"], attacks=attacks,
        meta=_meta(cfg, raw, {"seed.attack": base.seed, "steps": base.steps}),
    )
    _emit(report, cfg, "whitebox")
    return EXIT_OK


def _cmd_patchdrop(cfg, raw):
    _, _, test_split = _load_splits(cfg)
    model, ckpt = _load_model(cfg)
    seed = derive_seed(cfg["seed"], "patchdrop")
    report = patchdrop_sweep(
        model, ckpt.params, test_split, cfg["patchdrop.ratios"],
        grid_n=cfg["patchdrop.grid"], baseline=cfg["patchdrop.baseline"],
        seed=seed, batch_size=cfg["eval.batch_size"],
        meta=_meta(cfg, raw, {"seed.patchdrop": seed}),
    )
    _emit(report, cfg, "patchdrop")
    return EXIT_OK


def _cmd_corrupt(cfg, raw, family=None, severity=None):
    _, _, test_split = _load_splits(cfg)
    model, ckpt = _load_model(cfg)
    schedule = SeveritySchedule(cfg["corrupt.noise_sigmas"], cfg["corrupt.blur_stds"])
    seed = derive_seed(cfg["seed"], "corrupt")
    report = corruption_sweep(
        model, ckpt.params, test_split, schedule, seed=seed,
        batch_size=cfg["eval.batch_size"],
        meta=_meta(cfg, raw, {"seed.corrupt": seed}),
    )
    if family in ("noise", "blur"):
        keep = [r for r in report.rows if r[0] == "clean" or r[0] == family]
        if severity:
            keep = [r for r in keep if r[0] == "clean" or r[1] == severity]
        report = EvalReport("corruption", rows=keep, meta=report.meta)
    _emit(report, cfg, "corruption")
    return EXIT_OK


def _cmd_bitflip_random(cfg, raw):
    _, _, test_split = _load_splits(cfg)
    model, ckpt = _load_model(cfg)
    baseline, stats = random_bitflip_eval(
        model, ckpt.params, test_split, cfg["faults.budgets"], cfg["faults.trials"],
        region=cfg["faults.region"], batch_size=cfg["eval.batch_size"],
    )
    n = len(test_split.labels)
    rows = [("baseline", 0, baseline, 0.0, 1, 0)]
    blocks = []
    for s in stats:
        rows.append(("random", s.budget, s.mean, s.std, len(s.accuracies),
                     sum(r.nonfinite for r in s.records)))
        for r in s.records:
            blocks.append((f"budget={s.budget} seed={r.seed}", r.plan))
    report = EvalReport(
        "bitflip_random", rows=rows,
        meta=report_meta("bitflip_random", _meta(cfg, raw, {
            "seed_schedule": "1234+t", "region": cfg["faults.region"], "n": n})),
    )
    _emit(report, cfg, "bitflip_random")
    _write_manifest(cfg, "bitflip_random", blocks)
    return EXIT_OK


def _cmd_bitflip_layerwise(cfg, raw):
    _, _, test_split = _load_splits(cfg)
    model, ckpt = _load_model(cfg)
    groups = cfg["faults.groups"] or GROUPS
    baseline, stats = layerwise_bitflip_eval(
        model, ckpt.params, test_split, cfg["faults.budgets"], cfg["faults.trials"],
        region=cfg["faults.region"], groups=groups, batch_size=cfg["eval.batch_size"],
    )
    rows = [("baseline", 0, baseline, 0.0, 1, 0)]
    blocks = []
    for s in stats:
        rows.append((s.group, s.budget, s.mean, s.std, len(s.accuracies),
                     sum(r.nonfinite for r in s.records)))
        for r in s.records:
            blocks.append((f"group={s.group} budget={s.budget} seed={r.seed}", r.plan))
    report = EvalReport(
        "bitflip_layerwise", rows=rows,
        meta=report_meta("bitflip_layerwise", _meta(cfg, raw, {
            "seed_schedule": "1234+t", "region": cfg["faults.region"]})),
    )
    _emit(report, cfg, "bitflip_layerwise")
    _write_manifest(cfg, "bitflip_layerwise", blocks)
    return EXIT_OK


def _cmd_bitflip_worst(cfg, raw):
    _, _, test_split = _load_splits(cfg)
    model, ckpt = _load_model(cfg)
    baseline, results = worstcase_bitflip_search(
        model, ckpt.params, test_split, cfg["faults.budgets"], cfg["faults.region"],
        cfg["faults.iters"], cfg["faults.fast_batches"],
        key_filter=cfg["faults.filter"] or None, batch_size=cfg["eval.batch_size"],
    )
    rows = [("baseline", 0, 0, baseline, baseline, 0)]
    blocks = []
    for r in results:
        rows.append(("worst", r.budget, r.seed, r.fast_accuracy, r.full_accuracy, 0))
        blocks.append((f"budget={r.budget} seed={r.seed}", r.plan))
    report = EvalReport(
        "bitflip_worst", rows=rows,
        meta=report_meta("bitflip_worst", _meta(cfg, raw, {
            "seed_schedule": "9000+i", "region": cfg["faults.region"],
            "iters": cfg["faults.iters"], "fast_batches": cfg["faults.fast_batches"]})),
    )
    _emit(report, cfg, "bitflip_worst")
    _write_manifest(cfg, "bitflip_worst", blocks)
    return EXIT_OK


def _cmd_bitflip_activations(cfg, raw):
    _, _, test_split = _load_splits(cfg)
    model, ckpt = _load_model(cfg)
    site = cfg["faults.activation_site"]
    budget = cfg["faults.activation_budget"]
    region = cfg["faults.region"]
    images = test_split.images.data
    labels = test_split.labels
    correct = 0
    nonfinite = 0
    for bi, sl in enumerate(batch_slices(images.shape[0], cfg["eval.batch_size"])):
        seed = derive_seed(cfg["seed"], "activations", bi)
        logits = inject_activation_faults(
            model, ckpt.params, Tensor(images[sl]), site, budget, region, seed
        )
        preds, n_nan = decide_labels(logits.data)
        correct += int((preds == labels[sl]).sum())
        nonfinite += n_nan
    acc = correct / len(labels)
    report = EvalReport(
        "bitflip_activations",
        rows=[(site, budget, acc, len(labels), nonfinite)],
        meta=report_meta("bitflip_activations", _meta(cfg, raw, {
            "region": region, "note": "activation faults extend the weight-only drivers"})),
    )
    _emit(report, cfg, "bitflip_activations")
    return EXIT_OK


def _cmd_report_merge(args):
    named = []
    for item in args.inputs:
        if "=" not in item:
            raise ConfigError(f"--inputs entries must be NAME=PATH, got {item!r}")
        name, path = item.split("=", 1)
        if not os.path.exists(path):
            raise FileNotFoundError(f"report not found: {path}")
        named.append((name, parse_csv(path)))
    merged = merge_reports(named)
    out = args.out_file
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    emit_report(merged, out if out.endswith(".csv") else out + ".csv")
    print(f"wrote {out}")
    return EXIT_OK


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "attack": _cmd_attack,
    "patchdrop": _cmd_patchdrop,
    "corrupt": _cmd_corrupt,
    "bitflip-random": _cmd_bitflip_random,
    "bitflip-layerwise": _cmd_bitflip_layerwise,
    "bitflip-worst": _cmd_bitflip_worst,
    "bitflip-activations": _cmd_bitflip_activations,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report-merge":
            return _cmd_report_merge(args)
        cfg, raw = _resolve(args)
        if args.command == "corrupt":
            return _cmd_corrupt(cfg, raw, family=getattr(args, "family", None),
                                severity=getattr(args, "severity", None))
        return _COMMANDS[args.command](cfg, raw)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error[missing-input]: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (FormatError, SchemaError) as exc:
        print(f"error[format]: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (TaxonomyError, FilterError, BudgetError, PlanError) as exc:
        print(f"error[fault-spec]: {exc}", file=sys.stderr)
        return EXIT_FAULT_SPEC
    except TrainingDivergedError as exc:
        print(f"error[diverged]: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SsmRobustError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


run = main  # config-driven entry point, also usable programmatically

if __name__ == "__main__":
    raise SystemExit(main())
