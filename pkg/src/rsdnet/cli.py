"""Command-line front end.

Subcommands: train (k-fold cross-validated experiment), bound (excess-risk
heatmap grid), influence (influence-function curves), epochs (per-epoch
accuracy traces), corrupt (standalone label corruption), attack (standalone
adversarial perturbation).  All outputs are plot-ready CSV files and every
command is deterministic given its flags and seeds.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import data_io
from .attacks import AttackConfig, adversarial_trainset, attack as run_attack
from .contamination import NoiseConfig, corrupt_labels
from .data_io import DataFormatError, Dataset
from .divergence import InvalidTuningError, LossSpec, make_tuning
from .network import ArchitectureSpec
from .optimizer import AdamConfig, TrainConfig, accuracy, train
from .theory import IFRequest, bound_grid, default_feature_sample, influence_function

EXIT_OK = 0
EXIT_BAD_FLAGS = 2
EXIT_BAD_DATA = 3
EXIT_NUMERIC = 4

ARCH_PRESETS = {
    "mnist-mlp": ArchitectureSpec(784, ((128, "relu"), (128, "relu")), 10),
    "fmnist-mlp": ArchitectureSpec(784, ((200, "relu"), (100, "relu")), 10),
    "surrogate-64": ArchitectureSpec(784, ((64, "relu"),), 10),
    "toy": ArchitectureSpec(2, ((16, "tanh"),), 2),
    # enough capacity to memorize noisy labels on the blob set, which is what
    # makes the label-noise comparison informative at desk scale
    "blob-mlp": ArchitectureSpec(2, ((64, "relu"), (64, "relu")), 2),
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_BAD_FLAGS):
        super().__init__(message)
        self.code = code


def parse_loss(text: str, beta=None, lam=None) -> LossSpec:
    """Parse "cce", "mae", "sd:0.1,-0.5", "gce:0.7" or "tcce:0.2".

    A bare "sd" takes its tuning from the --beta/--lambda flags.
    """
    kind, _, arg = text.partition(":")
    try:
        if kind == "sd":
            if arg:
                b, _, l = arg.partition(",")
                beta, lam = float(b), float(l)
            if beta is None or lam is None:
                raise CliError("sd loss needs --beta and --lambda (or sd:B,L)")
            return LossSpec(kind="sd", tuning=make_tuning(beta, lam))
        if kind == "gce":
            return LossSpec(kind="gce", q=float(arg))
        if kind == "tcce":
            return LossSpec(kind="tcce", delta=float(arg))
        if kind in ("cce", "mae") and not arg:
            return LossSpec(kind=kind)
    except (ValueError, InvalidTuningError) as exc:
        raise CliError(f"bad loss spec {text!r}: {exc}") from exc
    raise CliError(f"unknown loss spec: {text!r}")


def load_dataset_arg(text: str, n: int, seed: int) -> Dataset:
    """Resolve a --dataset selector.

    "blobs" and "example1" are synthetic (size n, seeded); "idx:IMG,LAB"
    reads an IDX pair; "csv:FEATURES,LABELS" reads a CSV dump.
    """
    if text == "blobs":
        return data_io.synthetic_blobs(n, seed)
    if text == "example1":
        return data_io.synthetic_example1(n, seed)
    kind, _, arg = text.partition(":")
    paths = arg.split(",")
    if kind == "idx" and len(paths) == 2:
        return data_io.read_idx(paths[0], paths[1])
    if kind == "csv" and len(paths) == 2:
        return data_io.load_dataset(paths[0], paths[1])
    raise CliError(f"unknown dataset selector: {text!r}")


def resolve_arch(name: str, dataset: Dataset) -> ArchitectureSpec:
    try:
        arch = ARCH_PRESETS[name]
    except KeyError:
        raise CliError(f"unknown architecture preset: {name!r}") from None
    if arch.input_dim != dataset.features.shape[1]:
        raise CliError(
            f"preset {name} expects {arch.input_dim} features, "
            f"dataset has {dataset.features.shape[1]}", EXIT_BAD_DATA,
        )
    if arch.output_classes != dataset.num_classes:
        raise CliError(
            f"preset {name} expects {arch.output_classes} classes, "
            f"dataset has {dataset.num_classes}", EXIT_BAD_DATA,
        )
    return arch


def surrogate_arch(dataset: Dataset) -> ArchitectureSpec:
    # single hidden layer of 64 ReLU nodes, sized to the data at hand
    return ArchitectureSpec(dataset.features.shape[1], ((64, "relu"),),
                            dataset.num_classes)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    return format(float(x), ".6g")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    dataset = load_dataset_arg(args.dataset, args.n, args.seed)
    arch = resolve_arch(args.arch, dataset)
    loss = parse_loss(args.loss, args.beta, args.lam)
    attack_cfg = None
    if args.attack:
        attack_cfg = AttackConfig(kind=args.attack, epsilon=args.epsilon,
                                  step_size=args.step, max_iters=args.iters)
    plan = data_io.make_folds(dataset.n, args.folds, args.seed)
    records = []
    saved = []
    clean_accs, adv_accs = [], []
    for fold in range(plan.k):
        train_idx, val_idx = data_io.fold_split(plan, fold)
        train_ds = dataset.subset(train_idx)
        val_ds = dataset.subset(val_idx)
        adv_val = None
        if args.eta > 0:
            train_ds, _ = corrupt_labels(
                train_ds, NoiseConfig(eta=args.eta, seed=args.seed + 1000 + fold))
        if attack_cfg is not None:
            sarch = surrogate_arch(dataset)
            sparams, _ = train(
                train_ds, sarch, args.seed + 2000 + fold,
                TrainConfig(loss=LossSpec(kind="cce"),
                            epochs=args.surrogate_epochs,
                            batch_size=args.batch,
                            shuffle_seed=args.seed + 3000 + fold),
            )
            train_ds = adversarial_trainset(sparams, sarch, train_ds, attack_cfg)
            adv_val = adversarial_trainset(sparams, sarch, val_ds, attack_cfg)
        params, _ = train(
            train_ds, arch, args.seed + fold,
            TrainConfig(loss=loss, epochs=args.epochs, batch_size=args.batch,
                        shuffle_seed=args.seed + 100 + fold),
        )
        clean = accuracy(params, arch, val_ds)
        adv = accuracy(params, arch, adv_val) if adv_val is not None else None
        clean_accs.append(clean)
        if adv is not None:
            adv_accs.append(adv)
        saved.append(params)
        records.append(_result_row(args, loss, str(fold), clean, adv))
    records.append(_result_row(args, loss, "mean", float(np.mean(clean_accs)),
                               float(np.mean(adv_accs)) if adv_accs else None))
    data_io.write_results(records, args.out)
    # one row per fold; .npy is byte-reproducible, unlike zip containers
    np.save(args.out + ".params.npy", np.stack(saved))
    return EXIT_OK


def _result_row(args, loss: LossSpec, fold: str, clean, adv):
    return {
        "dataset": args.dataset,
        "loss": loss.describe(),
        "beta": loss.tuning.beta if loss.tuning else None,
        "lambda": loss.tuning.lam if loss.tuning else None,
        "eta": args.eta,
        "attack": f"{args.attack}({args.epsilon:g})" if args.attack else None,
        "fold": fold,
        "clean_accuracy": clean,
        "adv_accuracy": adv,
        "epochs": args.epochs,
    }


def cmd_bound(args) -> int:
    grid = bound_grid(args.eta, args.classes,
                      (args.beta_min, args.beta_max),
                      (args.lambda_min, args.lambda_max),
                      args.resolution)
    rows = []
    for i, beta in enumerate(grid.betas):
        for j, lam in enumerate(grid.lambdas):
            ok = grid.admissible[i, j]
            rows.append([_fmt(beta), _fmt(lam), int(ok),
                         _fmt(grid.values[i, j]) if ok else ""])
    _write_csv(args.out, ("beta", "lambda", "admissible", "value"), rows)
    return EXIT_OK


def cmd_influence(args) -> int:
    tuning = make_tuning(args.beta, args.lam)
    from .network import example_model
    model = example_model(args.model)
    if args.theta:
        theta = np.array([float(v) for v in args.theta.split(",")])
    else:
        theta = np.ones(model.n_params)
    lo, hi, count = args.grid.split(",")
    x_grid = np.linspace(float(lo), float(hi), int(count))
    p_star_fn = None
    if args.correctly_specified:
        def p_star_fn(x, _m=model, _th=theta):
            return _m.probs(_th, x)
    req = IFRequest(model=args.model, theta_g=theta, tuning=tuning,
                    x_grid=x_grid,
                    feature_sample=default_feature_sample(args.sample_size,
                                                          args.seed),
                    p_star_fn=p_star_fn)
    curves = influence_function(req)
    rows = [
        [_fmt(x_t), str(p), _fmt(curves[i, p])]
        for i, x_t in enumerate(x_grid)
        for p in range(curves.shape[1])
    ]
    _write_csv(args.out, ("x_t", "param_index", "value"), rows)
    return EXIT_OK


def cmd_epochs(args) -> int:
    dataset = load_dataset_arg(args.dataset, args.n, args.seed)
    arch = resolve_arch(args.arch, dataset)
    losses = [parse_loss(text, args.beta, args.lam) for text in args.loss]
    # single fixed train/test split (3:1)
    perm = np.random.default_rng(args.seed).permutation(dataset.n)
    cut = (3 * dataset.n) // 4
    train_ds = dataset.subset(perm[:cut])
    test_ds = dataset.subset(perm[cut:])
    if args.eta > 0:
        train_ds, _ = corrupt_labels(
            train_ds, NoiseConfig(eta=args.eta, seed=args.seed + 1000))
    rows = []
    for loss in losses:
        _, metrics = train(
            train_ds, arch, args.seed,
            TrainConfig(loss=loss, epochs=args.epochs, batch_size=args.batch,
                        shuffle_seed=args.seed + 100),
            eval_set=test_ds,
        )
        for epoch, train_loss, test_acc in metrics:
            rows.append([loss.describe(), str(epoch), _fmt(train_loss),
                         _fmt(test_acc)])
    _write_csv(args.out, ("loss", "epoch", "train_loss", "test_accuracy"), rows)
    return EXIT_OK


def cmd_corrupt(args) -> int:
    dataset = load_dataset_arg(args.dataset, args.n, args.seed)
    corrupted, mask = corrupt_labels(dataset,
                                     NoiseConfig(eta=args.eta, seed=args.seed))
    data_io.dump_dataset(corrupted, args.out + ".features.csv",
                         args.out + ".labels.csv", flip_mask=mask)
    return EXIT_OK


def cmd_attack(args) -> int:
    dataset = load_dataset_arg(args.dataset, args.n, args.seed)
    cfg = AttackConfig(kind=args.attack, epsilon=args.epsilon,
                       step_size=args.step, max_iters=args.iters)
    sarch = surrogate_arch(dataset)
    sparams, _ = train(
        dataset, sarch, args.seed,
        TrainConfig(loss=LossSpec(kind="cce"), epochs=args.surrogate_epochs,
                    batch_size=args.batch, shuffle_seed=args.seed + 100),
    )
    attacked = adversarial_trainset(sparams, sarch, dataset, cfg)
    data_io.dump_dataset(attacked, args.out + ".features.csv",
                         args.out + ".labels.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument plumbing
# ---------------------------------------------------------------------------


def _add_common(p):
    p.add_argument("--seed", type=int, required=True,
                   help="master seed; wall-clock seeding is not supported")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--config", default=None,
                   help="flat key=value config file; flags override it")


def _add_data(p):
    p.add_argument("--dataset", default="blobs",
                   help="blobs | example1 | idx:IMAGES,LABELS | csv:FEAT,LAB")
    p.add_argument("--n", type=int, default=400, help="synthetic dataset size")
    p.add_argument("--arch", default="toy", choices=sorted(ARCH_PRESETS))
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--eta", type=float, default=0.0, help="label-noise level")


def _add_loss(p):
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)


def _add_attack(p):
    p.add_argument("--attack", default=None, choices=["fgsm", "pgd"])
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--surrogate-epochs", type=int, default=20)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsdnet",
        description="Robust divergence-based neural classification experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="k-fold cross-validated training run")
    _add_common(p)
    _add_data(p)
    _add_loss(p)
    _add_attack(p)
    p.add_argument("--loss", default="cce")
    p.add_argument("--folds", type=int, default=3)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bound", help="excess-risk bound heatmap grid")
    _add_common(p)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--beta-min", type=float, default=0.0)
    p.add_argument("--beta-max", type=float, default=1.0)
    p.add_argument("--lambda-min", type=float, default=-1.0)
    p.add_argument("--lambda-max", type=float, default=1.0)
    p.add_argument("--resolution", type=int, default=50)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("influence", help="influence-function curves")
    _add_common(p)
    p.add_argument("--model", required=True, choices=["M1", "M2", "M3"])
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--theta", default=None, help="comma list; default all ones")
    p.add_argument("--grid", default="-10,10,201", help="min,max,count")
    p.add_argument("--sample-size", type=int, default=100)
    p.add_argument("--correctly-specified", action="store_true",
                   help="override the reference posterior by the model output")
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("epochs", help="per-epoch accuracy trace")
    _add_common(p)
    _add_data(p)
    _add_loss(p)
    p.add_argument("--loss", action="append", required=True,
                   help="repeatable; e.g. --loss cce --loss sd:0.1,-0.8")
    p.set_defaults(func=cmd_epochs)

    p = sub.add_parser("corrupt", help="standalone label corruption dump")
    _add_common(p)
    p.add_argument("--dataset", default="blobs")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--eta", type=float, required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("attack", help="standalone adversarial perturbation dump")
    _add_common(p)
    p.add_argument("--dataset", default="blobs")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--attack", required=True, choices=["fgsm", "pgd"])
    p.add_argument("--epsilon", type=float, default=0.3)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--surrogate-epochs", type=int, default=20)
    p.set_defaults(func=cmd_attack)
    return parser


def _apply_config(args):
    """Fill unset flags from a flat key=value config file."""
    if not getattr(args, "config", None):
        return
    try:
        with open(args.config, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}", EXIT_BAD_DATA) from exc
    parser_defaults = build_parser()
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(f"bad config line: {line!r}")
        dest = key.strip().replace("-", "_")
        if dest == "lambda":
            dest = "lam"
        if not hasattr(args, dest):
            raise CliError(f"unknown config key: {key.strip()!r}")
        current = getattr(args, dest)
        default = _flag_default(parser_defaults, args.command, dest)
        if current == default or current is None:
            setattr(args, dest, _coerce(value.strip(), current))


def _flag_default(parser, command, dest):
    for action in parser._subparsers._group_actions[0].choices[command]._actions:
        if action.dest == dest:
            return action.default
    return None


def _coerce(text, current):
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if current is None:
        for cast in (int, float):
            try:
                return cast(text)
            except ValueError:
                continue
    return text


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidTuningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FLAGS
    except (DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_DATA
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_FLAGS


if __name__ == "__main__":
    sys.exit(main())
