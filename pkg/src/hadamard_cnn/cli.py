"""``hadamard-cnn`` command line: fetch, train, eval, verify, energy."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import datasets, energy, models, training, verify
from .errors import (
    AvailabilityError,
    ConfigurationError,
    DataError,
    DivergenceError,
    HadamardCNNError,
    IntegrityError,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_UNAVAILABLE = 3
EXIT_BAD_DATA = 4

# one flag per ModelSpec / Hyperparams field, spelled --field-name
MODEL_FLAGS = tuple(models.config_fields())


def parse_int_range(text: str, powers_of_two: bool = False) -> list[int]:
    """``"3,5,7"`` -> [3, 5, 7]; ``"2:5"`` -> [2, 3, 4, 5]; with ``powers_of_two`` ``"4:128"`` -> [4, 8, ..., 128]."""
    try:
        return _int_range(text, powers_of_two)
    except ValueError as exc:
        raise ConfigurationError(f"bad range {text!r}: {exc}") from None


def _int_range(text: str, powers_of_two: bool) -> list[int]:
    values: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            lo, hi = (int(v) for v in part.split(":", 1))
            if lo > hi:
                raise ConfigurationError(f"empty range {part!r}")
            if powers_of_two:
                if lo < 1:
                    raise ConfigurationError(f"power-of-two range must start at >= 1, got {part!r}")
                v = 1
                while v < lo:
                    v *= 2
                while v <= hi:
                    values.append(v)
                    v *= 2
            else:
                values.extend(range(lo, hi + 1))
        else:
            values.append(int(part))
    if not values:
        raise ConfigurationError(f"range {text!r} is empty")
    return values


def parse_floats(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad number list {text!r}: {exc}") from None
    if not values:
        raise ConfigurationError(f"list {text!r} is empty")
    return values


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (names match the config-file keys)")
    g.add_argument("--config", type=Path, help="flat 'key = value' file; flags given here override it")
    for name in MODEL_FLAGS:
        flags = ["--" + name.replace("_", "-")]
        if name == "kernel_size":
            flags.append("--kernel")
        g.add_argument(*flags, dest=name, default=None, metavar=name.upper())
    p.add_argument("--data-dir", type=Path, default=None,
                   help=f"dataset root (default ${datasets.DATA_ENV} or ./data); files live in <root>/<dataset>")
    p.add_argument("--out", type=Path, default=Path("runs"), help="output directory")


def resolve_config(args) -> tuple[models.ModelSpec, models.Hyperparams]:
    """Config file first, then explicit flags; validated before any data is touched."""
    values = models.parse_config_text(args.config.read_text()) if args.config else {}
    known = models.config_fields()
    for name in MODEL_FLAGS:
        raw = getattr(args, name)
        if raw is not None:
            try:
                values[name] = models.parse_value(known[name][1], raw)
            except ValueError as exc:
                raise ConfigurationError(f"--{name.replace('_', '-')}: {exc}") from exc
    spec, hp = models.from_config_values(values)
    spec.resolved()
    hp.validate()
    return spec, hp


def data_dir(args, name: str) -> Path:
    return (args.data_dir or datasets.default_data_dir()) / name


def load_dataset(args, spec: models.ModelSpec, hp: models.Hyperparams) -> datasets.DatasetHandle:
    directory = data_dir(args, spec.dataset)
    if getattr(args, "fetch", False):
        datasets.fetch(spec.dataset, directory)
    try:
        data = datasets.load(spec.dataset, directory)
    except AvailabilityError as exc:
        raise AvailabilityError(f"{exc}\nhint: hadamard-cnn fetch {spec.dataset} --data-dir "
                                f"{args.data_dir or datasets.default_data_dir()}") from None
    return data.subset(hp.train_limit, hp.test_limit)


def describe(spec: models.ModelSpec, hp: models.Hyperparams) -> str:
    s = spec.resolved()
    return (f"dataset={s.dataset} method={s.method} depth={s.depth} kernel_size={s.kernel_size} "
            f"features={s.features_per_layer} bn={s.bn_position} init={s.init} batch_size={hp.batch_size} "
            f"lr={hp.lr:g} weight_decay={hp.weight_decay:g} epochs={hp.epochs} seed={hp.seed}")


def cmd_train(args) -> int:
    spec, hp = resolve_config(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    models.save_config(out / "config.cfg", spec, hp)
    print(describe(spec, hp))
    config = dataclasses.asdict(spec) | dataclasses.asdict(hp)
    if hp.epochs == 0:
        report = training.TrainReport(config=config, seed=hp.seed)
    else:
        data = load_dataset(args, spec, hp)
        model = models.build_model(spec, np.random.default_rng(hp.seed), hp.dtype)
        try:
            report = training.train(model, data, hp, config, checkpoint_path=out / "checkpoint.npz")
        except DivergenceError as exc:
            if exc.report is not None:
                exc.report.write_csv(out / "metrics.csv")
            raise
    report.write_csv(out / "metrics.csv")
    summary = report.summary()
    (out / "summary.txt").write_text(describe(spec, hp) + "\n" + summary + "\n")
    print(summary)
    if report.epochs:
        print(f"final test accuracy: {100 * report.final_test_acc:.2f}%")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec, hp = resolve_config(args)
    checkpoint = args.checkpoint or args.out / "checkpoint.npz"
    if not checkpoint.exists():
        raise AvailabilityError(f"checkpoint {checkpoint} not found (run `hadamard-cnn train` first)")
    data = load_dataset(args, spec, hp)
    model = models.build_model(spec, np.random.default_rng(hp.seed), hp.dtype)
    training.restore(model, training.load_checkpoint(checkpoint))
    acc = training.evaluate(model, data.images("test"), data.labels("test"), dtype=hp.dtype)
    print(describe(spec, hp))
    print(f"test accuracy: {100 * acc:.2f}% ({data.size('test')} examples)")
    return EXIT_OK


FAULTS = {"flip-sign": verify.flipped_sign_wht}


def cmd_verify(args) -> int:
    sizes = parse_int_range(args.sizes, powers_of_two=True)
    transform = FAULTS[args.inject_fault] if args.inject_fault else verify.wht_2d
    results = verify.run_all(sizes, args.trials, args.grad_seeds, transform)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def cmd_energy(args) -> int:
    n_values = parse_int_range(args.images, powers_of_two=True)
    f_values = parse_int_range(args.kernels)
    if args.alpha:
        alphas = parse_floats(args.alpha)
    else:
        alphas = [energy.preset(p).alpha for p in args.precision.split(",") if p.strip()]
    c_ins = parse_int_range(args.cin) if args.mode == "multi" else []
    rows = energy.sweep(args.mode, n_values, f_values, alphas, c_ins)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / (args.file or f"energy_{args.mode}.csv")
    path.write_text(energy.sweep_csv(rows))
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_fetch(args) -> int:
    root = args.data_dir or datasets.default_data_dir()
    for name in args.datasets:
        if name not in datasets.DEFAULT_URLS:
            raise ConfigurationError(f"unknown dataset {name!r}; expected one of {tuple(datasets.DEFAULT_URLS)}")
    for name in args.datasets:
        changed = datasets.fetch(name, root / name, args.url, args.timeout)
        print(f"{name}: {'downloaded' if changed else 'already present'} in {root / name}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hadamard-cnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", help="download and verify datasets")
    p.add_argument("datasets", nargs="*", default=["mnist", "cifar10"])
    p.add_argument("--data-dir", type=Path, default=None)
    p.add_argument("--url", default=None, help=f"base URL overriding ${datasets.MIRROR_ENV} and the default host")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("train", help="train one configuration")
    _add_model_flags(p)
    p.add_argument("--fetch", action="store_true", help="download the dataset first if missing")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="test accuracy of a saved checkpoint")
    _add_model_flags(p)
    p.add_argument("--checkpoint", type=Path, default=None, help="default <out>/checkpoint.npz")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the transform, gradient and parity self-checks")
    p.add_argument("--sizes", default="2,4,8,16,32,64", help="transform sizes, e.g. 2,4,8 or 2:16")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--grad-seeds", type=int, default=20)
    p.add_argument("--inject-fault", choices=sorted(FAULTS), default=None,
                   help="replace the transform with a broken one (self-test of the suites)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("energy", help="energy-saving ratio sweep as CSV")
    p.add_argument("--mode", choices=("single", "multi"), default="single")
    p.add_argument("--images", default="4:128", help="image sizes N; 'a:b' means powers of two in [a, b]")
    p.add_argument("--kernels", default="3,5,7")
    p.add_argument("--alpha", default=None, help="comma-separated alpha values (overrides --precision)")
    p.add_argument("--precision", default="fp16,fp32", help="presets supplying alpha")
    p.add_argument("--cin", default="2:5", help="input channel counts (multi mode)")
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--file", default=None, help="CSV name inside --out (default energy_<mode>.csv)")
    p.set_defaults(func=cmd_energy)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AvailabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNAVAILABLE
    except (IntegrityError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_DATA
    except HadamardCNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
