"""Command-line entry point: ``gseg <subcommand> ...``.

Exit codes: 0 success, 1 failed check or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

import numpy as np

from .config import parse_config
from .group import GroupSpec

log = logging.getLogger("gseg")


def cmd_gen_data(args) -> int:
    from .data import gen_synthetic

    ds = gen_synthetic(args.n, args.size, args.seed, args.out)
    print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .data import load_dataset
    from .modelio import save_model
    from .segnet import build
    from .train import LOG_COLUMNS, train

    net_cfg, train_cfg = parse_config(args.config)
    if args.augment:
        train_cfg = dataclasses.replace(train_cfg, augment=True)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    data = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    net = build(net_cfg, seed=train_cfg.seed, dtype=np.dtype(train_cfg.dtype))

    log_fh = open(args.log, "w") if args.log else None
    print(",".join(LOG_COLUMNS), file=log_fh or sys.stdout)

    def emit(entry):
        print(entry.csv(), file=log_fh or sys.stdout, flush=True)

    try:
        net, _ = train(net, data, train_cfg, val=val, on_epoch=emit)
    finally:
        if log_fh:
            log_fh.close()
    save_model(net, args.out)
    return 0


def cmd_eval(args) -> int:
    from .data import load_dataset
    from .modelio import load_model
    from .train import evaluate

    net = load_model(args.model)
    scores = evaluate(net, load_dataset(args.data), args.averaging)
    for name, value in scores.items():
        print(f"{name} {value:.6f}")
    return 0


def cmd_predict(args) -> int:
    from .imageio import read_image, write_mask
    from .modelio import load_model
    from .segnet import predict

    net = load_model(args.model)
    image = read_image(args.image)
    if image.shape[0] != 3:
        raise ValueError(f"{args.image}: expected a colour PPM image")
    mask = predict(net, image[None].astype(net.dtype))[0]
    write_mask(args.out, mask)
    return 0


def cmd_check_equivariance(args) -> int:
    from .audit import LAYERS, layer_equivariance, network_equivariance, randomize_buffers
    from .segnet import build

    net_cfg, _ = parse_config(args.config)
    groups = [net_cfg.group] if net_cfg.group is not GroupSpec.P1 else [GroupSpec.P4, GroupSpec.P4M]
    ok = True
    for group in groups:
        for name in LAYERS:
            dev = layer_equivariance(name, group, trials=args.trials, seed=args.seed)
            passed = dev < args.tol
            ok &= passed
            print(f"{group.name:4s} {name:14s} max_dev={dev:.3e} {'PASS' if passed else 'FAIL'}")
    if net_cfg.downsample != "pool":
        print("note: strided_conv downsampling is not exactly equivariant; network check may fail")
    size = args.size or 4 * net_cfg.min_divisor()
    net = randomize_buffers(build(net_cfg, seed=args.seed), seed=args.seed).eval()
    dev = network_equivariance(net, n_inputs=args.trials, size=size, seed=args.seed)
    passed = dev < args.tol
    ok &= passed
    print(f"{net_cfg.group.name:4s} {'network':14s} max_dev={dev:.3e} {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_gradcheck(args) -> int:
    from .gradcheck import finite_diff_report
    from .segnet import build, loss

    net_cfg, _ = parse_config(args.config)
    net = build(net_cfg, seed=args.seed).train()
    rng = np.random.default_rng(args.seed)
    size = args.size or 2 * net_cfg.min_divisor()
    image = rng.uniform(0, 1, (2, 3, size, size))
    target = (rng.uniform(size=(2, 1, size, size)) < 0.5).astype(np.float64)
    report = finite_diff_report(lambda: loss(net.forward(image), target, net_cfg.ds_weights),
                                net.parameters(), epsilon=1e-5, n_samples=args.samples, rng=rng,
                                kink_tol=args.kink_tol)
    passed = report.max_error < 1e-4 and report.skipped <= 0.1 * (report.checked + report.skipped)
    print(f"checked {report.checked} coordinates, skipped {report.skipped} at ReLU/pool kinks")
    print(f"max relative error {report.max_error:.3e} {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def cmd_params(args) -> int:
    from .segnet import build, count_params

    net_cfg, _ = parse_config(args.config)
    eq_cfg = dataclasses.replace(net_cfg, equivariant=True)
    n_eq = count_params(build(eq_cfg))
    n_plain = count_params(build(eq_cfg.plain_twin()))
    print(f"equivariant ({eq_cfg.group.name}) {n_eq}")
    print(f"plain twin {n_plain}")
    print(f"ratio {n_eq / n_plain:.4f}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write a synthetic lesion dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network and save it")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val", help="validation directory (default: training data)")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="write the per-epoch CSV log here instead of stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print JA, DI, AC, SE, SP of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--averaging", choices=("per_image", "pooled"), default="per_image")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment one PPM image into a PGM mask")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("check-equivariance", help="audit every layer and the full network")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_equivariance)

    p = sub.add_parser("gradcheck", help="finite-difference check of the network loss gradient")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=3, help="coordinates probed per parameter tensor")
    p.add_argument("--size", type=int)
    p.add_argument("--kink-tol", type=float, default=1e-4,
                   help="skip coordinates whose one-sided differences disagree by more than this")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter counts of the net and its plain twin")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"gseg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
