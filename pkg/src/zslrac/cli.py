"""Command-line interface: ``zslrac {synth,train,adapt,eval,sweep,hubness}``.

Settings resolve as command-line flag > ``--config`` JSON > default, and
the resolved values are echoed into every report.  Wall-clock timings go
to a separate ``timings.json`` so every other output is byte-reproducible.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .adapt import AdaptConfig, load_adapt_json
from .classify import hubness_skewness
from .data import SyntheticConfig, load_dataset, save_dataset, synthesize_dataset
from .embed import EmbeddingNet, TrainConfig, train, write_trace
from .errors import DataError, NumericalError
from .pipeline import VARIANTS, VariantError, check_variant, evaluate_variant, run_adaptation

log = logging.getLogger("zslrac")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

TRAIN_DEFAULTS = TrainConfig()
ADAPT_DEFAULTS = AdaptConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Timer:
    def __init__(self):
        self.stages = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = round(time.perf_counter() - t0, 6)

    def write(self, out_dir):
        _write_json(Path(out_dir) / "timings.json", {"seconds": self.stages})


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _out_dir(path):
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {p}: {exc}") from None
    return p


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return cfg


def _pick(flag, section, key, default):
    if flag is not None:
        return flag
    return section.get(key, default)


def resolve_train(args, cfg):
    sec = cfg.get("train", {})
    seed = _pick(args.seed, sec, "seed", cfg.get("seed", TRAIN_DEFAULTS.seed))
    try:
        return TrainConfig(
            lambda_r=float(_pick(args.lambda_r, sec, "lambda_r", TRAIN_DEFAULTS.lambda_r)),
            rho=float(_pick(args.rho, sec, "rho", TRAIN_DEFAULTS.rho)),
            learning_rate=float(_pick(args.lr, sec, "learning_rate", TRAIN_DEFAULTS.learning_rate)),
            epochs=int(_pick(args.epochs, sec, "epochs", TRAIN_DEFAULTS.epochs)),
            batch_size=int(_pick(args.batch_size, sec, "batch_size", TRAIN_DEFAULTS.batch_size)),
            seed=int(seed),
            hidden_dim=int(_pick(args.hidden_dim, sec, "hidden_dim", TRAIN_DEFAULTS.hidden_dim)),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def resolve_adapt(args, cfg):
    sec = cfg.get("adapt", {})
    gap_tol = _pick(args.gap_tol, sec, "gap_tol", ADAPT_DEFAULTS.gap_tol)
    try:
        return AdaptConfig(
            lambda_g=float(_pick(args.lambda_g, sec, "lambda_g", ADAPT_DEFAULTS.lambda_g)),
            max_iters=int(_pick(args.max_iters, sec, "max_iters", ADAPT_DEFAULTS.max_iters)),
            gap_tol=None if gap_tol is None else float(gap_tol),
            step_rule=_pick(args.step_rule, sec, "step_rule", ADAPT_DEFAULTS.step_rule),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def resolve_gamma(args, cfg):
    gamma = float(_pick(args.gamma, cfg.get("calibration", {}), "gamma", 1.0))
    if not gamma > 0:
        raise UsageError("gamma must be positive")
    return gamma


def resolve_variant(args, cfg, default="R"):
    return _pick(getattr(args, "variant", None), cfg, "variant", default)


def _dataset_arg(args, cfg, attr="data", key="dataset"):
    path = getattr(args, attr, None) or cfg.get(key)
    if path is None:
        raise UsageError(f"--{attr.replace('_', '-')} is required")
    return load_dataset(path, normalize=bool(args.normalize or cfg.get("normalize", False)))


def _load_net(path):
    if not Path(path).exists():
        raise DataError(f"net file not found: {path}")
    return EmbeddingNet.load(path)


# --- commands -----------------------------------------------------------


def cmd_synth(args, cfg):
    sec = cfg.get("synth", {})
    defaults = SyntheticConfig()
    try:
        scfg = SyntheticConfig(
            seen_classes=int(_pick(args.seen, sec, "seen_classes", defaults.seen_classes)),
            unseen_classes=int(_pick(args.unseen, sec, "unseen_classes", defaults.unseen_classes)),
            samples_per_class=int(_pick(args.per_class, sec, "samples_per_class", defaults.samples_per_class)),
            feature_dim=int(_pick(args.feature_dim, sec, "feature_dim", defaults.feature_dim)),
            descriptor_dim=int(_pick(args.descriptor_dim, sec, "descriptor_dim", defaults.descriptor_dim)),
            cluster_spread=float(_pick(args.spread, sec, "cluster_spread", defaults.cluster_spread)),
            descriptor_noise=float(_pick(args.desc_noise, sec, "descriptor_noise", defaults.descriptor_noise)),
            seed=int(_pick(args.seed, cfg, "seed", defaults.seed)),
            center_scale=float(_pick(args.center_scale, sec, "center_scale", defaults.center_scale)),
            latent_dim=_pick(args.latent_dim, sec, "latent_dim", None),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(args.out)
    tr, te = synthesize_dataset(scfg)
    save_dataset(tr, out, "train.json", binary=args.binary)
    save_dataset(te, out, "test.json", binary=args.binary)
    log.info("wrote synthetic train/test datasets to %s", out)
    return EXIT_OK


def _train_report(tcfg, result, data_path):
    return {
        "config": {"train": tcfg.to_dict(), "dataset": str(data_path)},
        "seen_class_ids": list(result.seen_class_ids),
        "initial_total": result.trace[0][3],
        "final": dict(zip(("epoch", "l1", "l2", "total"), result.trace[-1])),
    }


def cmd_train(args, cfg):
    tcfg = resolve_train(args, cfg)
    timer = Timer()
    with timer.stage("load"):
        ds = _dataset_arg(args, cfg)
    out = _out_dir(args.out)
    with timer.stage("train"):
        result = train(ds, tcfg)
    result.net.save(out / "net.bin")
    write_trace(out / "loss_trace.csv", result.trace)
    _write_json(out / "train_report.json", _train_report(tcfg, result, args.data or cfg.get("dataset")))
    timer.write(out)
    return EXIT_OK


def cmd_adapt(args, cfg):
    acfg = resolve_adapt(args, cfg)
    timer = Timer()
    net = _load_net(args.net)
    with timer.stage("load"):
        test = _dataset_arg(args, cfg)
    out = _out_dir(args.out)
    with timer.stage("adapt"):
        result = run_adaptation(net, test, acfg)
    payload = result.to_json_dict()
    payload["config"] = {"adapt": acfg.to_dict(), "gap_tol_resolved": _resolved_tol(acfg, result)}
    _write_json(out / "adapt.json", payload)
    timer.write(out)
    return EXIT_OK


def _resolved_tol(acfg, result):
    if acfg.gap_tol is not None:
        return acfg.gap_tol
    return 1e-6 * result.objective_trace[0][1]


def _eval_once(net, test, variant, gamma, acfg, adaptation, echo, out, timer):
    with timer.stage("evaluate"):
        report, gen, conv = evaluate_variant(net, test, variant, gamma, acfg, adaptation, echo)
    report.to_json(out / "report.json")
    gen.to_csv(out / "predictions.csv")
    conv.to_csv(out / "predictions_conventional.csv")
    return report


def cmd_eval(args, cfg):
    variant = resolve_variant(args, cfg)
    gamma = resolve_gamma(args, cfg)
    acfg = resolve_adapt(args, cfg)
    adapt_path = args.adapt or cfg.get("adapt_file")
    try:
        flags = check_variant(variant, gamma, None if adapt_path is None else True)
    except VariantError as exc:
        raise UsageError(str(exc)) from None
    timer = Timer()
    net = _load_net(args.net)
    with timer.stage("load"):
        test = _dataset_arg(args, cfg)
    out = _out_dir(args.out)
    adaptation = None
    if adapt_path is not None:
        ids, rows, _ = load_adapt_json(adapt_path)
        adaptation = (ids, rows)
    elif flags["adapt"]:
        with timer.stage("adapt"):
            adaptation = run_adaptation(net, test, acfg)
    echo = {"adapt": acfg.to_dict() if flags["adapt"] else None, "adapt_file": adapt_path,
            "net": str(args.net), "dataset": str(args.data or cfg.get("dataset"))}
    _eval_once(net, test, variant, gamma, acfg, adaptation, echo, out, timer)
    timer.write(out)
    return EXIT_OK


def _parse_grid(text):
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None
    if not grid:
        raise UsageError("empty grid")
    return grid


def cmd_sweep(args, cfg):
    grid = _parse_grid(args.grid)
    default_variant = "RC" if args.param == "gamma" else "R"
    variant = resolve_variant(args, cfg, default_variant)
    tcfg = resolve_train(args, cfg)
    acfg = resolve_adapt(args, cfg)
    timer = Timer()
    with timer.stage("load"):
        test = _dataset_arg(args, cfg)
    out = _out_dir(args.out)
    rows = []
    if args.param == "gamma":
        if args.net is not None:
            net = _load_net(args.net)
        else:
            with timer.stage("train"):
                net = train(_dataset_arg(args, cfg, "train_data", "train_dataset"), tcfg).net
        adaptation = None
        if VARIANTS.get(variant, {}).get("adapt"):
            with timer.stage("adapt"):
                adaptation = run_adaptation(net, test, acfg)
        for g in grid:
            try:
                report, _, _ = evaluate_variant(net, test, variant, g, acfg, adaptation)
            except VariantError as exc:
                raise UsageError(str(exc)) from None
            rows.append((g, report))
    else:
        gamma = resolve_gamma(args, cfg)
        train_ds = _dataset_arg(args, cfg, "train_data", "train_dataset")
        for r in grid:
            rcfg = TrainConfig(**{**tcfg.to_dict(), "rho": r})
            with timer.stage(f"train_rho={r!r}"):
                net = train(train_ds, rcfg).net
            try:
                report, _, _ = evaluate_variant(net, test, variant, gamma, acfg)
            except VariantError as exc:
                raise UsageError(str(exc)) from None
            rows.append((r, report))
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "tr", "u", "s", "H"])
        for p, rep in rows:
            w.writerow([repr(p), repr(rep.acc_conventional), repr(rep.acc_unseen),
                        repr(rep.acc_seen), repr(rep.harmonic_mean)])
    _write_json(out / "sweep_config.json", {
        "param": args.param, "grid": grid, "variant": variant,
        "train": tcfg.to_dict(), "adapt": acfg.to_dict(),
    })
    timer.write(out)
    return EXIT_OK


def cmd_hubness(args, cfg):
    gamma = resolve_gamma(args, cfg)
    tcfg = resolve_train(args, cfg)
    timer = Timer()
    with timer.stage("load"):
        test = _dataset_arg(args, cfg)
    out = _out_dir(args.out)
    variant = "RC" if gamma != 1.0 else "R"
    nets = {}
    if bool(args.net_baseline) != bool(args.net):
        raise UsageError("--net-baseline and --net must be given together")
    if args.net_baseline and args.net:
        nets["baseline"] = _load_net(args.net_baseline)
        nets["structural"] = _load_net(args.net)
    else:
        train_ds = _dataset_arg(args, cfg, "train_data", "train_dataset")
        with timer.stage("train_baseline"):
            nets["baseline"] = train(train_ds, TrainConfig(**{**tcfg.to_dict(), "rho": 0.0})).net
        with timer.stage("train_structural"):
            nets["structural"] = train(train_ds, tcfg).net
    result = {"gamma": gamma, "train": tcfg.to_dict()}
    for name, net in nets.items():
        report, _, _ = evaluate_variant(net, test, variant, gamma)
        counts = list(report.n1_histogram.values())
        result[name] = {
            "skewness": hubness_skewness(counts),
            "n1_histogram": {str(k): int(v) for k, v in report.n1_histogram.items()},
        }
    _write_json(out / "hubness.json", result)
    timer.write(out)
    return EXIT_OK


# --- argument parsing -----------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--normalize", action="store_true", help="L2-normalize feature and descriptor rows")


def _add_train(p):
    p.add_argument("--rho", type=float)
    p.add_argument("--lambda-r", type=float)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)


def _add_adapt(p):
    p.add_argument("--lambda-g", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--gap-tol", type=float)
    p.add_argument("--step-rule", choices=["guarded", "open_loop"])


def build_parser():
    parser = _Parser(prog="zslrac", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic GZSL dataset")
    _add_common(p)
    p.add_argument("--seen", type=int)
    p.add_argument("--unseen", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--descriptor-dim", type=int)
    p.add_argument("--spread", type=float)
    p.add_argument("--desc-noise", type=float)
    p.add_argument("--center-scale", type=float)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--binary", action="store_true", help="write features as .bin")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the descriptor embedding")
    _add_common(p)
    _add_train(p)
    p.add_argument("--data", help="training manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="adapt unseen-class embeddings to test data")
    _add_common(p)
    _add_adapt(p)
    p.add_argument("--net", required=True)
    p.add_argument("--data", help="test manifest")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a trained net")
    _add_common(p)
    _add_adapt(p)
    p.add_argument("--net", required=True)
    p.add_argument("--data", help="test manifest")
    p.add_argument("--adapt", help="adapt.json from the adapt command")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="metrics over a grid of rho or gamma")
    _add_common(p)
    _add_train(p)
    _add_adapt(p)
    p.add_argument("--param", choices=["rho", "gamma"], required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--data", help="test manifest")
    p.add_argument("--train-data", help="training manifest")
    p.add_argument("--net", help="fixed net for a gamma sweep")
    p.add_argument("--variant", choices=sorted(VARIANTS))
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("hubness", help="N1 skewness of a rho=0 baseline vs a structural net")
    _add_common(p)
    _add_train(p)
    p.add_argument("--data", help="test manifest")
    p.add_argument("--train-data", help="training manifest")
    p.add_argument("--net-baseline", help="baseline net (skip training)")
    p.add_argument("--net", help="structural net (skip training)")
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_hubness)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help and argument errors
        return exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except (UsageError, VariantError) as exc:
        print(f"zslrac: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError) as exc:
        print(f"zslrac: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"zslrac: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
