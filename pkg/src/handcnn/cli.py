"""Command-line experiment harness.

Subcommands: train, crossval, positive, bench, gradcheck, predict,
dump-activations, make-synth.  Options resolve as flags > config file >
defaults, and every command that writes results echoes its fully resolved
configuration into the output directory as ``config.echo`` (itself a valid
``--config`` file, so any run can be reproduced from its own echo).

Exit codes: 0 success, 1 gradient check failed, 2 usage/dimension error,
3 data error, 4 configuration error, 5 divergence, 6 file-format error.
"""

from __future__ import annotations

import argparse
import sys
import time
from datetime import datetime
from pathlib import Path

from . import bench, data, evaluate, figures, gradcheck, network, tensor, train
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    FormatError,
    HandcnnError,
    UsageError,
)

EXIT_CODES = (
    (DataError, 3),
    (ConfigError, 4),
    (DivergenceError, 5),
    (FormatError, 6),
    (DimensionError, 2),
    (UsageError, 2),
    (HandcnnError, 2),
)

def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_HYPERPARAM_KEYS = {
    "base_lr": float,
    "lr_decay": float,
    "dropout_rate": float,
    "batch_size": int,
    "epochs": int,
    "iters_per_epoch": int,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "init_std": float,
    "seed": int,
}

_CONFIG_KEYS = dict(_HYPERPARAM_KEYS)
_CONFIG_KEYS.update({
    "network": str,
    "k": int,
    "jobs": int,
    "precision": str,
    "figures": _parse_bool,
    "paper_compat": _parse_bool,
    "manifest": str,
    "root": str,
    "out": str,
    "command": str,
})


def load_config_file(path) -> dict:
    """key=value configuration; '#' starts a comment, unknown keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {line_no}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}: line {line_no}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _resolve(args, cfg: dict, key: str, default):
    """flags > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in cfg:
        caster = _CONFIG_KEYS[key] or str
        return caster(cfg[key])
    return default


def _resolve_hyperparams(args, cfg: dict) -> train.Hyperparams:
    h = train.Hyperparams()
    overrides = {}
    for key in _HYPERPARAM_KEYS:
        value = _resolve(args, cfg, key, getattr(h, key))
        overrides[key] = value
    return train.Hyperparams(**overrides)


def _make_out_dir(args, command: str) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    else:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        out = Path("runs") / f"{stamp}-{command}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_echo(out_dir: Path, mapping: dict) -> None:
    lines = [f"{key}={mapping[key]}" for key in sorted(mapping)]
    (out_dir / "config.echo").write_text("\n".join(lines) + "\n")


def _echo_mapping(command: str, h: train.Hyperparams, **extra) -> dict:
    mapping = {"command": command}
    for key in _HYPERPARAM_KEYS:
        mapping[key] = getattr(h, key)
    mapping.update({k: v for k, v in extra.items() if v is not None})
    return mapping


def _load_entries(args, cfg) -> tuple:
    manifest = _resolve(args, cfg, "manifest", None)
    if manifest is None:
        raise DataError("a manifest is required (--manifest or manifest= in the config)")
    manifest = Path(manifest)
    entries = data.load_manifest(manifest)
    root = _resolve(args, cfg, "root", None)
    root = Path(root) if root else manifest.parent
    return manifest, entries, root


def _set_precision(args, cfg) -> str:
    precision = _resolve(args, cfg, "precision", "float32")
    tensor.set_precision(precision)
    return precision


def cmd_train(args) -> int:
    cfg = load_config_file(args.config) if args.config else {}
    h = _resolve_hyperparams(args, cfg)
    precision = _set_precision(args, cfg)
    net_id = _resolve(args, cfg, "network", "shallow")
    manifest, entries, root = _load_entries(args, cfg)
    want_figures = _resolve(args, cfg, "figures", True)
    out = _make_out_dir(args, "train")

    spec = network.build(net_id)
    samples = data.decode_all(entries, root)
    started = time.perf_counter()
    state, trace = train.train(spec, samples, h)
    elapsed = time.perf_counter() - started

    train.save_checkpoint(state, out / "model.hfck")
    trace.to_csv(out / "loss.csv")
    if want_figures:
        figures.save_loss_curve(trace, out / "loss.png", title=f"{net_id}: training loss")
    _write_echo(out, _echo_mapping("train", h, network=net_id, manifest=manifest, root=root,
                                   out=out, precision=precision, figures=want_figures))
    print(f"trained {net_id} for {len(trace)} iterations in {elapsed:.1f}s")
    print(f"final loss: {trace.records[-1].loss:.6f}")
    print(f"outputs in {out}")
    return 0


def cmd_crossval(args) -> int:
    cfg = load_config_file(args.config) if args.config else {}
    h = _resolve_hyperparams(args, cfg)
    precision = _set_precision(args, cfg)
    net_id = _resolve(args, cfg, "network", "shallow")
    k = _resolve(args, cfg, "k", 10)
    jobs = _resolve(args, cfg, "jobs", 1)
    manifest, entries, root = _load_entries(args, cfg)
    want_figures = _resolve(args, cfg, "figures", True)
    out = _make_out_dir(args, "crossval")

    spec = network.build(net_id)
    report = evaluate.cross_validate(entries, spec, h, k=k, root=root, jobs=jobs,
                                     checkpoint_dir=out)
    (out / "report.txt").write_text(report.to_text())
    report.to_csv(out / "folds.csv")
    if want_figures:
        figures.save_fold_accuracy(report, out / "accuracy.png")
    _write_echo(out, _echo_mapping("crossval", h, network=net_id, manifest=manifest, root=root,
                                   out=out, k=k, jobs=jobs, precision=precision,
                                   figures=want_figures))
    print(report.to_text(), end="")
    print(f"outputs in {out}")
    return 0


def cmd_positive(args) -> int:
    cfg = load_config_file(args.config) if args.config else {}
    manifest, entries, root = _load_entries(args, cfg)
    samples = data.decode_all(entries, root)
    out = _make_out_dir(args, "positive")
    rates = []
    lines = ["checkpoint,tpr"]
    for ckpt in args.checkpoint:
        model = train.load_checkpoint(ckpt)
        tpr = evaluate.positive_test(model, samples)
        rates.append(tpr)
        lines.append(f"{ckpt},{tpr!r}")
        print(f"{ckpt}: TPR = {tpr:.6f}")
    mean = sum(rates) / len(rates)
    std = evaluate.sample_std(rates)
    print(f"mean TPR over {len(rates)} model(s): {mean:.6f} (std {std:.6f})")
    (out / "positive.csv").write_text("\n".join(lines) + "\n")
    (out / "positive.txt").write_text(
        f"models: {len(rates)}\nmean_tpr: {mean:.6f}\n"
        f"std_tpr: {std:.6f}  # informational: spread across the supplied fold models\n"
        + "".join(f"{c}: {r:.6f}\n" for c, r in zip(args.checkpoint, rates)))
    _write_echo(out, {"command": "positive", "manifest": manifest, "root": root, "out": out})
    return 0


def _parse_search_space(text: str):
    try:
        w, _, h = text.lower().partition("x")
        return int(w), int(h)
    except ValueError:
        raise ConfigError(f"--search-space must look like 500x600, got {text!r}") from None


def cmd_bench(args) -> int:
    cfg = load_config_file(args.config) if args.config else {}
    paper_compat = bool(args.paper_compat) or _resolve(args, cfg, "paper_compat", False)
    want_figures = _resolve(args, cfg, "figures", True)
    out = _make_out_dir(args, "bench")

    model = train.load_checkpoint(args.checkpoint)
    report = bench.measure_latency(model, n_warmup=args.warmup, n_runs=args.runs)
    text = report.to_text()
    print(text, end="")

    if args.theirs_profile:
        if not args.ours_profile:
            raise ConfigError("normalization needs --ours-profile as well")
        ours = bench.load_profile(args.ours_profile)
        theirs = bench.load_profile(args.theirs_profile)
        if args.theirs_ms is not None:
            theirs_ms = args.theirs_ms
        elif args.theirs_reported_ms is not None and args.search_space:
            w, h = _parse_search_space(args.search_space)
            theirs_ms = bench.best_case_time(args.theirs_reported_ms, w, h,
                                             paper_compat=paper_compat)
            text += f"theirs_best_case_ms: {theirs_ms}\n"
            print(f"theirs_best_case_ms: {theirs_ms}")
        else:
            raise ConfigError("give --theirs-ms, or --theirs-reported-ms with --search-space")
        ours_ms = args.ours_ms if args.ours_ms is not None else report.mean_ms
        comparison = bench.normalize_comparison(ours_ms, ours, theirs_ms, theirs,
                                                paper_compat=paper_compat)
        text += f"ours_ms_used: {ours_ms}\n" + comparison.to_text()
        print(f"ours_ms_used: {ours_ms}")
        print(comparison.to_text(), end="")

    (out / "bench.txt").write_text(text)
    report.runs_csv(out / "runs.csv")
    if want_figures:
        figures.save_latency_runs(report, out / "latency.png")
    _write_echo(out, {"command": "bench", "out": out, "paper_compat": paper_compat,
                      "figures": want_figures})
    print(f"outputs in {out}")
    return 0


def cmd_gradcheck(args) -> int:
    nets = ["shallow", "deep"] if args.network == "both" else [args.network]
    all_passed = True
    for net_id in nets:
        input_hw = args.input_hw or gradcheck.REDUCED_INPUT_HW[net_id]
        spec = network.build(net_id, input_hw=input_hw)
        for seed in range(args.seed, args.seed + args.seeds):
            result = gradcheck.check_network(spec, seed, tolerance=args.tolerance)
            print(result.to_text(), end="")
            all_passed &= result.passed
    return 0 if all_passed else 1


def cmd_predict(args) -> int:
    model = train.load_checkpoint(args.checkpoint)
    pixels = data.load_image(args.image)
    probs, _ = network.forward(model, pixels[None], training=False)
    idx = tensor.argmax(probs[0])
    print(f"{network.CLASS_NAMES[idx]} "
          f"p_nohand={probs[0][0]:.6f} p_hand={probs[0][1]:.6f}")
    return 0


def cmd_dump_activations(args) -> int:
    model = train.load_checkpoint(args.checkpoint)
    pixels = data.load_image(args.image)
    out = _make_out_dir(args, "activations")
    maps = network.export_activation_maps(model, pixels, out_dir=out)
    print(f"wrote {len(maps)} activation maps to {out}")
    return 0


def cmd_make_synth(args) -> int:
    out = _make_out_dir(args, "synth")
    manifest = data.write_synth_dataset(out, args.n, args.seed)
    print(f"wrote {args.n} synthetic images and {manifest}")
    return 0


def _add_common(parser, with_hyperparams: bool = True) -> None:
    parser.add_argument("--config", help="key=value config file (flags override it)")
    parser.add_argument("--out", help="output directory (default: runs/<timestamp>-<cmd>)")
    if with_hyperparams:
        parser.add_argument("--network", choices=["shallow", "deep"])
        parser.add_argument("--seed", type=int)
        parser.add_argument("--lr", dest="base_lr", type=float)
        parser.add_argument("--lr-decay", dest="lr_decay", type=float)
        parser.add_argument("--dropout", dest="dropout_rate", type=float)
        parser.add_argument("--batch-size", dest="batch_size", type=int)
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--iters", dest="iters_per_epoch", type=int)
        parser.add_argument("--init-std", dest="init_std", type=float)
        parser.add_argument("--precision", choices=["float32", "float64"])
        parser.add_argument("--no-figures", dest="figures", action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handcnn",
                                     description="hand/no-hand CNN experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network on a manifest")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--root", help="image root (default: manifest directory)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--root")
    p.add_argument("--k", type=int)
    p.add_argument("--jobs", type=int, help="parallel folds (results independent of N)")
    p.set_defaults(fn=cmd_crossval)

    p = sub.add_parser("positive", help="all-positive (true-positive rate) test")
    _add_common(p, with_hyperparams=False)
    p.add_argument("--manifest")
    p.add_argument("--root")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="trained model; repeat for the per-fold ensemble")
    p.set_defaults(fn=cmd_positive)

    p = sub.add_parser("bench", help="latency measurement and hardware-normalized comparison")
    _add_common(p, with_hyperparams=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--ours-profile", help="hardware profile of this machine")
    p.add_argument("--theirs-profile", help="hardware profile of the foreign machine")
    p.add_argument("--theirs-ms", type=float, help="foreign per-image time, ms")
    p.add_argument("--theirs-reported-ms", type=float,
                   help="foreign reported pipeline time, ms (needs --search-space)")
    p.add_argument("--search-space", help="sliding-window search size, e.g. 500x600")
    p.add_argument("--ours-ms", type=float,
                   help="override our time in the normalization table (reproduce published chains)")
    p.add_argument("--paper-compat", action="store_true",
                   help="round intermediates like the published comparison")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--network", choices=["shallow", "deep", "both"], default="both")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--input-hw", type=int,
                   help="reduced input size keeps the check desk-scale "
                        "(default: 8 for shallow, 12 for deep)")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("dump-activations", help="export last-conv activation graymaps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_dump_activations)

    p = sub.add_parser("make-synth", help="write a synthetic separable dataset")
    p.add_argument("--n", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_make_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except HandcnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for err_type, code in EXIT_CODES:
            if isinstance(exc, err_type):
                return code
        return 2


if __name__ == "__main__":
    sys.exit(main())
