"""Command-line entry point: one pipeline stage per subcommand.

Every successful command writes its outputs plus ``<output>.manifest`` (or
``manifest.txt`` inside an output directory). Failures print exactly one
line to stderr, ``spikegan: error[<code>]: <message>``, and exit nonzero:
2 for usage errors (bad flags, missing files, invalid configuration), 1 for
everything else.
"""

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    ClassLabel,
    SplitSpec,
    SyntheticClassProfile,
    generate_synthetic_recording,
    load_window_set,
    make_synthetic_dataset,
    read_recording,
    save_window_set,
    split_dataset,
    write_recording,
)
from .errors import ConfigurationError, FormatError, InvalidInputError, SpikeGANError
from .model import ModelConfig, generator_grid_for, parse_key_values
from .profiles import PROFILES, profile_configs
from .signal import (
    FilterSpec,
    SpikeWindowSet,
    compute_threshold,
    max_abs_scale,
    normalize_windows,
    preprocess_recording,
)

logger = logging.getLogger("spikegan")

EXIT_USAGE = 2
EXIT_FAILURE = 1


class UsageError(SpikeGANError):
    code = "usage"


class MissingFileError(UsageError):
    code = "missing-file"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# manifests -----------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclasses.dataclass
class RunManifest:
    """Everything needed to re-run a command and check its outputs."""

    command: str
    argv: list
    config: dict
    seeds: dict
    inputs: dict
    outputs: dict
    started: str = ""
    finished: str = ""
    version: str = __version__

    def to_text(self):
        lines = [f"command={self.command}", f"argv={json.dumps(self.argv)}", f"version={self.version}",
                 f"started={self.started}", f"finished={self.finished}"]
        lines += [f"config.{k}={v}" for k, v in self.config.items()]
        lines += [f"seed.{k}={v}" for k, v in self.seeds.items()]
        lines += [f"input.{k}={v}" for k, v in self.inputs.items()]
        lines += [f"output.{k}={v}" for k, v in self.outputs.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = parse_key_values(text)
        groups = {"config": {}, "seed": {}, "input": {}, "output": {}}
        for key, value in values.items():
            head, _, rest = key.partition(".")
            if head in groups and rest:
                groups[head][rest] = value
        try:
            return cls(values["command"], json.loads(values["argv"]), groups["config"], groups["seed"],
                       groups["input"], groups["output"], values.get("started", ""), values.get("finished", ""),
                       values.get("version", ""))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"malformed manifest ({exc})") from None


def _stamp():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _flatten(prefix, cfg):
    out = {}
    for k, v in dataclasses.asdict(cfg).items():
        out[f"{prefix}.{k}"] = ",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else v
    return out


def _write_manifest(path, command, argv, config, seeds, inputs, outputs, started):
    manifest = RunManifest(
        command=command, argv=list(argv), config=config, seeds=seeds,
        inputs={str(p): sha256_file(p) for p in inputs},
        outputs={str(p): sha256_file(p) for p in outputs},
        started=started, finished=_stamp())
    Path(path).write_text(manifest.to_text())
    return manifest


def _require(path):
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"no such file: {path}")
    return p


# configuration resolution ---------------------------------------------------

_MODEL_FLAGS = {"noise_dim": int, "head_size": int, "num_heads": int, "ff_dim": int, "num_blocks": int,
                "dropout_rate": float, "embed_dim": int, "window_size": int, "shift_size": int,
                "generator_variant": str, "discriminator_variant": str, "dtype": str}


def _add_model_flags(p):
    g = p.add_argument_group("model")
    for name, typ in _MODEL_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    g.add_argument("--dropout", dest="dropout_rate", type=float, default=None, help="alias of --dropout-rate")
    g.add_argument("--generator-channels", type=str, default=None, help="comma-separated, e.g. 32,16")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--iterations", type=int, default=None)
    g.add_argument("--batch", dest="batch_size", type=int, default=None)
    g.add_argument("--lr", dest="learning_rate", type=float, default=None)
    g.add_argument("--label-smooth", dest="label_smooth_real", type=float, default=None)
    g.add_argument("--log-every", type=int, default=None)
    g.add_argument("--config", type=str, default=None, help="key=value file; flags override it")
    g.add_argument("--profile", choices=PROFILES, default="full",
                   help="base configuration before --config and flags (default: full)")


def _resolve_configs(args, n_channels=None, seq_len=None):
    from .train import TrainConfig

    file_values = parse_key_values(_require(args.config).read_text()) if args.config else {}
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(file_values) - model_fields - train_fields
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base_model, base_train = profile_configs(getattr(args, "profile", "full"))
    m = {**base_model.to_dict(), **{k: v for k, v in file_values.items() if k in model_fields}}
    t = {**base_train.to_dict(), **{k: v for k, v in file_values.items() if k in train_fields}}
    for name in _MODEL_FLAGS:
        if getattr(args, name, None) is not None:
            m[name] = getattr(args, name)
    if getattr(args, "generator_channels", None):
        m["generator_channels"] = args.generator_channels
    window_set = "window_size" in file_values or getattr(args, "window_size", None) is not None
    shift_set = "shift_size" in file_values or getattr(args, "shift_size", None) is not None
    if window_set and not shift_set:
        m["shift_size"] = None  # re-derive the default half-window shift
    for name in ("iterations", "batch_size", "learning_rate", "label_smooth_real", "log_every"):
        if getattr(args, name, None) is not None:
            t[name] = getattr(args, name)
    if getattr(args, "seed", None) is not None:
        t["seed"] = args.seed
    if n_channels is not None:
        m["n_channels"] = n_channels
    if seq_len is not None:
        m["seq_len"] = seq_len
    if "generator_grid" not in file_values:
        channels = m["generator_channels"]
        n_stages = len(channels.split(",") if isinstance(channels, str) else channels)
        m["generator_grid"] = generator_grid_for(m["seq_len"], m["n_channels"], n_stages)
    return ModelConfig.from_dict(m), TrainConfig.from_dict(t)


def _config_inputs(args):
    return [args.config] if getattr(args, "config", None) else []


def _split_spec(args):
    return SplitSpec(args.test_frac, args.labeled_frac, args.val_frac, args.seed)


def _add_split_flags(p):
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--labeled-frac", type=float, default=0.03)
    p.add_argument("--val-frac", type=float, default=0.01)


# split files ------------------------------------------------------------------

_PARTITIONS = ("test", "labeled_train", "validation", "unlabeled_train")


def write_split(splits, path):
    rows = sorted((int(i), name) for name in _PARTITIONS for i in getattr(splits, name))
    Path(path).write_text("index,partition\n" + "".join(f"{i},{name}\n" for i, name in rows))


def read_split(path):
    from .dataio import DatasetSplits

    lines = _require(path).read_text().splitlines()
    if not lines or lines[0] != "index,partition":
        raise FormatError(f"{path}: not a split file")
    parts = {name: [] for name in _PARTITIONS}
    for line in lines[1:]:
        idx, _, name = line.partition(",")
        if name not in parts:
            raise FormatError(f"{path}: unknown partition {name!r}")
        parts[name].append(int(idx))
    return DatasetSplits(**{k: np.array(sorted(v), dtype=np.int64) for k, v in parts.items()})


# subcommands --------------------------------------------------------------------

def cmd_synth(args):
    out = Path(args.output)
    if args.benchmark:
        data = make_synthetic_dataset(args.windows_per_class, args.separation, args.seed)
        save_window_set(data, out)
        return {"config": {"windows_per_class": args.windows_per_class, "separation": args.separation},
                "seeds": {"seed": args.seed}, "inputs": [], "outputs": [out]}
    missing = [f for f in ("rate", "amplitude", "duration") if getattr(args, f) is None]
    if missing or args.klass is None:
        raise UsageError("synth needs --class, --rate, --amplitude and --duration (or --benchmark)")
    try:
        label = ClassLabel[args.klass.upper()] if not args.klass.isdigit() else ClassLabel(int(args.klass))
    except (KeyError, ValueError):
        names = ", ".join(c.name.lower() for c in ClassLabel)
        raise UsageError(f"--class must be one of {names} or 0-{len(ClassLabel) - 1}, got {args.klass!r}") from None
    profile = SyntheticClassProfile(args.rate, args.amplitude, args.amplitude_sd, args.width, args.polarity)
    rec = generate_synthetic_recording(profile, args.duration, args.seed, label=int(label))
    write_recording(rec, out)
    meta = Path(str(out) + ".meta")
    config = {f"profile.{k}": v for k, v in dataclasses.asdict(profile).items()}
    config.update({"class": label.name.lower(), "duration": args.duration})
    return {"config": config, "seeds": {"seed": args.seed}, "inputs": [], "outputs": [out, meta]}


def cmd_preprocess(args):
    *inputs, output = args.paths
    if not inputs:
        raise UsageError("preprocess needs at least one input recording and an output path")
    spec = FilterSpec(args.cutoff_hz, args.order, args.sampling_rate_hz)
    if args.auto_threshold and args.threshold_uv is not None:
        raise UsageError("give either --threshold-uv or --auto-threshold, not both")
    if args.auto_threshold:
        try:
            stds = [float(v) for v in args.auto_threshold.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"--auto-threshold expects numbers, got {args.auto_threshold!r}") from None
        args.threshold_uv = compute_threshold(stds)
    elif args.threshold_uv is None:
        args.threshold_uv = 10.0
    sets = []
    for path in inputs:
        rec = read_recording(_require(path))
        if rec.sampling_rate_hz != spec.sampling_rate_hz:
            raise InvalidInputError(f"{path}: sampled at {rec.sampling_rate_hz} Hz, filter expects "
                                    f"{spec.sampling_rate_hz} Hz")
        sets.append(preprocess_recording(rec, spec, args.threshold_uv, args.window_len))
    data = SpikeWindowSet.concatenate(sets)
    data.windows = data.windows.astype(np.float32)
    save_window_set(data, output)
    config = {"cutoff_hz": args.cutoff_hz, "order": args.order, "sampling_rate_hz": args.sampling_rate_hz,
              "threshold_uv": args.threshold_uv, "window_len": args.window_len, "n_windows": len(data)}
    return {"config": config, "seeds": {}, "inputs": inputs, "outputs": [Path(output)]}


def cmd_split(args):
    data = load_window_set(_require(args.data))
    spec = _split_spec(args)
    splits = split_dataset(data, spec)
    write_split(splits, args.output)
    config = {**{f"split.{k}": v for k, v in dataclasses.asdict(spec).items()},
              **{f"size.{k}": v for k, v in splits.sizes().items()}}
    return {"config": config, "seeds": {"split": args.seed}, "inputs": [args.data], "outputs": [Path(args.output)]}


def _load_splits(args, data):
    if args.split:
        return read_split(args.split), [args.split]
    return split_dataset(data, _split_spec(args)), []


def cmd_train(args):
    from .train import save_checkpoint, train

    data = load_window_set(_require(args.data))
    if data.labels is None:
        raise InvalidInputError(f"{args.data}: training needs labels")
    splits, extra_inputs = _load_splits(args, data)
    model_config, train_config = _resolve_configs(args, data.n_channels, data.window_len)
    scale = max_abs_scale(data.windows[splits.train])
    normed = normalize_windows(data, scale)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(splits, model_config, train_config, normed)
    ckpt, log_csv = out / "checkpoint.bin", out / "train_log.csv"
    save_checkpoint(result.generator, result.discriminator, ckpt)
    result.log.to_csv(log_csv)
    (out / "model_config.txt").write_text(model_config.to_text())
    (out / "train_config.txt").write_text(train_config.to_text())
    (out / "normalization.txt").write_text(f"scale_uV={scale!r}\n")
    write_split(splits, out / "split.csv")
    outputs = [ckpt, log_csv, out / "model_config.txt", out / "train_config.txt", out / "normalization.txt",
               out / "split.csv"]
    config = {**_flatten("model", model_config), **_flatten("train", train_config)}
    return {"config": config, "seeds": {"split": args.seed, "train": train_config.seed},
            "inputs": [args.data] + extra_inputs + _config_inputs(args), "outputs": outputs, "manifest_dir": out}


def cmd_eval(args):
    from .autodiff import load_tensors
    from .evaluation import ConfusionMatrix, compute_metrics
    from .model import build_models
    from .train import load_checkpoint, predict_logits

    run = Path(args.run)
    data = load_window_set(_require(args.data))
    if data.labels is None:
        raise InvalidInputError(f"{args.data}: evaluation needs labels")
    model_config = ModelConfig.from_text(_require(run / "model_config.txt").read_text())
    scale = float(parse_key_values(_require(run / "normalization.txt").read_text())["scale_uV"])
    splits = read_split(args.split or run / "split.csv")
    idx = getattr(splits, args.partition)
    generator, discriminator = build_models(model_config, 0)
    load_checkpoint(generator, discriminator, load_tensors(_require(run / "checkpoint.bin")))
    normed = normalize_windows(data, scale)
    pred = predict_logits(discriminator, normed.windows[idx].astype(model_config.dtype)).argmax(axis=1)
    cm = ConfusionMatrix.from_predictions(normed.labels[idx], pred)
    report = compute_metrics(cm)
    out = Path(args.output)
    lines = ["metric,value"] + [f"{k},{v!r}" for k, v in report.as_dict().items()]
    for k, name in enumerate(c.name.lower() for c in ClassLabel):
        lines += [f"precision_{name},{report.precision[k]!r}", f"recall_{name},{report.recall[k]!r}",
                  f"f1_{name},{report.f1[k]!r}"]
    lines += [f"confusion_{i}_{j},{int(cm.counts[i, j])}" for i in range(3) for j in range(3)]
    out.write_text("\n".join(lines) + "\n")
    print(f"accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f}")
    return {"config": {"partition": args.partition}, "seeds": {},
            "inputs": [args.data, run / "checkpoint.bin", run / "model_config.txt"], "outputs": [out]}


def cmd_crossval(args):
    from .evaluation import monte_carlo_cv

    data = load_window_set(_require(args.data))
    if data.labels is None:
        raise InvalidInputError(f"{args.data}: cross-validation needs labels")
    model_config, train_config = _resolve_configs(args, data.n_channels, data.window_len)
    spec = SplitSpec(args.test_frac, args.labeled_frac, args.val_frac, 0)
    report = monte_carlo_cv(data, model_config, train_config, args.runs, args.seed, spec, n_jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    (out / "report.txt").write_text(report.format_table())
    print(report.format_table(), end="")
    config = {**_flatten("model", model_config), **_flatten("train", train_config), "runs": args.runs,
              **{f"split.{k}": v for k, v in dataclasses.asdict(spec).items() if k != "seed"}}
    return {"config": config, "seeds": {"base": args.seed}, "inputs": [args.data] + _config_inputs(args),
            "outputs": [out / "report.csv", out / "report.txt"], "manifest_dir": out}


def cmd_hpo(args):
    from .hpo import run_search, trials_to_csv

    data = load_window_set(_require(args.data))
    if data.labels is None:
        raise InvalidInputError(f"{args.data}: search needs labels")
    model_config, train_config = _resolve_configs(args, data.n_channels, data.window_len)
    spec = SplitSpec(args.test_frac, args.labeled_frac, args.val_frac, args.seed)
    limit = int(args.memory_limit_gb * 2 ** 30) if args.memory_limit_gb else None
    best, table = run_search(data, args.trials, args.budget, args.seed, base_model_config=model_config,
                             base_train_config=train_config, split_spec=spec, memory_limit_bytes=limit)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trials_to_csv(table, out / "trials.csv")
    best_text = "".join(f"{k}={v!r}\n" for k, v in best.params.items())
    best_text += f"trial={best.trial}\nval_accuracy={best.val_accuracy!r}\n"
    (out / "best.txt").write_text(best_text)
    # the winner as a config file: `train --config best_config.txt` re-trains it at full budget
    (out / "best_config.txt").write_text("".join(f"{k}={v!r}\n" for k, v in best.params.items()))
    print(f"best trial {best.trial}: val_accuracy={best.val_accuracy:.4f}")
    config = {**_flatten("model", model_config), **_flatten("train", train_config), "trials": args.trials,
              "budget": args.budget}
    return {"config": config, "seeds": {"search": args.seed}, "inputs": [args.data] + _config_inputs(args),
            "outputs": [out / "trials.csv", out / "best.txt", out / "best_config.txt"], "manifest_dir": out}


def cmd_replay(args):
    """Re-run the command recorded in a manifest and compare output checksums."""
    manifest = RunManifest.from_text(_require(args.manifest).read_text())
    changed = [p for p, digest in manifest.inputs.items() if not Path(p).is_file() or sha256_file(p) != digest]
    if changed:
        raise InvalidInputError(f"replay inputs missing or changed: {', '.join(changed)}")
    code = main(manifest.argv)
    if code != 0:
        return {"exit": code}
    mismatched = [p for p, digest in manifest.outputs.items()
                  if not Path(p).is_file() or sha256_file(p) != digest]
    if mismatched:
        raise SpikeGANError(f"replay outputs differ: {', '.join(mismatched)}")
    print(f"replay matched {len(manifest.outputs)} output checksums")
    return None


def build_parser():
    parser = _Parser(prog="spikegan", description="Semi-supervised spike classification pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic recording or benchmark window set")
    p.add_argument("--class", dest="klass", type=str)
    p.add_argument("--rate", type=float, help="spike rate in Hz")
    p.add_argument("--amplitude", type=float, help="mean spike amplitude in uV")
    p.add_argument("--amplitude-sd", type=float, default=5.0)
    p.add_argument("--width", type=int, default=16, help="spike width in samples")
    p.add_argument("--polarity", type=float, default=0.0)
    p.add_argument("--duration", type=float, help="seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--benchmark", action="store_true", help="write a labeled 3-class window set instead")
    p.add_argument("--windows-per-class", type=int, default=1000)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("output")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="filter, threshold and segment recordings")
    p.add_argument("--cutoff-hz", type=float, default=700.0)
    p.add_argument("--filter-order", "--order", dest="order", type=int, default=4)
    p.add_argument("--sampling-rate-hz", type=float, default=30000.0)
    p.add_argument("--threshold-uv", type=float, default=None, help="absolute threshold (default 10)")
    p.add_argument("--auto-threshold", type=str, default=None, metavar="STDS",
                   help="comma-separated per-class noise stds; threshold = 2 * round(mean)")
    p.add_argument("--window-len", type=int, default=100)
    p.add_argument("paths", nargs="+", help="input recordings followed by the output window-set path")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="partition a window set")
    _add_split_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("data")
    p.add_argument("output")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train generator and discriminator")
    _add_split_flags(p)
    p.add_argument("--seed", type=int, default=0, help="split seed (and training seed unless configured)")
    p.add_argument("--split", type=str, default=None, help="split file from the split command")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained discriminator")
    p.add_argument("--split", type=str, default=None)
    p.add_argument("--partition", choices=_PARTITIONS, default="test")
    p.add_argument("data")
    p.add_argument("run", help="output directory of the train command")
    p.add_argument("output", help="metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossval", help="Monte Carlo cross-validation")
    _add_split_flags(p)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("data")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("hpo", help="hyperparameter search")
    _add_split_flags(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--budget", type=int, default=100, help="iterations per trial")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--memory-limit-gb", type=float, default=None, help="prune trials estimated above this")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("data")
    p.set_defaults(func=cmd_hpo)

    p = sub.add_parser("replay", help="re-run a manifest and verify its output checksums")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def _error(exc):
    code = getattr(exc, "code", "error")
    message = " ".join(str(exc).split()) or type(exc).__name__
    print(f"spikegan: error[{code}]: {message}", file=sys.stderr)
    return EXIT_USAGE if isinstance(exc, (UsageError, ConfigurationError)) else EXIT_FAILURE


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _error(exc)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    started = _stamp()
    try:
        info = args.func(args)
    except (SpikeGANError, OSError, ValueError) as exc:
        return _error(exc)
    if not info or "outputs" not in info:
        return (info or {}).get("exit", 0)
    where = info.get("manifest_dir")
    manifest_path = Path(where) / "manifest.txt" if where else Path(str(info["outputs"][0]) + ".manifest")
    _write_manifest(manifest_path, args.command, argv, info["config"], info["seeds"], info["inputs"],
                    info["outputs"], started)
    return 0


def entry_point():
    sys.exit(main())
