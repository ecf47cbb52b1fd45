"""Command-line interface: ``eegdecode <subcommand> [options]``.

Every subcommand reads and writes files only; diagnostics go to stderr and the
exit status is nonzero on any error. ``--config FILE`` supplies ``key = value``
defaults for the chosen subcommand; explicit flags override them.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import convnet, fbcsp, io, perturbation, rlda, stats
from .errors import FileFormatError, InvalidInputError
from .report import CorrelationEntry, MethodResult, run_report
from .signal import DecodingInterval, StandardizerConfig, TrialSet
from .signal import car_trials, crop_trials, resample_trials, standardize_trials
from .synth import SynthConfig, generate, shuffled_labels

__all__ = ["main", "build_parser", "predict_labels"]


def _err(msg: str) -> None:
    print(f"eegdecode: error: {msg}", file=sys.stderr)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(a) -> None:
    cfg = SynthConfig(
        n_trials=a.n_trials,
        n_channels=a.channels,
        duration_s=a.duration,
        sample_rate=a.rate,
        scenario=a.scenario,
        snr=a.snr,
        seed=a.seed,
    )
    trials = generate(cfg)
    if a.shuffle_labels is not None:
        trials = shuffled_labels(trials, a.shuffle_labels)
    io.write_trialset(trials, a.out)


def cmd_preprocess(a) -> None:
    trials = io.read_trialset(a.data)
    if a.car:
        trials = car_trials(trials)
    if a.resample is not None:
        trials = resample_trials(trials, a.resample)
    if a.standardize is not None:
        decay, eps = a.standardize
        trials = standardize_trials(trials, StandardizerConfig(decay=decay, eps=eps))
    if a.interval is not None:
        trials = crop_trials(trials, DecodingInterval(*a.interval))
    io.write_trialset(trials, a.out)


def cmd_train(a) -> None:
    trials = io.read_trialset(a.data)
    if a.method == "convnet":
        cfg = convnet.ConvNetConfig(
            n_channels=trials.n_channels, n_samples=trials.n_samples, seed=a.seed,
            dropout=a.dropout,
        )
        tcfg = convnet.TrainConfig(
            learning_rate=a.lr, batch_size=a.batch_size, max_epochs=a.max_epochs,
            patience=a.patience, seed=a.seed,
        )

        def log(rec):
            if a.verbose:
                _info("epoch {epoch}: train loss {train_loss:.4f} acc {train_accuracy:.3f} | "
                      "val loss {val_loss:.4f} acc {val_accuracy:.3f}".format(**rec))

        result = convnet.train(convnet.build_model(cfg), trials, tcfg, log=log)
        model = result.model
    elif a.method == "rlda":
        model = rlda.fit_trials(trials, a.bin_ms)
    else:
        model = fbcsp.fbcsp_train(trials, n_pairs=a.n_pairs)
    io.save_model(model, a.out)


def predict_labels(model, trials: TrialSet) -> np.ndarray:
    """Predicted 0/1 labels of any supported model for ``trials``."""
    method = io.model_method(model)
    if method == "convnet":
        return convnet.predict(model, trials)
    if method == "rlda":
        return rlda.predict_trials(model, trials)
    return fbcsp.fbcsp_predict(model, trials)


def cmd_eval(a) -> None:
    model = io.load_model(a.model)
    trials = io.read_trialset(a.data)
    pred = predict_labels(model, trials)
    acc = float((pred == trials.labels).mean())
    result = MethodResult(io.model_method(model), (acc,), interval=str(trials.interval))
    Path(a.report).write_text(run_report([result]), encoding="utf-8")
    if a.predictions:
        with open(a.predictions, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "truth", "prediction"])
            for k, (t, p) in enumerate(zip(trials.labels, pred)):
                w.writerow([k, int(t), int(p)])


def _read_predictions(path):
    truth, pred = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"truth", "prediction"} <= set(reader.fieldnames):
            raise FileFormatError(f"{path}: expected columns 'truth' and 'prediction'")
        for row in reader:
            try:
                truth.append(int(row["truth"]))
                pred.append(int(row["prediction"]))
            except ValueError as exc:
                raise FileFormatError(f"{path}: non-integer label") from exc
    return np.array(pred), np.array(truth)


def cmd_permtest(a) -> None:
    if a.predictions:
        pred, truth = _read_predictions(a.predictions)
    elif a.model and a.data:
        trials = io.read_trialset(a.data)
        pred, truth = predict_labels(io.load_model(a.model), trials), trials.labels
    else:
        raise InvalidInputError("give --predictions, or both --model and --data")
    res = stats.label_permutation_test(pred, truth, n_perm=a.n_perm, seed=a.seed)
    text = (
        f"n_trials = {res.n_trials}\n"
        f"correct = {res.observed_correct}\n"
        f"accuracy = {res.accuracy:.6f}\n"
        f"n_permutations = {res.n_permutations}\n"
        f"seed = {res.seed}\n"
        f"n_at_least = {res.n_at_least}\n"
        f"p_value = {res.p_value:.6g}\n"
    )
    Path(a.out).write_text(text, encoding="utf-8")


def _read_accuracy_table(path):
    """CSV with a ``subject`` column followed by one accuracy column per method."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or len(rows[0]) < 2:
        raise FileFormatError(f"{path}: need a header and at least one subject row")
    methods = rows[0][1:]
    try:
        values = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-numeric accuracy") from exc
    if values.shape[1] != len(methods):
        raise FileFormatError(f"{path}: ragged rows")
    return methods, values


def cmd_compare(a) -> None:
    methods, values = _read_accuracy_table(a.accuracies)
    results = [MethodResult(m, tuple(values[:, i])) for i, m in enumerate(methods)]
    lines = []
    corr = []
    for i in range(len(methods)):
        for j in range(i + 1, len(methods)):
            if a.wilcoxon:
                w = stats.wilcoxon_signed_rank(values[:, i], values[:, j])
                lines.append(f"wilcoxon {methods[i]} vs {methods[j]}: W = {w.statistic:g}, "
                             f"n = {w.n_eff}, p = {w.p_value:.4g} ({w.method})")
            if a.correlation:
                c = stats.correlation_permutation_test(values[:, i], values[:, j],
                                                       n_perm=a.n_perm, seed=a.seed)
                corr.append(CorrelationEntry(methods[i], methods[j], c.r, c.p_one_sided))
    text = run_report(results, corr)
    if lines:
        text += "\n" + "\n".join(lines) + "\n"
    Path(a.out).write_text(text, encoding="utf-8")


def _load_convnet(path):
    model = io.load_model(path)
    if io.model_method(model) != "convnet":
        raise InvalidInputError("perturbation maps need a ConvNet checkpoint")
    return model


def cmd_viz(a, kind: str) -> None:
    model = _load_convnet(a.model)
    trials = io.read_trialset(a.data)
    fn = perturbation.freq_perturbation_map if kind == "freq" else perturbation.time_perturbation_map
    cmap = fn(model, trials, n_iter=a.iterations, sigma=a.sigma, seed=a.seed, scale=a.scale)
    io.export_map(cmap, a.out)


def cmd_viz_average(a) -> None:
    io.export_map(perturbation.average_maps(io.parse_map(p) for p in a.maps), a.out)


def cmd_frames_l1(a) -> None:
    frames_a = io.read_frames(a.a)
    frames_b = io.read_frames(a.b) if a.b else None
    series = perturbation.frame_l1(frames_a, frames_b, mode=a.mode)
    lines = [f"# mode={series.mode} n={series.delta_norm.size}"]
    lines += [f"{v:.6g}" for v in series.delta_norm]
    Path(a.out).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# parser


def _common(p, out=True):
    p.add_argument("--config", help="key = value defaults file")
    if out:
        p.add_argument("--out", required=True, help="output file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegdecode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-class trial file")
    _common(p)
    p.add_argument("--scenario", choices=["A", "B"], default="A")
    p.add_argument("--n-trials", type=int, default=200, help="trials per class")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--duration", type=float, default=2.0, help="trial length (s)")
    p.add_argument("--rate", type=float, default=250.0, help="sampling rate (Hz)")
    p.add_argument("--snr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffle-labels", type=int, metavar="SEED",
                   help="randomly permute labels with this seed (chance control)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="CAR, resampling, standardization, cropping")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--car", action="store_true")
    p.add_argument("--resample", type=float, metavar="HZ")
    p.add_argument("--standardize", type=float, nargs=2, metavar=("DECAY", "EPS"))
    p.add_argument("--interval", type=float, nargs=2, metavar=("START", "END"))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a decoder and write a checkpoint")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=["convnet", "rlda", "fbcsp"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--bin-ms", type=float, default=rlda.DEFAULT_BIN_MS)
    p.add_argument("--n-pairs", type=int, default=fbcsp.DEFAULT_N_PAIRS)
    p.add_argument("--verbose", action="store_true", help="log epochs to stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a trial file")
    _common(p, out=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--predictions", help="optional CSV of per-trial predictions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("permtest", help="label-permutation significance of predictions")
    _common(p)
    p.add_argument("--predictions", help="CSV written by 'eval --predictions'")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--n-perm", type=int, default=stats.DEFAULT_N_PERM)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_permtest)

    p = sub.add_parser("compare", help="summary table and paired method comparisons")
    _common(p)
    p.add_argument("--accuracies", required=True,
                   help="CSV: subject column, then one accuracy column per method")
    p.add_argument("--wilcoxon", action="store_true")
    p.add_argument("--correlation", action="store_true")
    p.add_argument("--n-perm", type=int, default=stats.DEFAULT_N_PERM)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_compare)

    for name, kind in (("viz-freq", "freq"), ("viz-time", "time")):
        p = sub.add_parser(name, help=f"{kind}-domain perturbation correlation map")
        _common(p)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--iterations", type=int, default=perturbation.DEFAULT_ITERATIONS)
        p.add_argument("--sigma", type=float, default=perturbation.DEFAULT_SIGMA)
        p.add_argument("--scale", choices=["relative", "absolute"], default="relative")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=lambda a, kind=kind: cmd_viz(a, kind))

    p = sub.add_parser("viz-average", help="average maps across subjects")
    _common(p)
    p.add_argument("maps", nargs="+")
    p.set_defaults(func=cmd_viz_average)

    p = sub.add_parser("frames-l1", help="normalized L1 distance of frame sequences")
    _common(p)
    p.add_argument("--a", required=True, help="frame file")
    p.add_argument("--b", help="second frame file (between mode)")
    p.add_argument("--mode", choices=["between", "sequential"], default="between")
    p.set_defaults(func=cmd_frames_l1)

    parser._subparser_map = sub.choices
    return parser


def _config_path(argv):
    """(subcommand, --config value) from a raw argument list, without full parsing."""
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    return command, path


def _apply_config(parser, argv):
    """Parse ``argv`` with ``--config`` values installed as subcommand defaults."""
    argv = list(sys.argv[1:] if argv is None else argv)
    command, path = _config_path(argv)
    if path is None or command not in parser._subparser_map:
        return parser.parse_args(argv)
    sub = parser._subparser_map[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in io.read_config(path).items():
        if key not in known or key in ("config", "help"):
            raise InvalidInputError(f"config key {key!r} is not an option of '{command}'")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs not in (None, "?"):
            conv = action.type or str
            defaults[key] = [conv(v) for v in raw.split()]
        else:
            defaults[key] = (action.type or str)(raw)
        # flags override the file, so a value supplied here is no longer mandatory
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        args.func(args)
    except SystemExit as exc:  # argparse usage errors and --help
        return exc.code if isinstance(exc.code, int) else 1
    except (ValueError, FloatingPointError, OSError) as exc:
        _err(str(exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
