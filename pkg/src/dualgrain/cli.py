"""Command-line interface: generate / train / eval / report / ablate."""

import argparse
import json
import os
import sys

import numpy as np

from .classifiers import brf_predict, forest_from_json
from .config import ABLATION_COMPONENTS, RunConfig, apply_ablation, finetuning_config, preset_config
from .data import ChannelScaler, export_csv, ingest_csv
from .encoder import load_encoder
from .errors import ConfigError
from .harness import build_raw_dataset, evaluate, run_experiment, to_tensor
from .memory import STRATEGIES
from .reporting import report_emit, report_from_files

USAGE_ERROR, RUNTIME_ERROR = 2, 1


def _add_common(parser):
    parser.add_argument("--config", help="run configuration JSON")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--preset", choices=("paper", "desk"), help="configuration preset")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser():
    parser = argparse.ArgumentParser(prog="dualgrain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("generate", help="write the synthetic dataset as windowed CSVs"))
    _add_common(sub.add_parser("train", help="run every session and emit reports"))

    p_eval = sub.add_parser("eval", help="re-evaluate a trained run from its artifacts")
    _add_common(p_eval)
    p_eval.add_argument("--run", required=True, help="directory written by `train`")
    p_eval.add_argument("--data", help="windowed CSV with test samples (default: regenerate)")

    p_report = sub.add_parser("report", help="rebuild tables and figures from results.json files")
    _add_common(p_report)
    p_report.add_argument("--run", required=True, help="directory containing results*.json")

    p_ablate = sub.add_parser("ablate", help="run a component or replay-strategy variant")
    _add_common(p_ablate)
    p_ablate.add_argument("--component", choices=ABLATION_COMPONENTS, help="component to disable")
    p_ablate.add_argument("--replay", choices=STRATEGIES, help="replay strategy to use instead")
    p_ablate.add_argument("--finetuning", action="store_true", help="no-memory / no-distillation lower bound")
    return parser


def load_config(args):
    overrides = {}
    if args.config:
        if not os.path.exists(args.config):
            raise FileNotFoundError(args.config)
        with open(args.config, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
    if args.preset:
        overrides["preset"] = args.preset
    if args.seed is not None:
        overrides["seed"] = args.seed
    if not overrides:
        return preset_config("desk")
    return RunConfig.from_dict(overrides)


def cmd_generate(args):
    cfg = load_config(args)
    os.makedirs(args.out, exist_ok=True)
    train_sessions, test_samples, schedule = build_raw_dataset(cfg)
    paths = []
    for t, samples in enumerate(train_sessions):
        path = os.path.join(args.out, f"train_s{t}.csv")
        export_csv(samples, path)
        paths.append(path)
    test_path = os.path.join(args.out, "test.csv")
    export_csv(test_samples, test_path)
    with open(os.path.join(args.out, "schedule.json"), "w", encoding="utf-8") as fh:
        json.dump(schedule.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not args.quiet:
        print(f"wrote {len(paths)} session files and {test_path}")
    return 0


def cmd_train(args):
    cfg = load_config(args)
    log = None if args.quiet else print
    result = run_experiment(cfg, args.out, log=log)
    report_emit([result], args.out, trace_path=os.path.join(args.out, "loss_trace.jsonl"))
    if not args.quiet:
        print(f"{cfg.method}: sessions " + " ".join(f"{100 * a:.2f}" for a in result.session_accuracies))
        print(f"average {100 * result.average_accuracy:.2f}")
    return 0


def cmd_eval(args):
    cfg = load_config(args)
    encoder, _ = load_encoder(os.path.join(args.run, "encoder_cs.npz"))
    encoder.eval()
    with open(os.path.join(args.run, "forest.json"), "r", encoding="utf-8") as fh:
        forest = forest_from_json(fh.read())
    with open(os.path.join(args.run, "scaler.json"), "r", encoding="utf-8") as fh:
        scaler = ChannelScaler.from_dict(json.load(fh))

    if args.data:
        test_samples = ingest_csv(args.data)
    else:
        _, test_samples, _ = build_raw_dataset(cfg)
    test_samples = scaler.transform(test_samples)
    cumulative = sorted({s.label for s in test_samples})

    def predict(samples):
        import torch

        with torch.no_grad():
            feats = np.concatenate(
                [encoder(to_tensor(samples[i : i + 512]))[1].numpy() for i in range(0, len(samples), 512)]
            )
        return brf_predict(forest, feats.astype(np.float64))

    overall, macro, per_class = evaluate(predict, test_samples, cumulative)
    payload = {
        "overall_accuracy": overall,
        "macro_accuracy": macro,
        "per_class": {str(k): v for k, v in sorted(per_class.items())},
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "eval.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not args.quiet:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_report(args):
    written = report_from_files(args.run, args.out)
    if not args.quiet:
        for path in written:
            print(path)
    return 0


def cmd_ablate(args):
    if not (args.component or args.replay or args.finetuning):
        raise ConfigError("ablate needs --component, --replay, or --finetuning")
    cfg = load_config(args)
    if args.finetuning:
        variant = finetuning_config(cfg)
        if args.component or args.replay:
            raise ConfigError("--finetuning cannot be combined with other variants")
    else:
        variant = apply_ablation(cfg, component=args.component, replay=args.replay)
    log = None if args.quiet else print
    result = run_experiment(variant, args.out, log=log)
    report_emit([result], args.out, trace_path=os.path.join(args.out, "loss_trace.jsonl"))
    if not args.quiet:
        print(f"{variant.method}: sessions " + " ".join(f"{100 * a:.2f}" for a in result.session_accuracies))
        print(f"average {100 * result.average_accuracy:.2f}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return exc.code
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
