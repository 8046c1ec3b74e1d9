"""Command-line front end.

Subcommands: generate (synthetic benchmark), ingest (VQA-style JSON),
index (counterpart index stats), train, eval, sweep, analyze. Training
and generation options are key=value settings from --set flags and/or a
config file with one pair per line (# comments allowed); the analyze and
sweep paths render their figures as SVG files next to the CSV/JSON they
write.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .counterparts import build_counterpart_index, index_stats
from .data import (SyntheticConfig, generate_synthetic, ingest_vqa_json,
                   load_dataset, save_dataset)
from .errors import ConfigError, DataError
from .losses import LossConfig
from .metrics import (answer_distribution, class_distances, export_answer_space,
                      fused_features, js_by_group, js_divergence,
                      predicted_answer_indices, true_answer_indices)
from .model import load_checkpoint
from .train import (RunRecord, TrainConfig, evaluate, run_lambda_sweep,
                    train_model, write_predictions)


def _coerce(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def read_settings(pairs=None, path=None) -> dict:
    """key=value pairs from --set flags and/or a config file."""
    out = {}
    if path is not None:
        with open(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{line_no}: expected key=value, "
                                      f"got {line!r}")
                key, value = line.split("=", 1)
                out[key.strip()] = _coerce(value.strip())
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = _coerce(value.strip())
    return out


def _apply(cls, settings: dict, defaults=None):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(settings) - allowed
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys {sorted(unknown)}; "
                          f"allowed: {sorted(allowed)}")
    base = defaults if defaults is not None else cls()
    return dataclasses.replace(base, **settings)


def build_train_config(settings: dict) -> TrainConfig:
    """Split flat settings into trainer keys and loss.* keys."""
    loss_settings = {k[len("loss."):]: v for k, v in settings.items()
                     if k.startswith("loss.")}
    train_settings = {k: v for k, v in settings.items()
                      if not k.startswith("loss.")}
    loss = _apply(LossConfig, loss_settings)
    return _apply(TrainConfig, {**train_settings, "loss": loss})


def _cmd_generate(args):
    settings = read_settings(args.set, args.config)
    if args.seed is not None:
        settings["seed"] = args.seed
    config = _apply(SyntheticConfig, settings)
    dataset = generate_synthetic(config)
    save_dataset(dataset, args.out)
    print(f"wrote {args.out}: {len(dataset.train)} train / "
          f"{len(dataset.test)} test instances, "
          f"{len(dataset.answers)} answers, seed {config.seed}")
    return 0


def _cmd_ingest(args):
    dataset = ingest_vqa_json(args.questions, args.annotations, args.features,
                              test_question_file=args.test_questions,
                              test_annotation_file=args.test_annotations)
    save_dataset(dataset, args.out)
    print(f"wrote {args.out}: {len(dataset.train)} train / "
          f"{len(dataset.test)} test instances, "
          f"{len(dataset.answers)} answers "
          f"({dataset.config['skipped_no_vocab_answer']} skipped)")
    return 0


def _cmd_index(args):
    dataset = load_dataset(args.data)
    stats = index_stats(build_counterpart_index(dataset.split(args.split)))
    text = json.dumps(stats, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_train(args):
    dataset = load_dataset(args.data)
    config = build_train_config(read_settings(args.set, args.config))
    progress = None
    if not args.quiet:
        progress = lambda s: print(
            f"epoch {s['epoch'] + 1}/{s['epochs']}  "
            f"loss {s['loss']:.6f} (vqa {s['vqa']:.6f}, dis {s['dis']:.6f})")
    result = train_model(dataset, config, out_dir=args.out, progress=progress)
    print(f"train accuracy {result.record.train_accuracy:.4f}  "
          f"test accuracy {result.record.test_accuracy:.4f}")
    print(f"artifacts in {args.out}")
    return 0


def _cmd_eval(args):
    dataset = load_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    result = evaluate(model, dataset.split(args.split), dataset.answers,
                      dataset.types)
    print(f"{args.split} accuracy {result.accuracy:.4f} over {result.n} instances")
    for cat, acc in result.per_category.items():
        print(f"  {cat}: {acc:.4f}")
    if args.out:
        write_predictions(result.records, args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args):
    from .report import plot_lambda_sweep
    dataset = load_dataset(args.data)
    config = build_train_config(read_settings(args.set, args.config))
    ratios = [float(r) for r in args.ratios.split(",")]
    progress = None
    if not args.quiet:
        progress = lambda row: print(
            f"ratio {row['ratio']:g}: train {row['train_accuracy']:.4f}  "
            f"test {row['test_accuracy']:.4f}")
    rows = run_lambda_sweep(dataset, config, ratios, out_dir=args.out,
                            progress=progress)
    figure = plot_lambda_sweep(rows, os.path.join(args.out, "sweep.svg"))
    print(f"wrote {args.out}/sweep.csv, sweep.json and {figure}")
    return 0


def _cmd_analyze(args):
    from .report import (plot_answer_distributions, plot_answer_space,
                         plot_class_distances, plot_loss_curves)
    dataset = load_dataset(args.data)
    instances = dataset.split(args.split)
    n_answers = len(dataset.answers)
    os.makedirs(args.out, exist_ok=True)

    true_idx = true_answer_indices(instances)
    truth = answer_distribution(true_idx, n_answers)
    distributions = {"ground truth": truth}
    geometry = {}
    summary = {}
    for run_dir in args.run:
        name = os.path.basename(os.path.normpath(run_dir))
        record = RunRecord.load(os.path.join(run_dir, "run.json"))
        model = load_checkpoint(os.path.join(run_dir, "checkpoint.json"))
        result = evaluate(model, instances, dataset.answers, dataset.types)
        pred_idx = predicted_answer_indices(result.records)
        predicted = answer_distribution(pred_idx, n_answers)
        distributions[name] = predicted
        by_type = js_by_group(pred_idx, true_idx,
                              [r.category for r in result.records], n_answers)
        export = export_answer_space(
            model, instances, os.path.join(args.out, f"answer_space_{name}.csv"))
        geometry[name] = class_distances(fused_features(model, instances),
                                         [inst.m for inst in instances])
        summary[name] = {
            "accuracy": result.accuracy,
            "per_category": result.per_category,
            "js_to_ground_truth": js_divergence(predicted, truth),
            "js_by_type": by_type.per_group,
            "mean_js_by_type": by_type.mean,
            "mean_intra_class_distance": geometry[name].mean_intra,
            "inter_class_distance": geometry[name].inter,
            "inter_intra_ratio": geometry[name].ratio,
            "train_accuracy_at_fit": record.train_accuracy,
        }
        plot_answer_space(export, os.path.join(args.out, f"answer_space_{name}.svg"),
                          title=f"Fused features ({name})")
        plot_loss_curves(record.step_losses,
                         os.path.join(args.out, f"loss_{name}.svg"),
                         title=f"Training loss ({name})")

    with open(os.path.join(args.out, "distributions.csv"), "w") as fh:
        names = list(distributions)
        fh.write(",".join(["answer_index", "answer"] + names) + "\n")
        for k in range(n_answers):
            row = [str(k), dataset.answers.answers[k]]
            row += [repr(float(distributions[n][k])) for n in names]
            fh.write(",".join(row) + "\n")
    with open(os.path.join(args.out, "metrics.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    plot_answer_distributions(distributions,
                              os.path.join(args.out, "answer_distributions.svg"),
                              title=f"Answer distributions ({args.split})")
    if geometry:
        plot_class_distances(geometry,
                             os.path.join(args.out, "class_distances.svg"))

    for name, stats in summary.items():
        print(f"{name}: accuracy {stats['accuracy']:.4f}  "
              f"js {stats['js_to_ground_truth']:.4f}  "
              f"js-by-type {stats['mean_js_by_type']:.4f}  "
              f"inter/intra {stats['inter_intra_ratio']:.3f}")
    print(f"wrote metrics.json, distributions.csv and figures to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dmvqa",
        description="Train and probe a small VQA classifier that learns to "
                    "distinguish same-question-type counterparts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic changed-prior dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="key=value file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("ingest", help="convert VQA-style JSON to a dataset file")
    p.add_argument("--questions", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--features", required=True,
                   help="binary feature file or {image_id: vector} JSON")
    p.add_argument("--test-questions", default=None)
    p.add_argument("--test-annotations", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("index", help="counterpart index statistics for a split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_index)

    p = sub.add_parser("train", help="train a model and write run artifacts")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", default=None, help="key=value file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--out", default=None, help="predictions CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="train across lambda2/lambda1 ratios")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="0,1,4,12,24,48",
                   help="comma-separated lambda2/lambda1 ratios")
    p.add_argument("--config", default=None, help="key=value file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="distribution and geometry diagnostics "
                                       "for finished runs")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--run", action="append", required=True,
                   help="run directory; repeat to compare runs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
