from argparse import ArgumentParser
from dataclasses import replace
import os
import sys
from typing import List, Optional

from transformers.utils import logging

from ..stl import ChannelError, EmptyWindowError, EvaluationError, StlError, StlSyntaxError, Trace, load_formulas, robustness
from ..train import evaluate as evaluate_policy
from .config import ConfigError, load_config
from .experiment import load_trained, run_experiment, summarize, summary_table

logger = logging.get_logger("transformers")

def set_verbosity():
    """Apply STLMARL_VERBOSITY (or TRANSFORMERS_VERBOSITY), defaulting to info."""
    level = os.environ.get("STLMARL_VERBOSITY") or os.environ.get("TRANSFORMERS_VERBOSITY") or "info"
    if level not in logging.log_levels:
        logger.warning(f"Unknown verbosity '{level}', expected one of {', '.join(logging.log_levels)}.")
        level = "info"
    logging.set_verbosity(logging.log_levels[level])

def parse_args(argv: Optional[List[str]] = None):
    argument_parser = ArgumentParser(
        prog="stlmarl",
        description="STL-guided multi-agent reinforcement learning with a safety shield."
    )
    subparsers = argument_parser.add_subparsers(dest="command", required=True)

    train_parser = subparsers.add_parser("train", help="Train all variants and seeds of an experiment.")
    train_parser.add_argument(
        "--config",
        required=True,
        help="Experiment configuration (JSON or YAML).",
    )
    train_parser.add_argument(
        "--out",
        help="Output directory, overrides the one of the configuration.",
    )
    train_parser.add_argument(
        "--seed",
        type=int,
        help="Run only this seed instead of the configured ones.",
    )

    eval_parser = subparsers.add_parser("eval", help="Evaluate a trained model with greedy actions.")
    eval_parser.add_argument(
        "--checkpoint",
        required=True,
        help="A model.safetensors file written by training.",
    )
    eval_parser.add_argument(
        "--episodes",
        default=20,
        type=int,
        help="Number of evaluation episodes.",
    )
    eval_parser.add_argument(
        "--seed",
        default=0,
        type=int,
        help="Seed of the first evaluation episode.",
    )

    monitor_parser = subparsers.add_parser("monitor", help="Evaluate STL formulas on a recorded trace.")
    monitor_parser.add_argument(
        "--formula",
        required=True,
        help="File with one formula per line (# starts a comment).",
    )
    monitor_parser.add_argument(
        "--trace",
        required=True,
        help="Trace CSV with a leading t column and one column per channel.",
    )
    monitor_parser.add_argument(
        "--t",
        default=0,
        type=int,
        help="Step index at which the formulas are evaluated.",
    )

    summarize_parser = subparsers.add_parser("summarize", help="Recompute summary.csv and curves.csv of finished runs.")
    summarize_parser.add_argument(
        "--runs",
        required=True,
        help="Experiment output directory.",
    )
    summarize_parser.add_argument(
        "--smoothing",
        default=100,
        type=int,
        help="Rolling window of the learning curves.",
    )
    return vars(argument_parser.parse_args(argv))

def train(config: str, out: Optional[str] = None, seed: Optional[int] = None) -> int:
    experiment = load_config(config)
    if out is not None:
        experiment.experiment = replace(experiment.experiment, output_dir=out)
    if seed is not None:
        experiment.experiment = replace(experiment.experiment, seeds=[seed])
    summary, failures = run_experiment(experiment)
    if not summary.empty:
        print(summary.to_string(index=False))
    for (variant, run_seed), message in sorted(failures.items()):
        print(f"run {variant} (seed {run_seed}) failed: {message}", file=sys.stderr)
    return int(bool(failures))

def evaluate(checkpoint: str, episodes: int = 20, seed: int = 0) -> int:
    env, learners, config = load_trained(checkpoint)
    metrics = evaluate_policy(env, learners, config, episodes, seed)
    print(summary_table(metrics.assign(variant=os.path.basename(checkpoint), seed=seed)).to_string(index=False))
    return 0

def monitor(formula: str, trace: str, t: int = 0) -> int:
    """Print the robustness of every formula; exit code 0 when all are satisfied, 1 otherwise, 2 on errors."""
    try:
        formulas, signal = load_formulas(formula), Trace.from_csv(trace)
        if not formulas:
            raise StlError(f"{formula} contains no formula")
        values = [robustness(f, signal, t) for f in formulas]
    except StlSyntaxError as e:
        print(f"parse error: {e}", file=sys.stderr)
    except ChannelError as e:
        print(f"channel error: {e}", file=sys.stderr)
    except EmptyWindowError as e:
        print(f"empty window: {e}", file=sys.stderr)
    except EvaluationError as e:
        print(f"evaluation error: {e}", file=sys.stderr)
    except (StlError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
    else:
        for value in values:
            print(f"robustness {value!r}: {'satisfied' if value >= 0 else 'violated'}")
        return 0 if all(value >= 0 for value in values) else 1
    return 2

def main(argv: Optional[List[str]] = None) -> int:
    set_verbosity()
    args = parse_args(argv)
    command = args.pop("command")
    try:
        match command:
            case "train":
                return train(**args)
            case "eval":
                return evaluate(**args)
            case "monitor":
                return monitor(**args)
            case "summarize":
                print(summarize(args["runs"], args["smoothing"]).to_string(index=False))
                return 0
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 2

if __name__ == "__main__":
    sys.exit(main())
