from dataclasses import replace
from functools import partial
from glob import glob
import json
from multiprocessing.pool import ThreadPool
import os
from typing import Dict, List, Tuple

import pandas as pd
from transformers.utils import logging

from ..env import ENVIRONMENTS, MultiAgentEnv, make_env
from ..evaluate import ReturnStatistics, SafetyRate, episode_collisions
from ..model import load_metadata, load_parameters
from ..stl import FormulaConfig
from ..train import AgentLearner, TrainConfig, evaluate, learner_modules, make_learners, train
from .config import Experiment, parse_variant

logger = logging.get_logger("transformers")

SUMMARY = ["variant", "agent", "mean_return", "std_return", "safety_rate", "episodes"]
CURVES = ["variant", "seed", "episode", "return_stl", "smoothed_return"]
# evaluation episodes use layouts the training run never saw
EVAL_SEED_OFFSET = 10_000

def run_dir(output_dir: str, variant: str, seed: int) -> str:
    return os.path.join(output_dir, variant, f"seed-{seed}")

def run_variant(experiment: Experiment, variant: str, seed: int) -> pd.DataFrame:
    """Train one (variant, seed) pair, then write and return its greedy evaluation metrics."""
    reward, shield = parse_variant(variant)
    config = replace(experiment.train, reward=reward, shield=shield, seed=seed)
    directory = run_dir(experiment.experiment.output_dir, variant, seed)
    factory = partial(make_env, experiment.experiment.env, experiment.env, experiment.formula)

    logger.info(f"Starting run {variant} (seed {seed}) in {directory}.")
    _, _, learners = train(config, factory, directory, experiment.experiment.overwrite, experiment.metadata())
    metrics = evaluate(factory(), learners, config, experiment.experiment.eval_episodes, seed + EVAL_SEED_OFFSET)
    metrics.to_csv(os.path.join(directory, "eval_metrics.csv"), index=False)
    logger.info(f"Finished run {variant} (seed {seed}).")
    return metrics

def run_experiment(experiment: Experiment) -> Tuple[pd.DataFrame, Dict[Tuple[str, int], str]]:
    """
    Run every (variant, seed) pair, possibly concurrently, and aggregate the
    results. Failed runs are logged and returned with their error messages.
    """
    jobs = [(variant, seed) for variant in experiment.experiment.variants for seed in experiment.experiment.seeds]
    failures = dict()

    def run(job):
        try:
            run_variant(experiment, *job)
        except Exception as e:
            logger.error(f"Run {job[0]} (seed {job[1]}) failed: {e}")
            failures[job] = str(e)

    with ThreadPool(experiment.experiment.num_workers) as pool:
        for _ in pool.imap_unordered(run, jobs):
            pass

    if len(failures) == len(jobs):
        return pd.DataFrame(columns=SUMMARY), failures
    return summarize(experiment.experiment.output_dir, experiment.experiment.smoothing), failures


def _read_runs(runs_dir: str, filename: str) -> pd.DataFrame:
    frames = list()
    for path in sorted(glob(os.path.join(runs_dir, "*", "seed-*", filename))):
        seed_dir = os.path.dirname(path)
        frame = pd.read_csv(path)
        frame.insert(0, "seed", int(os.path.basename(seed_dir).removeprefix("seed-")))
        frame.insert(0, "variant", os.path.basename(os.path.dirname(seed_dir)))
        frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()

def summary_table(metrics: pd.DataFrame) -> pd.DataFrame:
    """Per variant and agent: mean and population std of the STL return, safety rate and episode count."""
    rows = list()
    for variant, frame in metrics.groupby("variant", sort=True):
        safety = SafetyRate()
        for _, seed_frame in frame.groupby("seed"):
            safety.update(episode_collisions(seed_frame).tolist())
        for agent, agent_frame in frame.groupby("agent", sort=True):
            returns = ReturnStatistics()
            returns.update(agent_frame["return_stl"].tolist())
            mean, std = returns.compute()
            rows.append(dict(
                variant=variant,
                agent=agent,
                mean_return=mean,
                std_return=std,
                safety_rate=safety.compute(),
                episodes=len(agent_frame),
            ))
    return pd.DataFrame(rows, columns=SUMMARY)

def curves_table(metrics: pd.DataFrame, smoothing: int = 100) -> pd.DataFrame:
    """Episode against the agent-averaged STL return and its rolling mean, per variant and seed."""
    if metrics.empty:
        return pd.DataFrame(columns=CURVES)
    curves = metrics.groupby(["variant", "seed", "episode"], as_index=False)["return_stl"].mean()
    curves["smoothed_return"] = curves.groupby(["variant", "seed"])["return_stl"].transform(
        lambda returns: returns.rolling(smoothing, min_periods=1).mean()
    )
    return curves[CURVES]

def summarize(runs_dir: str, smoothing: int = 100) -> pd.DataFrame:
    """
    Aggregate the run directories below `runs_dir` into `summary.csv`
    (greedy evaluation episodes) and `curves.csv` (training episodes).
    """
    evaluation = _read_runs(runs_dir, "eval_metrics.csv")
    if evaluation.empty:
        raise FileNotFoundError(f"No evaluation metrics found below {runs_dir}!")
    summary = summary_table(evaluation)
    summary.to_csv(os.path.join(runs_dir, "summary.csv"), index=False)
    curves_table(_read_runs(runs_dir, "metrics.csv"), smoothing).to_csv(os.path.join(runs_dir, "curves.csv"), index=False)
    return summary


def load_trained(filename: str) -> Tuple[MultiAgentEnv, List[AgentLearner], TrainConfig]:
    """Rebuild environment and learners from a model file written by training."""
    metadata = load_metadata(filename)
    try:
        config_class, _ = ENVIRONMENTS[metadata["env"]]
        env_config = config_class(**json.loads(metadata["env_config"]))
        formula = FormulaConfig(**json.loads(metadata["formula"]))
        config = TrainConfig(**json.loads(metadata["train"]))
    except KeyError as e:
        raise ValueError(f"{filename} has missing or unknown metadata ({e}), was it written by training?") from e
    env = make_env(metadata["env"], env_config, formula)
    learners = make_learners(env, config)
    load_parameters(learner_modules(learners), filename)
    return env, learners, config
