from dataclasses import asdict, dataclass
import json
import os
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch
from transformers.trainer_utils import get_last_checkpoint
from transformers.utils import logging

from ..env import LaneEnv, MultiAgentEnv
from ..model import categorical_sample, greedy_action, load_parameters, log_prob, save_parameters
from ..shield import shield_joint_action
from ..stl import Trace, weighted_robustness
from ..util import Generators, as_tensor
from .buffer import RolloutBuffer, Window
from .ppo import AgentLearner

logger = logging.get_logger("transformers")

METRICS = ["episode", "agent", "return_stl", "return_baseline", "collisions", "reached_dest", "shield_fallbacks"]
SHIELD_LOG = ["episode", "step", "agent", "requested", "applied", "h_fv", "h_bv", "min_slack", "feasible", "fallback"]
PREFIX_CHECKPOINT_DIR = "checkpoint"
# discount and rollout length of each environment
TRAIN_DEFAULTS = dict(particle=dict(gamma=0.95, rollout_length=25), lane=dict(gamma=0.99, rollout_length=15))

@dataclass
class TrainConfig:
    gamma: float = 0.95
    gae_lambda: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.01
    rollout_length: int = 25
    batch_size: int = 512
    episodes: int = 3000
    # cut episodes short of the environment's episode length
    max_steps: Optional[int] = None
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    epochs: int = 4
    hidden_size: int = 64
    reward: Literal["stl", "baseline"] = "stl"
    shield: bool = False
    # decay rate of the barrier condition, unrelated to the discount
    gamma_cbf: float = 0.5
    seed: int = 0
    normalize_advantages: bool = True
    share_parameters: bool = False
    save_every: int = 0
    log_every: int = 10
    export_traces: bool = False

    def __post_init__(self):
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("Discount and GAE lambda must lie in [0, 1]!")
        if self.clip <= 0 or self.rollout_length < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("Clip range, rollout length, batch size and epochs must be positive!")
        if self.episodes < 0 or (self.max_steps is not None and self.max_steps < 1):
            raise ValueError("Episode count must be non-negative and max_steps positive!")
        if self.reward not in ("stl", "baseline"):
            raise ValueError(f"Unknown reward mode '{self.reward}'!")
        if not 0 <= self.gamma_cbf <= 1:
            raise ValueError(f"The barrier rate must lie in [0, 1], got {self.gamma_cbf}!")

    @classmethod
    def for_env(cls, env: str, **kwargs) -> "TrainConfig":
        """The defaults of `env` overridden by `kwargs`."""
        if env not in TRAIN_DEFAULTS:
            raise ValueError(f"Unknown environment '{env}'!")
        return cls(**(TRAIN_DEFAULTS[env] | kwargs))


def make_learners(env: MultiAgentEnv, config: TrainConfig, generator: Optional[torch.Generator] = None) -> List[AgentLearner]:
    def make():
        return AgentLearner(
            env.obs_dim,
            env.state_dim,
            env.n_actions,
            hidden_size=config.hidden_size,
            actor_lr=config.actor_lr,
            critic_lr=config.critic_lr,
            generator=generator,
        )
    if config.share_parameters:
        return [make()] * env.n_agents
    return [make() for _ in range(env.n_agents)]

def unique_learners(learners: Sequence[AgentLearner]) -> List[Tuple[AgentLearner, List[int]]]:
    """Distinct learners with the agents they control."""
    groups: Dict[int, Tuple[AgentLearner, List[int]]] = dict()
    for agent, learner in enumerate(learners):
        groups.setdefault(id(learner), (learner, list()))[1].append(agent)
    return list(groups.values())

def learner_modules(learners: Sequence[AgentLearner]) -> Dict[str, torch.nn.Module]:
    modules = dict()
    for index, (learner, _) in enumerate(unique_learners(learners)):
        modules[f"actor_{index}"], modules[f"critic_{index}"] = learner.actor, learner.critic
    return modules

def shield_enabled(env: MultiAgentEnv, config: TrainConfig) -> bool:
    if config.shield and not isinstance(env, LaneEnv):
        logger.warning("The safety shield needs continuous controls, it is disabled for this environment.")
        return False
    return config.shield


def collect_rollout(
    env: MultiAgentEnv,
    learners: Sequence[AgentLearner],
    config: TrainConfig,
    generators: Generators,
    seed: Optional[int] = None,
    greedy: bool = False,
) -> RolloutBuffer:
    """
    Play one episode split into windows of `rollout_length` steps. The STL
    reward of agent i at step t is the weighted robustness of its formulas
    over the trace of the current window up to and including the state
    reached at t; it is computed in both reward modes so that returns are
    comparable. Recorded log-probabilities are those of the applied actions.
    """
    obs, _ = env.reset(seed=seed)
    formulas, formula_config = env.formulas(), env.formula_config
    shielded = shield_enabled(env, config)
    n, window_length = env.n_agents, config.rollout_length
    steps = env.episode_length if config.max_steps is None else min(env.episode_length, config.max_steps)
    actor_hidden = [learner.actor.initial_hidden() for learner in learners]
    critic_hidden = [learner.critic.initial_hidden() for learner in learners]
    buffer = RolloutBuffer(n)
    current = None

    for t in range(steps):
        if t % window_length == 0:
            current = dict(
                start=t,
                actor_hidden=np.stack([h.numpy() for h in actor_hidden]),
                critic_hidden=np.stack([h.numpy() for h in critic_hidden]),
                states=list(), observations=list(), actions=list(), log_probs=list(), values=list(), rewards=list(),
            )
        state = env.global_state(obs)
        current["states"].append(state)
        current["observations"].append(np.asarray(obs, dtype=np.float64))
        with torch.no_grad():
            logits, values = list(), list()
            for i, learner in enumerate(learners):
                out, actor_hidden[i] = learner.actor(as_tensor(obs[i])[None], actor_hidden[i])
                value, critic_hidden[i] = learner.critic(as_tensor(state)[None], critic_hidden[i])
                logits.append(out[0])
                values.append(value[0].item())
            logits = torch.stack(logits)
        requested = (greedy_action(logits) if greedy else categorical_sample(logits, generators.torch)[0]).numpy()

        controls, applied = None, requested
        if shielded:
            applied, controls, records = shield_joint_action(env.state, env.config, requested, config.gamma_cbf)
            for record in records:
                buffer.shield_rows.append(dict(step=t, **asdict(record)) | dict(agent=record.agent + 1))
                buffer.fallbacks[record.agent] += record.fallback
        probabilities = log_prob(logits, torch.as_tensor(applied, dtype=torch.long)).numpy()

        obs, baseline, terminated, truncated, _ = env.step(applied, controls)
        buffer.trace_rows.append(env.channels())
        window = Trace.from_rows(buffer.trace_rows[current["start"]:], dt=env.dt)
        stl = np.array([
            weighted_robustness(formulas[i], window, 0, len(window), formula_config.weights, formula_config.offset)
            for i in range(n)
        ])
        buffer.stl_rewards.append(stl)
        buffer.baseline_rewards.append(np.asarray(baseline, dtype=np.float64))
        buffer.requested.append(requested)
        buffer.applied.append(np.asarray(applied))
        buffer.collisions += env.agent_collisions()

        current["actions"].append(np.asarray(applied))
        current["log_probs"].append(probabilities)
        current["values"].append(values)
        current["rewards"].append(stl if config.reward == "stl" else np.asarray(baseline, dtype=np.float64))

        done = terminated or truncated or t == steps - 1
        if done or len(current["states"]) == window_length:
            if done:
                bootstrap = np.zeros(n)
            else:
                with torch.no_grad():
                    next_state = as_tensor(env.global_state(obs))[None]
                    bootstrap = np.array([
                        learner.critic(next_state, critic_hidden[i])[0][0].item() for i, learner in enumerate(learners)
                    ])
            buffer.add_window(Window(
                states=np.stack(current["states"]),
                observations=np.stack(current["observations"], axis=1),
                actions=np.stack(current["actions"], axis=1),
                log_probs=np.stack(current["log_probs"], axis=1),
                values=np.array(current["values"]).T,
                rewards=np.stack(current["rewards"], axis=1),
                actor_hidden=current["actor_hidden"],
                critic_hidden=current["critic_hidden"],
                bootstrap=bootstrap,
            ))
        if done:
            break

    buffer.reached = np.asarray(env.reached(), dtype=bool)
    return buffer

def episode_rows(episode: int, buffer: RolloutBuffer) -> List[dict]:
    stl, baseline = buffer.returns("stl"), buffer.returns("baseline")
    return [
        dict(
            episode=episode,
            agent=i + 1,
            return_stl=float(stl[i]),
            return_baseline=float(baseline[i]),
            collisions=int(buffer.collisions[i]),
            reached_dest=int(buffer.reached[i]),
            shield_fallbacks=int(buffer.fallbacks[i]),
        )
        for i in range(buffer.n_agents)
    ]

def export_episode(output_dir: str, episode: int, buffer: RolloutBuffer, dt: float, rollout_length: int):
    """Write the episode trace and the per-step rewards, enough to recompute every STL reward offline."""
    for sub in ("traces", "rewards"):
        os.makedirs(os.path.join(output_dir, sub), exist_ok=True)
    Trace.from_rows(buffer.trace_rows, dt=dt).to_csv(os.path.join(output_dir, "traces", f"episode-{episode}.csv"))
    pd.DataFrame([
        dict(
            step=t,
            window_start=t - t % rollout_length,
            agent=i + 1,
            reward_stl=buffer.stl_rewards[t][i],
            reward_baseline=buffer.baseline_rewards[t][i],
        )
        for t in range(len(buffer.stl_rewards)) for i in range(buffer.n_agents)
    ]).to_csv(os.path.join(output_dir, "rewards", f"episode-{episode}.csv"), index=False, float_format="%.17g")

def _append_csv(rows: List[dict], filename: str, columns: List[str]):
    if rows:
        pd.DataFrame(rows, columns=columns).to_csv(filename, mode="a", header=not os.path.isfile(filename), index=False)


def save_checkpoint(
    checkpoint_dir: str,
    learners: Sequence[AgentLearner],
    generators: Generators,
    env: MultiAgentEnv,
    episode: int,
    metadata: Dict[str, str],
):
    os.makedirs(checkpoint_dir, exist_ok=True)
    save_parameters(learner_modules(learners), os.path.join(checkpoint_dir, "model.safetensors"), metadata | dict(episode=str(episode)))
    torch.save([learner.state_dict() for learner, _ in unique_learners(learners)], os.path.join(checkpoint_dir, "optimizer.pt"))
    torch.save(
        dict(generators=generators.state_dict(), env=env.np_random.bit_generator.state, episode=episode),
        os.path.join(checkpoint_dir, "rng_state.pth"),
    )
    logger.info(f"Saved checkpoint to {checkpoint_dir}.")

def load_checkpoint(checkpoint_dir: str, learners: Sequence[AgentLearner], generators: Generators, env: MultiAgentEnv) -> int:
    """Restore parameters, optimizer and generator states, returns the number of completed episodes."""
    load_parameters(learner_modules(learners), os.path.join(checkpoint_dir, "model.safetensors"))
    for (learner, _), state in zip(unique_learners(learners), torch.load(os.path.join(checkpoint_dir, "optimizer.pt"))):
        learner.load_state_dict(state)
        learner.snapshot()
    rng = torch.load(os.path.join(checkpoint_dir, "rng_state.pth"))
    generators.load_state_dict(rng["generators"])
    env.reset(seed=0)
    env.np_random.bit_generator.state = rng["env"]
    return rng["episode"]


def train(
    config: TrainConfig,
    env_factory: Callable[[], MultiAgentEnv],
    output_dir: Optional[str] = None,
    overwrite: bool = False,
    metadata: Optional[Dict[str, str]] = None,
) -> Tuple[pd.DataFrame, MultiAgentEnv, List[AgentLearner]]:
    """
    Alternate episode rollouts and per-agent clipped policy-gradient updates
    for `config.episodes` episodes. With an `output_dir`, per-episode metrics
    are appended to `metrics.csv`, checkpoints are written every `save_every`
    episodes and training resumes from the last checkpoint found there.
    Returns the metrics, the environment and the learners.
    """
    env = env_factory()
    generators = Generators.from_seed(config.seed)
    learners = make_learners(env, config, generators.torch)
    metadata = (metadata or dict()) | dict(train=json.dumps(asdict(config)))
    start, rows = 0, list()

    if output_dir is not None:
        last_checkpoint = None
        if os.path.isdir(output_dir) and not overwrite:
            last_checkpoint = get_last_checkpoint(output_dir)
            if last_checkpoint is None and len(os.listdir(output_dir)) > 0:
                raise ValueError(
                    f"Output directory ({output_dir}) already exists and is not empty. "
                    "Use `overwrite` to overcome."
                )
        os.makedirs(output_dir, exist_ok=True)
        metrics_file, shield_file = os.path.join(output_dir, "metrics.csv"), os.path.join(output_dir, "shield.csv")
        if last_checkpoint is not None:
            logger.info(f"Checkpoint detected, resuming training at {last_checkpoint}.")
            start = load_checkpoint(last_checkpoint, learners, generators, env)
            # drop episodes logged after the checkpoint was written
            for filename in (metrics_file, shield_file):
                if os.path.isfile(filename):
                    previous = pd.read_csv(filename)
                    previous[previous.episode < start].to_csv(filename, index=False)
            if os.path.isfile(metrics_file):
                rows = pd.read_csv(metrics_file).to_dict("records")
        else:
            for filename in (metrics_file, shield_file):
                if os.path.isfile(filename):
                    os.remove(filename)

    for episode in range(start, config.episodes):
        buffer = collect_rollout(env, learners, config, generators, seed=config.seed if episode == 0 else None)
        buffer.compute_advantages(config.gamma, config.gae_lambda)
        for learner, agents in unique_learners(learners):
            learner.update(
                buffer.windows,
                agents,
                epochs=config.epochs,
                batch_size=config.batch_size,
                clip=config.clip,
                entropy_coef=config.entropy_coef,
                normalize_advantages=config.normalize_advantages,
                generator=generators.torch,
            )
        new_rows = episode_rows(episode, buffer)
        rows.extend(new_rows)

        if output_dir is not None:
            _append_csv(new_rows, os.path.join(output_dir, "metrics.csv"), METRICS)
            _append_csv([dict(episode=episode, **row) for row in buffer.shield_rows], os.path.join(output_dir, "shield.csv"), SHIELD_LOG)
            if config.export_traces:
                export_episode(output_dir, episode, buffer, env.dt, config.rollout_length)
            if config.save_every and (episode + 1) % config.save_every == 0:
                checkpoint = os.path.join(output_dir, f"{PREFIX_CHECKPOINT_DIR}-{episode + 1}")
                save_checkpoint(checkpoint, learners, generators, env, episode + 1, metadata)

        if config.log_every and (episode + 1) % config.log_every == 0:
            logger.info(
                f"Episode {episode + 1}/{config.episodes}: STL return {buffer.returns('stl').mean():.3f}, "
                f"collisions {int(buffer.collisions.sum())}, shield fallbacks {int(buffer.fallbacks.sum())}"
            )

    if output_dir is not None:
        save_parameters(learner_modules(learners), os.path.join(output_dir, "model.safetensors"), metadata)
    return pd.DataFrame(rows, columns=METRICS), env, learners

def evaluate(
    env: MultiAgentEnv,
    learners: Sequence[AgentLearner],
    config: TrainConfig,
    episodes: int = 20,
    seed: Optional[int] = None,
) -> pd.DataFrame:
    """Greedy (arg-max) episodes without learning, one metrics row per agent and episode."""
    generators = Generators.from_seed(config.seed, 1)
    rows = list()
    for episode in range(episodes):
        buffer = collect_rollout(env, learners, config, generators, seed=seed if episode == 0 else None, greedy=True)
        rows.extend(episode_rows(episode, buffer))
    return pd.DataFrame(rows, columns=METRICS)
