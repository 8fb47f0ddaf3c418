"""PPO training loop binding policy, planner, and world.

Decisions run at 1 Hz of simulated time (50 world ticks); between
decisions the current plan is scanned at 10 Hz and re-solved with the
current weights when it is about to collide.  Early termination fires on
a planner-failure streak or on the episode time limit, both with the
large terminal penalty.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .costs import PedestrianSnapshot
from .observe import ObservationTensor, observe
from .planner import LocalPlanner
from .policy import (NonFinite, PolicyNetwork, batch_from_observations,
                     sample_action, save_checkpoint, std_schedule)
from .world import (DT, EpisodeStatus, V_SAFE, WorldState, episode_status,
                    world_step)

R_TIME = -10.0
R_COLLISION_FAST = -150.0
R_COLLISION_SLOW = -50.0
R_GOAL = 50.0
R_TERMINATION = -1500.0

DECISION_PERIOD = 1.0                      # one policy query per simulated second
TICKS_PER_DECISION = int(round(DECISION_PERIOD / DT))
REPLAN_CHECK_TICKS = 5                     # 10 Hz collision checks


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lr_actor: float = 3e-4
    lr_encoder_critic: float = 1e-3
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch: int = 64
    fail_streak_limit: int = 3
    train_time_limit: float = 60.0
    episodes_per_update: int = 8
    grad_clip: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.lr_actor <= 0 or self.lr_encoder_critic <= 0:
            raise ValueError("learning rates must be positive")


class RolloutBuffer:
    """Per-step records of the decision process."""

    def __init__(self):
        self.observations: list[ObservationTensor] = []
        self.raw_actions: list[np.ndarray] = []
        self.log_probs: list[float] = []
        self.values: list[float] = []
        self.rewards: list[float] = []
        self.dones: list[bool] = []
        self.episode_ids: list[int] = []
        self.stds: list[float] = []

    def add(self, obs, raw, log_prob, value, reward, done, episode_id, std):
        if not math.isfinite(reward):
            raise ValueError("non-finite reward")
        self.observations.append(obs)
        self.raw_actions.append(np.asarray(raw, dtype=np.float64))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))
        self.rewards.append(float(reward))
        self.dones.append(bool(done))
        self.episode_ids.append(int(episode_id))
        self.stds.append(float(std))

    def __len__(self):
        return len(self.rewards)

    def clear(self):
        self.__init__()

    def n_episodes(self) -> int:
        return len(set(self.episode_ids))


def step_reward(in_collision: bool, speed: float, goal_reached: bool) -> float:
    """Time, collision, and goal terms of one decision step."""
    r = R_TIME
    if in_collision:
        r += R_COLLISION_FAST if speed >= V_SAFE else R_COLLISION_SLOW
    if goal_reached:
        r += R_GOAL
    return r


@dataclass
class DecisionRecord:
    """Per-decision collision/goal flags for exact reward replay."""

    active_collision: bool
    any_contact: bool
    goal_reached: bool
    terminated_early: bool

    def reward(self) -> float:
        speed = V_SAFE if self.active_collision else 0.0
        r = step_reward(self.any_contact, speed, self.goal_reached)
        if self.terminated_early:
            r += R_TERMINATION
        return r


@dataclass
class EpisodeResult:
    termination: str                  # "goal" | "timeout" | "planning_failed"
    steps: int
    episode_return: float
    tcc: int
    collided: bool
    n_plans: int
    records: list = field(default_factory=list)
    distance: float = 0.0
    time_taken: float = 0.0


def run_episode(world: WorldState, policy: PolicyNetwork,
                planner: LocalPlanner, config: TrainConfig,
                rng: np.random.Generator, *, goal, global_path,
                std: float, buffer: RolloutBuffer | None = None,
                episode_id: int = 0,
                tick_callback=None) -> EpisodeResult:
    """Roll one episode, appending decision steps to the buffer."""
    goal = np.asarray(goal, dtype=float)
    plan = None
    plan_age = 0.0
    fail_streak = 0
    records = []
    episode_return = 0.0
    n_plans = 0
    distance = 0.0
    termination = None

    while True:
        peds = PedestrianSnapshot(world.crowd.snapshot_rows())
        obs = observe(world.field, peds, world.robot, plan, plan_age)
        mean, value = policy.forward_observation(obs)
        action = sample_action(mean, std, rng)

        result = planner.plan(world, action.weights, global_path)
        n_plans += 1
        if result.ok:
            plan = result.traj
            plan_age = 0.0
            fail_streak = 0
        else:
            fail_streak += 1

        active = False
        contact = False
        goal_reached = False
        if fail_streak >= config.fail_streak_limit:
            termination = "planning_failed"
        else:
            for tick in range(TICKS_PER_DECISION):
                if (tick > 0 and tick % REPLAN_CHECK_TICKS == 0
                        and plan is not None
                        and planner.needs_replan(plan, plan_age, world)):
                    result = planner.plan(world, action.weights, global_path)
                    n_plans += 1
                    if result.ok:
                        plan = result.traj
                        plan_age = 0.0
                        fail_streak = 0
                    else:
                        fail_streak += 1
                        if fail_streak >= config.fail_streak_limit:
                            termination = "planning_failed"
                            break
                prev = world.robot.position.copy()
                world_step(world, plan, plan_age)
                plan_age += DT
                distance += float(np.linalg.norm(world.robot.position - prev))
                active = active or world.ledger.active
                contact = contact or world.ledger.contact
                if tick_callback is not None:
                    tick_callback(world)
                status = episode_status(world, goal, world.time,
                                        config.train_time_limit)
                if status is EpisodeStatus.GOAL_REACHED:
                    goal_reached = True
                    termination = "goal"
                    break
                if status is EpisodeStatus.TIMEOUT:
                    termination = "timeout"
                    break

        record = DecisionRecord(
            active_collision=active, any_contact=contact,
            goal_reached=goal_reached,
            terminated_early=termination in ("timeout", "planning_failed"))
        records.append(record)
        reward = record.reward()
        episode_return += reward
        done = termination is not None
        if buffer is not None:
            buffer.add(obs, action.raw, action.log_prob, value, reward, done,
                       episode_id, std)
        if done:
            return EpisodeResult(termination, len(records), episode_return,
                                 world.ledger.tcc, world.ledger.collided,
                                 n_plans, records, distance, world.time)


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float):
    """Per-episode GAE; returns (normalized advantages, raw returns)."""
    n = len(buffer)
    advantages = np.zeros(n)
    values = np.asarray(buffer.values)
    rewards = np.asarray(buffer.rewards)
    dones = np.asarray(buffer.dones)
    running = 0.0
    for t in reversed(range(n)):
        next_value = 0.0 if dones[t] else values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta if dones[t] else delta + gamma * lam * running
        advantages[t] = running
    returns = advantages + values
    norm = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    return norm, returns


class PPOTrainer:
    """Clipped-surrogate updates with per-group learning rates."""

    def __init__(self, policy: PolicyNetwork, config: TrainConfig,
                 seed: int = 0):
        self.policy = policy
        self.config = config
        self.optimizer = torch.optim.Adam(
            [{"params": list(policy.actor_parameters()),
              "lr": config.lr_actor},
             {"params": list(policy.encoder_critic_parameters()),
              "lr": config.lr_encoder_critic}],
            betas=(0.9, 0.999), eps=1e-8)
        self.generator = torch.Generator().manual_seed(seed)

    def update(self, buffer: RolloutBuffer) -> dict:
        """One PPO update over the buffer; restores state on divergence."""
        if buffer.n_episodes() < 1:
            raise ValueError("buffer must hold at least one full episode")
        cfg = self.config
        advantages, returns = compute_gae(buffer, cfg.gamma, cfg.gae_lambda)

        maps, kin = batch_from_observations(buffer.observations)
        raw = torch.from_numpy(np.stack(buffer.raw_actions)).float()
        old_logp = torch.tensor(buffer.log_probs, dtype=torch.float32)
        adv = torch.tensor(advantages, dtype=torch.float32)
        ret = torch.tensor(returns, dtype=torch.float32)
        stds = torch.tensor(buffer.stds, dtype=torch.float32)
        n = len(buffer)

        snapshot = {k: v.clone() for k, v in self.policy.state_dict().items()}
        opt_snapshot = self.optimizer.state_dict()

        stats = {"actor_loss": [], "critic_loss": [], "clip_fraction": [],
                 "aborted": False}
        try:
            for _ in range(cfg.epochs):
                order = torch.randperm(n, generator=self.generator)
                for lo in range(0, n, cfg.minibatch):
                    idx = order[lo: lo + cfg.minibatch]
                    mean, value = self.policy(maps[idx], kin[idx])
                    new_logp = self._log_prob(mean, stds[idx], raw[idx])
                    ratio = torch.exp(new_logp - old_logp[idx])
                    a = adv[idx]
                    unclipped = ratio * a
                    clipped = torch.clamp(ratio, 1 - cfg.clip_eps,
                                          1 + cfg.clip_eps) * a
                    actor_loss = -torch.minimum(unclipped, clipped).mean()
                    critic_loss = 0.5 * ((value - ret[idx]) ** 2).mean()
                    loss = actor_loss + critic_loss
                    if not torch.isfinite(loss):
                        raise NonFinite("non-finite PPO loss")
                    self.optimizer.zero_grad()
                    loss.backward()
                    torch.nn.utils.clip_grad_norm_(self.policy.parameters(),
                                                   cfg.grad_clip)
                    self.optimizer.step()
                    stats["actor_loss"].append(float(actor_loss))
                    stats["critic_loss"].append(float(critic_loss))
                    frac = float((ratio - 1).abs().gt(cfg.clip_eps)
                                 .float().mean())
                    stats["clip_fraction"].append(frac)
        except NonFinite:
            self.policy.load_state_dict(snapshot)
            self.optimizer.load_state_dict(opt_snapshot)
            stats["aborted"] = True
            return stats

        with torch.no_grad():
            mean, _ = self.policy(maps, kin)
            final_ratio = torch.exp(self._log_prob(mean, stds, raw) - old_logp)
        stats["post_ratios"] = final_ratio.numpy()
        return stats

    @staticmethod
    def _log_prob(mean, stds, raw):
        var = stds * stds
        return (-0.5 * ((raw - mean) ** 2).sum(dim=-1) / var
                - raw.shape[-1] * (torch.log(stds) + 0.5 * math.log(2 * math.pi)))


def episode_seeds(base_seed: int, episode: int):
    """Deterministic per-episode world and action seeds."""
    ss = np.random.SeedSequence([int(base_seed), int(episode)])
    world_seed, action_seed = ss.spawn(2)
    return world_seed, action_seed


def train(scenario, policy: PolicyNetwork, config: TrainConfig, episodes: int,
          out_dir, base_seed: int = 0, resume_from=None,
          checkpoint_every: int = 100, log_name: str = "training_log.csv"):
    """Train on a scenario template; returns per-episode log rows.

    Checkpoints carry the optimizer, torch rng, and pending-buffer state so
    a resumed run continues bit-deterministically.
    """
    from .scenarios import build_world  # local import to avoid a cycle

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trainer = PPOTrainer(policy, config, seed=base_seed)
    buffer = RolloutBuffer()
    planner = LocalPlanner()
    start_episode = 0
    rows = []

    if resume_from is not None:
        from .policy import load_checkpoint
        _, doc = load_checkpoint(resume_from, policy)
        start_episode = doc["episode"]
        if doc.get("optimizer_state"):
            trainer.optimizer.load_state_dict(doc["optimizer_state"])
        extra = doc.get("extra", {})
        if "torch_generator" in extra:
            trainer.generator.set_state(extra["torch_generator"])
        if "pending_buffer" in extra and extra["pending_buffer"] is not None:
            _restore_buffer(buffer, extra["pending_buffer"])

    log_path = out_dir / log_name
    mode = "a" if (resume_from is not None and log_path.exists()) else "w"
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["episode", "return", "length", "termination",
                             "tcc", "std"])
        for ep in range(start_episode, episodes):
            world_seed, action_seed = episode_seeds(base_seed, ep)
            world, goal, path = build_world(scenario,
                                            np.random.default_rng(world_seed))
            std = std_schedule(ep)
            result = run_episode(world, policy, planner, config,
                                 np.random.default_rng(action_seed),
                                 goal=goal, global_path=path, std=std,
                                 buffer=buffer, episode_id=ep)
            rows.append((ep, result.episode_return, result.steps,
                         result.termination, result.tcc, std))
            writer.writerow([ep, f"{result.episode_return:.6g}", result.steps,
                             result.termination, result.tcc, std])
            fh.flush()
            if buffer.n_episodes() >= config.episodes_per_update:
                trainer.update(buffer)
                buffer.clear()
            if (ep + 1) % checkpoint_every == 0 or (ep + 1) == episodes:
                save_checkpoint(
                    out_dir / f"ckpt_{ep + 1:06d}.pt", policy,
                    episode=ep + 1, optimizer=trainer.optimizer,
                    extra={"torch_generator": trainer.generator.get_state(),
                           "pending_buffer": _pack_buffer(buffer),
                           "base_seed": base_seed})
    return rows


def _pack_buffer(buffer: RolloutBuffer):
    if len(buffer) == 0:
        return None
    return {
        "static": np.stack([o.static_map for o in buffer.observations]),
        "peds": np.stack([o.ped_map for o in buffer.observations]),
        "kin": np.stack([o.kin_state for o in buffer.observations]),
        "raw": np.stack(buffer.raw_actions),
        "log_probs": np.asarray(buffer.log_probs),
        "values": np.asarray(buffer.values),
        "rewards": np.asarray(buffer.rewards),
        "dones": np.asarray(buffer.dones),
        "episode_ids": np.asarray(buffer.episode_ids),
        "stds": np.asarray(buffer.stds),
    }


def _restore_buffer(buffer: RolloutBuffer, packed: dict):
    n = len(packed["rewards"])
    for i in range(n):
        obs = ObservationTensor(packed["static"][i], packed["peds"][i],
                                packed["kin"][i])
        buffer.add(obs, packed["raw"][i], packed["log_probs"][i],
                   packed["values"][i], packed["rewards"][i],
                   bool(packed["dones"][i]), int(packed["episode_ids"][i]),
                   packed["stds"][i])
