"""Actor-critic search for adversarial sampling regions around query points.

An agent attacks one query point at a time.  The state is the point plus the
parameters of a diagonal Gaussian "jitter space" N(mu, diag(sigma)); the
actor proposes additive offsets to the initial mu and log sigma, points are
sampled from the shifted space, and each sample is answered by both the
exact scan and the index under test.  The fraction of samples the index gets
wrong drives the reward

    r = 100 * ln(max(fp_fraction, floor)) + reward_constant

with floor = 1 / (10 * jitter_size) guarding ln(0).  A critic network
estimates state values; each step trains both networks from the advantage
delta = r + gamma * V(next) - V(current).

Two actor-loss modes are provided:

* ``paper``:    actor_loss = 1 - ln(max(fp_fraction, floor)) * delta.
  The scalar has no explicit policy term, so the actor gradient flows only
  through the critic's value of the next state (whose mu/log-sigma entries
  are the actor's outputs).
* ``standard``: actor_loss = -log pi(action|state) * delta under the
  Gaussian exploration policy, the conventional policy-gradient form.

Episodes run for at most ``max_steps`` steps and stop early once every
sampled point is answered incorrectly (fp_fraction = 1).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import QueryResult, label_fp
from .errors import TrainingDiverged, ValidationError
from .nn import AdamState, Mlp, adam_step, backward, forward, init_adam, init_mlp
from .vecdata import VectorSet, topk_euclidean

LOGVAR_MIN = -20.0
LOGVAR_MAX = 20.0

LOSS_MODES = ("paper", "standard")

# actor-gradient preconditioning (standard loss mode): the shared-scale
# component of the log-variance block carries most of the learnable signal,
# while the mean block mostly injects estimator noise
SCALE_COUPLING = 6.0
MU_GRAD_DAMP = 0.1
ACTOR_BETA1 = 0.7  # lower momentum recovers faster from misreinforced noise


@dataclass(frozen=True)
class JitterSpace:
    """Diagonal Gaussian sampling region: mean vector and per-axis variances."""

    mu: np.ndarray          # (d,) float64
    sigma_diag: np.ndarray  # (d,) float64, strictly positive

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma_diag, dtype=np.float64)
        if mu.ndim != 1 or sigma.shape != mu.shape:
            raise ValidationError("mu and sigma_diag must be 1-d arrays of equal length")
        if not np.isfinite(mu).all():
            raise ValidationError("mu must be finite")
        if not np.isfinite(sigma).all() or (sigma <= 0).any():
            raise ValidationError("sigma_diag must be strictly positive and finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_diag", sigma)

    @property
    def d(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class AttackState:
    query: np.ndarray  # (d,) float64, the point under attack
    space: JitterSpace

    def __post_init__(self) -> None:
        query = np.asarray(self.query, dtype=np.float64).ravel()
        if query.shape[0] != self.space.d:
            raise ValidationError("query and space dimensions disagree")
        object.__setattr__(self, "query", query)


def state_vector(state: AttackState) -> np.ndarray:
    """Canonical state encoding: concat(query, mu, log sigma_diag), length 3d."""
    return np.concatenate([state.query, state.space.mu, np.log(state.space.sigma_diag)])


def _net_features(state: AttackState, coord_scale: float) -> np.ndarray:
    """Fixed affine normalization of the state for the networks.

    Raw coordinates can be tens of units and log-variances reach +-20, which
    makes per-step Adam output jumps enormous; the networks instead see the
    query at unit scale, the mean as its offset from the query, and a damped
    log-variance.  This is a fixed input transform, not learned state.
    """
    query = state.query / coord_scale
    mu_offset = (state.space.mu - state.query) / coord_scale
    logvar = np.log(state.space.sigma_diag) / 4.0
    return np.concatenate([query, mu_offset, logvar])


def _coord_scale(query: np.ndarray) -> float:
    return 1.0 + float(np.sqrt((query * query).mean()))


@dataclass
class AgentConfig:
    """Attack hyperparameters; all randomness derives from ``seed``."""

    gamma: float = 0.99
    reward_constant: float = 100.0
    jitter_size: int = 1000
    max_steps: int = 50
    episodes: int = 1
    k: int = 10
    sigma_init: float = 1.0
    loss_mode: str = "paper"
    seed: int = 0
    epsilon: float = 0.0            # relaxed-recall threshold for FP labeling
    hidden: tuple[int, ...] = (128, 128)
    actor_lr: float = 1e-2
    critic_lr: float = 1e-3
    actor_weight_decay: float = 0.025  # decoupled decay pulls a stuck actor back to the init space
    explore_start: float = 0.1
    explore_end: float = 0.01
    grad_clip: float = 10.0
    max_mu_offset: float = 1.0      # action box: per-axis cap on the applied mean offset
    max_logvar_offset: float = 3.5  # action box: per-axis cap on the applied log-variance offset
    shared_agent: bool = True       # one agent across attack points vs one each

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValidationError("gamma must be in [0, 1)")
        if self.jitter_size < 1 or self.max_steps < 1 or self.episodes < 1 or self.k < 1:
            raise ValidationError("jitter_size, max_steps, episodes and k must be >= 1")
        if not self.sigma_init > 0:
            raise ValidationError("sigma_init must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ValidationError(f"loss_mode must be one of {LOSS_MODES}")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be non-negative")


@dataclass
class PolicyNets:
    """Actor and critic networks plus their optimizer state."""

    actor: Mlp
    critic: Mlp
    actor_opt: AdamState
    critic_opt: AdamState


@dataclass(frozen=True)
class EpisodeStep:
    state: AttackState
    offset_mu: np.ndarray
    offset_logvar: np.ndarray
    fp_fraction: float
    reward: float
    value: float
    next_value: float
    advantage: float
    utility: float          # value + advantage
    log_prob: float         # Gaussian exploration-policy log-density of the action
    mu_distance: float      # |new mu - attack point| after this step's offsets
    mean_variance: float    # mean of the new sigma_diag
    terminal: bool


@dataclass(frozen=True)
class EpisodeTrace:
    attack_point: np.ndarray
    steps: list[EpisodeStep]
    terminated: bool
    final_space: JitterSpace


def reward_floor(config: AgentConfig) -> float:
    return 1.0 / (10.0 * config.jitter_size)


def compute_reward(fp_fraction: float, config: AgentConfig) -> float:
    """r = 100 * ln(max(fp_fraction, floor)) + reward_constant (natural log)."""
    if not 0.0 <= fp_fraction <= 1.0:
        raise ValidationError(f"fp_fraction must be in [0, 1], got {fp_fraction}")
    return 100.0 * math.log(max(fp_fraction, reward_floor(config))) + config.reward_constant


def td_advantage(reward: float, value: float, next_value: float, gamma: float) -> float:
    return reward + gamma * next_value - value


def sample_jitters(space: JitterSpace, count: int, seed: int) -> VectorSet:
    """Draw ``count`` i.i.d. points from N(mu, diag(sigma_diag)), per-coordinate."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = np.random.default_rng(seed)
    draws = space.mu + rng.standard_normal((count, space.d)) * np.sqrt(space.sigma_diag)
    return VectorSet(draws.astype(np.float32))


def act(actor: Mlp, state: AttackState, explore_std: float = 0.0,
        rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Actor outputs: (offset for mu, offset for log sigma_diag).

    Gaussian exploration noise of the given std is added to both halves;
    pass explore_std=0 (the default) for deterministic evaluation.
    """
    d = state.space.d
    out = forward(actor, _net_features(state, _coord_scale(state.query)))
    if out.shape[0] != 2 * d:
        raise ValidationError(f"actor output dim {out.shape[0]} != 2*d == {2 * d}")
    if explore_std > 0.0:
        if rng is None:
            raise ValidationError("exploration noise requires an rng")
        out = out + rng.normal(0.0, explore_std, size=2 * d)
    return out[:d], out[d:]


def apply_action(space: JitterSpace, offset_mu: np.ndarray,
                 offset_logvar: np.ndarray) -> JitterSpace:
    """Shift mu additively and sigma_diag in log space (clipped to stay finite)."""
    logvar = np.clip(np.log(space.sigma_diag) + offset_logvar, LOGVAR_MIN, LOGVAR_MAX)
    return JitterSpace(mu=space.mu + offset_mu, sigma_diag=np.exp(logvar))


def _cloud_truth_dists(jitters: VectorSet, base: VectorSet, k: int, threads: int) -> np.ndarray:
    """Exact top-k distances for a concentrated batch of queries.

    Every true neighbor of a query q lies within ``kth(center) + 2|q-center|``
    of the batch center (triangle inequality via the center's own top-k), so
    the scan can be restricted to that ball.  Results are identical to the
    full scan; the ball is inflated by 1e-9 to absorb float rounding.
    """
    q64 = jitters.data.astype(np.float64)
    center = q64.mean(axis=0)
    max_off = float(np.sqrt(((q64 - center) ** 2).sum(axis=1)).max())
    base64 = base.data.astype(np.float64)
    d_center = np.sqrt(((base64 - center) ** 2).sum(axis=1))
    kth_center = float(np.partition(d_center, k - 1)[k - 1])
    radius = (kth_center + 2.0 * max_off) * (1.0 + 1e-9) + 1e-9
    rows = np.nonzero(d_center <= radius)[0]
    if k <= rows.shape[0] and rows.shape[0] < 0.7 * base.n:
        _, dists = topk_euclidean(base.data[rows], base.ids[rows], jitters.data, k,
                                  threads=threads)
    else:
        _, dists = topk_euclidean(base.data, base.ids, jitters.data, k, threads=threads)
    return dists


def evaluate_jitters(jitters: VectorSet, base: VectorSet, subject, k: int,
                     epsilon: float = 0.0, threads: int = 1) -> float:
    """Fraction of jitter points the subject index answers incorrectly.

    Each point is answered by the exact scan and by the subject, then labeled
    with label_fp at the given relaxation.
    """
    if jitters.d != base.d:
        raise ValidationError(f"dimension mismatch: jitters d={jitters.d}, base d={base.d}")
    truth_dists = _cloud_truth_dists(jitters, base, k, threads)
    sub_ids, sub_dists = subject.query_batch(jitters.data, k)
    fp_count = 0
    for i in range(jitters.n):
        result = QueryResult(sub_ids[i], sub_dists[i])
        if label_fp(result, truth_dists[i], epsilon=epsilon, query_id=i).is_fp:
            fp_count += 1
    return fp_count / jitters.n


def make_step(state: AttackState, offset_mu: np.ndarray, offset_logvar: np.ndarray,
              fp_fraction: float, value: float, next_value: float, config: AgentConfig,
              log_prob: float = 0.0, mu_distance: float = 0.0, mean_variance: float = 0.0,
              terminal: bool = False) -> EpisodeStep:
    """Assemble a step record, deriving reward, advantage and utility."""
    reward = compute_reward(fp_fraction, config)
    advantage = td_advantage(reward, value, next_value, config.gamma)
    return EpisodeStep(
        state=state, offset_mu=np.asarray(offset_mu, dtype=np.float64),
        offset_logvar=np.asarray(offset_logvar, dtype=np.float64),
        fp_fraction=fp_fraction, reward=reward, value=value, next_value=next_value,
        advantage=advantage, utility=value + advantage, log_prob=log_prob,
        mu_distance=mu_distance, mean_variance=mean_variance, terminal=terminal,
    )


def a2c_losses(step: EpisodeStep, config: AgentConfig) -> tuple[float, float, float]:
    """(actor_loss, critic_loss, total_loss) for one step.

    critic_loss = delta^2 in both modes.  ``paper`` mode uses
    1 - ln(max(fp_fraction, floor)) * delta; ``standard`` uses
    -log pi(action|state) * delta.
    """
    delta = step.advantage
    critic_loss = delta * delta
    if config.loss_mode == "paper":
        actor_loss = 1.0 - math.log(max(step.fp_fraction, reward_floor(config))) * delta
    else:
        actor_loss = -step.log_prob * delta
    total = actor_loss + critic_loss
    if not math.isfinite(total):
        raise TrainingDiverged(f"non-finite loss: actor={actor_loss}, critic={critic_loss}")
    return actor_loss, critic_loss, total


def make_agent(d: int, config: AgentConfig, seed_key: tuple[int, ...] = ()) -> PolicyNets:
    """Fresh actor (3d -> hidden -> 2d) and critic (3d -> hidden -> 1).

    The actor's final layer starts at zero so the initial policy leaves the
    space unchanged apart from exploration noise.
    """
    ss = np.random.SeedSequence(entropy=config.seed, spawn_key=seed_key)
    actor_seed, critic_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    acts = ["relu"] * len(config.hidden) + ["linear"]
    actor = init_mlp([3 * d, *config.hidden, 2 * d], acts, actor_seed)
    actor.layers[-1].w[:] = 0.0
    actor.layers[-1].b[:] = 0.0
    critic = init_mlp([3 * d, *config.hidden, 1], acts, critic_seed)
    return PolicyNets(
        actor=actor, critic=critic,
        actor_opt=init_adam(actor, lr=config.actor_lr, beta1=ACTOR_BETA1),
        critic_opt=init_adam(critic, lr=config.critic_lr),
    )


def _clip_grads(grads: list[tuple[np.ndarray, np.ndarray]], max_norm: float) -> list[tuple[np.ndarray, np.ndarray]]:
    if max_norm <= 0:
        return grads
    total = math.sqrt(sum(float((g * g).sum()) for pair in grads for g in pair))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return [(dw * scale, db * scale) for dw, db in grads]


def _explore_std(config: AgentConfig, step: int) -> float:
    if config.max_steps == 1:
        return config.explore_start
    frac = step / (config.max_steps - 1)
    return config.explore_start + (config.explore_end - config.explore_start) * frac


def run_episode(attack_point: np.ndarray, base: VectorSet, subject, nets: PolicyNets,
                config: AgentConfig, episode_seed: int | None = None,
                threads: int = 1) -> EpisodeTrace:
    """Train the agent on one attack point for up to max_steps steps.

    Per step: act on the current state, apply the predicted offsets to the
    initial space (mu = attack point, sigma = sigma_init), sample jitter_size
    points from the shifted space (offsets beyond the configured action box
    are clamped), measure the subject's FP fraction, reward, and update both
    networks from the advantage.  The next state carries the shifted space.
    Stops early once fp_fraction reaches 1.

    Two variance-reduction details make the single-episode budget usable:

    * the critic's output bias is shifted before the first update so the
      first state's value equals reward/(1 - gamma), the fixed point of
      repeating the first reward; without it every early action is
      reinforced simply because rewards start far from the critic's
      arbitrary initial output;
    * in ``standard`` loss mode, exploration noise comes in antithetic
      pairs (+e then -e on consecutive steps) and the actor updates once
      per pair from the paired reward difference, which cancels baseline
      error out of the policy gradient.
    """
    attack_point = np.asarray(attack_point, dtype=np.float64).ravel()
    d = base.d
    if attack_point.shape[0] != d:
        raise ValidationError(f"attack point dim {attack_point.shape[0]} != base d {d}")
    if nets.actor.in_dim != 3 * d or nets.actor.out_dim != 2 * d or nets.critic.in_dim != 3 * d:
        raise ValidationError("networks are not dimensioned for this dataset")

    seed = config.seed if episode_seed is None else episode_seed
    noise_ss, jitter_ss = np.random.SeedSequence(seed).spawn(2)
    noise_rng = np.random.default_rng(noise_ss)
    jitter_rng = np.random.default_rng(jitter_ss)

    init_space = JitterSpace(mu=attack_point.copy(), sigma_diag=np.full(d, config.sigma_init))
    space = init_space
    steps: list[EpisodeStep] = []
    terminated = False
    gamma = config.gamma
    floor = reward_floor(config)
    baseline_set = False
    scale = _coord_scale(attack_point)

    pending: tuple[np.ndarray, float] | None = None  # (+e of an open pair, its reward)

    for t in range(config.max_steps):
        state = AttackState(query=attack_point, space=space)
        svec = _net_features(state, scale)
        raw = forward(nets.actor, svec)
        explore = _explore_std(config, t)
        if config.loss_mode == "standard" and pending is not None:
            noise = -pending[0]
        else:
            noise = noise_rng.standard_normal(2 * d)
        action = raw + noise * explore
        if explore > 0.0:
            log_prob = float(
                -0.5 * ((action - raw) ** 2).sum() / (explore * explore)
                - d * math.log(2.0 * math.pi * explore * explore)
            )
        else:
            log_prob = 0.0

        offset_mu = np.clip(action[:d], -config.max_mu_offset, config.max_mu_offset)
        offset_logvar = np.clip(action[d:], -config.max_logvar_offset, config.max_logvar_offset)
        logvar_before = np.log(init_space.sigma_diag) + offset_logvar
        new_space = apply_action(init_space, offset_mu, offset_logvar)
        next_state = AttackState(query=attack_point, space=new_space)
        nsvec = _net_features(next_state, scale)

        jitter_seed = int(jitter_rng.integers(0, 2**63 - 1))
        jitters = sample_jitters(new_space, config.jitter_size, jitter_seed)
        fp_fraction = evaluate_jitters(jitters, base, subject, config.k,
                                       epsilon=config.epsilon, threads=threads)

        if not baseline_set:
            reward0 = compute_reward(fp_fraction, config)
            nets.critic.layers[-1].b += (reward0 / (1.0 - gamma)
                                         - float(forward(nets.critic, svec)[0]))
            baseline_set = True

        value = float(forward(nets.critic, svec)[0])
        next_value = float(forward(nets.critic, nsvec)[0])
        step = make_step(
            state, offset_mu, offset_logvar, fp_fraction, value, next_value, config,
            log_prob=log_prob,
            mu_distance=float(np.linalg.norm(new_space.mu - attack_point)),
            mean_variance=float(new_space.sigma_diag.mean()),
            terminal=fp_fraction == 1.0,
        )
        try:
            actor_loss, critic_loss, total_loss = a2c_losses(step, config)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"step {t}: {exc}") from exc
        delta = step.advantage

        if config.loss_mode == "standard":
            critic_grads, _ = backward(nets.critic, svec, np.array([-2.0 * delta]))
            actor_grads = None
            if explore > 0.0:
                if pending is None:
                    pending = (noise, step.reward)
                else:
                    # paired score-function gradient with a constant
                    # denominator: dividing by the annealed variance would
                    # blow the update up exactly when the noise is smallest
                    pair_delta = 0.5 * (pending[1] - step.reward)
                    denom = config.explore_start * config.explore_start
                    action_grad = -pair_delta * pending[0] * explore / denom
                    action_grad[:d] *= MU_GRAD_DAMP
                    action_grad[d:] += SCALE_COUPLING * action_grad[d:].mean()
                    actor_grads, _ = backward(nets.actor, svec, action_grad)
                    pending = None
        else:
            # Literal-formula mode.  total = 1 - L*delta + delta^2 with
            # L = ln(max(fp, floor)); d(total)/dV(s) = L - 2*delta and
            # d(total)/dV(next) = gamma*(2*delta - L).  The next state's
            # mu/log-sigma entries are the actor's outputs, so the critic's
            # input gradient there is the actor's only learning signal.
            log_term = math.log(max(fp_fraction, floor))
            g_s, _ = backward(nets.critic, svec, np.array([log_term - 2.0 * delta]))
            g_ns, input_grad = backward(nets.critic, nsvec,
                                        np.array([gamma * (2.0 * delta - log_term)]))
            critic_grads = [(dw1 + dw2, db1 + db2)
                            for (dw1, db1), (dw2, db2) in zip(g_s, g_ns)]
            # chain through the fixed input transform: mu features carry
            # 1/scale, log-variance features 1/4 (zero wherever a clamp bound)
            action_grad = input_grad[d:].copy()
            action_grad[:d] /= scale
            action_grad[d:] /= 4.0
            action_grad[:d][np.abs(action[:d]) > config.max_mu_offset] = 0.0
            boxed = np.abs(action[d:]) > config.max_logvar_offset
            clipped = (logvar_before < LOGVAR_MIN) | (logvar_before > LOGVAR_MAX) | boxed
            action_grad[d:][clipped] = 0.0
            actor_grads, _ = backward(nets.actor, svec, action_grad)

        adam_step(nets.critic, _clip_grads(critic_grads, config.grad_clip), nets.critic_opt)
        if actor_grads is not None:
            adam_step(nets.actor, _clip_grads(actor_grads, config.grad_clip), nets.actor_opt)
            if config.actor_weight_decay > 0.0:
                shrink = 1.0 - config.actor_weight_decay
                for layer in nets.actor.layers:
                    layer.w *= shrink
                    layer.b *= shrink

        steps.append(step)
        space = new_space
        if fp_fraction == 1.0:
            terminated = True
            break

    return EpisodeTrace(attack_point=attack_point, steps=steps,
                        terminated=terminated, final_space=space)


def derive_seed(root: int, *key: int) -> int:
    """Deterministic child seed for a (root, key...) combination."""
    ss = np.random.SeedSequence(entropy=root, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class PointResult:
    point_index: int
    k: int
    steps_run: int
    final_fp_fraction: float
    fp_count: float         # final fp_fraction * jitter_size
    mu_distance: float
    mean_variance: float
    first_fp_fraction: float
    saturated_step: int | None  # 0-based step where fp_fraction first hit 1


@dataclass
class RobustnessReport:
    subject_label: str
    k_values: list[int]
    jitter_size: int
    points: list[PointResult] = field(default_factory=list)
    traces: dict[tuple[int, int], EpisodeTrace] = field(default_factory=dict)

    def aggregates(self) -> dict[int, dict[str, float]]:
        out: dict[int, dict[str, float]] = {}
        for k in self.k_values:
            rows = [p for p in self.points if p.k == k]
            saturated = [p for p in rows if p.saturated_step is not None]
            out[k] = {
                "mean_fp_count": float(np.mean([p.fp_count for p in rows])),
                "mean_fp_fraction": float(np.mean([p.final_fp_fraction for p in rows])),
                "mean_mu_distance": float(np.mean([p.mu_distance for p in rows])),
                "mean_variance": float(np.mean([p.mean_variance for p in rows])),
                "saturation_rate": len(saturated) / len(rows) if rows else 0.0,
            }
        return out

    def min_k_full(self) -> list[int | None]:
        """Per attack point: smallest k at which the attack fully saturated."""
        n_points = max((p.point_index for p in self.points), default=-1) + 1
        result: list[int | None] = [None] * n_points
        for k in sorted(self.k_values):
            for p in self.points:
                if p.k == k and p.saturated_step is not None and result[p.point_index] is None:
                    result[p.point_index] = k
        return result


def robustness_report(attack_points: VectorSet, base: VectorSet, subject,
                      config: AgentConfig, k_values: list[int],
                      threads: int = 1, log=None) -> RobustnessReport:
    """Attack every point at every k and aggregate the resulting spaces.

    With ``config.shared_agent`` one agent is trained sequentially across all
    points of a given k; otherwise each point gets a fresh agent.
    """
    if attack_points.n < 1:
        raise ValidationError("attack set must be non-empty")
    if not k_values:
        raise ValidationError("k_values must be non-empty")
    report = RobustnessReport(subject_label=subject.spec.label(),
                              k_values=list(k_values), jitter_size=config.jitter_size)
    for ki, k in enumerate(k_values):
        cfg = replace(config, k=k)
        nets = make_agent(base.d, cfg, seed_key=(ki,)) if cfg.shared_agent else None
        for pi in range(attack_points.n):
            if not cfg.shared_agent:
                nets = make_agent(base.d, cfg, seed_key=(ki, pi))
            trace = None
            for ep in range(cfg.episodes):
                trace = run_episode(attack_points.data[pi], base, subject, nets, cfg,
                                    episode_seed=derive_seed(cfg.seed, ki, pi, ep),
                                    threads=threads)
            last = trace.steps[-1]
            saturated = next((i for i, s in enumerate(trace.steps) if s.fp_fraction == 1.0), None)
            report.points.append(PointResult(
                point_index=pi, k=k, steps_run=len(trace.steps),
                final_fp_fraction=last.fp_fraction,
                fp_count=last.fp_fraction * cfg.jitter_size,
                mu_distance=last.mu_distance, mean_variance=last.mean_variance,
                first_fp_fraction=trace.steps[0].fp_fraction,
                saturated_step=saturated,
            ))
            report.traces[(k, pi)] = trace
            if log is not None:
                log(f"k={k} point={pi} steps={len(trace.steps)} "
                    f"fp={last.fp_fraction:.3f} mu_dist={last.mu_distance:.3f}")
    return report


def trace_records(trace: EpisodeTrace, config: AgentConfig) -> list[dict]:
    """One JSON-ready record per step (no timing fields, reproducible bytes)."""
    records = []
    for i, step in enumerate(trace.steps):
        actor_loss, critic_loss, total_loss = a2c_losses(step, config)
        records.append({
            "step": i,
            "fp_fraction": step.fp_fraction,
            "reward": step.reward,
            "actor_loss": actor_loss,
            "critic_loss": critic_loss,
            "total_loss": total_loss,
            "mu_distance": step.mu_distance,
            "mean_variance": step.mean_variance,
            "terminal": step.terminal,
        })
    return records


def write_trace_jsonl(trace: EpisodeTrace, config: AgentConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        for record in trace_records(trace, config):
            f.write(json.dumps(record) + "\n")


def report_records(report: RobustnessReport) -> list[dict]:
    records: list[dict] = []
    for p in report.points:
        records.append({
            "type": "point", "k": p.k, "point": p.point_index,
            "steps_run": p.steps_run, "first_fp_fraction": p.first_fp_fraction,
            "final_fp_fraction": p.final_fp_fraction, "fp_count": p.fp_count,
            "mu_distance": p.mu_distance, "mean_variance": p.mean_variance,
            "saturated_step": p.saturated_step,
        })
    for k, agg in report.aggregates().items():
        records.append({"type": "aggregate", "k": k, **agg})
    records.append({"type": "min_k_full", "subject": report.subject_label,
                    "jitter_size": report.jitter_size,
                    "per_point": report.min_k_full()})
    return records


def write_report_jsonl(report: RobustnessReport, path: str | Path) -> None:
    with open(path, "w") as f:
        for record in report_records(report):
            f.write(json.dumps(record) + "\n")
