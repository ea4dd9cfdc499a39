"""MDP environment, reward, Dueling-DQN meta-policy and round-based training.

One environment step is one decision of the surrogate-assisted loop: either
regenerate the candidate set (action 0, no true evaluation) or pick one of
the five infill criteria (actions 1-5), truly evaluate the elite, refit the
surrogate and regenerate candidates.
"""

from __future__ import annotations

import copy
import enum
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import problems
from .ela import ELA, ELAMode, Snapshot
from .evolve import EvolveConfig, make_generator
from .infill import CriterionId, InfillConfig, select_elite
from .pareto import REF_GUARD, manhattan_front_distance, nondominated, normalized_hv, run_reference
from .surrogate import SurrogateConfig, TruePopulation, fit
from .tensor import (Adam, Params, Tensor, clip_grad_norm, concat, huber, init_linear,
                     load_params, no_grad, relu, save_params, take_rows)

N_ACTIONS = 6


class Action(enum.IntEnum):
    A1_RESAMPLE = 0
    A2_ND_A = 1
    A3_ND_DPBI_CONV = 2
    A4_ND_DPBI_DIV = 3
    A5_EPDI_EXPLORE = 4
    A6_EPDI_EXPLOIT = 5


def action_criterion(a: int) -> CriterionId:
    if a == Action.A1_RESAMPLE:
        raise ValueError("the resample action has no infill criterion")
    return CriterionId(int(a) - 1)


class ControlMode(str, enum.Enum):
    DUAL = "dual"
    INFILL_ONLY = "infill_only"
    EA_ONLY = "ea_only"
    RANDOM = "random"
    FIXED = "fixed"


def control_mask(mode: ControlMode | str) -> np.ndarray:
    """Actions a control mode may ever take (before the resample cap)."""
    mode = ControlMode(mode)
    mask = np.ones(N_ACTIONS, dtype=bool)
    if mode == ControlMode.INFILL_ONLY:
        mask[Action.A1_RESAMPLE] = False
    elif mode == ControlMode.EA_ONLY:
        mask[:] = False
        mask[[Action.A1_RESAMPLE, Action.A2_ND_A]] = True
    return mask


@dataclass
class EnvConfig:
    n_init: int = 80
    fe_max: int = 120
    k: int = 1
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    evolve: EvolveConfig = field(default_factory=EvolveConfig)
    infill: InfillConfig = field(default_factory=InfillConfig)
    max_consecutive_resamples: int = 5


@dataclass
class AgentConfig:
    gamma: float = 0.99
    lr: float = 1e-4
    batch: int = 64
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5
    target_sync: int = 200
    lam: float = 1.0
    huber_delta: float = 1.0
    grad_clip: float = 10.0
    hidden: int = 64
    updates_per_round: int = 8
    precision: str = "float32"  # tensor dtype for sampling and training

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")

    def epsilon(self, episode: int, total_episodes: int) -> float:
        """Linear decay from eps_start to eps_end over the first eps_decay_frac of episodes."""
        horizon = max(1.0, self.eps_decay_frac * total_episodes)
        frac = min(1.0, episode / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)


# -- reward ---------------------------------------------------------------------------------

def front_improved(prev_front: np.ndarray, new_points: np.ndarray) -> bool:
    union = np.vstack([prev_front, new_points])
    after = {tuple(row) for row in union[nondominated(union)]}
    return after != {tuple(row) for row in prev_front}


def reward(action: int, new_points, prev_front, lam: float = 1.0) -> float:
    if action == Action.A1_RESAMPLE:
        return 0.0
    new_points = np.atleast_2d(np.asarray(new_points, dtype=np.float64))
    prev_front = np.atleast_2d(np.asarray(prev_front, dtype=np.float64))
    if not front_improved(prev_front, new_points):
        return -1.0
    total = 0.0
    for y in new_points:
        d_i, d_ref = manhattan_front_distance(y, prev_front)
        total += d_i / d_ref if d_ref >= REF_GUARD else d_i
    return 1.0 + lam * total


# -- environment ------------------------------------------------------------------------------

@dataclass
class Transition:
    s: Snapshot
    a: int
    r: float
    s_next: Snapshot
    done: bool
    mask_next: np.ndarray


class SAEAEnv:
    """The surrogate-assisted optimizer seen as an episodic MDP."""

    def __init__(self, spec: problems.ProblemSpec, config: EnvConfig, seed: int,
                 control: ControlMode | str = ControlMode.DUAL, lam: float = 1.0):
        self.spec = spec
        self.config = config
        self.lam = lam
        self.seed = int(seed)
        self.control = ControlMode(control)
        self.rng = np.random.default_rng(self.seed)
        self.budget: problems.BudgetState | None = None
        self.log = problems.EvalLog(spec)

    # bookkeeping --------------------------------------------------------------
    def _fit(self):
        cfg = copy.copy(self.config.surrogate)
        cfg.seed = int(self.rng.integers(2**31))
        return fit(self.p_true.x, self.p_true.y, cfg, (self.spec.lower, self.spec.upper))

    def snapshot(self) -> Snapshot:
        return Snapshot.of(self.p_true, self.p_sur, self.spec.lower, self.spec.upper, self.budget.rho)

    def mask(self) -> np.ndarray:
        mask = control_mask(self.control)
        if self.consecutive_resamples >= self.config.max_consecutive_resamples:
            mask[Action.A1_RESAMPLE] = False
        return mask

    @property
    def done(self) -> bool:
        return self.budget.exhausted

    @property
    def true_evals(self) -> int:
        return self.budget.t - self.budget.n_init

    def reset(self) -> Snapshot:
        cfg = self.config
        self.budget = problems.BudgetState(cfg.n_init, cfg.fe_max)
        X = problems.lhs_init(self.spec, cfg.n_init, int(self.rng.integers(2**31)))
        Y = problems.evaluate_batch(self.spec, X)
        self.p_true = TruePopulation(X, Y)
        ideal, nadir = problems.front_bounds(self.spec)
        self.hv_ref = run_reference(Y, ideal, nadir)
        self.log = problems.EvalLog(self.spec)
        for i in range(len(X)):
            self.log.append(self.seed, i + 1, X[i], Y[i], "init")
        self.model = self._fit()
        self.generator = make_generator(cfg.evolve, self.spec.lower, self.spec.upper, self.spec.m,
                                        np.random.default_rng(int(self.rng.integers(2**31))))
        self.p_sur = self.generator.start(self.p_true, self.model)
        self.consecutive_resamples = 0
        return self.snapshot()

    def step(self, action: int) -> Transition:
        if self.budget is None or self.done:
            raise RuntimeError("step() on a finished or unstarted episode")
        action = int(action)
        if not self.mask()[action]:
            raise ValueError(f"action {action} is masked in this state")
        s = self.snapshot()
        if action == Action.A1_RESAMPLE:
            self.p_sur = self.generator.resample(self.model)
            self.consecutive_resamples += 1
            r = 0.0
        else:
            crit = action_criterion(action)
            idx = select_elite(crit, self.p_sur, self.p_true, self.generator.dirs,
                               min(self.config.k, self.budget.remaining), self.config.infill)
            X_new = self.p_sur.x[idx]
            Y_new = problems.evaluate_batch(self.spec, X_new)
            prev_front = self.p_true.y[nondominated(self.p_true.y)]
            self.p_true = self.p_true.append(X_new, Y_new)
            self.budget.consume(len(idx))
            for x, y in zip(X_new, Y_new):
                self.log.append(self.seed, self.budget.t, x, y, crit.name)
            r = reward(action, Y_new, prev_front, self.lam)
            self.model = self._fit()
            self.p_sur = self.generator.absorb(X_new, self.p_true, self.model)
            self.consecutive_resamples = 0
        return Transition(s, action, r, self.snapshot(), self.done, self.mask())

    def final_hv(self) -> float:
        ideal, nadir = problems.front_bounds(self.spec)
        return normalized_hv(self.p_true.y, ideal, nadir, self.hv_ref)


# -- Q network & policy --------------------------------------------------------------------

def dueling_aggregate(value: Tensor, adv: Tensor) -> Tensor:
    """Q = V + A - mean(A) over the action axis."""
    return value + adv - adv.mean(axis=-1, keepdims=True)


class QNetwork:
    def __init__(self, in_dim: int, hidden: int = 64, seed: int = 0, params: Params | None = None):
        self.in_dim = in_dim
        if params is None:
            rng = np.random.default_rng(seed)
            shapes = {"q.w1": (in_dim, hidden), "q.w2": (hidden, hidden),
                      "q.wv": (hidden, 1), "q.wa": (hidden, N_ACTIONS)}
            params = {}
            for name, (fi, fo) in shapes.items():
                params[name] = Tensor(init_linear(rng, fi, fo), requires_grad=True)
                params[name.replace(".w", ".b")] = Tensor(np.zeros(fo), requires_grad=True)
        self.params = params

    def __call__(self, s: Tensor) -> Tensor:
        p = self.params
        if s.shape[-1] != self.in_dim:
            raise ValueError(f"state width {s.shape[-1]} does not match network input {self.in_dim}")
        hdn = relu(relu(s @ p["q.w1"] + p["q.b1"]) @ p["q.w2"] + p["q.b2"])
        return dueling_aggregate(hdn @ p["q.wv"] + p["q.bv"], hdn @ p["q.wa"] + p["q.ba"])


def act(q: np.ndarray, eps: float, mask: np.ndarray, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the allowed actions; ties in Q go to the lowest index."""
    allowed = np.flatnonzero(mask)
    if allowed.size == 0:
        raise ValueError("every action is masked")
    if rng.random() < eps:
        return int(rng.choice(allowed))
    return int(allowed[np.argmax(np.asarray(q)[allowed])])


class MetaPolicy:
    """Landscape analyzer + Dueling Q-network; owns every trainable parameter."""

    def __init__(self, h: int = 16, mode: ELAMode | str = ELAMode.BI, hidden: int = 64, seed: int = 0,
                 params: Params | None = None):
        self.h = h
        self.mode = ELAMode(mode)
        self.hidden = hidden
        ela_params = None if params is None else {k: v for k, v in params.items() if k.startswith("ela.")}
        q_params = None if params is None else {k: v for k, v in params.items() if k.startswith("q.")}
        self.ela = ELA(h, self.mode, seed=seed, params=ela_params)
        self.q = QNetwork(self.ela.out_dim + 1, hidden, seed=seed + 1, params=q_params)

    @property
    def params(self) -> Params:
        return {**self.ela.params, **self.q.params}

    @property
    def state_dim(self) -> int:
        return self.ela.out_dim + 1

    def states(self, snaps: Sequence[Snapshot]) -> Tensor:
        """[B, 2h+1] states; snapshots are grouped by (m, d) for batched ELA passes."""
        groups: dict[tuple[int, int], list[int]] = {}
        for i, s in enumerate(snaps):
            groups.setdefault(s.key, []).append(i)
        parts, order = [], []
        for idx in groups.values():
            z = self.ela.forward_batch([snaps[i] for i in idx])
            rho = Tensor(np.array([[snaps[i].rho] for i in idx]))
            parts.append(concat([z, rho], axis=-1))
            order.extend(idx)
        S = parts[0] if len(parts) == 1 else concat(parts, axis=0)
        if order != sorted(order):
            S = take_rows(S, np.argsort(order))
        return S

    def q_values(self, snaps: Sequence[Snapshot]) -> Tensor:
        return self.q(self.states(snaps))

    def clone(self) -> MetaPolicy:
        params = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in self.params.items()}
        return MetaPolicy(self.h, self.mode, self.hidden, params=params)

    def load_state(self, other: MetaPolicy) -> None:
        for k, v in other.params.items():
            self.params[k].data = v.data.copy()

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"ela_mode": self.mode.value, "hidden": self.hidden}
        meta.update(extra or {})
        save_params(path, self.params, self.h, meta)

    @classmethod
    def load(cls, path, expect_h: int | None = None) -> MetaPolicy:
        from .tensor import CheckpointError

        h, params, meta = load_params(path)
        if expect_h is not None and h != expect_h:
            raise CheckpointError(f"checkpoint has h={h} but the configuration asks for h={expect_h}")
        return cls(h, meta.get("ela_mode", "bi"), meta.get("hidden", 64), params=params)


# policies used to drive episodes: callables (snapshot, mask, rng) -> action
PolicyFn = Callable[[Snapshot, np.ndarray, np.random.Generator], int]


def greedy_policy(policy: MetaPolicy, eps: float = 0.0) -> PolicyFn:
    def choose(snap, mask, rng):
        if eps >= 1.0:
            return act(np.zeros(N_ACTIONS), 1.0, mask, rng)
        with no_grad():
            q = policy.q_values([snap]).data[0]
        return act(q, eps, mask, rng)

    return choose


def random_policy(snap, mask, rng) -> int:
    return int(rng.choice(np.flatnonzero(mask)))


def fixed_policy(criterion: CriterionId | int) -> PolicyFn:
    action = int(criterion) + 1

    def choose(snap, mask, rng):
        return action

    return choose


@dataclass
class EpisodeResult:
    task: str
    seed: int
    transitions: list[Transition]
    total_reward: float
    true_evals: int
    final_hv: float
    actions: list[int]
    max_resample_run: int
    log: problems.EvalLog = field(repr=False, default=None)

    @property
    def reward_per_true_eval(self) -> float:
        return self.total_reward / max(self.true_evals, 1)


def run_episode(env: SAEAEnv, choose: PolicyFn, rng: np.random.Generator,
                keep_transitions: bool = True) -> EpisodeResult:
    snap = env.reset()
    transitions, actions = [], []
    total = 0.0
    run = longest = 0
    while not env.done:
        a = choose(snap, env.mask(), rng)
        tr = env.step(a)
        actions.append(a)
        total += tr.r
        run = run + 1 if a == Action.A1_RESAMPLE else 0
        longest = max(longest, run)
        if keep_transitions:
            transitions.append(tr)
        snap = tr.s_next
    return EpisodeResult(env.spec.task, env.seed, transitions, total, env.true_evals,
                         env.final_hv(), actions, longest, env.log)


# -- training --------------------------------------------------------------------------------

class ReplayBuffer:
    """Centralized buffer; refilled from scratch every round."""

    def __init__(self):
        self.transitions: list[Transition] = []

    def __len__(self) -> int:
        return len(self.transitions)

    def clear(self) -> None:
        self.transitions = []

    def extend(self, items: Sequence[Transition]) -> None:
        self.transitions.extend(items)


class Trainer:
    def __init__(self, policy: MetaPolicy, config: AgentConfig, seed: int = 0):
        self.policy = policy
        self.config = config
        self.target = policy.clone()
        self.opt = Adam(policy.params.values(), lr=config.lr)
        self.rng = np.random.default_rng(seed)
        self.steps = 0

    def _targets(self, buf: Sequence[Transition]) -> np.ndarray:
        cfg = self.config
        with no_grad():
            q_next = self.target.q_values([t.s_next for t in buf]).data
        masked = np.where(np.array([t.mask_next for t in buf]), q_next, -np.inf)
        best = masked.max(axis=1)
        done = np.array([t.done for t in buf], dtype=np.float64)
        best = np.where(done > 0, 0.0, best)
        rewards = np.array([t.r for t in buf])
        return rewards + cfg.gamma * (1.0 - done) * best

    def td_loss(self, buf: Sequence[Transition], idx: np.ndarray, targets: np.ndarray) -> Tensor:
        uniq, inverse = np.unique(idx, return_inverse=True)
        Q = self.policy.q_values([buf[i].s for i in uniq])
        Q = take_rows(Q, inverse)
        onehot = np.zeros((len(idx), N_ACTIONS))
        onehot[np.arange(len(idx)), [buf[i].a for i in idx]] = 1.0
        q_sa = (Q * onehot).sum(axis=1)
        return huber(q_sa, targets[idx], self.config.huber_delta)

    def train_round(self, buffer: ReplayBuffer, updates: int | None = None) -> dict:
        cfg = self.config
        buf = buffer.transitions
        if not buf:
            raise ValueError("cannot train on an empty replay buffer")
        updates = cfg.updates_per_round if updates is None else updates
        targets = self._targets(buf)
        losses = []
        for _ in range(updates):
            idx = self.rng.integers(0, len(buf), size=cfg.batch)
            self.opt.zero_grad()
            loss = self.td_loss(buf, idx, targets)
            loss.backward()
            clip_grad_norm(self.opt.params, cfg.grad_clip)
            self.opt.step()
            losses.append(loss.item())
            self.steps += 1
            if self.steps % cfg.target_sync == 0:
                self.target.load_state(self.policy)
                targets = self._targets(buf)
        return {"loss": float(np.mean(losses)), "updates": updates, "steps": self.steps}


def agent_config_dict(cfg: AgentConfig) -> dict:
    return asdict(cfg)
