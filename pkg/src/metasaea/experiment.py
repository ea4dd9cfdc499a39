"""Training, evaluation, leave-one-task-out and surrogate benchmarking.

Seed scheme: every episode seed is drawn from
``SeedSequence([root, stream, a, b])`` where ``stream`` separates training
(0), evaluation (1), and surrogate benchmarking (2), so results depend only on
(config, root seed).
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import problems
from .agent import (ControlMode, EpisodeResult, MetaPolicy, ReplayBuffer, SAEAEnv, Trainer,
                    agent_config_dict, fixed_policy, greedy_policy, random_policy, run_episode)
from .config import RunConfig, to_flat, training_tasks
from .infill import select_elite
from .surrogate import BACKENDS, fit, predict_batch
from .tensor import Tensor, precision

METRICS_SCHEMA = "metrics/v1"
CURVE_SCHEMA = "curve/v1"
EVAL_SCHEMA = "eval/v1"
LOTO_SCHEMA = "loto/v1"
BENCH_SCHEMA = "surrogate-bench/v1"
ABLATION_SCHEMA = "ablation/v1"

TRAIN_STREAM, EVAL_STREAM, BENCH_STREAM = 0, 1, 2
TRAINABLE = (ControlMode.DUAL, ControlMode.INFILL_ONLY, ControlMode.EA_ONLY)


def sub_seed(root: int, *path: int) -> int:
    return int(np.random.SeedSequence([int(root), *map(int, path)]).generate_state(1)[0])


def write_csv(path: Path, schema: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def read_csv(path: Path) -> list[dict]:
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def moving_average(values: Sequence[float], window: int = 5) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` points average what exists so far."""
    v = np.asarray(values, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(v)])
    i = np.arange(1, len(v) + 1)
    lo = np.maximum(0, i - window)
    return (c[i] - c[lo]) / (i - lo)


# -- sampling -------------------------------------------------------------------------------------

@dataclass
class EpisodeJob:
    task: str
    seed: int
    eps: float
    control: str
    params: dict | None  # name -> array; None for non-learned drivers
    h: int
    ela_mode: str
    hidden: int
    env: object
    lam: float
    driver: str = "policy"  # policy | random | fixed
    criterion: int = 0
    keep_transitions: bool = True
    precision: str = "float64"


def _policy_from_arrays(job: EpisodeJob) -> MetaPolicy:
    params = {k: Tensor(v, requires_grad=False) for k, v in job.params.items()}
    return MetaPolicy(job.h, job.ela_mode, job.hidden, params=params)


def run_job(job: EpisodeJob) -> EpisodeResult:
    with precision(job.precision):
        return _run_job(job)


def _run_job(job: EpisodeJob) -> EpisodeResult:
    env = SAEAEnv(problems.parse_task(job.task), job.env, job.seed, job.control, job.lam)
    if job.driver == "random":
        choose = random_policy
    elif job.driver == "fixed":
        choose = fixed_policy(job.criterion)
    else:
        choose = greedy_policy(_policy_from_arrays(job), job.eps)
    rng = np.random.default_rng(sub_seed(job.seed, 7))
    return run_episode(env, choose, rng, keep_transitions=job.keep_transitions)


def run_jobs(jobs: Sequence[EpisodeJob], workers: int = 1) -> list[EpisodeResult]:
    """Order-preserving; worker processes only ever see frozen parameter arrays."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(run_job, jobs))


def frozen(policy: MetaPolicy) -> dict:
    return {k: v.data.copy() for k, v in policy.params.items()}


# -- training -------------------------------------------------------------------------------------

@dataclass
class TrainResult:
    policy: MetaPolicy
    metrics: list[dict]
    curve: np.ndarray  # per-round mean reward per true evaluation, moving-averaged
    raw_curve: np.ndarray
    seconds: float
    buffer_sizes_at_round_start: list[int] = field(default_factory=list)

    def early_late(self, span: int = 10) -> tuple[float, float]:
        return float(np.mean(self.curve[:span])), float(np.mean(self.curve[-span:]))


def train(cfg: RunConfig, seed: int | None = None, out: str | Path | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    with precision(cfg.agent.precision):
        return _train(cfg, seed, out, log)


def _train(cfg, seed, out, log) -> TrainResult:
    root = cfg.seed if seed is None else int(seed)
    control = ControlMode(cfg.control)
    if control not in TRAINABLE:
        raise ValueError(f"control mode {control.value!r} has nothing to train")
    specs = cfg.problem_specs()
    if not specs:
        raise ValueError("training needs at least one task")
    acfg = cfg.agent
    policy = MetaPolicy(cfg.h, cfg.ela_mode, acfg.hidden, seed=sub_seed(root, TRAIN_STREAM, 999))
    trainer = Trainer(policy, acfg, seed=sub_seed(root, TRAIN_STREAM, 998))
    buffer = ReplayBuffer()
    metrics: list[dict] = []
    raw: list[float] = []
    starts: list[int] = []
    t0 = time.perf_counter()
    for rnd in range(cfg.rounds):
        buffer.clear()
        starts.append(len(buffer))
        eps = acfg.epsilon(rnd, cfg.rounds)
        params = frozen(policy)
        slots = [(ti, spec, ep) for ti, spec in enumerate(specs) for ep in range(cfg.episodes_per_env)]
        jobs = [EpisodeJob(spec.task, sub_seed(root, TRAIN_STREAM, rnd, ti, ep), eps, control.value,
                           params, cfg.h, cfg.ela_mode, acfg.hidden, cfg.budget, acfg.lam,
                           precision=acfg.precision)
                for ti, spec, ep in slots]
        results = run_jobs(jobs, cfg.workers)
        for (_, _, ep), res in zip(slots, results):
            buffer.extend(res.transitions)
            metrics.append({"round": rnd, "env": res.task, "episode": ep,
                            "mean_reward_per_true_eval": res.reward_per_true_eval,
                            "final_hv": res.final_hv, "epsilon": eps})
        stats = trainer.train_round(buffer)
        raw.append(float(np.mean([r.reward_per_true_eval for r in results])))
        if log:
            log(f"round {rnd + 1}/{cfg.rounds} eps={eps:.3f} reward/eval={raw[-1]:.3f} "
                f"loss={stats['loss']:.4f} buffer={len(buffer)}")
    result = TrainResult(policy, metrics, moving_average(raw, 5), np.asarray(raw),
                         time.perf_counter() - t0, starts)
    if out is not None:
        save_training(result, cfg, Path(out), root)
    return result


def save_training(result: TrainResult, cfg: RunConfig, out: Path, root: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    keys = ["round", "env", "episode", "mean_reward_per_true_eval", "final_hv", "epsilon"]
    write_csv(out / "metrics.csv", METRICS_SCHEMA, keys, [[m[k] for k in keys] for m in result.metrics])
    write_csv(out / "reward_curve.csv", CURVE_SCHEMA, ["round", "reward_per_true_eval", "moving_avg_5"],
              [[i, r, c] for i, (r, c) in enumerate(zip(result.raw_curve, result.curve))])
    result.policy.save(out / "checkpoint.json", {"agent_config": agent_config_dict(cfg.agent),
                                                  "seed": root, "control": cfg.control})
    manifest = {"tasks": list(cfg.tasks), "n_tasks": len(cfg.tasks), "seed": root,
                "config": {k: v for k, v in to_flat(cfg).items()}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


# -- evaluation -----------------------------------------------------------------------------------

def eval_jobs(cfg: RunConfig, task: str, seeds: Sequence[int], driver: str,
              policy: MetaPolicy | None = None, control: str | None = None) -> list[EpisodeJob]:
    """Episode jobs for one driver; the env seed depends only on (task, seed) so every
    driver faces the same initial design."""
    control = control or (ControlMode.DUAL.value if driver != "random" else ControlMode.RANDOM.value)
    params = frozen(policy) if policy is not None else None
    h = policy.h if policy is not None else cfg.h
    mode = policy.mode.value if policy is not None else cfg.ela_mode
    return [EpisodeJob(task, sub_seed(s, EVAL_STREAM), 0.0, control, params, h, mode, cfg.agent.hidden,
                       cfg.budget, cfg.agent.lam, driver, int(cfg.criterion()), keep_transitions=False,
                       precision=cfg.agent.precision)
            for s in seeds]


def evaluate(cfg: RunConfig, task: str, seeds: Sequence[int], policy: MetaPolicy | None = None,
             driver: str = "policy", control: str | None = None) -> list[EpisodeResult]:
    return run_jobs(eval_jobs(cfg, task, seeds, driver, policy, control), cfg.workers)


def log2_ratio(hv: Sequence[float], base: Sequence[float]) -> np.ndarray:
    hv, base = np.asarray(hv, dtype=np.float64), np.asarray(base, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log2(hv / base)


def compare(cfg: RunConfig, task: str, seeds: Sequence[int], policy: MetaPolicy | None,
            baseline: str = "random", out: str | Path | None = None) -> list[dict]:
    """Greedy policy versus a named baseline (random | fixed) on the same seeds."""
    ours = evaluate(cfg, task, seeds, policy) if policy is not None else None
    base = evaluate(cfg, task, seeds, driver=baseline)
    rows = []
    for i, s in enumerate(seeds):
        row = {"task": task, "seed": s, "baseline": baseline, "baseline_hv": base[i].final_hv}
        if ours is not None:
            row["policy_hv"] = ours[i].final_hv
            row["log2_hv_ratio"] = float(log2_ratio([ours[i].final_hv], [base[i].final_hv])[0])
        rows.append(row)
    if out is not None:
        out = Path(out)
        keys = list(rows[0])
        write_csv(out / "eval.csv", EVAL_SCHEMA, keys, [[r[k] for k in keys] for r in rows])
        results = ours if ours is not None else base
        for res in results:
            res.log.write(out / "evallog.csv", append=True)
    return rows


# -- leave-one-task-out ---------------------------------------------------------------------------

def loto_folds(cfg: RunConfig) -> list[dict]:
    fams = [f.lower() for f in cfg.families]
    if len(fams) < 2:
        raise ValueError("leave-one-task-out needs at least two task families")
    folds = []
    for held in fams:
        train_tasks = training_tasks([f for f in fams if f != held], cfg.train_dims)
        test_task = f"{held}:d={cfg.test_dim}:m={problems.default_m(held)}"
        folds.append({"held_out": held, "train": train_tasks, "test": test_task})
    return folds


def loto(cfg: RunConfig, out: str | Path | None = None,
         log: Callable[[str], None] | None = None) -> tuple[list[dict], list[dict]]:
    rows, summary = [], []
    for k, fold in enumerate(loto_folds(cfg)):
        fcfg = copy.deepcopy(cfg)
        fcfg.tasks = fold["train"]
        if log:
            log(f"fold {k + 1}: hold out {fold['held_out']}, {len(fold['train'])} training tasks")
        res = train(fcfg, seed=sub_seed(cfg.seed, TRAIN_STREAM, 1000 + k), log=log)
        seeds = list(range(cfg.repeats))
        hv = [r.final_hv for r in evaluate(fcfg, fold["test"], seeds, res.policy)]
        for s, v in zip(seeds, hv):
            rows.append({"fold": k, "held_out": fold["held_out"], "task": fold["test"], "repeat": s, "hv": v})
        summary.append({"fold": k, "held_out": fold["held_out"], "hv_mean": float(np.mean(hv)),
                        "hv_std": float(np.std(hv))})
        if out is not None:
            fdir = Path(out) / f"fold_{k}"
            fdir.mkdir(parents=True, exist_ok=True)
            (fdir / "manifest.json").write_text(json.dumps(fold, indent=2))
    if out is not None:
        out = Path(out)
        write_csv(out / "loto.csv", LOTO_SCHEMA, list(rows[0]), [list(r.values()) for r in rows])
        write_csv(out / "loto_summary.csv", LOTO_SCHEMA, list(summary[0]), [list(r.values()) for r in summary])
    return rows, summary


# -- ablations ------------------------------------------------------------------------------------

ABLATION_FACTORS = ("control", "ela_mode")


@dataclass
class AblationArm:
    value: str
    runs: list[TrainResult]
    hv: list[float]


def ablation(cfg: RunConfig, factor: str, values: Sequence[str], seeds: Sequence[int],
             baseline: str, task: str | None = None, out: str | Path | None = None,
             log: Callable[[str], None] | None = None) -> dict[str, AblationArm]:
    """Train one policy per (value, seed), then evaluate each greedily on the held-out task.

    ``factor`` is a RunConfig field (``control`` or ``ela_mode``); the log2 HV ratio in the
    CSV is taken per seed against the ``baseline`` value.
    """
    if factor not in ABLATION_FACTORS:
        raise ValueError(f"cannot ablate {factor!r}; choose from {ABLATION_FACTORS}")
    if baseline not in values:
        raise ValueError(f"baseline {baseline!r} is not among {list(values)}")
    task = task or cfg.test_task()
    arms: dict[str, AblationArm] = {}
    for value in values:
        vcfg = copy.deepcopy(cfg)
        setattr(vcfg, factor, value)
        runs, hv = [], []
        for s in seeds:
            res = train(vcfg, seed=s)
            runs.append(res)
            hv.append(evaluate(vcfg, task, [s], res.policy, control=vcfg.control)[0].final_hv)
            if log:
                log(f"{factor}={value} seed {s}: {res.seconds:.0f}s, held-out HV {hv[-1]:.4f}")
        arms[value] = AblationArm(value, runs, hv)
    if out is not None:
        write_ablation(Path(out) / f"ablation_{factor}.csv", factor, task, list(seeds), arms, baseline)
    return arms


def write_ablation(path: Path, factor: str, task: str, seeds: Sequence[int],
                   arms: dict[str, AblationArm], baseline: str) -> None:
    base = arms[baseline].hv
    rows = []
    for value, arm in arms.items():
        ratios = log2_ratio(arm.hv, base)
        for s, hv, r, run in zip(seeds, arm.hv, ratios, arm.runs):
            early, late = run.early_late(min(10, len(run.curve)))
            rows.append([factor, value, task, s, hv, float(r), early, late])
    write_csv(path, ABLATION_SCHEMA,
              ["factor", "value", "task", "seed", "hv", f"log2_hv_ratio_vs_{baseline}",
               "early_reward", "late_reward"], rows)


# -- surrogate benchmark --------------------------------------------------------------------------

@dataclass
class BenchStep:
    task: str
    seed: int
    step: int
    backend: str
    pred_mean: np.ndarray
    pred_std: np.ndarray
    true: np.ndarray

    def row(self) -> list:
        covered = np.abs(self.true - self.pred_mean) <= 2.0 * self.pred_std
        return [self.task, self.seed, self.step, self.backend, float(np.mean(self.pred_mean)),
                float(np.mean(self.pred_std)), float(np.mean(self.true)), float(np.mean(covered))]


BENCH_HEADER = ["task", "seed", "step", "backend", "pred_mean", "pred_std", "true_mean", "coverage_2sd"]


def surrogate_bench(cfg: RunConfig, seed: int | None = None, evals: int = 40,
                    out: str | Path | None = None) -> tuple[list[BenchStep], list[dict]]:
    """Drive a fixed-criterion run; before each true evaluation, both backends are fitted
    on the current archive and asked for the point about to be evaluated."""
    root = cfg.seed if seed is None else int(seed)
    env_cfg = copy.deepcopy(cfg.budget)
    env_cfg.fe_max = env_cfg.n_init + evals
    crit = cfg.criterion()
    steps: list[BenchStep] = []
    for ti, spec in enumerate(cfg.problem_specs()):
        env = SAEAEnv(spec, env_cfg, sub_seed(root, BENCH_STREAM, ti), ControlMode.FIXED, cfg.agent.lam)
        env.reset()
        k = 0
        while not env.done:
            idx = select_elite(crit, env.p_sur, env.p_true, env.generator.dirs, 1, env_cfg.infill)
            x = env.p_sur.x[idx]
            for backend in BACKENDS:
                scfg = copy.copy(env_cfg.surrogate)
                scfg.backend = backend
                scfg.seed = sub_seed(root, BENCH_STREAM, ti, k)
                model = fit(env.p_true.x, env.p_true.y, scfg, (spec.lower, spec.upper))
                pred = predict_batch(model, x)
                steps.append(BenchStep(spec.task, root, k, backend, pred.y[0], pred.sigma[0],
                                       problems.evaluate_batch(spec, x)[0]))
            env.step(int(crit) + 1)
            k += 1
    summary = bench_summary(steps)
    if out is not None:
        out = Path(out)
        write_csv(out / "surrogate_bench.csv", BENCH_SCHEMA, BENCH_HEADER, [s.row() for s in steps])
        keys = list(summary[0])
        write_csv(out / "surrogate_summary.csv", BENCH_SCHEMA, keys, [[r[k] for k in keys] for r in summary])
    return steps, summary


def bench_summary(steps: Sequence[BenchStep]) -> list[dict]:
    groups: dict[tuple[str, str], list[BenchStep]] = {}
    for s in steps:
        groups.setdefault((s.task, s.backend), []).append(s)
    out = []
    for (task, backend), items in groups.items():
        mu = np.array([s.pred_mean for s in items])
        sd = np.array([s.pred_std for s in items])
        y = np.array([s.true for s in items])
        out.append({"task": task, "backend": backend, "steps": len(items),
                    "rmse": float(math.sqrt(np.mean((mu - y) ** 2))),
                    "coverage_2sd": float(np.mean(np.abs(y - mu) <= 2.0 * sd)),
                    "finite": bool(np.all(np.isfinite(mu)) and np.all(np.isfinite(sd))),
                    "min_std": float(sd.min())})
    return out


__all__ = ["train", "evaluate", "compare", "loto", "loto_folds", "surrogate_bench", "moving_average",
           "log2_ratio", "sub_seed", "TrainResult"]
