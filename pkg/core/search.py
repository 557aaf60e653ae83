"""
Rank search driver

Each step samples a scheme from the controller, gates it on estimated
speedup, evaluates the survivors on the proxy split and feeds the reward
back through REINFORCE. Every step is appended to a JSONL log that can be
replayed to rebuild the exact controller state.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
import psutil

from core.controller import apply_update, forward, init_controller, policy_gradient, sample, save_checkpoint
from core.errors import EvaluatorError, LogReplayError, NoFeasiblePoint, RankSightError, ValidationError
from core.netmodel import Scheme, apply_scheme, as_scheme, scheme_speedup
from core.utils import setup_logging

DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_TOP_K = 5
DEFAULT_LOG_EVERY = 100
BASELINE_DECAY = 0.9

# Offsets from the run seed for each random stream
CONTROLLER_SEED_OFFSET = 0
SAMPLING_SEED_OFFSET = 1

LOG_FIELDS = ('step', 'scheme', 'indices', 'probs', 'speedup', 'rejected', 'error', 'reward', 'wall_ms')


@dataclass(frozen=True)
class ExploredPoint:
    scheme: Scheme
    error: float
    speedup: float
    step: int
    reward: float


@dataclass(frozen=True)
class StepRecord:
    step: int
    scheme: tuple
    indices: tuple
    probs: tuple
    speedup: float
    rejected: bool
    error: float
    reward: float
    wall_ms: float

    def to_dict(self):
        return {
            'step': self.step,
            'scheme': list(self.scheme),
            'indices': list(self.indices),
            'probs': list(self.probs),
            'speedup': self.speedup,
            'rejected': self.rejected,
            'error': self.error,
            'reward': self.reward,
            'wall_ms': self.wall_ms,
        }

    def to_json(self):
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class SearchSettings:
    max_steps: int = 2000
    learning_rate: float = DEFAULT_LEARNING_RATE
    hidden: int = 100
    embed: int = 100
    seed: int = 0
    top_k: int = DEFAULT_TOP_K
    use_baseline: bool = False
    baseline_decay: float = BASELINE_DECAY
    batch_size: int = 1
    log_every: int = DEFAULT_LOG_EVERY

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValidationError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.top_k < 1:
            raise ValidationError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValidationError(f"baseline_decay must lie in [0, 1), got {self.baseline_decay}")


class SearchState:
    """Everything one search run mutates; single-writer"""

    def __init__(self, model, space, evaluator, reward_config, settings, params=None):
        if space.layer_names != tuple(model.searchable_names):
            raise ValidationError("search space rows do not match the model's searchable layers")
        self.model = model
        self.space = space
        self.evaluator = evaluator
        self.reward_config = reward_config
        self.settings = settings
        self.params = params if params is not None else init_controller(
            space.num_layers, space.num_options, settings.hidden, settings.embed,
            seed=settings.seed + CONTROLLER_SEED_OFFSET)
        self.rng = np.random.default_rng(settings.seed + SAMPLING_SEED_OFFSET)
        self.step = 0
        self.explored = []
        self.memo = {}
        self.reward_baseline = None
        self.pending_gradient = None
        self.pending_count = 0
        self.evaluator_calls = 0
        self.memo_hits = 0
        self.accepted = 0
        self.eval_ms = 0.0

    def best_point(self):
        return top_k(self.explored, 1)[0] if self.explored else None


def _learn(state, output, sampled, reward):
    """Shared tail of a step: baseline, gradient accumulation and Adam update"""
    advantage = reward
    if state.settings.use_baseline:
        if state.reward_baseline is None:
            state.reward_baseline = reward
        advantage = reward - state.reward_baseline
        decay = state.settings.baseline_decay
        state.reward_baseline = decay * state.reward_baseline + (1.0 - decay) * reward

    grad = policy_gradient(state.params, output, sampled, advantage)
    if state.pending_gradient is None:
        state.pending_gradient = grad
    else:
        for name, value in grad.items():
            state.pending_gradient[name] += value
    state.pending_count += 1
    if state.pending_count >= state.settings.batch_size:
        averaged = {name: value / state.pending_count for name, value in state.pending_gradient.items()}
        apply_update(state.params, averaged, state.settings.learning_rate)
        state.pending_gradient = None
        state.pending_count = 0


def _admit(state, scheme, error, speedup, reward):
    key = tuple(scheme)
    state.memo.setdefault(key, error)
    state.explored.append(ExploredPoint(scheme, error, speedup, state.step, reward))
    state.accepted += 1


def search_step(state):
    """One propose / gate / evaluate / update round"""
    logger = setup_logging()
    snapshot = state.rng.bit_generator.state
    output = forward(state.params)
    sampled = sample(output, state.rng)
    scheme = state.space.scheme_for(sampled.indices)
    speedup = scheme_speedup(state.model, scheme)
    target = state.reward_config.target_speedup

    wall_ms = 0.0
    if speedup < target:
        rejected = True
        error = None
        reward = state.reward_config.punish(speedup)
    else:
        rejected = False
        key = tuple(scheme)
        if key in state.memo:
            error = state.memo[key]
            state.memo_hits += 1
        else:
            try:
                result = state.evaluator.evaluate(apply_scheme(state.model, scheme))
            except (RankSightError, OSError, ValueError) as exc:
                state.rng.bit_generator.state = snapshot
                logger.error(f"search step {state.step} failed evaluating {list(scheme)}: {exc}")
                raise EvaluatorError(f"evaluation failed at search step {state.step}: {exc}") from exc
            error = float(result.aggregate)
            wall_ms = float(result.wall_ms)
            state.evaluator_calls += 1
            state.eval_ms += wall_ms
        reward = state.reward_config.reward(error)
        _admit(state, scheme, error, speedup, reward)

    _learn(state, output, sampled, reward)
    record = StepRecord(
        step=state.step,
        scheme=tuple(scheme),
        indices=tuple(int(j) for j in sampled.indices),
        probs=tuple(float(p) for p in sampled.probs),
        speedup=float(speedup),
        rejected=rejected,
        error=error,
        reward=float(reward),
        wall_ms=wall_ms,
    )
    logger.debug(f"search step={record.step} scheme={list(record.scheme)} speedup={record.speedup:.4f} "
                 f"rejected={rejected} error={error} reward={record.reward:.6f}")
    state.step += 1
    return record


def read_log(path):
    """Parse a search log into a list of dicts"""
    records = []
    with open(path, encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogReplayError(f"{path}:{number}: malformed log line: {exc}") from exc
            missing = [field for field in LOG_FIELDS if field not in record]
            if missing:
                raise LogReplayError(f"{path}:{number}: log record misses {', '.join(missing)}")
            records.append(record)
    return records


def replay_records(state, records):
    """Re-run the controller through logged steps without calling the evaluator"""
    for record in records:
        if record['step'] != state.step:
            raise LogReplayError(f"log step {record['step']} found where step {state.step} was expected")
        output = forward(state.params)
        sampled = sample(output, state.rng)
        if [int(j) for j in sampled.indices] != list(record['indices']):
            raise LogReplayError(f"step {state.step}: resampled indices {list(sampled.indices)} "
                                 f"differ from logged {record['indices']}")
        scheme = state.space.scheme_for(sampled.indices)
        if not record['rejected']:
            error = float(record['error'])
            if tuple(scheme) in state.memo:
                state.memo_hits += 1
            _admit(state, scheme, error, float(record['speedup']), float(record['reward']))
        _learn(state, output, sampled, float(record['reward']))
        state.step += 1
    return state


def replay_log(path, model, space, evaluator, reward_config, settings):
    """Fresh state advanced through every step recorded in path"""
    state = SearchState(model, space, evaluator, reward_config, settings)
    return replay_records(state, read_log(path))


@dataclass(frozen=True)
class SearchResult:
    explored: tuple
    params: object
    records: tuple
    summary: dict


def search_summary(state, records):
    best = state.best_point()
    steps = len(records)
    return {
        'steps': steps,
        'accepted': state.accepted,
        'accepted_share': state.accepted / steps if steps else 0.0,
        'evaluator_calls': state.evaluator_calls,
        'memo_hits': state.memo_hits,
        'best_step': best.step if best else None,
        'best_error': best.error if best else None,
        'best_speedup': best.speedup if best else None,
        'best_scheme': list(best.scheme) if best else None,
        # Host measurements; everything outside this block is reproducible per seed
        'runtime': {
            'total_eval_ms': state.eval_ms,
            'rss_bytes': psutil.Process().memory_info().rss,
        },
    }


def run_search(model, space, evaluator, reward_config, settings, log_path=None, checkpoint_path=None):
    """Run up to settings.max_steps steps, resuming from log_path when it already holds steps"""
    logger = setup_logging()
    state = SearchState(model, space, evaluator, reward_config, settings)
    records = []
    if log_path and os.path.exists(log_path) and os.path.getsize(log_path) > 0:
        previous = read_log(log_path)
        if len(previous) > settings.max_steps:
            raise LogReplayError(f"log holds {len(previous)} steps, more than max_steps={settings.max_steps}")
        replay_records(state, previous)
        records = [StepRecord(r['step'], tuple(r['scheme']), tuple(r['indices']), tuple(r['probs']),
                              r['speedup'], r['rejected'], r['error'], r['reward'], r['wall_ms'])
                   for r in previous]
        logger.info(f"resuming search from step {state.step} ({log_path})")

    log = open(log_path, 'a', encoding='utf-8') if log_path else None
    try:
        while state.step < settings.max_steps:
            record = search_step(state)
            records.append(record)
            if log is not None:
                log.write(record.to_json() + '\n')
                log.flush()
            if settings.log_every and state.step % settings.log_every == 0:
                best = state.best_point()
                best_text = f"{best.error:.4f}" if best else "n/a"
                logger.info(f"search progress step={state.step} accepted_share={state.accepted / state.step:.3f} "
                            f"best_error={best_text}")
    finally:
        if log is not None:
            log.close()

    if checkpoint_path:
        save_checkpoint(state.params, checkpoint_path, extra={
            'seed': settings.seed,
            'search_steps': state.step,
            'reward_baseline': '' if state.reward_baseline is None else repr(state.reward_baseline),
        })
    return SearchResult(tuple(state.explored), state.params, tuple(records), search_summary(state, records))


def top_k(explored, k=DEFAULT_TOP_K):
    """The k distinct schemes with lowest error; ties go to higher speedup, then earlier step"""
    if not explored:
        raise NoFeasiblePoint("no scheme passed the speedup gate")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    first_seen = {}
    for point in explored:
        key = tuple(point.scheme)
        if key not in first_seen or point.step < first_seen[key].step:
            first_seen[key] = point
    ranked = sorted(first_seen.values(), key=lambda p: (p.error, -p.speedup, p.step))
    return ranked[:k]


def holdout_report(candidates, holdout_evaluator, model):
    """Re-evaluate candidates on the holdout split; failures are logged and marked"""
    logger = setup_logging()
    rows = []
    for rank, candidate in enumerate(candidates, start=1):
        scheme = as_scheme(candidate.scheme if isinstance(candidate, ExploredPoint) else candidate)
        row = {
            'candidate': rank,
            'scheme': list(scheme),
            'speedup': scheme_speedup(model, scheme),
            'proxy_error': candidate.error if isinstance(candidate, ExploredPoint) else None,
            'holdout_error': None,
        }
        try:
            row['holdout_error'] = float(holdout_evaluator.evaluate(apply_scheme(model, scheme)).aggregate)
        except (RankSightError, OSError, ValueError) as exc:
            logger.error(f"holdout evaluation failed for candidate {rank} {list(scheme)}: {exc}")
        rows.append(row)
    return rows


def select_best(candidates, holdout_evaluator, model, report=None):
    """Candidate with the lowest holdout error, as (scheme, error)

    report takes rows already produced by holdout_report for the same
    candidates, so nothing is evaluated twice.
    """
    if not candidates:
        raise NoFeasiblePoint("no candidates to select from")
    if report is None:
        report = holdout_report(candidates, holdout_evaluator, model)
    rows = [row for row in report if row['holdout_error'] is not None]
    if not rows:
        raise NoFeasiblePoint("every candidate failed holdout evaluation")
    best = min(rows, key=lambda row: (row['holdout_error'], row['candidate']))
    return Scheme(tuple(best['scheme'])), best['holdout_error']


def report_rows(records, windows=None):
    """step, speedup, error, rejected per logged step, optionally limited to [start, end) windows"""
    rows = []
    for record in records:
        record = record.to_dict() if isinstance(record, StepRecord) else record
        if windows and not any(start <= record['step'] < end for start, end in windows):
            continue
        rows.append({
            'step': record['step'],
            'speedup': record['speedup'],
            'error': '' if record['error'] is None else record['error'],
            'rejected': record['rejected'],
        })
    return rows


def window_summary(records, windows):
    """Proposal count, accepted share and best error for each [start, end) window"""
    summary = []
    for start, end in windows:
        inside = [r.to_dict() if isinstance(r, StepRecord) else r for r in records]
        inside = [r for r in inside if start <= r['step'] < end]
        accepted = [r for r in inside if not r['rejected']]
        summary.append({
            'window': f"{start}-{end}",
            'proposals': len(inside),
            'accepted_share': len(accepted) / len(inside) if inside else 0.0,
            'best_error': min((r['error'] for r in accepted), default=None),
        })
    return summary


def write_report_csv(rows, path):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=['step', 'speedup', 'error', 'rejected'])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
