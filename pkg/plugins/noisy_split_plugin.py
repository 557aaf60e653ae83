"""
Example evaluator plugin: toy evaluation with split-specific noise

Adds a deterministic offset to the toy error that depends on the scheme
and the split, so a candidate's ranking on one split need not carry over
to another. Useful for exercising holdout selection.
"""

import hashlib

from core.evaluator import EvalResult, evaluate

NOISE_POINTS = 2.0


def _offset(model, split):
    ranks = ','.join(str(r) for r in getattr(model, 'scheme', ()))
    digest = hashlib.sha256(f"{split}|{ranks}".encode('utf-8')).digest()
    return (int.from_bytes(digest[:4], 'little') / 2 ** 32 - 0.5) * 2.0


class NoisySplitEvaluator:
    name = 'noisy_split'

    def __init__(self, dataset, with_per_sample=False, noise_points=NOISE_POINTS):
        self.dataset = dataset
        self.with_per_sample = with_per_sample
        self.noise_points = noise_points

    def evaluate(self, model):
        result = evaluate(model, self.dataset)
        shift = _offset(model, self.dataset.split) * self.noise_points
        aggregate = min(100.0, max(0.0, result.aggregate + shift))
        # Shifted aggregates no longer match per-sample errors, so none are reported
        return EvalResult(aggregate, None, result.wall_ms)


def register():
    return {
        'name': 'noisy_split',
        'version': '1.0.0',
        'description': 'Toy evaluator with deterministic split-dependent noise',
        'evaluators': {
            'noisy_split': NoisySplitEvaluator,
        },
    }
