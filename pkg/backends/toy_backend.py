"""
Builtin evaluator backed by the bundled toy profile
"""

from core.evaluator import evaluate


class ToyEvaluator:
    """Scores models on one split of the toy corpus in-process"""

    name = 'toy'

    def __init__(self, dataset, with_per_sample=False):
        self.dataset = dataset
        self.with_per_sample = with_per_sample

    def is_available(self):
        return True

    @property
    def split(self):
        return self.dataset.split

    @property
    def sample_count(self):
        return len(self.dataset)

    def evaluate(self, model):
        return evaluate(model, self.dataset, self.with_per_sample)
