"""
Proxy-dataset condensation

Samples are ranked by how closely their error across a cohort of model
variants tracks the whole split's error across the same cohort; the
best-correlated ones form a small split that stands in for the full one
during the search.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from core.errors import (DegenerateFullset, EmptyCondensedSet, EvaluatorError, InvalidSize, RankSightError,
                         ValidationError)
from core.evaluator import aggregate_error
from core.netmodel import apply_scheme
from core.space import build_space, guided_manual_scheme, manual_scheme
from core.utils import setup_logging

PEARSON = 'pearson'
SPEARMAN = 'spearman'

DEFAULT_CORREL_MIN = 0.95
# Cohorts and probes span light to heavy compression so error levels spread out
MANUAL_COHORT_ENERGIES = (0.3, 0.45, 0.6, 0.8)
GUIDED_COHORT_ENERGIES = (0.3, 0.5)
RANDOM_COHORTS = 2
SPREAD_ENERGIES = (0.3, 0.45, 0.6, 0.8, 1.0)


@dataclass(frozen=True, eq=False)
class CohortErrors:
    """E (samples x cohorts) of per-sample error %, g (cohorts) of full-set error %"""
    sample_errors: np.ndarray
    fullset_errors: np.ndarray
    sample_lengths: np.ndarray
    sample_ids: np.ndarray
    cohort_ids: tuple = ()

    def __post_init__(self):
        errors = np.asarray(self.sample_errors, dtype=np.float64)
        if errors.ndim != 2 or errors.shape[1] < 2:
            raise ValidationError(f"cohort errors need a samples x cohorts matrix with >= 2 cohorts, got {errors.shape}")
        if np.asarray(self.fullset_errors).shape != (errors.shape[1],):
            raise ValidationError("one full-set error per cohort is required")
        if len(self.sample_lengths) != errors.shape[0] or len(self.sample_ids) != errors.shape[0]:
            raise ValidationError("sample lengths and ids must match the number of samples")

    @property
    def num_samples(self):
        return int(self.sample_errors.shape[0])

    @property
    def num_cohorts(self):
        return int(self.sample_errors.shape[1])


def cohort_errors(dataset, cohort_models, evaluator, cohort_ids=None, workers=1):
    """Per-sample and whole-split errors of every cohort model

    evaluator must be bound to dataset and return per-sample errors.
    """
    models = list(cohort_models)
    if len(models) < 2:
        raise ValidationError(f"at least 2 cohort models are required, got {len(models)}")
    cohort_ids = tuple(cohort_ids) if cohort_ids is not None else tuple(f"cohort{i}" for i in range(len(models)))
    logger = setup_logging()

    def run_cohort(index):
        try:
            result = evaluator.evaluate(models[index])
        except (RankSightError, OSError, ValueError) as exc:
            logger.error(f"cohort {cohort_ids[index]} failed: {exc}")
            raise EvaluatorError(f"evaluation of cohort '{cohort_ids[index]}' failed: {exc}") from exc
        if result.per_sample is None or len(result.per_sample) != len(dataset):
            got = None if result.per_sample is None else len(result.per_sample)
            raise EvaluatorError(f"cohort '{cohort_ids[index]}' returned {got} per-sample errors "
                                 f"for {len(dataset)} samples")
        return np.asarray(result.per_sample, dtype=np.float64), float(result.aggregate)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cohort, range(len(models))))
    else:
        results = [run_cohort(i) for i in range(len(models))]

    errors = np.column_stack([per_sample for per_sample, _ in results])
    fullset = np.array([aggregate for _, aggregate in results])
    return CohortErrors(errors, fullset, np.asarray(dataset.lengths, dtype=np.float64),
                        np.asarray(dataset.sample_ids), cohort_ids)


def _row_correlations(rows, target):
    """Pearson of each row against target; constant rows give NaN"""
    target_centered = target - target.mean()
    target_ss = float(np.dot(target_centered, target_centered))
    if np.ptp(target) == 0.0 or target_ss == 0.0:
        raise DegenerateFullset("full-set errors are identical across cohorts, nothing can be ranked")
    centered = rows - rows.mean(axis=1, keepdims=True)
    row_ss = np.einsum('ij,ij->i', centered, centered)
    out = np.full(rows.shape[0], np.nan)
    live = np.ptp(rows, axis=1) > 0.0
    out[live] = (centered[live] @ target_centered) / np.sqrt(row_ss[live] * target_ss)
    return np.clip(out, -1.0, 1.0)


def sample_correlations(ce, statistic=PEARSON):
    """One correlation per sample; NaN marks excluded zero-variance samples"""
    rows = np.asarray(ce.sample_errors, dtype=np.float64)
    target = np.asarray(ce.fullset_errors, dtype=np.float64)
    if statistic == SPEARMAN:
        live = np.ptp(rows, axis=1) > 0.0
        if np.ptp(target) == 0.0:
            raise DegenerateFullset("full-set errors are identical across cohorts, nothing can be ranked")
        ranked = rankdata(rows, axis=1)
        out = _row_correlations(ranked, rankdata(target))
        out[~live] = np.nan
        return out
    if statistic != PEARSON:
        raise ValidationError(f"unknown correlation statistic '{statistic}'")
    return _row_correlations(rows, target)


def condense_select(ce, correl_min=DEFAULT_CORREL_MIN, min_length=0, statistic=PEARSON, correlations=None):
    """Ids of samples correlating strictly above correl_min, in original order"""
    if not -1.0 <= correl_min <= 1.0:
        raise ValidationError(f"correl_min must lie in [-1, 1], got {correl_min}")
    if correlations is None:
        correlations = sample_correlations(ce, statistic)
    with np.errstate(invalid='ignore'):
        keep = (correlations > correl_min) & (ce.sample_lengths >= min_length)
    selected = [int(s) for s in np.asarray(ce.sample_ids)[keep]]
    if not selected:
        raise EmptyCondensedSet(f"no sample correlates above {correl_min} (min_length {min_length})")
    return selected


def condense_top(ce, size, min_length=0, statistic=PEARSON, correlations=None):
    """The size best-correlated samples, returned in original order"""
    if correlations is None:
        correlations = sample_correlations(ce, statistic)
    eligible = np.flatnonzero(~np.isnan(correlations) & (ce.sample_lengths >= min_length))
    if size < 1 or size > len(eligible):
        raise InvalidSize(f"cannot pick {size} samples from {len(eligible)} eligible ones")
    order = eligible[np.argsort(-correlations[eligible], kind='stable')][:size]
    return [int(s) for s in np.asarray(ce.sample_ids)[np.sort(order)]]


def random_select(sample_ids, size, seed):
    """Uniform subset without replacement, in shuffled order"""
    sample_ids = list(sample_ids)
    if size < 0 or size > len(sample_ids):
        raise InvalidSize(f"cannot draw {size} samples from {len(sample_ids)}")
    rng = np.random.default_rng(seed)
    return [sample_ids[i] for i in rng.permutation(len(sample_ids))[:size]]


def subset_fidelity(subset_ids, probes, statistic=PEARSON):
    """Correlation across probe models of subset error against full-set error

    probes is the CohortErrors of the probe models on the full split. A
    subset whose error never moves across probes carries no signal and
    scores 0.0.
    """
    position = {int(s): i for i, s in enumerate(probes.sample_ids)}
    try:
        rows = np.array([position[int(s)] for s in subset_ids], dtype=np.int64)
    except KeyError as exc:
        raise InvalidSize(f"sample id {exc.args[0]} is not part of the probed split") from None
    if rows.size == 0:
        raise InvalidSize("subset is empty")
    subset = np.array([aggregate_error(probes.sample_errors[rows, p], probes.sample_lengths[rows])
                       for p in range(probes.num_cohorts)])
    fullset = np.asarray(probes.fullset_errors, dtype=np.float64)
    if statistic == SPEARMAN:
        subset, fullset = rankdata(subset), rankdata(fullset)
    elif statistic != PEARSON:
        raise ValidationError(f"unknown correlation statistic '{statistic}'")
    value = _row_correlations(subset[None, :], fullset)[0]
    return 0.0 if np.isnan(value) else float(value)


def _random_schemes(model, count, rng, energies):
    space = build_space(model, [list(energies)] * len(model.searchable_layers))
    return [space.scheme_for(rng.integers(0, space.num_options, size=space.num_layers)) for _ in range(count)]


def cohort_suite(model, seed=0):
    """Eight compressed variants of model: manual, guided-manual and random schemes

    Energies run from heavy to light compression, so full-set errors across
    the cohort cover a wide range.
    """
    searchable = model.searchable_names
    excluded = (searchable[0], searchable[-1]) if len(searchable) > 2 else ()
    cohorts = []
    for energy in MANUAL_COHORT_ENERGIES:
        cohorts.append((f"manual@{energy}", apply_scheme(model, manual_scheme(model, energy))))
    for energy in GUIDED_COHORT_ENERGIES:
        cohorts.append((f"guided@{energy}", apply_scheme(model, guided_manual_scheme(model, energy, excluded))))
    rng = np.random.default_rng(seed)
    for index, scheme in enumerate(_random_schemes(model, RANDOM_COHORTS, rng, SPREAD_ENERGIES)):
        cohorts.append((f"random{index}", apply_scheme(model, scheme)))
    return cohorts


def probe_suite(model, seed=0, count=12):
    """Random compressed variants used to score subset fidelity"""
    if count < 2:
        raise ValidationError("at least 2 probe models are required")
    rng = np.random.default_rng(seed)
    return [(f"probe{i}", apply_scheme(model, scheme))
            for i, scheme in enumerate(_random_schemes(model, count, rng, SPREAD_ENERGIES))]


def build_manifest(ce, selected, correlations, correl_min, min_length):
    """JSON-ready record of one condensation run, including every sample's correlation

    Zero-variance samples have no correlation and are stored as null.
    """
    return {
        'correl_min': correl_min,
        'min_length': min_length,
        'cohort_ids': list(ce.cohort_ids),
        'selected': [int(s) for s in selected],
        'correlations': {str(int(s)): (None if np.isnan(c) else float(c))
                         for s, c in zip(ce.sample_ids, correlations)},
    }


def write_manifest(manifest, path):
    """Write a manifest from build_manifest as indented JSON"""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)


def read_manifest(path):
    """Load a manifest; ValidationError when a required key is missing"""
    with open(path, encoding='utf-8') as f:
        manifest = json.load(f)
    for key in ('correl_min', 'min_length', 'cohort_ids', 'selected', 'correlations'):
        if key not in manifest:
            raise ValidationError(f"condensed-set manifest {path} misses '{key}'")
    return manifest
