"""
Error-rate evaluation for RankSight

Holds the bundled toy profile (a tanh MLP trained on a seeded synthetic
corpus), the deterministic forward pass used to score models, SGD retraining
of compressed models and the selection of evaluator backends.
"""

import json
import os
import time
from dataclasses import dataclass, replace

import numpy as np

from core.errors import (ConfigError, DivergenceError, InvalidSize, ModelShapeError,
                         ProfileBuildError, ValidationError)
from core.lowrank import TruncatedPair, rank_for_energy
from core.netmodel import CompressedLayer, CompressedModel, LayeredModel, LayerSpec, load_model, save_model
from core.utils import setup_logging

NUM_FEATURES = 64
NUM_CLASSES = 10
LATENT_DIM = 8
LAYER_SIZES = (64, 96, 96, 96, 96, 32, NUM_CLASSES)
BIAS_SUFFIX = '.bias'

# Split sizes count samples; every sample is TOKENS_PER_SAMPLE classified tokens
TRAIN_SIZE = 2000
DEV_SIZE = 500
TEST_SIZE = 500
TOKENS_PER_SAMPLE = 8
NOISE_FRACTION = 0.2
CLASS_OFFSET = 4.0
FEATURE_NOISE = 0.1
# Per-sample spread of the latent noise, so some samples are harder than others
DIFFICULTY_RANGE = (0.5, 1.3)

# fc2 keeps LIVE_UNITS working outputs; fc3 is rank BOTTLENECK_RANK on them
REDUNDANT_LAYER = 'fc3'
LIVE_UNITS = 16
BOTTLENECK_RANK = 4
DEAD_SCALE = 0.99

PROFILE_EPOCHS = 12
MAX_CLEAN_DEV_ERROR = 15.0
FALLBACK_SEEDS = (1, 2, 3, 5, 8)

LEARNING_RATE = 0.01
MOMENTUM = 0.9
BATCH_SIZE = 32
RETRAIN_EPOCHS = 20
DIVERGENCE_FACTOR = 2.0
DIVERGENCE_PATIENCE = 3

SPLITS = ('train', 'dev', 'condensed', 'test')


@dataclass(frozen=True, eq=False)
class Dataset:
    """One split of labelled samples; sample ids are unique across splits

    features is (samples, features) for one token per sample or
    (samples, tokens, features) with labels shaped (samples, tokens).
    """
    split: str
    features: np.ndarray
    labels: np.ndarray
    lengths: np.ndarray
    sample_ids: np.ndarray
    noisy: np.ndarray

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split '{self.split}', expected one of {', '.join(SPLITS)}")
        count = len(self.labels)
        for field in ('lengths', 'sample_ids', 'noisy'):
            if len(getattr(self, field)) != count:
                raise ValidationError(f"dataset '{self.split}': {field} has {len(getattr(self, field))} entries, "
                                      f"expected {count}")
        features = np.asarray(self.features)
        if features.ndim not in (2, 3) or features.shape[:-1] != np.asarray(self.labels).shape:
            raise ValidationError(f"dataset '{self.split}': features {features.shape} do not match "
                                  f"labels {np.asarray(self.labels).shape}")

    def __len__(self):
        return int(len(self.labels))

    def tokens(self):
        """(features, labels) flattened to one row per token"""
        features = np.asarray(self.features, dtype=np.float64)
        return features.reshape(-1, features.shape[-1]), np.asarray(self.labels, dtype=np.int64).reshape(-1)

    def subset(self, sample_ids, split='condensed'):
        """Samples with the given ids, in the order given"""
        position = {int(s): i for i, s in enumerate(self.sample_ids)}
        try:
            rows = np.array([position[int(s)] for s in sample_ids], dtype=np.int64)
        except KeyError as exc:
            raise InvalidSize(f"sample id {exc.args[0]} is not part of split '{self.split}'") from None
        return Dataset(split, self.features[rows], self.labels[rows], self.lengths[rows],
                       self.sample_ids[rows], self.noisy[rows])


@dataclass(frozen=True)
class EvalResult:
    """aggregate: error % in [0, 100]; per_sample holds per-sample error % when requested"""
    aggregate: float
    per_sample: np.ndarray = None
    wall_ms: float = 0.0


@dataclass(frozen=True, eq=False)
class ToyProfile:
    model: LayeredModel
    splits: dict
    baseline_error: float
    test_error: float
    clean_dev_error: float
    seed: int


def aggregate_error(per_sample, lengths):
    """Length-weighted mean of per-sample error rates"""
    per_sample = np.asarray(per_sample, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.float64)
    total = lengths.sum()
    if per_sample.size == 0 or not total > 0:
        raise InvalidSize("cannot aggregate errors over an empty sample set")
    return float(np.dot(per_sample, lengths) / total)


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _blocks(model):
    """Group layers into (name, weights-or-pair, bias) blocks in model order"""
    blocks = []
    for layer in model.layers:
        if layer.name.endswith(BIAS_SUFFIX):
            owner = layer.name[:-len(BIAS_SUFFIX)]
            if not blocks or blocks[-1]['name'] != owner or blocks[-1]['bias'] is not None:
                raise ModelShapeError(f"bias layer '{layer.name}' does not follow layer '{owner}'")
            bias = layer.dense() if isinstance(layer, CompressedLayer) else layer.weights
            if bias.shape != (1, blocks[-1]['out']):
                raise ModelShapeError(f"bias '{layer.name}' has shape {bias.shape}, expected (1, {blocks[-1]['out']})")
            blocks[-1]['bias'] = bias
            continue
        pair = getattr(layer, 'pair', None)
        mats = [pair.u_trunc, pair.v_star] if pair is not None else [layer.weights]
        blocks.append({'name': layer.name, 'mats': mats, 'bias': None,
                       'searchable': layer.searchable, 'in': mats[0].shape[0], 'out': mats[-1].shape[1]})
    for previous, block in zip(blocks, blocks[1:]):
        if previous['out'] != block['in']:
            raise ModelShapeError(f"layer '{block['name']}' expects {block['in']} inputs, "
                                  f"'{previous['name']}' produces {previous['out']}")
    return blocks


def _logits(blocks, features):
    if features.shape[1] != blocks[0]['in']:
        raise ModelShapeError(f"model expects {blocks[0]['in']} features, dataset has {features.shape[1]}")
    h = features
    last = len(blocks) - 1
    for index, block in enumerate(blocks):
        # Factored layers run as (x @ U') @ V*
        for mat in block['mats']:
            h = h @ mat
        if block['bias'] is not None:
            h = h + block['bias']
        if index < last:
            h = np.tanh(h)
    return h


def _sample_errors(blocks, dataset):
    """Share of each sample's tokens that are misclassified, in %"""
    features, labels = dataset.tokens()
    wrong = np.argmax(_logits(blocks, features), axis=1) != labels
    return 100.0 * wrong.reshape(len(dataset), -1).mean(axis=1)


def evaluate(model, dataset, with_per_sample=False):
    """Token error % of a LayeredModel or CompressedModel on one split"""
    if len(dataset) == 0:
        raise InvalidSize(f"split '{dataset.split}' holds no samples")
    started = time.perf_counter()
    per_sample = _sample_errors(_blocks(model), dataset)
    aggregate = aggregate_error(per_sample, dataset.lengths)
    wall_ms = (time.perf_counter() - started) * 1000.0
    return EvalResult(aggregate, per_sample if with_per_sample else None, wall_ms)


def measure_speedup(model, compressed, dataset, repeats=5):
    """Measured forward-time ratio of the dense model over the compressed one"""
    if repeats < 1:
        raise ValidationError("repeats must be at least 1")
    features, _ = dataset.tokens()

    def best_time(candidate):
        blocks = _blocks(candidate)
        timings = []
        for _ in range(repeats):
            started = time.perf_counter()
            _logits(blocks, features)
            timings.append(time.perf_counter() - started)
        return min(timings)

    dense_time = best_time(model)
    compressed_time = best_time(compressed)
    return dense_time / max(compressed_time, 1e-12)


# ---------------------------------------------------------------------------
# SGD training shared by profile construction and retraining
# ---------------------------------------------------------------------------

def _trainable(blocks):
    return [{'name': b['name'], 'mats': [np.array(m, dtype=np.float64) for m in b['mats']],
             'bias': None if b['bias'] is None else np.array(b['bias'], dtype=np.float64),
             'searchable': b['searchable'], 'in': b['in'], 'out': b['out']} for b in blocks]


def _forward_cached(blocks, x):
    activations = [x]
    mids = []
    h = x
    last = len(blocks) - 1
    for index, block in enumerate(blocks):
        if len(block['mats']) == 2:
            mid = h @ block['mats'][0]
            z = mid @ block['mats'][1]
        else:
            mid = None
            z = h @ block['mats'][0]
        if block['bias'] is not None:
            z = z + block['bias']
        mids.append(mid)
        h = np.tanh(z) if index < last else z
        activations.append(h)
    return h, activations, mids


def _backward(blocks, activations, mids, dlogits):
    grads = [None] * len(blocks)
    delta = dlogits
    for index in reversed(range(len(blocks))):
        block = blocks[index]
        inputs = activations[index]
        grad = {'bias': delta.sum(axis=0, keepdims=True) if block['bias'] is not None else None}
        if len(block['mats']) == 2:
            u, v = block['mats']
            through_v = delta @ v.T
            grad['mats'] = [inputs.T @ through_v, mids[index].T @ delta]
            dinputs = through_v @ u.T
        else:
            grad['mats'] = [inputs.T @ delta]
            dinputs = delta @ block['mats'][0].T
        grads[index] = grad
        if index > 0:
            delta = dinputs * (1.0 - activations[index] ** 2)
    return grads


def _cross_entropy_grad(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(len(labels)), labels] -= 1.0
    return probs / len(labels)


def _sgd_epoch(blocks, velocity, features, labels, rng, learning_rate, momentum, batch_size):
    order = rng.permutation(len(labels))
    for start in range(0, len(order), batch_size):
        batch = order[start:start + batch_size]
        logits, activations, mids = _forward_cached(blocks, features[batch])
        grads = _backward(blocks, activations, mids, _cross_entropy_grad(logits, labels[batch]))
        for block, grad, vel in zip(blocks, grads, velocity):
            for i, g in enumerate(grad['mats']):
                vel['mats'][i] *= momentum
                vel['mats'][i] -= learning_rate * g
                block['mats'][i] += vel['mats'][i]
            if grad['bias'] is not None:
                vel['bias'] *= momentum
                vel['bias'] -= learning_rate * grad['bias']
                block['bias'] += vel['bias']


def _zero_velocity(blocks):
    return [{'mats': [np.zeros_like(m) for m in b['mats']],
             'bias': None if b['bias'] is None else np.zeros_like(b['bias'])} for b in blocks]


def _train_error(blocks, dataset):
    return aggregate_error(_sample_errors(blocks, dataset), dataset.lengths)


def _finite(blocks):
    return all(np.all(np.isfinite(m)) for b in blocks for m in b['mats']) and \
        all(b['bias'] is None or np.all(np.isfinite(b['bias'])) for b in blocks)


def _rebuild(model, blocks):
    """Same container type and topology as model, with trained weights"""
    layers = []
    for block in blocks:
        if len(block['mats']) == 2:
            u = np.ascontiguousarray(block['mats'][0])
            v = np.ascontiguousarray(block['mats'][1])
            u.setflags(write=False)
            v.setflags(write=False)
            layers.append(CompressedLayer(block['name'], block['searchable'], pair=TruncatedPair(u, v)))
        elif isinstance(model, CompressedModel):
            w = np.ascontiguousarray(block['mats'][0])
            w.setflags(write=False)
            layers.append(CompressedLayer(block['name'], block['searchable'], weights=w))
        else:
            layers.append(LayerSpec(block['name'], block['mats'][0], block['searchable']))
        if block['bias'] is not None:
            name = block['name'] + BIAS_SUFFIX
            if isinstance(model, CompressedModel):
                b = np.ascontiguousarray(block['bias'])
                b.setflags(write=False)
                layers.append(CompressedLayer(name, False, weights=b))
            else:
                layers.append(LayerSpec(name, block['bias'], False))
    if isinstance(model, CompressedModel):
        return CompressedModel(layers, model.metadata, model.scheme)
    return LayeredModel(layers, model.metadata)


def retrain(model, dataset, epochs=RETRAIN_EPOCHS, seed=0, learning_rate=LEARNING_RATE,
            momentum=MOMENTUM, batch_size=BATCH_SIZE, monitor=None):
    """Fine-tune every parameter with SGD + momentum, factored layers staying factored

    Returns (model, history) where history[0] is the error before training
    and history[e] the error after epoch e, measured on monitor (default:
    the training split).
    """
    if epochs < 0 or batch_size < 1:
        raise ValidationError("epochs must be >= 0 and batch_size >= 1")
    logger = setup_logging()
    monitor = monitor if monitor is not None else dataset
    blocks = _trainable(_blocks(model))
    initial = _train_error(blocks, monitor)
    history = [initial]
    if epochs == 0:
        return model, history

    rng = np.random.default_rng(seed)
    velocity = _zero_velocity(blocks)
    features, labels = dataset.tokens()
    over = 0
    for epoch in range(1, epochs + 1):
        _sgd_epoch(blocks, velocity, features, labels, rng, learning_rate, momentum, batch_size)
        if not _finite(blocks):
            raise DivergenceError(f"retraining produced non-finite weights at epoch {epoch}", history)
        error = _train_error(blocks, monitor)
        history.append(error)
        logger.debug(f"retrain epoch={epoch} error={error:.4f}")
        over = over + 1 if error > DIVERGENCE_FACTOR * initial else 0
        if over >= DIVERGENCE_PATIENCE:
            raise DivergenceError(f"retraining diverged: error above {DIVERGENCE_FACTOR}x the initial "
                                  f"{initial:.2f}% for {DIVERGENCE_PATIENCE} epochs", history)
    return _rebuild(model, blocks), history


# ---------------------------------------------------------------------------
# Toy profile
# ---------------------------------------------------------------------------

def _class_means():
    means = np.zeros((NUM_CLASSES, LATENT_DIM))
    for c in range(NUM_CLASSES):
        means[c, c // 2] = CLASS_OFFSET if c % 2 == 0 else -CLASS_OFFSET
    return means


def build_toy_corpus(seed):
    """Seeded train/dev/test splits of multi-token samples

    Each sample draws its own latent noise scale, so per-sample error rates
    spread out the way per-utterance error rates do. 20% of dev samples have
    every token relabelled wrongly.
    """
    rng = np.random.default_rng(seed)
    total = TRAIN_SIZE + DEV_SIZE + TEST_SIZE
    shape = (total, TOKENS_PER_SAMPLE)
    labels = rng.integers(0, NUM_CLASSES, size=shape)
    difficulty = rng.uniform(*DIFFICULTY_RANGE, size=total)
    latent = _class_means()[labels] + difficulty[:, None, None] * rng.standard_normal(shape + (LATENT_DIM,))
    mixing = rng.standard_normal((LATENT_DIM, NUM_FEATURES)) / np.sqrt(LATENT_DIM)
    features = latent @ mixing + FEATURE_NOISE * rng.standard_normal(shape + (NUM_FEATURES,))

    train_tokens = features[:TRAIN_SIZE].reshape(-1, NUM_FEATURES)
    features = (features - train_tokens.mean(axis=0)) / train_tokens.std(axis=0)

    noisy = np.zeros(total, dtype=bool)
    noisy_dev = rng.choice(DEV_SIZE, size=int(round(NOISE_FRACTION * DEV_SIZE)), replace=False) + TRAIN_SIZE
    noisy[noisy_dev] = True
    labels[noisy_dev] = (labels[noisy_dev] + rng.integers(1, NUM_CLASSES, size=(len(noisy_dev), TOKENS_PER_SAMPLE))) \
        % NUM_CLASSES

    ids = np.arange(total, dtype=np.int64)
    lengths = np.full(total, float(TOKENS_PER_SAMPLE))
    bounds = {'train': (0, TRAIN_SIZE), 'dev': (TRAIN_SIZE, TRAIN_SIZE + DEV_SIZE),
              'test': (TRAIN_SIZE + DEV_SIZE, total)}
    return {
        split: Dataset(split, features[lo:hi], labels[lo:hi], lengths[lo:hi], ids[lo:hi], noisy[lo:hi])
        for split, (lo, hi) in bounds.items()
    }


def _glorot(rng, fan_in, fan_out):
    return rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / (fan_in + fan_out))


def _compact_blocks(rng):
    """Trainable network with fc2 narrowed to its live units and fc3 as a rank pair"""
    sizes = list(LAYER_SIZES)
    blocks = []
    for index in range(len(sizes) - 1):
        name = f"fc{index + 1}"
        fan_in, fan_out = sizes[index], sizes[index + 1]
        if name == 'fc2':
            fan_out = LIVE_UNITS
        if name == REDUNDANT_LAYER:
            fan_in = LIVE_UNITS
            mats = [rng.standard_normal((fan_in, BOTTLENECK_RANK)) / np.sqrt(fan_in),
                    rng.standard_normal((BOTTLENECK_RANK, fan_out)) / np.sqrt(BOTTLENECK_RANK)]
        else:
            mats = [_glorot(rng, fan_in, fan_out)]
        blocks.append({'name': name, 'mats': mats, 'bias': np.zeros((1, fan_out)),
                       'searchable': True, 'in': fan_in, 'out': fan_out})
    return blocks


def _expand(blocks, rng):
    """Pad fc2 with dead units and give fc3 a dead block below its live spectrum"""
    width = LAYER_SIZES[2]
    layers = []
    for block in blocks:
        name = block['name']
        if name == 'fc2':
            weights = np.zeros((block['in'], width))
            weights[:, :LIVE_UNITS] = block['mats'][0]
            bias = np.zeros((1, width))
            bias[:, :LIVE_UNITS] = block['bias']
        elif name == REDUNDANT_LAYER:
            a, b = block['mats']
            live = a @ b
            weights = np.zeros((width, block['out']))
            weights[:LIVE_UNITS] = live
            sigma_live = np.linalg.svd(live, compute_uv=False)[:BOTTLENECK_RANK]
            dead_rows = width - LIVE_UNITS
            # Output directions orthogonal to the live row space
            _, _, vt = np.linalg.svd(b)
            complement = vt[BOTTLENECK_RANK:].T
            right, _ = np.linalg.qr(complement @ np.linalg.qr(rng.standard_normal((complement.shape[1], dead_rows)))[0])
            left, _ = np.linalg.qr(rng.standard_normal((dead_rows, dead_rows)))
            weights[LIVE_UNITS:] = DEAD_SCALE * sigma_live[-1] * (left @ right.T)
            bias = block['bias']
        else:
            weights = block['mats'][0]
            bias = block['bias']
        layers.append(LayerSpec(name, weights, True))
        layers.append(LayerSpec(name + BIAS_SUFFIX, bias, False))
    return layers


def _train_profile(seed, epochs):
    """One training attempt; ProfileBuildError when the seed misses the error bar"""
    logger = setup_logging()
    splits = build_toy_corpus(seed)
    rng = np.random.default_rng([seed, 1])
    blocks = _compact_blocks(rng)
    velocity = _zero_velocity(blocks)
    train = splits['train']
    for epoch in range(epochs):
        _sgd_epoch(blocks, velocity, *train.tokens(), rng, LEARNING_RATE, MOMENTUM, BATCH_SIZE)
        if not _finite(blocks):
            raise ProfileBuildError(f"toy profile training diverged at epoch {epoch + 1} (seed {seed})")

    metadata = {
        'architecture': 'mlp',
        'activation': 'tanh',
        'layer_sizes': '-'.join(str(s) for s in LAYER_SIZES),
        'redundant_layer': REDUNDANT_LAYER,
        'profile_seed': str(seed),
    }
    model = LayeredModel(_expand(blocks, rng), metadata)

    dev = splits['dev']
    baseline = evaluate(model, dev, with_per_sample=True)
    clean = ~dev.noisy
    clean_error = aggregate_error(baseline.per_sample[clean], dev.lengths[clean])
    if clean_error >= MAX_CLEAN_DEV_ERROR:
        raise ProfileBuildError(f"toy profile seed {seed} reached {clean_error:.2f}% error on clean dev samples")
    test_error = evaluate(model, splits['test']).aggregate

    sigma = model.factorization(REDUNDANT_LAYER).sigma
    if rank_for_energy(sigma, 0.3) < BOTTLENECK_RANK:
        logger.warning(f"toy profile seed {seed}: {REDUNDANT_LAYER} loses live directions at energy 0.3")
    logger.info(f"toy profile seed={seed} dev={baseline.aggregate:.2f}% clean_dev={clean_error:.2f}% "
                f"test={test_error:.2f}%")
    return ToyProfile(model, splits, baseline.aggregate, test_error, clean_error, int(seed))


def build_toy_profile(seed=0, epochs=PROFILE_EPOCHS):
    """Train the bundled 6-layer tanh classifier; fully deterministic per seed

    A seed that misses MAX_CLEAN_DEV_ERROR is replaced by the fallback seeds
    in order. The profile keeps the requested seed; the seed that actually
    trained is recorded in the model metadata.
    """
    logger = setup_logging()
    attempts = [int(seed)] + [s for s in FALLBACK_SEEDS if s != int(seed)]
    for attempt in attempts:
        try:
            profile = _train_profile(attempt, epochs)
        except ProfileBuildError as exc:
            logger.warning(str(exc))
            continue
        if attempt != int(seed):
            logger.warning(f"toy profile seed {seed} rejected, using fallback seed {attempt}")
        return replace(profile, seed=int(seed))
    raise ProfileBuildError(f"no toy profile reached < {MAX_CLEAN_DEV_ERROR}% clean dev error "
                            f"with seeds {attempts}")


PROFILE_MODEL = 'model.lrfm'
PROFILE_SPLITS = 'splits.npz'
PROFILE_INFO = 'profile.json'


def save_profile(profile, directory):
    os.makedirs(directory, exist_ok=True)
    save_model(profile.model, os.path.join(directory, PROFILE_MODEL))
    arrays = {}
    for name, split in profile.splits.items():
        for field in ('features', 'labels', 'lengths', 'sample_ids', 'noisy'):
            arrays[f"{name}__{field}"] = getattr(split, field)
    np.savez(os.path.join(directory, PROFILE_SPLITS), **arrays)
    info = {
        'seed': profile.seed,
        'baseline_error': profile.baseline_error,
        'test_error': profile.test_error,
        'clean_dev_error': profile.clean_dev_error,
        'splits': {name: len(split) for name, split in profile.splits.items()},
    }
    with open(os.path.join(directory, PROFILE_INFO), 'w', encoding='utf-8') as f:
        json.dump(info, f, indent=2)


def load_profile(directory):
    with open(os.path.join(directory, PROFILE_INFO), encoding='utf-8') as f:
        info = json.load(f)
    model = load_model(os.path.join(directory, PROFILE_MODEL))
    with np.load(os.path.join(directory, PROFILE_SPLITS)) as arrays:
        splits = {}
        for name in info['splits']:
            fields = {field: arrays[f"{name}__{field}"]
                      for field in ('features', 'labels', 'lengths', 'sample_ids', 'noisy')}
            splits[name] = Dataset(name, **fields)
    return ToyProfile(model, splits, float(info['baseline_error']), float(info['test_error']),
                      float(info['clean_dev_error']), int(info['seed']))


def load_or_build_profile(directory, seed, epochs=PROFILE_EPOCHS):
    """Cached profile for this seed, built and cached when missing or stale"""
    logger = setup_logging()
    if directory and os.path.exists(os.path.join(directory, PROFILE_INFO)):
        profile = load_profile(directory)
        if profile.seed == int(seed):
            logger.info(f"loaded toy profile from {directory}")
            return profile
        logger.info(f"cached toy profile has seed {profile.seed}, rebuilding for seed {seed}")
    profile = build_toy_profile(seed, epochs)
    if directory:
        save_profile(profile, directory)
    return profile


# ---------------------------------------------------------------------------
# Backend selection
# ---------------------------------------------------------------------------

DEFAULT_TIMEOUT = 3600.0


def get_evaluator(kind, dataset, with_per_sample=False, command=None, timeout=DEFAULT_TIMEOUT,
                  plugin_manager=None):
    """Evaluator bound to one split for the configured backend kind"""
    if kind == 'toy':
        from backends.toy_backend import ToyEvaluator
        return ToyEvaluator(dataset, with_per_sample)
    if kind == 'external':
        if not command:
            raise ConfigError("evaluator.command is required for the external evaluator")
        from backends.external_backend import ExternalEvaluator
        return ExternalEvaluator(command, dataset.split, with_per_sample=with_per_sample,
                                 expected_samples=len(dataset), timeout=timeout)
    if kind.startswith('plugin:'):
        from core.plugins import load_plugins
        manager = plugin_manager if plugin_manager is not None else load_plugins()
        return manager.create_evaluator(kind.split(':', 1)[1], dataset, with_per_sample)
    raise ConfigError(f"unknown evaluator kind '{kind}'")
