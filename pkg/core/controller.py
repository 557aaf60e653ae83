"""
LSTM policy controller for the rank search

A single-layer LSTM runs for one step per searchable layer, consuming a
learned position embedding; step i feeds its own softmax head over the d
options of layer i. Gradients of the REINFORCE loss are computed by hand
(backpropagation through the heads and all LSTM steps) and applied with Adam.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from core.errors import NumericalError, StaleCache, ValidationError
from core.netmodel import read_container, write_container

CHECKPOINT_MAGIC = b'LRCP'

INIT_SCALE = 0.08
PROB_FLOOR = 1e-30
LOG_PROB_FLOOR = float(np.log(PROB_FLOOR))

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_HIDDEN = 100
DEFAULT_EMBED = 100

# Draw order at init is part of the seed contract
PARAM_NAMES = ('w_input', 'w_recurrent', 'bias', 'embeddings', 'head_weights', 'head_bias')


def param_shapes(num_layers, num_options, hidden, embed):
    return {
        'w_input': (4 * hidden, embed),
        'w_recurrent': (4 * hidden, hidden),
        'bias': (4 * hidden,),
        'embeddings': (num_layers, embed),
        'head_weights': (num_layers, hidden, num_options),
        'head_bias': (num_layers, num_options),
    }


class ControllerParams:
    """Trainable policy weights plus Adam state"""

    def __init__(self, num_layers, num_options, hidden, embed, tensors,
                 moment1=None, moment2=None, step=0):
        self.num_layers = int(num_layers)
        self.num_options = int(num_options)
        self.hidden = int(hidden)
        self.embed = int(embed)
        shapes = self.shapes()
        self.tensors = {name: np.array(tensors[name], dtype=np.float64) for name in PARAM_NAMES}
        self.moment1 = {name: np.array(moment1[name], dtype=np.float64) if moment1 else np.zeros(shapes[name])
                        for name in PARAM_NAMES}
        self.moment2 = {name: np.array(moment2[name], dtype=np.float64) if moment2 else np.zeros(shapes[name])
                        for name in PARAM_NAMES}
        for group in (self.tensors, self.moment1, self.moment2):
            for name, value in group.items():
                if value.shape != shapes[name]:
                    raise ValidationError(f"controller tensor '{name}' has shape {value.shape}, expected {shapes[name]}")
                if not np.all(np.isfinite(value)):
                    raise NumericalError(f"controller tensor '{name}' holds non-finite values")
        self.step = int(step)
        # Bumped on every update so stale forward caches are detected
        self.version = 0

    def shapes(self):
        return param_shapes(self.num_layers, self.num_options, self.hidden, self.embed)

    @property
    def parameter_count(self):
        return sum(t.size for t in self.tensors.values())

    def copy(self):
        return ControllerParams(self.num_layers, self.num_options, self.hidden, self.embed,
                                self.tensors, self.moment1, self.moment2, self.step)

    def equals(self, other):
        """Bitwise equality of weights, optimizer state and step counter"""
        if (self.num_layers, self.num_options, self.hidden, self.embed, self.step) != \
                (other.num_layers, other.num_options, other.hidden, other.embed, other.step):
            return False
        for mine, theirs in ((self.tensors, other.tensors), (self.moment1, other.moment1),
                             (self.moment2, other.moment2)):
            for name in PARAM_NAMES:
                if mine[name].tobytes() != theirs[name].tobytes():
                    return False
        return True


@dataclass(frozen=True, eq=False)
class PolicyOutput:
    """Distributions D (l x d) and the intermediates needed for backprop"""
    probs: np.ndarray
    log_probs: np.ndarray
    hidden_states: np.ndarray
    cell_states: np.ndarray
    gates: np.ndarray
    params_id: int
    version: int


@dataclass(frozen=True, eq=False)
class SampledScheme:
    indices: np.ndarray
    probs: np.ndarray


def init_controller(num_layers, num_options, hidden=DEFAULT_HIDDEN, embed=DEFAULT_EMBED, seed=0):
    """Uniform [-0.08, 0.08] weights from a seeded generator, zeroed optimizer state"""
    if num_layers < 1 or num_options < 1 or hidden < 1 or embed < 1:
        raise ValidationError("controller sizes must all be at least 1")
    rng = np.random.default_rng(seed)
    shapes = param_shapes(num_layers, num_options, hidden, embed)
    tensors = {name: rng.uniform(-INIT_SCALE, INIT_SCALE, size=shapes[name]) for name in PARAM_NAMES}
    return ControllerParams(num_layers, num_options, hidden, embed, tensors)


def forward(params):
    """Run the LSTM over all layer positions and return the option distributions"""
    t = params.tensors
    steps, hidden = params.num_layers, params.hidden
    h = np.zeros((steps + 1, hidden))
    c = np.zeros((steps + 1, hidden))
    gates = np.zeros((steps, 4 * hidden))
    logits = np.zeros((steps, params.num_options))

    for i in range(steps):
        z = t['w_input'] @ t['embeddings'][i] + t['w_recurrent'] @ h[i] + t['bias']
        gate_i = expit(z[:hidden])
        gate_f = expit(z[hidden:2 * hidden])
        gate_g = np.tanh(z[2 * hidden:3 * hidden])
        gate_o = expit(z[3 * hidden:])
        c[i + 1] = gate_f * c[i] + gate_i * gate_g
        h[i + 1] = gate_o * np.tanh(c[i + 1])
        gates[i] = np.concatenate([gate_i, gate_f, gate_g, gate_o])
        logits[i] = h[i + 1] @ t['head_weights'][i] + t['head_bias'][i]

    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    probs = np.exp(log_probs)
    if not (np.all(np.isfinite(log_probs)) and np.all(np.isfinite(h)) and np.all(np.isfinite(c))):
        raise NumericalError("controller forward pass produced non-finite values")
    return PolicyOutput(probs, log_probs, h, c, gates, id(params), params.version)


def sample(output, rng):
    """Draw one option per layer from D; consumes exactly l uniforms from rng"""
    steps, options = output.probs.shape
    draws = rng.random(steps)
    cumulative = np.cumsum(output.probs, axis=1)
    indices = np.empty(steps, dtype=np.int64)
    for i in range(steps):
        j = int(np.searchsorted(cumulative[i], draws[i] * cumulative[i, -1], side='right'))
        indices[i] = min(j, options - 1)
    probs = output.probs[np.arange(steps), indices]
    return SampledScheme(indices, probs)


def sequence_log_prob(output, indices):
    """sum_i log p_i with each p_i floored at PROB_FLOOR"""
    picked = output.log_probs[np.arange(len(indices)), np.asarray(indices)]
    return float(np.sum(np.maximum(picked, LOG_PROB_FLOOR)))


def policy_loss(params, indices, reward):
    """-(sum_i log p_i) * r for fixed option indices"""
    return -sequence_log_prob(forward(params), indices) * reward


def policy_gradient(params, output, sampled, reward):
    """Gradient of -(sum_i log p_i) * r with respect to every controller tensor"""
    if output.params_id != id(params) or output.version != params.version:
        raise StaleCache("forward cache does not match the current controller parameters")
    indices = np.asarray(sampled.indices)
    steps, options = output.probs.shape
    if indices.shape != (steps,) or not np.array_equal(output.probs[np.arange(steps), indices], sampled.probs):
        raise StaleCache("sampled scheme did not come from this forward pass")

    t = params.tensors
    hidden = params.hidden
    grads = {name: np.zeros_like(t[name]) for name in PARAM_NAMES}

    # d loss / d logits for the log-softmax of each head
    dlogits = output.probs.copy()
    dlogits[np.arange(steps), indices] -= 1.0
    dlogits *= reward
    clamped = output.log_probs[np.arange(steps), indices] < LOG_PROB_FLOOR
    dlogits[clamped] = 0.0

    h = output.hidden_states
    c = output.cell_states
    dh_next = np.zeros(hidden)
    dc_next = np.zeros(hidden)
    for i in reversed(range(steps)):
        grads['head_weights'][i] = np.outer(h[i + 1], dlogits[i])
        grads['head_bias'][i] = dlogits[i]
        dh = t['head_weights'][i] @ dlogits[i] + dh_next

        gate_i = output.gates[i, :hidden]
        gate_f = output.gates[i, hidden:2 * hidden]
        gate_g = output.gates[i, 2 * hidden:3 * hidden]
        gate_o = output.gates[i, 3 * hidden:]
        tanh_c = np.tanh(c[i + 1])

        dc = dh * gate_o * (1.0 - tanh_c ** 2) + dc_next
        dz = np.concatenate([
            dc * gate_g * gate_i * (1.0 - gate_i),
            dc * c[i] * gate_f * (1.0 - gate_f),
            dc * gate_i * (1.0 - gate_g ** 2),
            dh * tanh_c * gate_o * (1.0 - gate_o),
        ])

        grads['w_input'] += np.outer(dz, t['embeddings'][i])
        grads['w_recurrent'] += np.outer(dz, h[i])
        grads['bias'] += dz
        grads['embeddings'][i] = t['w_input'].T @ dz
        dh_next = t['w_recurrent'].T @ dz
        dc_next = dc * gate_f

    return grads


def apply_update(params, gradient, learning_rate):
    """One Adam step descending the loss; mutates and returns params"""
    for name in PARAM_NAMES:
        if gradient[name].shape != params.tensors[name].shape:
            raise ValidationError(f"gradient '{name}' has shape {gradient[name].shape}, "
                                  f"expected {params.tensors[name].shape}")
        if not np.all(np.isfinite(gradient[name])):
            raise NumericalError(f"gradient '{name}' holds non-finite values")

    params.step += 1
    correction1 = 1.0 - ADAM_BETA1 ** params.step
    correction2 = 1.0 - ADAM_BETA2 ** params.step
    for name in PARAM_NAMES:
        g = gradient[name]
        m = params.moment1[name]
        v = params.moment2[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        params.tensors[name] -= learning_rate * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
    params.version += 1
    return params


def _as_matrix(array):
    return array.reshape(array.shape[0], -1) if array.ndim > 1 else array.reshape(1, -1)


def save_checkpoint(params, path, extra=None):
    """Write weights, Adam moments and step counter in the LRCP container"""
    entries = []
    for prefix, group in (('theta', params.tensors), ('m1', params.moment1), ('m2', params.moment2)):
        for name in PARAM_NAMES:
            entries.append((f"{prefix}/{name}", 0, _as_matrix(group[name])))
    metadata = {
        'num_layers': str(params.num_layers),
        'num_options': str(params.num_options),
        'hidden': str(params.hidden),
        'embed': str(params.embed),
        'step': str(params.step),
    }
    metadata.update({str(k): str(v) for k, v in (extra or {}).items()})
    write_container(path, CHECKPOINT_MAGIC, entries, metadata)


def load_checkpoint(path):
    """Read an LRCP checkpoint; returns (params, metadata)"""
    entries, metadata = read_container(path, CHECKPOINT_MAGIC)
    try:
        dims = [int(metadata[key]) for key in ('num_layers', 'num_options', 'hidden', 'embed')]
        step = int(metadata['step'])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"checkpoint metadata incomplete: {exc}") from exc
    shapes = param_shapes(*dims)
    groups = {'theta': {}, 'm1': {}, 'm2': {}}
    for name, _, matrix in entries:
        prefix, _, tensor = name.partition('/')
        if prefix not in groups or tensor not in shapes:
            raise ValidationError(f"unexpected checkpoint entry '{name}'")
        if matrix.size != int(np.prod(shapes[tensor])):
            raise ValidationError(f"checkpoint entry '{name}' has {matrix.size} values")
        groups[prefix][tensor] = matrix.reshape(shapes[tensor])
    for prefix, group in groups.items():
        missing = [n for n in PARAM_NAMES if n not in group]
        if missing:
            raise ValidationError(f"checkpoint misses {prefix} tensors: {', '.join(missing)}")
    params = ControllerParams(*dims, groups['theta'], groups['m1'], groups['m2'], step)
    return params, metadata
