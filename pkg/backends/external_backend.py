"""
External-process evaluator backend

The child receives one JSON request line on stdin
    {"model_path": str, "dataset": str, "per_sample": bool}
and answers with one JSON line on stdout
    {"error": float, "per_sample": [float]?, "wall_ms": int}
A nonzero exit status is a failure.
"""

import json
import os
import subprocess
import tempfile

import numpy as np
import psutil

from core.errors import EvalTimeout, ProtocolError
from core.evaluator import DEFAULT_TIMEOUT, EvalResult
from core.netmodel import save_model
from core.utils import setup_logging

STDERR_TAIL = 2000


def _kill_tree(pid):
    """Kill a process and everything it spawned"""
    try:
        parent = psutil.Process(pid)
    except psutil.NoSuchProcess:
        return
    children = parent.children(recursive=True)
    for proc in children + [parent]:
        try:
            proc.kill()
        except psutil.NoSuchProcess:
            pass
    psutil.wait_procs(children + [parent], timeout=5)


def _parse_response(stdout, expected_samples, per_sample):
    lines = [line for line in stdout.splitlines() if line.strip()]
    if not lines:
        raise ProtocolError("evaluator produced no response line")
    try:
        response = json.loads(lines[-1])
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"evaluator response is not valid JSON: {exc}") from exc
    if not isinstance(response, dict):
        raise ProtocolError("evaluator response must be a JSON object")

    error = response.get('error')
    if isinstance(error, bool) or not isinstance(error, (int, float)) or not 0.0 <= error <= 100.0:
        raise ProtocolError(f"evaluator response has invalid 'error': {error!r}")
    wall_ms = response.get('wall_ms', 0)
    if isinstance(wall_ms, bool) or not isinstance(wall_ms, (int, float)):
        raise ProtocolError(f"evaluator response has invalid 'wall_ms': {wall_ms!r}")

    samples = response.get('per_sample')
    if samples is not None:
        if not isinstance(samples, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in samples):
            raise ProtocolError("evaluator 'per_sample' must be a list of numbers")
        if expected_samples is not None and len(samples) != expected_samples:
            raise ProtocolError(f"evaluator returned {len(samples)} per-sample errors, expected {expected_samples}")
        samples = np.array(samples, dtype=np.float64)
    elif per_sample:
        raise ProtocolError("per-sample errors were requested but the evaluator returned none")
    return EvalResult(float(error), samples, float(wall_ms))


def external_evaluate(endpoint, model_path, dataset_id, per_sample=False, timeout=DEFAULT_TIMEOUT,
                      expected_samples=None):
    """Run one evaluation through an external command"""
    logger = setup_logging()
    request = json.dumps({'model_path': str(model_path), 'dataset': dataset_id, 'per_sample': bool(per_sample)})
    try:
        proc = subprocess.Popen(list(endpoint), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                stderr=subprocess.PIPE, text=True)
    except OSError as exc:
        raise ProtocolError(f"cannot start evaluator {endpoint[0]!r}: {exc}") from exc

    try:
        stdout, stderr = proc.communicate(request + '\n', timeout=timeout)
    except subprocess.TimeoutExpired as exc:
        _kill_tree(proc.pid)
        proc.communicate()
        logger.error(f"external evaluator timed out after {timeout}s on dataset '{dataset_id}'")
        raise EvalTimeout(f"external evaluator exceeded {timeout}s on dataset '{dataset_id}'") from exc

    if proc.returncode != 0:
        tail = (stderr or '')[-STDERR_TAIL:].strip()
        logger.error(f"external evaluator exited with {proc.returncode}: {tail}")
        raise ProtocolError(f"external evaluator exited with status {proc.returncode}: {tail}")
    return _parse_response(stdout, expected_samples, per_sample)


class ExternalEvaluator:
    """Writes each candidate to a temporary LRFM file and hands it to the command"""

    name = 'external'

    def __init__(self, command, dataset_id, with_per_sample=False, expected_samples=None,
                 timeout=DEFAULT_TIMEOUT):
        self.command = list(command)
        self.dataset_id = dataset_id
        self.with_per_sample = with_per_sample
        self.expected_samples = expected_samples
        self.timeout = timeout

    def is_available(self):
        return bool(self.command)

    @property
    def split(self):
        return self.dataset_id

    def evaluate(self, model):
        fd, path = tempfile.mkstemp(suffix='.lrfm', prefix='ranksight-')
        os.close(fd)
        try:
            save_model(model, path)
            return external_evaluate(self.command, path, self.dataset_id, self.with_per_sample,
                                     self.timeout, self.expected_samples)
        finally:
            os.remove(path)
