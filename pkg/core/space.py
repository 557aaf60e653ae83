"""
Search-space construction for RankSight

Energy grids become the l x d rank matrix S, single-layer sweeps show which
layers are sensitive, and the manual schemes serve as baselines.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from core.errors import EvaluatorError, RankSightError, SpaceShapeError, UnknownLayer
from core.lowrank import rank_for_energy
from core.netmodel import Scheme, apply_scheme
from core.utils import setup_logging

DEFAULT_ENERGIES = (0.3, 0.5, 0.7, 0.85, 1.0)
DEFAULT_SWEEP_ENERGIES = (0.3, 0.5, 0.7, 0.9, 1.0)
DEFAULT_CONSERVATIVE_ENERGIES = (0.8, 0.88, 0.94, 0.98, 1.0)


def guard_rank(m, n, k):
    """Map ranks whose pair would cost at least the dense matrix to the 0 sentinel"""
    return 0 if k * (m + n) >= m * n else k


@dataclass(frozen=True, eq=False)
class SearchSpace:
    """S[i][j]: the rank used for searchable layer i under option j"""
    layer_names: tuple
    options: np.ndarray
    energy_grid: np.ndarray

    def __post_init__(self):
        options = np.array(self.options, dtype=np.int64)
        grid = np.array(self.energy_grid, dtype=np.float64)
        if options.ndim != 2 or options.shape != grid.shape:
            raise SpaceShapeError(f"options {options.shape} and energy grid {grid.shape} must be equal l x d matrices")
        if options.shape[0] != len(self.layer_names):
            raise SpaceShapeError(f"{options.shape[0]} option rows for {len(self.layer_names)} layers")
        if options.shape[1] < 2:
            raise SpaceShapeError("every layer needs at least 2 options")
        if np.any(options < 0):
            raise SpaceShapeError("ranks in a search space cannot be negative")
        options.setflags(write=False)
        grid.setflags(write=False)
        object.__setattr__(self, 'layer_names', tuple(self.layer_names))
        object.__setattr__(self, 'options', options)
        object.__setattr__(self, 'energy_grid', grid)

    @property
    def num_layers(self):
        return int(self.options.shape[0])

    @property
    def num_options(self):
        return int(self.options.shape[1])

    @property
    def size(self):
        return self.num_options ** self.num_layers

    def scheme_for(self, indices):
        """Scheme picked by one option index per layer"""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.shape != (self.num_layers,):
            raise SpaceShapeError(f"expected {self.num_layers} option indices, got {indices.shape}")
        return Scheme(tuple(int(r) for r in self.options[np.arange(self.num_layers), indices]))

    def to_dict(self):
        return {
            'layer_names': list(self.layer_names),
            'options': self.options.tolist(),
            'energy_grid': self.energy_grid.tolist(),
        }


@dataclass(frozen=True)
class SensitivityEntry:
    layer: str
    energy: float
    rank: int
    error: float


@dataclass(frozen=True)
class SensitivityReport:
    baseline_error: float
    entries: tuple

    def error_at(self, layer, energy):
        for entry in self.entries:
            if entry.layer == layer and entry.energy == energy:
                return entry.error
        raise KeyError((layer, energy))

    def rows(self):
        return [
            {
                'layer': e.layer,
                'energy': e.energy,
                'rank': e.rank,
                'error': e.error,
                'delta_vs_baseline': e.error - self.baseline_error,
            }
            for e in self.entries
        ]

    def to_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=['layer', 'energy', 'rank', 'error', 'delta_vs_baseline'])
            writer.writeheader()
            for row in self.rows():
                writer.writerow(row)


def _single_layer_scheme(model, layer_index, rank):
    ranks = [0] * len(model.searchable_layers)
    ranks[layer_index] = rank
    return Scheme(tuple(ranks))


def sensitivity_sweep(model, evaluator, energy_levels, workers=1, layers=None):
    """Compress one layer at a time at each energy and record the error"""
    searchable = model.searchable_layers
    if not searchable:
        raise SpaceShapeError("model has no searchable layers")
    if layers:
        _check_names(model, layers, "sweep")
    wanted = set(layers) if layers else None
    levels = [float(e) for e in energy_levels]

    # Factorize up front so worker threads only read the cache
    cells = []
    for index, layer in enumerate(searchable):
        if wanted is not None and layer.name not in wanted:
            continue
        sigma = model.factorization(layer.name).sigma
        for energy in levels:
            rank = rank_for_energy(sigma, energy)
            # Full energy removes nothing, evaluate the untouched layer
            if energy >= 1.0:
                rank = 0
            cells.append((index, layer.name, energy, rank))

    logger = setup_logging()
    baseline = evaluator.evaluate(model).aggregate

    def run_cell(cell):
        index, name, energy, rank = cell
        try:
            compressed = apply_scheme(model, _single_layer_scheme(model, index, rank))
            error = evaluator.evaluate(compressed).aggregate
        except (RankSightError, OSError, ValueError) as exc:
            logger.error(f"sensitivity cell layer={name} energy={energy} failed: {exc}")
            raise EvaluatorError(f"sensitivity sweep failed for layer '{name}' at energy {energy}: {exc}") from exc
        logger.debug(f"sensitivity layer={name} energy={energy} rank={rank} error={error:.4f}")
        return SensitivityEntry(name, energy, rank, float(error))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(run_cell, cells))
    else:
        entries = [run_cell(cell) for cell in cells]
    return SensitivityReport(float(baseline), tuple(entries))


def build_space(model, per_layer_energies):
    """Convert per-layer energy rows into the guarded rank matrix S"""
    searchable = model.searchable_layers
    rows = [list(row) for row in per_layer_energies]
    if len(rows) != len(searchable):
        raise SpaceShapeError(f"{len(rows)} energy rows for {len(searchable)} searchable layers")
    widths = {len(row) for row in rows}
    if len(widths) != 1:
        raise SpaceShapeError(f"energy rows must all have the same length, got {sorted(widths)}")

    options = []
    for layer, row in zip(searchable, rows):
        m, n = layer.shape
        sigma = model.factorization(layer.name).sigma
        options.append([guard_rank(m, n, rank_for_energy(sigma, e)) for e in row])
    return SearchSpace(tuple(layer.name for layer in searchable), options, rows)


def _check_names(model, names, what):
    known = set(model.searchable_names)
    unknown = sorted(set(names) - known)
    if unknown:
        raise UnknownLayer(f"{what} names unknown searchable layers: {', '.join(unknown)}")


def guided_energies(model, energies=DEFAULT_ENERGIES, excluded=(), conservative=(),
                    conservative_energies=DEFAULT_CONSERVATIVE_ENERGIES, overrides=None):
    """Per-layer energy rows shaped by sensitivity findings

    Excluded layers only get the lossless option, conservative layers get a
    high-energy range, explicit overrides replace a layer's row outright.
    """
    overrides = dict(overrides or {})
    _check_names(model, excluded, "excluded")
    _check_names(model, conservative, "conservative")
    _check_names(model, overrides, "per-layer energies")

    width = len(energies)
    rows = []
    for name in model.searchable_names:
        if name in overrides:
            rows.append([float(e) for e in overrides[name]])
        elif name in excluded:
            rows.append([1.0] * width)
        elif name in conservative:
            rows.append([float(e) for e in conservative_energies])
        else:
            rows.append([float(e) for e in energies])
    return rows


def manual_scheme(model, energy):
    """Every searchable layer compressed at the same energy"""
    ranks = []
    for layer in model.searchable_layers:
        m, n = layer.shape
        rank = rank_for_energy(model.factorization(layer.name).sigma, energy)
        ranks.append(guard_rank(m, n, rank))
    return Scheme(tuple(ranks))


def guided_manual_scheme(model, energy, excluded):
    """manual_scheme with the sensitive layers left uncompressed"""
    excluded = set(excluded)
    _check_names(model, excluded, "excluded")
    base = manual_scheme(model, energy)
    return Scheme(tuple(0 if name in excluded else rank
                        for name, rank in zip(model.searchable_names, base)))
