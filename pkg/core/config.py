"""
Run configuration for RankSight

One JSON document per run with a `mode` discriminator. Unknown keys are
rejected; `--set section.key=value` flags override single fields.
"""

import json
import os
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator

from core.condense import DEFAULT_CORREL_MIN, PEARSON
from core.errors import ConfigError
from core.evaluator import DEFAULT_TIMEOUT, PROFILE_EPOCHS
from core.reward import CONSERVATIVE, DEFAULT_PUNISH_OFFSET, DEFAULT_PUNISH_SLOPE
from core.search import DEFAULT_LEARNING_RATE, DEFAULT_LOG_EVERY, DEFAULT_TOP_K
from core.space import DEFAULT_CONSERVATIVE_ENERGIES, DEFAULT_ENERGIES, DEFAULT_SWEEP_ENERGIES
from core.utils import setup_logging

MODES = ('profile', 'sweep', 'search', 'condense', 'select', 'compress', 'eval', 'report')


class Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class PathsConfig(Section):
    out_dir: str = 'runs'
    profile_dir: str = os.path.join('runs', 'profile')
    log_path: Optional[str] = None
    manifest_path: Optional[str] = None
    model_path: Optional[str] = None

    def artifact(self, name):
        return os.path.join(self.out_dir, name)

    @property
    def search_log(self):
        return self.log_path or self.artifact('search.jsonl')

    @property
    def manifest(self):
        return self.manifest_path or self.artifact('condensed.json')


class ProfileConfig(Section):
    epochs: int = Field(PROFILE_EPOCHS, ge=1)


class EvaluatorConfig(Section):
    kind: str = 'toy'
    command: Optional[List[str]] = None
    timeout: float = Field(DEFAULT_TIMEOUT, gt=0)
    workers: int = Field(1, ge=1)

    @model_validator(mode='after')
    def _check_kind(self):
        if self.kind not in ('toy', 'external') and not self.kind.startswith('plugin:'):
            raise ValueError(f"evaluator.kind must be 'toy', 'external' or 'plugin:<name>', got '{self.kind}'")
        if self.kind == 'external' and not self.command:
            raise ValueError("evaluator.command is required when evaluator.kind is 'external'")
        return self


class SpaceConfig(Section):
    preset: Literal['uniform', 'guided'] = 'uniform'
    energies: List[float] = Field(default_factory=lambda: list(DEFAULT_ENERGIES))
    excluded: Optional[List[str]] = None
    conservative: Optional[List[str]] = None
    conservative_energies: List[float] = Field(default_factory=lambda: list(DEFAULT_CONSERVATIVE_ENERGIES))
    per_layer: Dict[str, List[float]] = Field(default_factory=dict)


class RewardSection(Section):
    mode: Literal['conservative', 'aggressive'] = CONSERVATIVE
    target_speedup: Optional[float] = None
    baseline_error: Optional[float] = None
    punish_slope: float = DEFAULT_PUNISH_SLOPE
    punish_offset: float = DEFAULT_PUNISH_OFFSET


class ControllerConfig(Section):
    hidden: int = Field(100, ge=1)
    embed: int = Field(100, ge=1)
    learning_rate: float = Field(DEFAULT_LEARNING_RATE, ge=0)
    use_baseline: bool = False
    baseline_decay: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(1, ge=1)


class SearchSection(Section):
    max_steps: int = Field(2000, ge=0)
    proxy: Literal['dev', 'condensed'] = 'dev'
    top_k: int = Field(DEFAULT_TOP_K, ge=1)
    log_every: int = Field(DEFAULT_LOG_EVERY, ge=0)


class CondenseSection(Section):
    correl_min: float = Field(DEFAULT_CORREL_MIN, ge=-1, le=1)
    min_length: int = Field(0, ge=0)
    statistic: Literal['pearson', 'spearman'] = PEARSON
    size: Optional[int] = Field(None, ge=1)
    workers: int = Field(1, ge=1)


class SweepSection(Section):
    energies: List[float] = Field(default_factory=lambda: list(DEFAULT_SWEEP_ENERGIES))
    layers: Optional[List[str]] = None


class SelectSection(Section):
    holdout: Literal['dev', 'test'] = 'test'


class CompressSection(Section):
    scheme: Optional[List[int]] = None
    energy: Optional[float] = Field(None, gt=0, le=1)
    retrain_epochs: int = Field(0, ge=0)
    measure_repeats: int = Field(5, ge=1)


class EvalSection(Section):
    split: Literal['train', 'dev', 'condensed', 'test'] = 'test'


class ReportSection(Section):
    windows: List[List[int]] = Field(default_factory=list)
    manual_energies: List[float] = Field(default_factory=list)

    @model_validator(mode='after')
    def _check_windows(self):
        for window in self.windows:
            if len(window) != 2 or window[0] >= window[1]:
                raise ValueError(f"report windows must be [start, end) pairs with start < end, got {window}")
        return self


class RunConfig(Section):
    mode: Literal[MODES] = 'search'
    seed: int = 0
    paths: PathsConfig = Field(default_factory=PathsConfig)
    profile: ProfileConfig = Field(default_factory=ProfileConfig)
    evaluator: EvaluatorConfig = Field(default_factory=EvaluatorConfig)
    space: SpaceConfig = Field(default_factory=SpaceConfig)
    reward: RewardSection = Field(default_factory=RewardSection)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    search: SearchSection = Field(default_factory=SearchSection)
    condense: CondenseSection = Field(default_factory=CondenseSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    select: SelectSection = Field(default_factory=SelectSection)
    compress: CompressSection = Field(default_factory=CompressSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    report: ReportSection = Field(default_factory=ReportSection)

    @model_validator(mode='after')
    def _check_mode(self):
        if self.mode == 'search' and self.reward.target_speedup is None:
            raise ValueError("reward.target_speedup is required for search runs")
        if self.reward.target_speedup is not None and not self.reward.target_speedup > 1:
            raise ValueError(f"reward.target_speedup must exceed 1, got {self.reward.target_speedup}")
        return self

    def resolved_json(self):
        return self.model_dump_json(indent=2)


def parse_override(text):
    """'section.key=value' -> (['section', 'key'], value); value parsed as JSON when possible"""
    if '=' not in text:
        raise ConfigError(f"override '{text}' must look like section.key=value")
    dotted, raw = text.split('=', 1)
    keys = [k for k in dotted.strip().split('.') if k]
    if not keys:
        raise ConfigError(f"override '{text}' names no field")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return keys, value


def apply_overrides(document, overrides):
    logger = setup_logging()
    for text in overrides or ():
        keys, value = parse_override(text)
        target = document
        for key in keys[:-1]:
            node = target.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override '{text}': '{key}' is not a section")
            target = node
        target[keys[-1]] = value
        logger.info(f"override {'.'.join(keys)}={json.dumps(value)}")
    return document


def build_config(document, overrides=None, mode=None):
    document = json.loads(json.dumps(document or {}))
    apply_overrides(document, overrides)
    if mode is not None:
        document['mode'] = mode
        setup_logging().info(f"override mode={mode}")
    try:
        return RunConfig.model_validate(document)
    except PydanticValidationError as exc:
        problems = '; '.join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
                             for err in exc.errors())
        raise ConfigError(f"invalid configuration: {problems}") from exc


def load_config(path=None, overrides=None, mode=None):
    """Read a JSON config file (or start from defaults) and apply CLI overrides"""
    document = {}
    if path:
        try:
            with open(path, encoding='utf-8') as f:
                document = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    return build_config(document, overrides, mode)
