#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
配置管理模块
负责流水线配置的加载、保存和验证（单一 YAML 配置文件）
"""

import os
import copy
import json
import hashlib
import logging
from pathlib import Path
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional, Any, get_args, get_origin, get_type_hints

import yaml

from core.errors import ConfigError
from core.models import Pooling, OptimizerKind, Objective, StageName


logger = logging.getLogger(__name__)


# ============================================================================
# 外部后端预设
# ============================================================================

# backends.<name>.preset 可引用的 OpenAI 兼容服务；显式填写的 base_url / model_name 优先
LLM_PROVIDERS = {
    'ollama': {
        'base_url': 'http://localhost:11434/v1',
        'model': 'qwen2.5-coder:7b'
    },
    'deepseek': {
        'base_url': 'https://api.deepseek.com',
        'model': 'deepseek-chat'
    },
    'openai': {
        'base_url': 'https://api.openai.com/v1',
        'model': 'gpt-4o-mini'
    }
}

BACKEND_KINDS = ('builtin', 'http', 'chat')

# 凭据环境变量（只允许覆盖凭据）
CREDENTIAL_ENV = {
    'docgen': 'CODEORDER_DOCGEN_API_KEY',
    'embed': 'CODEORDER_EMBED_API_KEY',
    'judge': 'CODEORDER_JUDGE_API_KEY'
}


def _check_keys(section: str, data: Dict, allowed) -> None:
    """拒绝未知字段"""
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(where: str, value: Any, expected: Any) -> Any:
    """
    按字段注解检查 YAML 取值的类型

    int 字段接受整数，float 字段接受整数并转为 float，枚举字段接受其取值字符串，
    List[X] 逐元素检查

    Raises:
        ConfigError: 类型不符
    """
    if expected is bool:
        _require(isinstance(value, bool), f"{where} must be true/false, got {value!r}")
    elif expected is int:
        _require(isinstance(value, int) and not isinstance(value, bool),
                 f"{where} must be an integer, got {value!r}")
    elif expected is float:
        _require(_is_number(value), f"{where} must be a number, got {value!r}")
        value = float(value)
    elif expected is str:
        _require(isinstance(value, str), f"{where} must be a string, got {value!r}")
    elif isinstance(expected, type) and issubclass(expected, Enum):
        allowed = [m.value for m in expected]
        if isinstance(value, expected):
            value = value.value
        _require(value in allowed, f"{where} must be one of {'|'.join(allowed)}, got {value!r}")
    elif get_origin(expected) is list:
        _require(isinstance(value, list), f"{where} must be a list, got {value!r}")
        (item_type,) = get_args(expected) or (Any,)
        value = [_coerce(f"{where}[{i}]", item, item_type) for i, item in enumerate(value)]
    return value


class _Section:
    """
    配置段通用序列化

    FILE_EXCLUDED 中的字段不出现在配置文件里（由 PipelineConfig 同步）
    """

    FILE_EXCLUDED: tuple = ()

    def to_dict(self) -> Dict:
        out = {}
        for f in fields(self):
            if f.name in self.FILE_EXCLUDED:
                continue
            value = getattr(self, f.name)
            if hasattr(value, 'value'):
                value = value.value
            elif isinstance(value, list):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, data: Optional[Dict], section: str):
        data = data or {}
        declared = {f.name: f for f in fields(cls) if f.name not in cls.FILE_EXCLUDED}
        _check_keys(section, data, declared)
        hints = get_type_hints(cls)
        values = {name: _coerce(f"{section}.{name}", value, hints[name]) for name, value in data.items()}
        obj = cls(**values)
        obj.normalize()
        obj.validate()
        return obj

    def normalize(self):
        pass

    def validate(self):
        pass


# ============================================================================
# 配置段
# ============================================================================

@dataclass
class CorpusConfig(_Section):
    """语料抽取与文档生成配置"""
    corpus_root: str = './corpus'
    ast_backend: str = 'nesting'
    workers: int = 4
    prompt_budget: int = 1024
    synthetic_repos: int = 20
    synthetic_funcs: int = 10

    def validate(self):
        _require(self.ast_backend in ('nesting', 'python', 'auto'),
                 f"corpus.ast_backend must be nesting|python|auto, got {self.ast_backend}")
        _require(self.workers >= 1, "corpus.workers must be >= 1")
        _require(self.prompt_budget >= 1, "corpus.prompt_budget must be >= 1")
        _require(self.synthetic_repos >= 1, "corpus.synthetic_repos must be >= 1")
        _require(self.synthetic_funcs >= 1, "corpus.synthetic_funcs must be >= 1")


@dataclass
class SynthConfig(_Section):
    """负样本挖掘与相似度标注配置"""
    k: int = 5
    hash_dim: int = 4096

    def validate(self):
        _require(self.k >= 1, "synth.k must be >= 1")
        _require(self.hash_dim >= 1, "synth.hash_dim must be >= 1")


@dataclass
class RefineConfig(_Section):
    """相似度修正配置"""
    s_star: float = 0.4
    threshold_source: str = 'config'
    ratio_max: float = 0.25
    delta_s: float = 0.1
    weighted_intersection: bool = False
    strategies: List[str] = field(default_factory=lambda: ['threshold', 'ast'])
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-6
    judge_fraction: float = 0.8
    adjust_cap: float = 0.999

    def validate(self):
        _require(self.threshold_source in ('config', 'gmm'),
                 "refine.threshold_source must be config|gmm")
        _require(0.0 < self.ratio_max <= 1.0, "refine.ratio_max must be in (0, 1]")
        _require(self.delta_s > 0, "refine.delta_s must be > 0")
        unknown = set(self.strategies) - {'threshold', 'ast'}
        _require(not unknown, f"refine.strategies has unknown entries {sorted(unknown)}")
        _require(self.gmm_max_iter >= 1, "refine.gmm_max_iter must be >= 1")
        _require(self.gmm_tol > 0, "refine.gmm_tol must be > 0")
        _require(0.0 <= self.judge_fraction, "refine.judge_fraction must be >= 0")
        _require(0.0 < self.adjust_cap < 1.0, "refine.adjust_cap must be in (0, 1)")


@dataclass
class TrainConfig(_Section):
    """
    训练配置

    k / delta_s 与 synth.k、refine.delta_s 同步，不在配置文件的 train 段出现
    """
    tau: float = 0.05
    w1: float = 0.98
    w2: float = 0.02
    lr: float = 5e-4
    batch_groups: int = 8
    k: int = 5
    delta_s: float = 0.1
    epochs: int = 1
    seed: int = 3407
    optimizer: OptimizerKind = OptimizerKind.ADAM
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    objective: Objective = Objective.HYBRID
    hash_dim: int = 4096
    embed_dim: int = 64
    pooling: Pooling = Pooling.MEAN
    max_tokens: int = 1024
    init_scale: float = 1.0

    FILE_EXCLUDED = ('k', 'delta_s', 'seed')

    def __post_init__(self):
        self.normalize()

    def normalize(self):
        if isinstance(self.optimizer, str):
            self.optimizer = OptimizerKind(self.optimizer)
        if isinstance(self.objective, str):
            self.objective = Objective(self.objective)
        if isinstance(self.pooling, str):
            self.pooling = Pooling(self.pooling)
        # 消融目标覆盖权重
        if self.objective == Objective.INFONCE:
            self.w1, self.w2 = 1.0, 0.0
        elif self.objective == Objective.COSENT:
            self.w1, self.w2 = 0.0, 1.0

    def validate(self):
        _require(self.tau > 0, "train.tau must be > 0")
        _require(self.w1 >= 0 and self.w2 >= 0, "train.w1/w2 must be >= 0")
        _require(self.lr >= 0, "train.lr must be >= 0")
        _require(self.batch_groups >= 1, "train.batch_groups must be >= 1")
        _require(self.epochs >= 0, "train.epochs must be >= 0")
        _require(self.hash_dim >= 1 and self.embed_dim >= 1, "train dims must be >= 1")
        _require(self.max_tokens >= 1, "train.max_tokens must be >= 1")
        _require(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "train.beta1/beta2 must be in [0, 1)")


@dataclass
class EvalConfig(_Section):
    """评测配置"""
    k_cutoff: int = 1000
    holdout_fraction: float = 0.2
    grid_values: List[float] = field(default_factory=lambda: [0.05, 0.1, 0.2])
    ablation_seeds: int = 5
    ablation_epochs: int = 20
    mds_max_points: int = 200
    power_tol: float = 1e-10
    power_max_iter: int = 10000

    def validate(self):
        _require(self.k_cutoff >= 1, "eval.k_cutoff must be >= 1")
        _require(0.0 < self.holdout_fraction < 1.0, "eval.holdout_fraction must be in (0, 1)")
        _require(len(self.grid_values) > 0, "eval.grid_values must be non-empty")
        _require(all(v > 0 for v in self.grid_values), "eval.grid_values must be > 0")
        _require(self.ablation_seeds >= 1, "eval.ablation_seeds must be >= 1")
        _require(self.ablation_epochs >= 1, "eval.ablation_epochs must be >= 1")
        _require(self.mds_max_points >= 3, "eval.mds_max_points must be >= 3")


@dataclass
class ProviderConfig(_Section):
    """
    外部后端配置（builtin / http / chat）

    preset 引用 LLM_PROVIDERS 中的服务，只补全空着的 base_url / model_name
    """
    kind: str = 'builtin'
    preset: str = ''
    base_url: str = ''
    api_key: str = ''
    model_name: str = ''
    max_retries: int = 3
    timeout: int = 60
    backoff: float = 2.0
    max_in_flight: int = 4
    batch_size: int = 32

    def normalize(self):
        if not self.preset:
            return
        _require(self.preset in LLM_PROVIDERS,
                 f"unknown backend preset '{self.preset}', expected one of {sorted(LLM_PROVIDERS)}")
        preset = LLM_PROVIDERS[self.preset]
        self.base_url = self.base_url or preset['base_url']
        self.model_name = self.model_name or preset['model']

    def validate(self):
        _require(self.kind in BACKEND_KINDS, f"backend kind must be one of {BACKEND_KINDS}")
        _require(self.max_retries >= 1, "backend max_retries must be >= 1")
        _require(self.max_in_flight >= 1, "backend max_in_flight must be >= 1")
        _require(self.batch_size >= 1, "backend batch_size must be >= 1")
        if self.kind != 'builtin':
            _require(bool(self.base_url), "non-builtin backend requires base_url")


@dataclass
class BackendConfig:
    """三个外部后端"""
    docgen: ProviderConfig = field(default_factory=ProviderConfig)
    embed: ProviderConfig = field(default_factory=ProviderConfig)
    judge: ProviderConfig = field(default_factory=ProviderConfig)

    def to_dict(self) -> Dict:
        return {
            'docgen': self.docgen.to_dict(),
            'embed': self.embed.to_dict(),
            'judge': self.judge.to_dict()
        }

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> 'BackendConfig':
        data = data or {}
        _check_keys('backends', data, ('docgen', 'embed', 'judge'))
        return cls(
            docgen=ProviderConfig.from_dict(data.get('docgen'), 'backends.docgen'),
            embed=ProviderConfig.from_dict(data.get('embed'), 'backends.embed'),
            judge=ProviderConfig.from_dict(data.get('judge'), 'backends.judge')
        )

    def force_offline(self):
        """--offline：全部切换为内置后端"""
        for provider in (self.docgen, self.embed, self.judge):
            provider.kind = 'builtin'


@dataclass
class PathsConfig(_Section):
    """各阶段产物路径（相对 workdir）"""
    workdir: str = './work'
    functions: str = 'functions.jsonl'
    queries: str = 'queries.jsonl'
    pairs_mined: str = 'pairs.mined.jsonl'
    pairs: str = 'pairs.jsonl'
    pairs_refined: str = 'pairs.refined.jsonl'
    refine_report: str = 'refine.report.json'
    checkpoint: str = 'model.npz'
    loss_curve: str = 'loss_curve.csv'
    train_summary: str = 'train.summary.json'
    eval_dataset: str = 'eval.jsonl'
    code2code_dataset: str = 'eval.code2code.jsonl'
    eval_report: str = 'report.json'
    grid: str = 'grid.csv'
    mds: str = 'mds.csv'
    ablation: str = 'ablation.csv'
    ablation_summary: str = 'ablation.summary.csv'
    manifest_db: str = 'manifests.db'

    def resolve(self, name: str) -> Path:
        """返回产物的绝对路径"""
        return Path(self.workdir) / getattr(self, name)


# ============================================================================
# 流水线配置（主配置类）
# ============================================================================

# 每个阶段依赖的配置子集，用于清单哈希
STAGE_CONFIG_KEYS: Dict[StageName, tuple] = {
    StageName.INGEST: ('corpus.corpus_root', 'corpus.ast_backend'),
    StageName.DOCGEN: ('corpus.prompt_budget', 'backends.docgen'),
    StageName.MINE: ('seed', 'synth.k'),
    StageName.ANNOTATE: ('synth.hash_dim', 'backends.embed'),
    StageName.REFINE: ('refine', 'corpus.ast_backend', 'backends.judge'),
    StageName.TRAIN: ('seed', 'train', 'eval.holdout_fraction'),
    StageName.EVAL: ('seed', 'eval.k_cutoff', 'eval.holdout_fraction', 'synth.hash_dim', 'backends.embed'),
    StageName.GRID: ('seed', 'refine', 'train', 'eval', 'synth.hash_dim', 'corpus.ast_backend'),
    StageName.MDS: ('seed', 'eval.mds_max_points', 'eval.power_tol', 'eval.power_max_iter')
}


@dataclass
class PipelineConfig:
    """流水线配置"""
    seed: int = 3407
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    backends: BackendConfig = field(default_factory=BackendConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        self.sync()

    def sync(self):
        """同步镜像字段"""
        self.train.k = self.synth.k
        self.train.delta_s = self.refine.delta_s
        self.train.seed = self.seed

    def to_dict(self) -> Dict:
        return {
            'seed': self.seed,
            'corpus': self.corpus.to_dict(),
            'synth': self.synth.to_dict(),
            'refine': self.refine.to_dict(),
            'train': self.train.to_dict(),
            'eval': self.eval.to_dict(),
            'backends': self.backends.to_dict(),
            'paths': self.paths.to_dict()
        }

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> 'PipelineConfig':
        """从字典创建配置对象（未知字段报错）"""
        data = data or {}
        _check_keys('<root>', data, ('seed', 'corpus', 'synth', 'refine', 'train', 'eval', 'backends', 'paths'))
        seed = data.get('seed', 3407)
        _require(isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0, "seed must be a non-negative integer")
        return cls(
            seed=seed,
            corpus=CorpusConfig.from_dict(data.get('corpus'), 'corpus'),
            synth=SynthConfig.from_dict(data.get('synth'), 'synth'),
            refine=RefineConfig.from_dict(data.get('refine'), 'refine'),
            train=TrainConfig.from_dict(data.get('train'), 'train'),
            eval=EvalConfig.from_dict(data.get('eval'), 'eval'),
            backends=BackendConfig.from_dict(data.get('backends')),
            paths=PathsConfig.from_dict(data.get('paths'), 'paths')
        )

    def copy(self) -> 'PipelineConfig':
        return copy.deepcopy(self)

    def apply_overrides(self, seed: Optional[int] = None, offline: bool = False, workdir: Optional[str] = None):
        """命令行覆盖"""
        if seed is not None:
            self.seed = seed
        if offline:
            self.backends.force_offline()
        if workdir is not None:
            self.paths.workdir = workdir
        self.sync()

    def apply_env_credentials(self, environ: Optional[Dict[str, str]] = None):
        """环境变量只覆盖凭据"""
        environ = os.environ if environ is None else environ
        for name, env_key in CREDENTIAL_ENV.items():
            value = environ.get(env_key)
            if value:
                getattr(self.backends, name).api_key = value

    def lookup(self, dotted: str) -> Any:
        """按 'section.key' 取配置值（字典形式）"""
        node: Any = self.to_dict()
        for part in dotted.split('.'):
            node = node[part]
        return node

    def stage_hash(self, stage: StageName) -> str:
        """阶段相关配置子集的哈希（凭据不参与）"""
        subset = {}
        for key in STAGE_CONFIG_KEYS[stage]:
            value = self.lookup(key)
            if isinstance(value, dict):
                value = {k: v for k, v in value.items() if k != 'api_key'}
            subset[key] = value
        payload = json.dumps(subset, sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode('utf-8')).hexdigest()


# ============================================================================
# 配置持久化（YAML 文件）
# ============================================================================

class ConfigManager:
    """配置管理器（负责配置的加载和保存）"""

    def __init__(self, path: Optional[str] = None):
        """
        初始化配置管理器

        Args:
            path: 配置文件路径，None 表示只使用默认值
        """
        self.path = Path(path) if path else None
        self._last_saved_config_dict: Dict = {}

    def load(self) -> PipelineConfig:
        """从文件加载配置，文件不存在时返回默认配置"""
        if self.path is None or not self.path.exists():
            if self.path is not None:
                logger.info(f"[Config] {self.path} not found, using defaults")
            config = PipelineConfig()
        else:
            try:
                with open(self.path, 'r', encoding='utf-8') as f:
                    data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"invalid YAML in {self.path}: {e}")
            config = PipelineConfig.from_dict(data)

        self._last_saved_config_dict = config.to_dict()
        config.apply_env_credentials()
        return config

    def save(self, config: PipelineConfig) -> bool:
        """
        保存配置到文件

        Returns:
            bool: True 表示实际执行了保存，False 表示未变更无需保存
        """
        if self.path is None:
            raise ConfigError("no config path to save to")

        new_config_dict = config.to_dict()
        if new_config_dict == self._last_saved_config_dict and self.path.exists():
            return False

        # 凭据不落盘
        for section in new_config_dict['backends'].values():
            section['api_key'] = ''

        from utils.io_utils import atomic_write_text
        atomic_write_text(self.path, yaml.safe_dump(new_config_dict, sort_keys=False, allow_unicode=True))
        self._last_saved_config_dict = copy.deepcopy(config.to_dict())
        return True
