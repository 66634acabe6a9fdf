#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据模型定义
集中管理所有数据结构，避免重复定义
"""

from enum import Enum
from dataclasses import dataclass, field
from typing import List, Dict, Optional, Tuple


# ============================================================================
# 枚举类型
# ============================================================================

class PairRole(Enum):
    """样本对角色"""
    POSITIVE = 'positive'
    NEGATIVE = 'negative'


class Refinement(Enum):
    """相似度修正来源"""
    NONE = 'none'
    THRESHOLD_SELECTED = 'threshold_selected'
    AST_SELECTED = 'ast_selected'
    ADJUSTED = 'adjusted'


class Pooling(Enum):
    """编码器池化方式"""
    MEAN = 'mean'
    LAST = 'last'


class OptimizerKind(Enum):
    """优化器"""
    ADAM = 'adam'
    SGD = 'sgd'


class Objective(Enum):
    """训练目标（消融用）"""
    HYBRID = 'hybrid'
    INFONCE = 'infonce'
    COSENT = 'cosent'


class JudgeChoice(Enum):
    """判定结果：a = 正样本代码，b = 候选代码"""
    A = 'a'
    B = 'b'
    BOTH = 'both'

    @property
    def accepts_candidate(self) -> bool:
        return self in (JudgeChoice.B, JudgeChoice.BOTH)


class StageName(Enum):
    """流水线阶段"""
    INGEST = 'ingest'
    DOCGEN = 'docgen'
    MINE = 'mine'
    ANNOTATE = 'annotate'
    REFINE = 'refine'
    TRAIN = 'train'
    EVAL = 'eval'
    GRID = 'grid'
    MDS = 'mds'


# ============================================================================
# 语料模型
# ============================================================================

@dataclass
class Repository:
    """代码仓库"""
    repo_id: str
    root_path: str
    language_tag: str = 'python'

    def to_dict(self) -> Dict:
        return {
            'repo_id': self.repo_id,
            'root_path': self.root_path,
            'language_tag': self.language_tag
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'Repository':
        return cls(
            repo_id=data['repo_id'],
            root_path=data['root_path'],
            language_tag=data.get('language_tag', 'python')
        )


@dataclass
class FunctionUnit:
    """
    函数级代码单元

    file_path / start_byte / end_byte 只在内存中保留，
    functions.jsonl 只导出固定的七个字段
    """
    func_id: str
    repo_id: str
    name: str
    source: str
    callers: List[str] = field(default_factory=list)
    callees: List[str] = field(default_factory=list)
    docstring: Optional[str] = None
    file_path: str = ''
    start_byte: int = 0
    end_byte: int = 0

    def to_dict(self) -> Dict:
        return {
            'func_id': self.func_id,
            'repo_id': self.repo_id,
            'name': self.name,
            'source': self.source,
            'callers': list(self.callers),
            'callees': list(self.callees),
            'docstring': self.docstring
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'FunctionUnit':
        return cls(
            func_id=data['func_id'],
            repo_id=data['repo_id'],
            name=data['name'],
            source=data['source'],
            callers=list(data.get('callers', [])),
            callees=list(data.get('callees', [])),
            docstring=data.get('docstring')
        )


@dataclass
class DocQuery:
    """由文档字符串构成的自然语言查询"""
    query_id: str
    func_id: str
    text: str

    def to_dict(self) -> Dict:
        return {
            'query_id': self.query_id,
            'func_id': self.func_id,
            'text': self.text
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'DocQuery':
        return cls(
            query_id=data['query_id'],
            func_id=data['func_id'],
            text=data['text']
        )


# ============================================================================
# 样本对模型
# ============================================================================

@dataclass
class PairRecord:
    """(query, code, sim) 三元组"""
    pair_id: str
    group_id: str
    query_id: str
    code_id: str
    role: PairRole
    sim_annotated: float = 0.0
    sim_train: float = 0.0
    refinement: Refinement = Refinement.NONE

    @property
    def is_positive(self) -> bool:
        return self.role == PairRole.POSITIVE

    def to_dict(self) -> Dict:
        return {
            'pair_id': self.pair_id,
            'group_id': self.group_id,
            'query_id': self.query_id,
            'code_id': self.code_id,
            'role': self.role.value,
            'sim_annotated': self.sim_annotated,
            'sim_train': self.sim_train,
            'refinement': self.refinement.value
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'PairRecord':
        return cls(
            pair_id=data['pair_id'],
            group_id=data['group_id'],
            query_id=data['query_id'],
            code_id=data['code_id'],
            role=PairRole(data['role']),
            sim_annotated=float(data.get('sim_annotated', 0.0)),
            sim_train=float(data.get('sim_train', 0.0)),
            refinement=Refinement(data.get('refinement', 'none'))
        )


def group_records(records: List[PairRecord]) -> Dict[str, List[PairRecord]]:
    """
    按 group_id 聚合样本对，保持首次出现的顺序

    Returns:
        {group_id: [positive, negative, ...]}，正样本总在第一位
    """
    groups: Dict[str, List[PairRecord]] = {}
    for record in records:
        groups.setdefault(record.group_id, []).append(record)
    for gid, members in groups.items():
        members.sort(key=lambda r: 0 if r.is_positive else 1)
    return groups


# ============================================================================
# 修正相关模型
# ============================================================================

@dataclass
class MixtureFit:
    """一维两分量高斯混合拟合结果"""
    mu1: float
    sigma1: float
    mu2: float
    sigma2: float
    weight1: float
    s_star: float = float('nan')
    log_likelihood: float = float('-inf')
    iterations: int = 0
    ll_history: List[float] = field(default_factory=list)

    @property
    def weight2(self) -> float:
        return 1.0 - self.weight1

    def to_dict(self) -> Dict:
        return {
            'mu1': self.mu1,
            'sigma1': self.sigma1,
            'mu2': self.mu2,
            'sigma2': self.sigma2,
            'weight1': self.weight1,
            's_star': self.s_star,
            'log_likelihood': self.log_likelihood,
            'iterations': self.iterations
        }


@dataclass
class AstNode:
    """有序带标签树节点"""
    label: str
    children: List['AstNode'] = field(default_factory=list)

    def add(self, child: 'AstNode') -> 'AstNode':
        self.children.append(child)
        return child


@dataclass
class AstTree:
    """有序带标签有根树"""
    root: AstNode

    @property
    def node_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(node.children)
        return count

    def labels(self) -> List[str]:
        """先序遍历的标签序列"""
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            out.append(node.label)
            stack.extend(reversed(node.children))
        return out

    @classmethod
    def from_nested(cls, nested) -> 'AstTree':
        """
        从嵌套元组构建，如 ('a', [('b', []), ('c', [])])；
        单个字符串视为叶子
        """
        def build(item) -> AstNode:
            if isinstance(item, str):
                return AstNode(item)
            label, kids = item
            return AstNode(label, [build(k) for k in kids])
        return cls(build(nested))


# ============================================================================
# 评测模型
# ============================================================================

@dataclass
class EvalQuery:
    """评测查询"""
    query_id: str
    text: str
    target_ids: List[str]
    # 排序时跳过的候选（代码检索代码时排除查询自身）
    exclude_ids: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        data = {'query_id': self.query_id, 'text': self.text, 'target_ids': list(self.target_ids)}
        if self.exclude_ids:
            data['exclude_ids'] = list(self.exclude_ids)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'EvalQuery':
        return cls(
            query_id=data['query_id'],
            text=data['text'],
            target_ids=list(data['target_ids']),
            exclude_ids=list(data.get('exclude_ids', []))
        )


@dataclass
class EvalCandidate:
    """评测候选代码"""
    code_id: str
    text: str

    def to_dict(self) -> Dict:
        return {'code_id': self.code_id, 'text': self.text}

    @classmethod
    def from_dict(cls, data: Dict) -> 'EvalCandidate':
        return cls(code_id=data['code_id'], text=data['text'])


@dataclass
class EvalDataset:
    """
    评测数据集（通用 JSONL 格式）
    每行 {"kind": "query"|"candidate", ...}
    """
    queries: List[EvalQuery] = field(default_factory=list)
    candidates: List[EvalCandidate] = field(default_factory=list)
    task: str = 'nl2code'

    def validate(self):
        from core.errors import EvalError

        code_ids = [c.code_id for c in self.candidates]
        if len(set(code_ids)) != len(code_ids):
            raise EvalError("duplicate candidate code_id")
        query_ids = [q.query_id for q in self.queries]
        if len(set(query_ids)) != len(query_ids):
            raise EvalError("duplicate query_id")
        known = set(code_ids)
        for q in self.queries:
            missing = [t for t in q.target_ids if t not in known]
            if missing:
                raise EvalError(f"query {q.query_id} targets unknown candidates {missing}")


@dataclass
class EvalReport:
    """评测报告"""
    per_query_rank: Dict[str, Optional[int]]
    mrr: float
    map: float
    k_cutoff: int
    hard_subset: List[str] = field(default_factory=list)
    model_name: str = ''
    task: str = 'nl2code'

    def to_dict(self) -> Dict:
        return {
            'model_name': self.model_name,
            'task': self.task,
            'mrr': self.mrr,
            'mrr_percent': round(self.mrr * 100, 2),
            'map': self.map,
            'map_percent': round(self.map * 100, 2),
            'k_cutoff': self.k_cutoff,
            'per_query_rank': dict(sorted(self.per_query_rank.items())),
            'hard_subset': list(self.hard_subset)
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'EvalReport':
        return cls(
            per_query_rank=dict(data.get('per_query_rank', {})),
            mrr=float(data['mrr']),
            map=float(data['map']),
            k_cutoff=int(data['k_cutoff']),
            hard_subset=list(data.get('hard_subset', [])),
            model_name=data.get('model_name', ''),
            task=data.get('task', 'nl2code')
        )


# ============================================================================
# 阶段清单
# ============================================================================

@dataclass
class StageManifest:
    """阶段执行清单（用于断点续跑）"""
    stage: str
    input_hashes: Dict[str, str]
    config_hash: str
    output_hashes: Dict[str, str] = field(default_factory=dict)
    started_at: Optional[str] = None
    finished_at: Optional[str] = None
    skipped: bool = False

    def matches(self, input_hashes: Dict[str, str], config_hash: str) -> bool:
        """输入与配置哈希全部一致时可跳过"""
        return self.input_hashes == input_hashes and self.config_hash == config_hash

    def to_dict(self) -> Dict:
        return {
            'stage': self.stage,
            'input_hashes': self.input_hashes,
            'config_hash': self.config_hash,
            'output_hashes': self.output_hashes,
            'started_at': self.started_at,
            'finished_at': self.finished_at,
            'skipped': self.skipped
        }


# ============================================================================
# 常量定义
# ============================================================================

# 源码扩展名 → 语言标签
SOURCE_EXTENSIONS = {
    '.py': 'python',
    '.js': 'javascript',
    '.ts': 'typescript',
    '.go': 'go',
    '.rs': 'rust',
    '.java': 'java',
    '.rb': 'ruby',
    '.php': 'php',
    '.c': 'c',
    '.cpp': 'cpp'
}

STAGE_ORDER: Tuple[StageName, ...] = (
    StageName.INGEST,
    StageName.DOCGEN,
    StageName.MINE,
    StageName.ANNOTATE,
    StageName.REFINE,
    StageName.TRAIN,
    StageName.EVAL,
    StageName.GRID,
    StageName.MDS
)
