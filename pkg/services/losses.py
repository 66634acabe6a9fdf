#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
训练目标
- InfoNCE：批内对比，候选为批内全部代码向量
- CoSENT：批内所有 (query, code) 记录按 sim_train 排序的成对损失
- 混合：w1 · InfoNCE + w2 · CoSENT
所有损失都返回关于 query / code 向量的解析梯度
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from core.config import TrainConfig
from core.errors import LossError, NonFiniteError
from core.models import PairRecord


@dataclass
class Batch:
    """
    一个训练批次（向量层面）

    query_vectors[g] 是第 g 组的查询向量；code_vectors[r] 是第 r 条记录的代码向量。
    记录按组排列，每组恰有一个正样本。
    """
    groups: List[str]
    records: List[PairRecord]
    query_vectors: np.ndarray
    code_vectors: np.ndarray

    def __post_init__(self):
        index = {gid: i for i, gid in enumerate(self.groups)}
        self.record_group = np.array([index[r.group_id] for r in self.records], dtype=np.int64)
        self.labels = np.array([r.sim_train for r in self.records], dtype=np.float64)

        positives = [-1] * len(self.groups)
        for i, record in enumerate(self.records):
            if record.is_positive:
                g = self.record_group[i]
                if positives[g] != -1:
                    raise LossError(f"group {record.group_id} has more than one positive", code='invalid_batch')
                positives[g] = i
        if any(p == -1 for p in positives):
            raise LossError("every group needs exactly one positive", code='invalid_batch')
        self.positive_index = np.array(positives, dtype=np.int64)

        if self.query_vectors.shape[0] != len(self.groups):
            raise LossError("one query vector per group expected", code='invalid_batch')
        if self.code_vectors.shape[0] != len(self.records):
            raise LossError("one code vector per record expected", code='invalid_batch')

    @property
    def m(self) -> int:
        return len(self.groups)

    @property
    def n(self) -> int:
        return len(self.records)

    def pair_cosines(self) -> np.ndarray:
        """每条记录的 cos(q_group, c_record)"""
        return np.sum(self.query_vectors[self.record_group] * self.code_vectors, axis=1)


Gradients = Dict[str, np.ndarray]


def _zero_grads(batch: Batch) -> Gradients:
    return {'query': np.zeros_like(batch.query_vectors), 'code': np.zeros_like(batch.code_vectors)}


def loss_infonce(batch: Batch, tau: float) -> Tuple[float, Gradients]:
    """
    InfoNCE

    S = Q Cᵀ / τ；L = mean_i [logsumexp(S_i) − S_i,pos(i)]。
    梯度：G = (softmax(S) − Y) / (m τ)，dQ = G C，dC = Gᵀ Q。

    Raises:
        LossError: 批内没有正样本（no_positives）
    """
    if batch.m == 0:
        raise LossError("batch has no positives", code='no_positives')

    q, c = batch.query_vectors, batch.code_vectors
    logits = q @ c.T / tau
    lse = logsumexp(logits, axis=1)
    rows = np.arange(batch.m)
    loss = float(np.mean(lse - logits[rows, batch.positive_index]))

    probs = np.exp(logits - lse[:, None])
    probs[rows, batch.positive_index] -= 1.0
    g = probs / (batch.m * tau)
    return loss, {'query': g @ c, 'code': g.T @ q}


def loss_cosent(batch: Batch, tau: float) -> Tuple[float, Gradients]:
    """
    CoSENT

    L = log(1 + Σ_{y_a > y_b} exp((cos_b − cos_a) / τ))，只比较严格大于的标签对。
    没有这样的对时 L = 0。
    """
    grads = _zero_grads(batch)
    if batch.n < 2:
        return 0.0, grads

    cos = batch.pair_cosines()
    y = batch.labels
    mask = y[:, None] > y[None, :]
    if not mask.any():
        return 0.0, grads

    a_idx, b_idx = np.nonzero(mask)
    terms = (cos[b_idx] - cos[a_idx]) / tau
    # 1 对应 exp(0)
    loss = float(logsumexp(np.concatenate(([0.0], terms))))

    weights = np.exp(terms - loss) / tau
    dcos = np.zeros(batch.n)
    np.add.at(dcos, b_idx, weights)
    np.add.at(dcos, a_idx, -weights)

    q_rows = batch.query_vectors[batch.record_group]
    grads['code'] = dcos[:, None] * q_rows
    np.add.at(grads['query'], batch.record_group, dcos[:, None] * batch.code_vectors)
    return loss, grads


def loss_hybrid(batch: Batch, cfg: TrainConfig, parts: Optional[Dict[str, float]] = None) -> Tuple[float, Gradients]:
    """
    w1 · L_ibn + w2 · L_cos，梯度按同样权重相加

    Args:
        parts: 可选，写入 infonce / cosent 两个分量
    """
    grads = _zero_grads(batch)
    l_ibn = l_cos = 0.0

    if cfg.w1 != 0.0:
        l_ibn, g = loss_infonce(batch, cfg.tau)
        grads['query'] += cfg.w1 * g['query']
        grads['code'] += cfg.w1 * g['code']
    if cfg.w2 != 0.0:
        l_cos, g = loss_cosent(batch, cfg.tau)
        grads['query'] += cfg.w2 * g['query']
        grads['code'] += cfg.w2 * g['code']

    if cfg.w1 == 0.0:
        total = cfg.w2 * l_cos
    elif cfg.w2 == 0.0:
        total = cfg.w1 * l_ibn
    else:
        total = cfg.w1 * l_ibn + cfg.w2 * l_cos

    if not np.isfinite(total):
        raise NonFiniteError(f"non-finite loss (infonce={l_ibn}, cosent={l_cos})")
    if parts is not None:
        parts.update({'infonce': l_ibn, 'cosent': l_cos})
    return float(total), grads
