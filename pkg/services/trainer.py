#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
训练服务
- 按组打乱、组批、前向 → 混合损失 → 反向 → 优化器更新
- 有限差分梯度校验
- 按查询划分训练 / 留出集
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from core.config import TrainConfig
from core.errors import EncoderError, LossError, NonFiniteError
from core.models import OptimizerKind, PairRecord, group_records
from services.encoder import EncoderModel
from services.losses import Batch, loss_hybrid
from utils.text_utils import derive_seed


logger = logging.getLogger(__name__)

# 相对误差分母下限：低于它的梯度按绝对误差比较
GRAD_FLOOR = 1e-8


# ============================================================================
# 优化器
# ============================================================================

class SGD:
    """p ← p − lr · g"""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        for name, p in params.items():
            p -= self.lr * grads[name]


class Adam:
    """带偏差修正的 Adam"""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == OptimizerKind.SGD:
        return SGD(cfg.lr)
    return Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)


# ============================================================================
# 批次与损失
# ============================================================================

@dataclass
class TextBatch:
    """文本层面的批次：若干组样本对 + 文本查找表"""
    groups: List[List[PairRecord]]
    query_texts: Dict[str, str]
    code_texts: Dict[str, str]

    def texts(self) -> Tuple[List[str], List[str]]:
        queries = [self.query_texts[g[0].query_id] for g in self.groups]
        codes = [self.code_texts[r.code_id] for g in self.groups for r in g]
        return queries, codes


def batch_loss(
    model: EncoderModel,
    batch: TextBatch,
    cfg: TrainConfig,
    parts: Optional[Dict[str, float]] = None
) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    模型层面的损失与参数梯度

    查询与代码一起前向，向量梯度拼接后一次反向
    """
    queries, codes = batch.texts()
    vectors, cache = model.forward(queries + codes)
    m = len(queries)

    records = [r for g in batch.groups for r in g]
    emb_batch = Batch(
        groups=[g[0].group_id for g in batch.groups],
        records=records,
        query_vectors=vectors[:m],
        code_vectors=vectors[m:]
    )
    loss, grads = loss_hybrid(emb_batch, cfg, parts)
    param_grads = model.backward(cache, np.concatenate([grads['query'], grads['code']], axis=0))
    return loss, param_grads


def _loss_only(model: EncoderModel, batch: TextBatch, cfg: TrainConfig) -> float:
    queries, codes = batch.texts()
    vectors = model.embed(queries + codes)
    m = len(queries)
    emb_batch = Batch(
        groups=[g[0].group_id for g in batch.groups],
        records=[r for g in batch.groups for r in g],
        query_vectors=vectors[:m],
        code_vectors=vectors[m:]
    )
    loss, _ = loss_hybrid(emb_batch, cfg)
    return loss


# ============================================================================
# 梯度校验
# ============================================================================

def grad_check(
    model: EncoderModel,
    batch: TextBatch,
    cfg: TrainConfig,
    h: float = 1e-5,
    max_coords: int = 2000,
    sample_size: int = 200,
    seed: int = 0,
    floor: float = GRAD_FLOOR
) -> float:
    """
    中心差分校验解析梯度

    参数总数不超过 max_coords 时检查全部坐标，否则随机抽取 sample_size（≥ 200）个坐标，
    抽样范围是批次实际用到的词表行与整个投影矩阵。

    Args:
        h: 差分步长，(0, 1e-3]
        floor: 相对误差分母下限（中心差分自身的舍入误差约 1e-11）

    Returns:
        max |g_num − g_ana| / max(|g_ana|, floor)

    Raises:
        NonFiniteError: 扰动后损失非有限
    """
    if not 0.0 < h <= 1e-3:
        raise LossError(f"h must be in (0, 1e-3], got {h}", code='invalid_step')

    _, grads = batch_loss(model, batch, cfg)
    params = model.params()

    coords: List[Tuple[str, tuple]] = []
    total = sum(p.size for p in params.values())
    if total <= max_coords:
        for name, p in params.items():
            coords.extend((name, idx) for idx in np.ndindex(p.shape))
    else:
        queries, codes = batch.texts()
        rows = sorted({int(i) for text in queries + codes for i in model.token_ids(text)})
        pool = [('table', (r, c)) for r in rows for c in range(model.embed_dim)]
        pool += [('projection', idx) for idx in np.ndindex(model.projection.shape)]
        rng = np.random.default_rng(derive_seed(seed, 'grad_check'))
        size = min(len(pool), max(sample_size, 200))
        coords = [pool[int(i)] for i in rng.choice(len(pool), size=size, replace=False)]

    worst = 0.0
    for name, idx in coords:
        p = params[name]
        original = p[idx]
        p[idx] = original + h
        plus = _loss_only(model, batch, cfg)
        p[idx] = original - h
        minus = _loss_only(model, batch, cfg)
        p[idx] = original
        if not (np.isfinite(plus) and np.isfinite(minus)):
            raise NonFiniteError(f"non-finite loss when perturbing {name}{idx}")

        numeric = (plus - minus) / (2.0 * h)
        analytic = grads[name][idx]
        worst = max(worst, abs(numeric - analytic) / max(abs(analytic), floor))

    logger.debug(f"[Trainer] grad_check over {len(coords)} coordinates: max rel err {worst:.3e}")
    return worst


# ============================================================================
# 训练
# ============================================================================

def split_holdout(query_ids: Sequence[str], fraction: float, seed: int) -> Tuple[List[str], List[str]]:
    """
    按查询随机划分训练 / 留出集（可复现）

    Returns:
        (训练 query_id, 留出 query_id)，均按字典序排序
    """
    ids = sorted(set(query_ids))
    if len(ids) < 2 or fraction <= 0:
        return ids, []
    rng = np.random.default_rng(derive_seed(seed, 'holdout'))
    order = rng.permutation(len(ids))
    n_held = min(len(ids) - 1, max(1, int(round(fraction * len(ids)))))
    held = sorted(ids[int(i)] for i in order[:n_held])
    held_set = set(held)
    return [i for i in ids if i not in held_set], held


def _encodable_groups(
    groups: Dict[str, List[PairRecord]],
    model: EncoderModel,
    query_texts: Dict[str, str],
    code_texts: Dict[str, str]
) -> List[str]:
    """过滤掉含有无 token 文本的组"""
    keep = []
    for gid in sorted(groups):
        members = groups[gid]
        try:
            model.token_ids(query_texts[members[0].query_id])
            for record in members:
                model.token_ids(code_texts[record.code_id])
        except EncoderError as e:
            logger.warning(f"[Trainer] Skipping group {gid}: {e}")
            continue
        keep.append(gid)
    return keep


def train(
    records: List[PairRecord],
    model: EncoderModel,
    cfg: TrainConfig,
    query_texts: Dict[str, str],
    code_texts: Dict[str, str],
    show_progress: bool = False
) -> Tuple[EncoderModel, pd.DataFrame]:
    """
    训练编码器（原地更新 model 的参数）

    每个 epoch 用 derive_seed(seed, 'train', epoch) 打乱组顺序，
    每 batch_groups 个组组成一个批次。

    Returns:
        (model, 损失曲线 DataFrame[step, epoch, L_ibn, L_cos, L])

    Raises:
        NonFiniteError: 任一步损失或参数非有限（日志中带诊断信息）
    """
    groups = group_records(records)
    group_ids = _encodable_groups(groups, model, query_texts, code_texts)
    optimizer = make_optimizer(cfg)
    params = model.params()

    rows = []
    step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, 'train', epoch))
        order = [group_ids[int(i)] for i in rng.permutation(len(group_ids))]
        batches = [order[i:i + cfg.batch_groups] for i in range(0, len(order), cfg.batch_groups)]

        epoch_losses = []
        for batch_gids in tqdm(batches, desc=f'epoch {epoch + 1}/{cfg.epochs}', disable=not show_progress):
            batch = TextBatch([groups[g] for g in batch_gids], query_texts, code_texts)
            parts: Dict[str, float] = {}
            try:
                loss, grads = batch_loss(model, batch, cfg, parts)
            except NonFiniteError:
                _dump_diagnostics(step, epoch, batch_gids, model, parts)
                raise

            optimizer.step(params, grads)
            try:
                model.check_finite()
            except NonFiniteError:
                _dump_diagnostics(step, epoch, batch_gids, model, parts)
                raise

            step += 1
            epoch_losses.append(loss)
            rows.append({
                'step': step,
                'epoch': epoch,
                'L_ibn': parts.get('infonce', 0.0),
                'L_cos': parts.get('cosent', 0.0),
                'L': loss
            })
            logger.debug(f"[Trainer] step={step} L={loss:.6f} "
                         f"L_ibn={parts.get('infonce', 0.0):.6f} L_cos={parts.get('cosent', 0.0):.6f}")

        if epoch_losses:
            logger.info(f"[Trainer] epoch {epoch + 1}/{cfg.epochs}: {len(epoch_losses)} steps, "
                        f"mean L={float(np.mean(epoch_losses)):.6f}")

    curve = pd.DataFrame(rows, columns=['step', 'epoch', 'L_ibn', 'L_cos', 'L'])
    return model, curve


def _dump_diagnostics(step: int, epoch: int, batch_gids: List[str], model: EncoderModel, parts: Dict[str, float]):
    norms = {name: float(np.linalg.norm(p)) for name, p in model.params().items()}
    logger.error(f"[Trainer] Non-finite value at step={step} epoch={epoch} groups={batch_gids} "
                 f"parts={parts} param_norms={norms}")
