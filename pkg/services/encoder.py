#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
参考编码器
token 哈希到桶 → 查表 → 池化 → 投影 → L2 归一化
前向保存中间量，反向传播给出 table / projection 的梯度
"""

import io
import json
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.config import TrainConfig
from core.errors import EncoderError, NonFiniteError
from core.models import Pooling
from utils.io_utils import atomic_write_bytes
from utils.text_utils import derive_seed, hash_token, tokenize


logger = logging.getLogger(__name__)

# zip 条目的固定时间戳，保证检查点字节级可复现
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class ForwardCache:
    """一次批量前向的中间结果"""
    ids: List[np.ndarray]
    pooled: np.ndarray
    norms: np.ndarray
    vectors: np.ndarray


class EncoderModel:
    """哈希词表 + 投影矩阵的编码器"""

    def __init__(
        self,
        hash_dim: int = 4096,
        embed_dim: int = 64,
        pooling: Pooling = Pooling.MEAN,
        max_tokens: int = 1024,
        init_scale: float = 1.0,
        seed: int = 0,
        table: Optional[np.ndarray] = None,
        projection: Optional[np.ndarray] = None
    ):
        """
        Args:
            hash_dim: 哈希桶数
            embed_dim: 向量维度
            pooling: mean / last
            max_tokens: 输入截断长度
            init_scale: 词表初始化尺度
            seed: 初始化种子
            table / projection: 直接指定参数（加载检查点或测试用）
        """
        self.hash_dim = hash_dim
        self.embed_dim = embed_dim
        self.pooling = Pooling(pooling) if isinstance(pooling, str) else pooling
        self.max_tokens = max_tokens

        if table is None:
            rng = np.random.default_rng(derive_seed(seed, 'encoder'))
            table = rng.standard_normal((hash_dim, embed_dim)) * (init_scale / np.sqrt(embed_dim))
        if projection is None:
            projection = np.eye(embed_dim)

        self.table = np.asarray(table, dtype=np.float64)
        self.projection = np.asarray(projection, dtype=np.float64)
        if self.table.shape != (hash_dim, embed_dim):
            raise EncoderError(f"table shape {self.table.shape} != ({hash_dim}, {embed_dim})")
        if self.projection.shape != (embed_dim, embed_dim):
            raise EncoderError(f"projection shape {self.projection.shape} != ({embed_dim}, {embed_dim})")

    @classmethod
    def from_config(cls, cfg: TrainConfig, seed: Optional[int] = None) -> 'EncoderModel':
        return cls(
            hash_dim=cfg.hash_dim,
            embed_dim=cfg.embed_dim,
            pooling=cfg.pooling,
            max_tokens=cfg.max_tokens,
            init_scale=cfg.init_scale,
            seed=cfg.seed if seed is None else seed
        )

    # ------------------------------------------------------------------ 参数

    def params(self) -> Dict[str, np.ndarray]:
        """可训练参数（返回引用，优化器原地更新）"""
        return {'table': self.table, 'projection': self.projection}

    def copy(self) -> 'EncoderModel':
        return EncoderModel(self.hash_dim, self.embed_dim, self.pooling, self.max_tokens,
                            table=self.table.copy(), projection=self.projection.copy())

    def check_finite(self):
        for name, value in self.params().items():
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"parameter '{name}' contains NaN/Inf")

    # ------------------------------------------------------------------ 前向

    def token_ids(self, text: str) -> np.ndarray:
        """
        Raises:
            EncoderError: 文本不含任何 token（empty_token_stream）
        """
        tokens = tokenize(text, self.max_tokens)
        if not tokens:
            raise EncoderError(f"no tokens in text {text[:40]!r}", code='empty_token_stream')
        return np.fromiter((hash_token(t, self.hash_dim) for t in tokens), dtype=np.int64, count=len(tokens))

    def _pool(self, ids: np.ndarray) -> np.ndarray:
        if self.pooling == Pooling.LAST:
            return self.table[ids[-1]]
        return self.table[ids].mean(axis=0)

    def forward(self, texts: List[str]) -> Tuple[np.ndarray, ForwardCache]:
        """批量编码，返回 (单位向量矩阵, 反向所需缓存)"""
        ids = [self.token_ids(t) for t in texts]
        pooled = np.stack([self._pool(i) for i in ids]) if ids else np.zeros((0, self.embed_dim))
        z = pooled @ self.projection
        norms = np.linalg.norm(z, axis=1)
        if np.any(norms == 0):
            raise EncoderError("zero-norm embedding", code='zero_norm')
        vectors = z / norms[:, None]
        return vectors, ForwardCache(ids=ids, pooled=pooled, norms=norms, vectors=vectors)

    def embed(self, texts: List[str]) -> np.ndarray:
        return self.forward(texts)[0]

    def encode(self, text: str) -> np.ndarray:
        return self.forward([text])[0][0]

    # ------------------------------------------------------------------ 反向

    def backward(self, cache: ForwardCache, grad_vectors: np.ndarray) -> Dict[str, np.ndarray]:
        """
        由输出向量的梯度求参数梯度

        v = z / ‖z‖ ⇒ dz = (dv − v (v·dv)) / ‖z‖
        z = x W     ⇒ dW = xᵀ dz，dx = dz Wᵀ
        """
        v = cache.vectors
        dz = (grad_vectors - v * np.sum(v * grad_vectors, axis=1, keepdims=True)) / cache.norms[:, None]
        d_projection = cache.pooled.T @ dz
        dx = dz @ self.projection.T

        d_table = np.zeros_like(self.table)
        for row, ids in enumerate(cache.ids):
            if self.pooling == Pooling.LAST:
                d_table[ids[-1]] += dx[row]
            else:
                np.add.at(d_table, ids, dx[row] / len(ids))
        return {'table': d_table, 'projection': d_projection}

    # ------------------------------------------------------------------ 检查点

    def header(self) -> Dict:
        return {
            'hash_dim': self.hash_dim,
            'embed_dim': self.embed_dim,
            'pooling': self.pooling.value,
            'max_tokens': self.max_tokens
        }

    def save(self, path):
        """
        写出 .npz 检查点：table / projection（小端 float64）+ JSON 头
        """
        arrays = {
            'header': np.frombuffer(json.dumps(self.header(), sort_keys=True).encode('utf-8'), dtype=np.uint8),
            'table': self.table.astype('<f8'),
            'projection': self.projection.astype('<f8')
        }

        def writer(f):
            with zipfile.ZipFile(f, 'w', compression=zipfile.ZIP_STORED) as zf:
                for name, arr in arrays.items():
                    buf = io.BytesIO()
                    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
                    info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
                    zf.writestr(info, buf.getvalue())

        atomic_write_bytes(path, writer)
        logger.info(f"[Encoder] Saved checkpoint to {path}")

    @classmethod
    def load(cls, path) -> 'EncoderModel':
        path = Path(path)
        if not path.exists():
            raise EncoderError(f"checkpoint not found: {path}", code='missing_checkpoint')
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data['header']).decode('utf-8'))
            return cls(
                hash_dim=int(header['hash_dim']),
                embed_dim=int(header['embed_dim']),
                pooling=Pooling(header['pooling']),
                max_tokens=int(header['max_tokens']),
                table=data['table'],
                projection=data['projection']
            )


def encode(model: EncoderModel, text: str) -> np.ndarray:
    """单条文本 → 单位向量"""
    return model.encode(text)
