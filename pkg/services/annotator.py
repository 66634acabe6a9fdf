#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
相似度标注器
文本 → 单位向量，相似度 = 余弦，经 (1+cos)/2 映射后截断到 [0, 1)
"""

import logging
from typing import List, Optional

import httpx
import numpy as np

from core.config import ProviderConfig
from core.errors import ParseError
from services.llm_client import HttpBackend
from utils.text_utils import hash_token, tokenize


logger = logging.getLogger(__name__)

# 严格小于 1 的最大浮点数
MAX_LABEL = float(np.nextafter(1.0, 0.0))


def cosine_to_label(cos: float) -> float:
    """余弦 → 标注相似度 [0, 1)"""
    value = (1.0 + float(cos)) / 2.0
    return min(max(value, 0.0), MAX_LABEL)


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    """逐行 L2 归一化，零向量保持为零"""
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return vectors / safe


class SimilarityAnnotator:
    """标注器接口"""

    name = 'base'

    def embed(self, texts: List[str]) -> np.ndarray:
        """批量编码为单位向量，形状 (len(texts), dim)"""
        raise NotImplementedError

    def similarity(self, a: str, b: str) -> float:
        vecs = self.embed([a, b])
        return cosine_to_label(float(vecs[0] @ vecs[1]))


class HashedBagAnnotator(SimilarityAnnotator):
    """
    内置标注器：特征哈希的词袋 TF 向量

    token 经 BLAKE2b 哈希到 hash_dim 个桶，计数后 L2 归一化；
    无 token 的文本得到零向量（与任何文本余弦为 0）
    """

    name = 'hashed-bag'

    def __init__(self, hash_dim: int = 4096):
        self.hash_dim = hash_dim

    def vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.hash_dim, dtype=np.float64)
        for token in tokenize(text):
            vec[hash_token(token, self.hash_dim)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def embed(self, texts: List[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.hash_dim), dtype=np.float64)
        return np.stack([self.vector(t) for t in texts])


class HttpAnnotator(SimilarityAnnotator):
    """
    外部向量服务：POST {texts: [...]} → {vectors: [[...], ...]}

    按 batch_size 分批请求，返回的向量在本地归一化
    """

    name = 'http'

    def __init__(self, config: ProviderConfig, client: Optional[httpx.Client] = None):
        self.config = config
        self.backend = HttpBackend(config, client=client, tag='EmbedHttp')

    def _embed_batch(self, texts: List[str]) -> np.ndarray:
        data = self.backend.post_json({'texts': texts})
        vectors = data.get('vectors')
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ParseError(
                f"expected {len(texts)} vectors, got "
                f"{len(vectors) if isinstance(vectors, list) else type(vectors).__name__}"
            )
        try:
            arr = np.asarray(vectors, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ParseError(f"malformed vectors: {e}")
        if arr.ndim != 2 or not np.all(np.isfinite(arr)):
            raise ParseError("vectors must be a finite 2-D array")
        return normalize_rows(arr)

    def embed(self, texts: List[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, 0), dtype=np.float64)
        size = self.config.batch_size
        chunks = [self._embed_batch(texts[i:i + size]) for i in range(0, len(texts), size)]
        return np.concatenate(chunks, axis=0)


def get_annotator(config: ProviderConfig, hash_dim: int = 4096) -> SimilarityAnnotator:
    """按后端类型创建标注器（chat 后端不提供向量，回退到内置）"""
    if config.kind == 'http':
        return HttpAnnotator(config)
    if config.kind == 'chat':
        logger.warning("[Annotator] Chat backends cannot embed, using built-in hashed-bag annotator")
    return HashedBagAnnotator(hash_dim)
