#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
经典 MDS 二维坐标
距离 = 1 − cos，平方距离矩阵双中心化，幂迭代 + 收缩求前两个特征对
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import EvalError


logger = logging.getLogger(__name__)


def double_center(sq_dist: np.ndarray) -> np.ndarray:
    """B = −½ J D² J，J = I − 11ᵀ/n"""
    n = sq_dist.shape[0]
    j = np.eye(n) - np.ones((n, n)) / n
    return -0.5 * j @ sq_dist @ j


def power_iteration(matrix: np.ndarray, tol: float = 1e-10, max_iter: int = 10000,
                    seed: int = 0) -> Tuple[float, np.ndarray]:
    """
    对称矩阵的主特征对

    Returns:
        (特征值, 单位特征向量)；最大分量为正
    """
    n = matrix.shape[0]
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)

    for _ in range(max_iter):
        y = matrix @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0, x
        y /= norm
        if y @ x < 0:
            y = -y
        if np.linalg.norm(y - x) < tol:
            x = y
            break
        x = y
    else:
        logger.warning(f"[MDS] Power iteration did not converge in {max_iter} iterations")

    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    return float(x @ matrix @ x), x


def top_eigenpairs(matrix: np.ndarray, k: int = 2, tol: float = 1e-10, max_iter: int = 10000,
                   seed: int = 0) -> List[Tuple[float, np.ndarray]]:
    """
    代数值最大的 k 个特征对（迭代收缩）

    先平移 shift = ‖B‖_F 使全部特征值非负，幂迭代找到的即代数最大者
    """
    shift = float(np.linalg.norm(matrix))
    work = matrix + shift * np.eye(matrix.shape[0])
    pairs = []
    for i in range(k):
        value, vector = power_iteration(work, tol, max_iter, seed + i)
        pairs.append((value - shift, vector))
        work = work - value * np.outer(vector, vector)
    return pairs


def mds_coords(vectors: Sequence[np.ndarray], tol: float = 1e-10, max_iter: int = 10000,
               seed: int = 0) -> np.ndarray:
    """
    单位向量 → 二维坐标

    Returns:
        (n, 2) 坐标 = 特征向量 · √特征值；正特征值不足两个时缺失维度补 0

    Raises:
        EvalError: 少于 3 个向量
    """
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 3:
        raise EvalError(f"MDS needs at least 3 vectors, got {v.shape[0] if v.ndim else 0}", code='too_few_points')

    cos = np.clip(v @ v.T, -1.0, 1.0)
    dist = 1.0 - cos
    np.fill_diagonal(dist, 0.0)
    b = double_center(dist ** 2)

    coords = np.zeros((v.shape[0], 2))
    scale = max(1.0, float(np.abs(b).max()))
    for axis, (value, vector) in enumerate(top_eigenpairs(b, 2, tol, max_iter, seed)):
        if value <= tol * scale:
            logger.warning(f"[MDS] Rank-deficient distances: axis {axis} has eigenvalue {value:.3e}, padding with 0")
            continue
        coords[:, axis] = vector * np.sqrt(value)
    return coords


def mds_table(ids: Sequence[str], coords: np.ndarray) -> pd.DataFrame:
    """写 CSV 用的表格 {id, x, y}"""
    return pd.DataFrame({'id': list(ids), 'x': coords[:, 0], 'y': coords[:, 1]})
