#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
一维两分量高斯混合（EM）与分量密度交点阈值
"""

import math
import logging
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from core.errors import RefineError
from core.models import MixtureFit


logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-4
MIN_SAMPLES = 10


def _log_weighted(x: np.ndarray, weight: float, mu: float, sigma: float) -> np.ndarray:
    """log(w · N(x | mu, sigma²))"""
    return math.log(weight) + norm.logpdf(x, loc=mu, scale=sigma)


def _log_likelihood(x: np.ndarray, w1: float, mu1: float, s1: float, mu2: float, s2: float) -> float:
    return float(np.sum(np.logaddexp(_log_weighted(x, w1, mu1, s1), _log_weighted(x, 1.0 - w1, mu2, s2))))


def fit_gmm_1d(
    sims: Sequence[float],
    max_iter: int = 200,
    tol: float = 1e-6,
    seed: Optional[int] = None,
    weighted_intersection: bool = False
) -> MixtureFit:
    """
    EM 拟合两分量一维高斯混合

    初始化：按中位数切分成两半，分别取均值 / 标准差 / 占比。
    对数似然提升小于 tol 或达到 max_iter 时停止；σ 下限 1e-4。

    Args:
        sims: 相似度样本（至少 10 个）
        max_iter: 最大迭代次数
        tol: 收敛阈值
        seed: 保留参数，中位数初始化是确定性的
        weighted_intersection: 交点是否使用带权密度

    Returns:
        MixtureFit（mu1 < mu2，含 s_star 与逐次对数似然）

    Raises:
        RefineError: 样本过少 / 全部相同（degenerate_distribution）
    """
    x = np.asarray(sims, dtype=np.float64)
    if x.size < MIN_SAMPLES:
        raise RefineError(f"need at least {MIN_SAMPLES} samples, got {x.size}", code='too_few_samples')
    if not np.all(np.isfinite(x)):
        raise RefineError("similarities contain NaN/Inf", code='nonfinite')
    if np.ptp(x) == 0.0:
        raise RefineError(f"all {x.size} similarities equal {x[0]}", code='degenerate_distribution')

    # 中位数切分初始化
    median = float(np.median(x))
    lo, hi = x[x <= median], x[x > median]
    if hi.size == 0:
        lo, hi = x[x < median], x[x >= median]

    n = float(x.size)
    w1 = lo.size / n
    mu1, mu2 = float(lo.mean()), float(hi.mean())
    s1 = max(float(lo.std()), SIGMA_FLOOR)
    s2 = max(float(hi.std()), SIGMA_FLOOR)

    ll = _log_likelihood(x, w1, mu1, s1, mu2, s2)
    history = [ll]
    iterations = 0

    for iterations in range(1, max_iter + 1):
        # E 步
        l1 = _log_weighted(x, w1, mu1, s1)
        l2 = _log_weighted(x, 1.0 - w1, mu2, s2)
        total = np.logaddexp(l1, l2)
        r1 = np.exp(l1 - total)
        r2 = 1.0 - r1

        # M 步
        n1 = max(float(r1.sum()), 1e-12)
        n2 = max(float(r2.sum()), 1e-12)
        mu1 = float(r1 @ x) / n1
        mu2 = float(r2 @ x) / n2
        s1 = max(math.sqrt(float(r1 @ (x - mu1) ** 2) / n1), SIGMA_FLOOR)
        s2 = max(math.sqrt(float(r2 @ (x - mu2) ** 2) / n2), SIGMA_FLOOR)
        w1 = min(max(n1 / n, 1e-12), 1.0 - 1e-12)

        new_ll = _log_likelihood(x, w1, mu1, s1, mu2, s2)
        history.append(new_ll)
        improvement = new_ll - ll
        ll = new_ll
        if improvement < tol:
            break

    if mu1 > mu2:
        mu1, mu2, s1, s2, w1 = mu2, mu1, s2, s1, 1.0 - w1

    fit = MixtureFit(
        mu1=mu1, sigma1=s1, mu2=mu2, sigma2=s2, weight1=w1,
        log_likelihood=ll, iterations=iterations, ll_history=history
    )
    fit.s_star = intersection_threshold(fit, weighted=weighted_intersection)

    logger.info(f"[GMM] mu=({mu1:.4f}, {mu2:.4f}) sigma=({s1:.4f}, {s2:.4f}) "
                f"w1={w1:.3f} iters={iterations} s*={fit.s_star:.4f}")
    return fit


def intersection_threshold(fit: MixtureFit, weighted: bool = False) -> float:
    """
    两分量密度相等处的阈值

    默认比较不带权的分量密度；weighted=True 时比较 w·N。
    方程整理为 a·x² + b·x + c = 0，取落在 (mu1, mu2) 内的根；
    等方差且不带权时直接返回 (mu1+mu2)/2。

    Returns:
        阈值；无根落在区间内时回退到中点并记录警告
    """
    mu1, s1, mu2, s2 = fit.mu1, fit.sigma1, fit.mu2, fit.sigma2
    midpoint = (mu1 + mu2) / 2.0
    log_ratio = math.log(fit.weight1) - math.log(fit.weight2) if weighted else 0.0

    a = 1.0 / (2.0 * s1 * s1) - 1.0 / (2.0 * s2 * s2)
    b = mu2 / (s2 * s2) - mu1 / (s1 * s1)
    c = mu1 * mu1 / (2.0 * s1 * s1) - mu2 * mu2 / (2.0 * s2 * s2) + math.log(s1 / s2) - log_ratio

    roots = []
    if s1 == s2:
        if not weighted:
            return midpoint
        if b != 0.0:
            roots.append(-c / b)
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            # 数值稳定的求根公式
            q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
            if q != 0.0:
                roots.extend([q / a, c / q])
            else:
                roots.append(-b / (2.0 * a))

    inside = [r for r in roots if mu1 < r < mu2]
    if not inside:
        logger.warning(f"[GMM] No density intersection in ({mu1:.4f}, {mu2:.4f}), "
                       f"falling back to midpoint {midpoint:.4f}")
        return midpoint
    return min(inside, key=lambda r: abs(r - midpoint))
