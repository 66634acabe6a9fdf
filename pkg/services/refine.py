#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
相似度修正服务
1. 阈值策略：负样本相似度高于 s* 或高于本组正样本 → 候选
2. 结构策略：与本组正样本代码的树编辑距离比值 < ratio_max → 候选
3. 判定器确认候选代码也满足 docstring 后，sim_train ← sim × (1 + Δs)
"""

import copy
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from core.config import RefineConfig
from core.errors import BackendError, CorpusError, RefineError
from core.models import AstTree, MixtureFit, PairRecord, Refinement, SOURCE_EXTENSIONS, group_records
from services.annotator import SimilarityAnnotator
from services.ast_provider import get_ast_provider
from services.gmm import fit_gmm_1d
from services.judge import PreferenceJudge
from services.synth import annotate_pairs
from services.tree_distance import label_lower_bound, tree_edit_distance


logger = logging.getLogger(__name__)

# 阈值策略选中的负样本超过该比例时告警
SATURATION_FRACTION = 0.9


# ============================================================================
# 候选选择
# ============================================================================

def _positive_sims(records: List[PairRecord]) -> Dict[str, float]:
    return {r.group_id: r.sim_annotated for r in records if r.is_positive}


def select_threshold_candidates(records: List[PairRecord], s_star: float) -> List[str]:
    """
    阈值策略

    选出 sim_annotated > s_star 或 > 本组正样本 sim_annotated 的负样本，
    并把它们的 refinement 标记为 threshold_selected（原地修改）

    Returns:
        被选中的 pair_id 列表（保持输入顺序）
    """
    positive = _positive_sims(records)
    selected = []
    for record in records:
        if record.is_positive:
            continue
        bound = positive.get(record.group_id, math.inf)
        if record.sim_annotated > s_star or record.sim_annotated > bound:
            record.refinement = Refinement.THRESHOLD_SELECTED
            selected.append(record.pair_id)
    return selected


def language_of(func_id: str) -> str:
    """由 func_id 中的文件扩展名推断语言"""
    path = func_id.rsplit('#', 1)[0]
    return SOURCE_EXTENSIONS.get(Path(path).suffix.lower(), 'unknown')


def parse_asts(code_texts: Dict[str, str], ast_backend: str = 'nesting') -> Dict[str, Optional[AstTree]]:
    """
    解析每段代码的语法树

    Returns:
        func_id → AstTree；无法解析的为 None（已记录日志）
    """
    asts: Dict[str, Optional[AstTree]] = {}
    for func_id in sorted(code_texts):
        provider = get_ast_provider(ast_backend, language_of(func_id))
        try:
            asts[func_id] = provider.parse(code_texts[func_id])
        except CorpusError as e:
            logger.warning(f"[Refine] Cannot parse {func_id}: {e}")
            asts[func_id] = None
    return asts


@dataclass
class AstSelection:
    """结构策略的统计"""
    selected: List[str] = field(default_factory=list)
    skipped: int = 0
    pruned: int = 0
    compared: int = 0


def select_ast_candidates(
    records: List[PairRecord],
    asts: Dict[str, Optional[AstTree]],
    ratio_max: float,
    prune: bool = True,
    stats: Optional[AstSelection] = None
) -> List[str]:
    """
    结构策略

    TED(候选, 正样本) / (nodes(候选) + nodes(正样本)) < ratio_max 的负样本被选中。
    已被阈值策略标记的记录保留 threshold_selected，其余标记为 ast_selected。
    prune=True 时先用标签多重集下界排除不可能入选的对，结果与不剪枝一致。

    Returns:
        被选中的 pair_id 列表
    """
    stats = stats if stats is not None else AstSelection()
    positive_code = {r.group_id: r.code_id for r in records if r.is_positive}
    cache: Dict[Tuple[str, str], float] = {}

    for record in records:
        if record.is_positive:
            continue
        pos_id = positive_code.get(record.group_id)
        a = asts.get(record.code_id)
        b = asts.get(pos_id) if pos_id else None
        if a is None or b is None:
            stats.skipped += 1
            logger.debug(f"[Refine] AST strategy skips {record.pair_id}: unparseable code")
            continue

        key = (record.code_id, pos_id)
        if key not in cache:
            total = float(a.node_count + b.node_count)
            if prune and label_lower_bound(a, b) >= ratio_max * total:
                stats.pruned += 1
                cache[key] = math.inf
            else:
                stats.compared += 1
                cache[key] = tree_edit_distance(a, b) / total

        if cache[key] < ratio_max:
            if record.refinement != Refinement.THRESHOLD_SELECTED:
                record.refinement = Refinement.AST_SELECTED
            stats.selected.append(record.pair_id)

    if stats.skipped:
        logger.warning(f"[Refine] AST strategy skipped {stats.skipped} pairs with unparseable code")
    return stats.selected


# ============================================================================
# 判定与调整
# ============================================================================

def adjusted_similarity(sim: float, delta_s: float, cap: float = 0.999) -> float:
    """sim × (1 + Δs)，不超过 cap（sim 本身已超过 cap 时保持不变）"""
    return min(sim * (1.0 + delta_s), max(cap, sim))


def adjudicate_and_adjust(
    candidates: Sequence[str],
    records: List[PairRecord],
    judge: PreferenceJudge,
    delta_s: float,
    query_texts: Dict[str, str],
    code_texts: Dict[str, str],
    cap: float = 0.999,
    max_in_flight: int = 1,
    stats: Optional[Dict[str, int]] = None
) -> List[PairRecord]:
    """
    对候选逐一判定并调整相似度

    判定接受：sim_train ← min(sim_annotated × (1+Δs), cap)，refinement = adjusted；
    拒绝或判定失败：保持不变。角色永不改变。

    Args:
        candidates: 候选 pair_id
        records: 全部样本对
        judge: 判定器
        delta_s: 调整幅度（> 0）
        query_texts: query_id → docstring
        code_texts: func_id → 源码
        cap: 调整上限
        max_in_flight: 并发判定数
        stats: 可选，写入 adjudicated / accepted / failed 计数

    Returns:
        新的记录列表（与输入同序）
    """
    if delta_s <= 0:
        raise RefineError(f"delta_s must be > 0, got {delta_s}", code='invalid_delta_s')

    out = [copy.copy(r) for r in records]
    by_id = {r.pair_id: r for r in out}
    positive_code = {r.group_id: r.code_id for r in out if r.is_positive}

    todo = []
    seen = set()
    for pair_id in candidates:
        record = by_id.get(pair_id)
        if record is None or record.is_positive or pair_id in seen:
            continue
        seen.add(pair_id)
        todo.append(record)

    def work(record: PairRecord) -> Optional[bool]:
        try:
            return judge.candidate_satisfies(
                query_texts[record.query_id],
                code_texts[positive_code[record.group_id]],
                code_texts[record.code_id]
            )
        except BackendError as e:
            logger.warning(f"[Refine] Adjudication failed for {record.pair_id}: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        verdicts = list(pool.map(work, todo))

    accepted = failed = 0
    for record, verdict in zip(todo, verdicts):
        if verdict is None:
            failed += 1
        elif verdict:
            accepted += 1
            adjusted = adjusted_similarity(record.sim_annotated, delta_s, cap)
            # 已在上限的相似度不再标记为 adjusted
            if adjusted > record.sim_annotated:
                record.sim_train = adjusted
                record.refinement = Refinement.ADJUSTED

    if stats is not None:
        stats.update({'adjudicated': len(todo), 'accepted': accepted, 'failed': failed})
    logger.info(f"[Refine] Adjudicated {len(todo)} candidates: {accepted} accepted, {failed} failed")
    return out


# ============================================================================
# 标注器一致性
# ============================================================================

def _dcg(gains: Sequence[float]) -> float:
    return sum(g / math.log2(rank + 1) for rank, g in enumerate(gains, start=1))


def annotator_consistency_ndcg(groups_by_a: Sequence[Sequence[float]], groups_by_b: Sequence[Sequence[float]]) -> float:
    """
    两个标注器的组内排序一致性

    每组：增益 = A 的相似度，排序依据 B 降序（同分按位置），理想排序依据 A 降序。
    DCG = Σ gain / log2(rank + 1)。少于 2 个样本或理想 DCG 为 0 的组不计入。

    Returns:
        各组 nDCG 的均值
    """
    if len(groups_by_a) != len(groups_by_b):
        raise RefineError("annotators labeled different numbers of groups", code='mismatched_groups')

    scores = []
    for gains, order_by in zip(groups_by_a, groups_by_b):
        if len(gains) != len(order_by):
            raise RefineError("annotators labeled different pair sets", code='mismatched_groups')
        if len(gains) < 2:
            continue
        ranking = sorted(range(len(gains)), key=lambda i: (-order_by[i], i))
        ideal = _dcg(sorted(gains, reverse=True))
        if ideal <= 0:
            continue
        scores.append(_dcg([gains[i] for i in ranking]) / ideal)

    if not scores:
        raise RefineError("no group with at least two pairs", code='no_groups')
    return sum(scores) / len(scores)


def compare_annotators(
    records: List[PairRecord],
    ann_a: SimilarityAnnotator,
    ann_b: SimilarityAnnotator,
    query_texts: Dict[str, str],
    code_texts: Dict[str, str]
) -> float:
    """用两个标注器分别标注同一批样本对，返回组内 nDCG 一致性"""
    by_a = group_records(annotate_pairs(records, ann_a, query_texts, code_texts))
    by_b = group_records(annotate_pairs(records, ann_b, query_texts, code_texts))
    common = [gid for gid in by_a if gid in by_b]

    groups_a, groups_b = [], []
    for gid in common:
        sims_b = {r.pair_id: r.sim_annotated for r in by_b[gid]}
        members = [r for r in by_a[gid] if r.pair_id in sims_b]
        groups_a.append([r.sim_annotated for r in members])
        groups_b.append([sims_b[r.pair_id] for r in members])

    score = annotator_consistency_ndcg(groups_a, groups_b)
    logger.info(f"[Refine] nDCG consistency {ann_a.name} vs {ann_b.name}: {score:.4f}")
    return score


# ============================================================================
# 修正流程
# ============================================================================

def refine_pairs(
    records: List[PairRecord],
    cfg: RefineConfig,
    judge: PreferenceJudge,
    query_texts: Dict[str, str],
    code_texts: Dict[str, str],
    asts: Optional[Dict[str, Optional[AstTree]]] = None,
    ast_backend: str = 'nesting',
    max_in_flight: int = 1,
    seed: Optional[int] = None
) -> Tuple[List[PairRecord], Dict]:
    """
    完整修正流程：GMM → 阈值 / 结构候选 → 判定调整

    Returns:
        (修正后的记录, 报告字典)
    """
    work = [copy.copy(r) for r in records]
    for record in work:
        record.refinement = Refinement.NONE
        record.sim_train = 1.0 if record.is_positive else record.sim_annotated

    # GMM 拟合全部样本对的标注相似度
    fit: Optional[MixtureFit] = None
    try:
        fit = fit_gmm_1d([r.sim_annotated for r in work], cfg.gmm_max_iter, cfg.gmm_tol, seed,
                         weighted_intersection=cfg.weighted_intersection)
    except RefineError as e:
        if cfg.threshold_source == 'gmm' and 'threshold' in cfg.strategies:
            raise
        logger.warning(f"[Refine] GMM fit skipped: {e}")

    s_star = fit.s_star if cfg.threshold_source == 'gmm' and fit is not None else cfg.s_star
    logger.info(f"[Refine] s*={s_star:.4f} (source={cfg.threshold_source}"
                f"{', gmm=%.4f' % fit.s_star if fit else ''})")

    threshold_ids: List[str] = []
    if 'threshold' in cfg.strategies:
        threshold_ids = select_threshold_candidates(work, s_star)

    n_neg = sum(1 for r in work if not r.is_positive)
    threshold_saturated = bool(n_neg) and len(threshold_ids) > SATURATION_FRACTION * n_neg
    if threshold_saturated:
        logger.warning(f"[Refine] Threshold s*={s_star:.4f} selects {len(threshold_ids)}/{n_neg} negatives; "
                       f"annotated similarities sit above it almost everywhere")

    ast_stats = AstSelection()
    if 'ast' in cfg.strategies:
        if asts is None:
            needed = {r.code_id: code_texts[r.code_id] for r in work}
            asts = parse_asts(needed, ast_backend)
        select_ast_candidates(work, asts, cfg.ratio_max, stats=ast_stats)

    both = sorted(set(threshold_ids) & set(ast_stats.selected))
    candidates = list(dict.fromkeys(threshold_ids + ast_stats.selected))

    adjudication = {'adjudicated': 0, 'accepted': 0, 'failed': 0}
    refined = adjudicate_and_adjust(candidates, work, judge, cfg.delta_s, query_texts, code_texts,
                                    cap=cfg.adjust_cap, max_in_flight=max_in_flight, stats=adjudication)

    total = len(work)
    report = {
        's_star': s_star,
        's_star_source': cfg.threshold_source,
        'gmm_s_star': fit.s_star if fit else None,
        'mixture': fit.to_dict() if fit else None,
        'delta_s': cfg.delta_s,
        'ratio_max': cfg.ratio_max,
        'strategies': list(cfg.strategies),
        'total_pairs': total,
        'negatives': n_neg,
        'threshold_selected': len(threshold_ids),
        'ast_selected': len(ast_stats.selected),
        'both_selected': len(both),
        'both_selected_ids': both,
        'candidates': len(candidates),
        'threshold_fraction': len(threshold_ids) / total if total else 0.0,
        'threshold_saturated': threshold_saturated,
        'ast_fraction': len(ast_stats.selected) / total if total else 0.0,
        'ast_skipped': ast_stats.skipped,
        'ast_pruned': ast_stats.pruned,
        'ast_compared': ast_stats.compared,
        'adjudicated': adjudication['adjudicated'],
        'accepted': adjudication['accepted'],
        'failed': adjudication['failed'],
        'adjusted': sum(1 for r in refined if r.refinement == Refinement.ADJUSTED)
    }
    logger.info(f"[Refine] Selected threshold={report['threshold_fraction']:.2%} "
                f"ast={report['ast_fraction']:.2%} of {total} pairs, adjusted {report['adjusted']}")
    return refined, report
