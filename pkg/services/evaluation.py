#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
检索评测服务
排序（余弦降序，同分按 code_id 字典序）、MRR@k、MAP、困难子集、评测集构建与读写
"""

import logging
from typing import Dict, Iterable, List, Optional, Sequence, Set

import numpy as np

from core.errors import EncoderError, EvalError
from core.models import DocQuery, EvalCandidate, EvalDataset, EvalQuery, EvalReport, FunctionUnit


logger = logging.getLogger(__name__)


# ============================================================================
# 排序
# ============================================================================

def rank_candidates(embedder, ds: EvalDataset) -> Dict[str, List[str]]:
    """
    为每个查询对全部候选排序

    Args:
        embedder: 任何提供 embed(texts) -> 单位向量矩阵 的对象（编码器或标注器）
        ds: 评测集

    Returns:
        query_id → 排好序的 code_id 列表（已去掉该查询的 exclude_ids）
    """
    if not ds.candidates:
        raise EvalError("evaluation dataset has no candidates", code='empty_candidates')

    try:
        cand_vecs = embedder.embed([c.text for c in ds.candidates])
        query_vecs = embedder.embed([q.text for q in ds.queries])
    except EncoderError as e:
        raise EvalError(f"cannot encode evaluation texts: {e}", code=e.code)

    code_ids = np.array([c.code_id for c in ds.candidates])
    scores = query_vecs @ cand_vecs.T

    ranked: Dict[str, List[str]] = {}
    for row, query in enumerate(ds.queries):
        # lexsort 以最后一个键为主键
        order = np.lexsort((code_ids, -scores[row]))
        excluded = set(query.exclude_ids)
        ranked[query.query_id] = [str(code_ids[i]) for i in order if code_ids[i] not in excluded]
    return ranked


def first_target_rank(ranked: Sequence[str], targets: Iterable[str]) -> Optional[int]:
    """第一个目标出现的名次（从 1 开始），不存在时为 None"""
    targets = set(targets)
    for position, code_id in enumerate(ranked, start=1):
        if code_id in targets:
            return position
    return None


# ============================================================================
# 指标
# ============================================================================

def mrr_at_k(ranks: Sequence[Optional[int]], k: int) -> float:
    """
    MRR@k：rank ≤ k 时贡献 1/rank，否则 0

    Raises:
        EvalError: 没有查询
    """
    if k < 1:
        raise EvalError(f"k must be >= 1, got {k}")
    if len(ranks) == 0:
        raise EvalError("no queries to score", code='no_queries')
    total = 0.0
    for rank in ranks:
        if rank is not None and rank <= k:
            total += 1.0 / rank
    return total / len(ranks)


def average_precision(ranked: Sequence[str], relevant: Set[str]) -> float:
    """命中处的精确率之和 / 相关集合大小"""
    if not relevant:
        raise EvalError("relevance set is empty", code='empty_relevance')
    hits = 0
    total = 0.0
    for position, code_id in enumerate(ranked, start=1):
        if code_id in relevant:
            hits += 1
            total += hits / position
    return total / len(relevant)


def map_metric(ranked_lists: Dict[str, Sequence[str]], relevance: Dict[str, Set[str]]) -> float:
    """全部查询的平均精确率均值"""
    if not relevance:
        raise EvalError("no queries to score", code='no_queries')
    scores = [average_precision(ranked_lists.get(qid, []), set(rel)) for qid, rel in relevance.items()]
    return float(sum(scores) / len(scores))


def evaluate(embedder, ds: EvalDataset, k_cutoff: int = 1000, model_name: str = '') -> EvalReport:
    """
    评测一个模型

    Returns:
        EvalReport（per_query_rank 中超过 k_cutoff 的名次记为 None）
    """
    ds.validate()
    ranked = rank_candidates(embedder, ds)

    per_query_rank: Dict[str, Optional[int]] = {}
    relevance: Dict[str, Set[str]] = {}
    for query in ds.queries:
        rank = first_target_rank(ranked[query.query_id], query.target_ids)
        per_query_rank[query.query_id] = rank if rank is not None and rank <= k_cutoff else None
        relevance[query.query_id] = set(query.target_ids)

    report = EvalReport(
        per_query_rank=per_query_rank,
        mrr=mrr_at_k(list(per_query_rank.values()), k_cutoff),
        map=map_metric(ranked, relevance),
        k_cutoff=k_cutoff,
        model_name=model_name,
        task=ds.task
    )
    logger.info(f"[Eval] {model_name or 'model'} on {ds.task}: "
                f"MRR@{k_cutoff}={report.mrr:.4f} MAP={report.map:.4f} ({len(ds.queries)} queries)")
    return report


def hard_subset(reports: Sequence[EvalReport]) -> List[str]:
    """
    所有模型都没有把目标排在第一的查询

    Raises:
        EvalError: 报告少于 2 个或查询集合不一致
    """
    if len(reports) < 2:
        raise EvalError("hard subset needs at least two reports", code='too_few_reports')
    query_ids = set(reports[0].per_query_rank)
    for report in reports[1:]:
        if set(report.per_query_rank) != query_ids:
            raise EvalError("reports cover different query sets", code='mismatched_queries')

    hard = []
    for qid in sorted(query_ids):
        ranks = [r.per_query_rank[qid] for r in reports]
        if all(rank is None or rank > 1 for rank in ranks):
            hard.append(qid)
    return hard


# ============================================================================
# 评测集
# ============================================================================

def build_nl2code_dataset(queries: List[DocQuery], units: List[FunctionUnit],
                          query_ids: Optional[Set[str]] = None) -> EvalDataset:
    """
    文档 → 代码：每个查询的唯一目标是其源函数，候选为全部函数

    Args:
        query_ids: 只使用这些查询（留出集），None 表示全部
    """
    candidates = [EvalCandidate(u.func_id, u.source) for u in sorted(units, key=lambda u: u.func_id)]
    known = {c.code_id for c in candidates}
    eval_queries = [
        EvalQuery(q.query_id, q.text, [q.func_id])
        for q in sorted(queries, key=lambda q: q.query_id)
        if (query_ids is None or q.query_id in query_ids) and q.func_id in known
    ]
    return EvalDataset(queries=eval_queries, candidates=candidates, task='nl2code')


def build_code2code_dataset(units: List[FunctionUnit], func_ids: Optional[Set[str]] = None) -> EvalDataset:
    """
    代码 → 代码：相关集合为其他仓库中的同名函数，查询自身不参与排序

    Args:
        func_ids: 只以这些函数作为查询，None 表示全部
    """
    by_name: Dict[str, List[FunctionUnit]] = {}
    for unit in units:
        by_name.setdefault(unit.name, []).append(unit)

    candidates = [EvalCandidate(u.func_id, u.source) for u in sorted(units, key=lambda u: u.func_id)]
    eval_queries = []
    for unit in sorted(units, key=lambda u: u.func_id):
        if func_ids is not None and unit.func_id not in func_ids:
            continue
        relevant = sorted(o.func_id for o in by_name[unit.name] if o.repo_id != unit.repo_id)
        if not relevant:
            continue
        eval_queries.append(EvalQuery(f"c2c:{unit.func_id}", unit.source, relevant, exclude_ids=[unit.func_id]))
    return EvalDataset(queries=eval_queries, candidates=candidates, task='code2code')


def dataset_to_records(ds: EvalDataset) -> List[Dict]:
    """通用 JSONL 行：{"kind": "query"|"candidate", ...}"""
    rows = [{'kind': 'query', **q.to_dict()} for q in ds.queries]
    rows += [{'kind': 'candidate', **c.to_dict()} for c in ds.candidates]
    return rows


def dataset_from_records(rows: List[Dict], task: str = 'nl2code') -> EvalDataset:
    ds = EvalDataset(task=task)
    for row in rows:
        kind = row.get('kind')
        body = {k: v for k, v in row.items() if k != 'kind'}
        if kind == 'query':
            ds.queries.append(EvalQuery.from_dict(body))
        elif kind == 'candidate':
            ds.candidates.append(EvalCandidate.from_dict(body))
        else:
            raise EvalError(f"unknown dataset row kind {kind!r}", code='bad_dataset')
    ds.validate()
    return ds
