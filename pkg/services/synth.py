#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
样本对合成服务
正样本：docstring ↔ 自身代码；负样本：同仓库内随机抽取 K 个函数
每个 (query, code) 对由标注器给出相似度标签
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

import numpy as np

from core.errors import BackendError, CorpusError
from core.models import DocQuery, FunctionUnit, PairRecord, PairRole, Refinement, group_records
from services.annotator import SimilarityAnnotator, cosine_to_label
from utils.text_utils import derive_seed, stable_id


logger = logging.getLogger(__name__)

# 每次标注请求的文本数
ANNOTATE_CHUNK = 256


def group_id_for(query_id: str) -> str:
    return f"g:{query_id}"


def pair_id_for(query_id: str, code_id: str) -> str:
    return stable_id('pair', query_id, code_id)


# ============================================================================
# 负样本挖掘
# ============================================================================

def mine_negatives(query: DocQuery, repo_units: List[FunctionUnit], k: int, seed: int) -> List[str]:
    """
    同仓库内无放回均匀抽取负样本

    Args:
        query: 查询（其 func_id 为正样本）
        repo_units: 同一仓库的全部函数
        k: 负样本数上限
        seed: 根种子；实际种子 = derive_seed(seed, 'mine', query_id)

    Returns:
        min(k, |repo| - 1) 个 func_id
    """
    if k < 1:
        raise CorpusError("k must be >= 1")
    repo_ids = {u.repo_id for u in repo_units}
    if len(repo_ids) > 1:
        raise CorpusError(f"mine_negatives expects one repository, got {sorted(repo_ids)}")

    candidates = sorted(u.func_id for u in repo_units if u.func_id != query.func_id)
    if not candidates:
        logger.info(f"[Synth] No negatives for {query.query_id}: single-function repository")
        return []

    rng = np.random.default_rng(derive_seed(seed, 'mine', query.query_id))
    picked = rng.choice(len(candidates), size=min(k, len(candidates)), replace=False)
    return [candidates[int(i)] for i in picked]


def mine_pairs(queries: List[DocQuery], units: List[FunctionUnit], k: int, seed: int) -> List[PairRecord]:
    """
    为每个查询构造一组未标注样本对（正样本在前）

    查询的源函数不存在时跳过该查询
    """
    by_id = {u.func_id: u for u in units}
    by_repo: Dict[str, List[FunctionUnit]] = {}
    for unit in units:
        by_repo.setdefault(unit.repo_id, []).append(unit)

    records: List[PairRecord] = []
    empty_groups = 0
    for query in queries:
        origin = by_id.get(query.func_id)
        if origin is None:
            logger.warning(f"[Synth] Skipping {query.query_id}: origin {query.func_id} not found")
            continue

        gid = group_id_for(query.query_id)
        records.append(PairRecord(
            pair_id=pair_id_for(query.query_id, origin.func_id),
            group_id=gid,
            query_id=query.query_id,
            code_id=origin.func_id,
            role=PairRole.POSITIVE,
            sim_train=1.0
        ))

        negatives = mine_negatives(query, by_repo[origin.repo_id], k, seed)
        if not negatives:
            empty_groups += 1
        for code_id in negatives:
            records.append(PairRecord(
                pair_id=pair_id_for(query.query_id, code_id),
                group_id=gid,
                query_id=query.query_id,
                code_id=code_id,
                role=PairRole.NEGATIVE
            ))

    n_groups = len({r.group_id for r in records})
    if n_groups:
        logger.info(f"[Synth] {n_groups} groups, {len(records) - n_groups} negatives "
                    f"({(len(records) - n_groups) / n_groups:.2f} per group), "
                    f"{empty_groups} groups without negatives")
    return records


# ============================================================================
# 相似度标注
# ============================================================================

def annotate_pairs(
    pairs: List[PairRecord],
    ann: SimilarityAnnotator,
    query_texts: Dict[str, str],
    code_texts: Dict[str, str],
    max_in_flight: int = 1
) -> List[PairRecord]:
    """
    为全部样本对填写 sim_annotated / sim_train

    正样本 sim_train = 1.0，负样本 sim_train = sim_annotated。
    文本去重后分块编码；某块编码失败时引用它的样本对被丢弃，
    正样本被丢弃的组整体丢弃（保证每组恰有一个正样本）。

    Args:
        pairs: 样本对
        ann: 标注器
        query_texts: query_id → docstring
        code_texts: func_id → 源码
        max_in_flight: 并发请求上限

    Returns:
        标注后的新 PairRecord 列表（保持输入顺序）
    """
    keys = []
    seen = set()
    for pair in pairs:
        for key in (('q', pair.query_id), ('c', pair.code_id)):
            if key not in seen:
                seen.add(key)
                keys.append(key)

    def text_of(key) -> str:
        kind, ident = key
        table = query_texts if kind == 'q' else code_texts
        if ident not in table:
            raise CorpusError(f"no text for {'query' if kind == 'q' else 'code'} {ident}")
        return table[ident]

    texts = [text_of(key) for key in keys]
    chunks = [list(range(i, min(i + ANNOTATE_CHUNK, len(keys)))) for i in range(0, len(keys), ANNOTATE_CHUNK)]

    def work(chunk: List[int]) -> Optional[np.ndarray]:
        try:
            return ann.embed([texts[i] for i in chunk])
        except BackendError as e:
            logger.warning(f"[Synth] Annotation of {len(chunk)} texts failed: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        results = list(pool.map(work, chunks))

    vectors: Dict[tuple, np.ndarray] = {}
    for chunk, result in zip(chunks, results):
        if result is None:
            continue
        for i, row in zip(chunk, result):
            vectors[keys[i]] = row

    annotated: List[PairRecord] = []
    dropped = 0
    for pair in pairs:
        q = vectors.get(('q', pair.query_id))
        c = vectors.get(('c', pair.code_id))
        if q is None or c is None:
            dropped += 1
            continue
        sim = cosine_to_label(float(q @ c))
        annotated.append(PairRecord(
            pair_id=pair.pair_id,
            group_id=pair.group_id,
            query_id=pair.query_id,
            code_id=pair.code_id,
            role=pair.role,
            sim_annotated=sim,
            sim_train=1.0 if pair.is_positive else sim,
            refinement=Refinement.NONE
        ))

    # 丢失正样本的组整体丢弃
    groups = group_records(annotated)
    orphan = {gid for gid, members in groups.items() if not members[0].is_positive}
    if orphan:
        before = len(annotated)
        annotated = [r for r in annotated if r.group_id not in orphan]
        dropped += before - len(annotated)
        logger.warning(f"[Synth] Dropped {len(orphan)} groups whose positive could not be annotated")

    if dropped:
        logger.warning(f"[Synth] Dropped {dropped}/{len(pairs)} pairs after annotation failures")
    return annotated


def build_groups(
    queries: List[DocQuery],
    units: List[FunctionUnit],
    k: int,
    seed: int,
    ann: SimilarityAnnotator,
    max_in_flight: int = 1
) -> List[PairRecord]:
    """
    挖掘并标注：每个查询 1 个正样本 + 至多 K 个负样本，共享同一个 group_id

    Returns:
        共 Σ(1 + min(K, |repo_q| - 1)) 条记录
    """
    pairs = mine_pairs(queries, units, k, seed)
    query_texts = {q.query_id: q.text for q in queries}
    code_texts = {u.func_id: u.source for u in units}
    return annotate_pairs(pairs, ann, query_texts, code_texts, max_in_flight)
