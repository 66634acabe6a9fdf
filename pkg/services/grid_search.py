#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验编排
- Δs 网格搜索：每个取值跑一遍 修正 → 训练 → 留出集评测
- 消融：训练目标 × 修正策略 × 种子
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import pandas as pd

from core.config import PipelineConfig
from core.errors import PipelineError
from core.models import AstTree, DocQuery, FunctionUnit, Objective, PairRecord
from services.annotator import HashedBagAnnotator, SimilarityAnnotator
from services.encoder import EncoderModel
from services.evaluation import build_nl2code_dataset, evaluate
from services.judge import PreferenceJudge, get_judge
from services.refine import parse_asts, refine_pairs
from services.synth import build_groups
from services.trainer import split_holdout, train


logger = logging.getLogger(__name__)

REFINEMENT_MODES: Dict[str, List[str]] = {
    'none': [],
    'threshold': ['threshold'],
    'ast': ['ast'],
    'both': ['threshold', 'ast']
}
OBJECTIVES = ('infonce', 'cosent', 'hybrid')


@dataclass
class ExperimentData:
    """一次实验共享的输入（标注好的样本对与留出划分）"""
    queries: List[DocQuery]
    units: List[FunctionUnit]
    pairs: List[PairRecord]
    train_ids: List[str]
    held_ids: List[str]
    asts: Optional[Dict[str, Optional[AstTree]]] = None
    query_texts: Dict[str, str] = field(default_factory=dict)
    code_texts: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.query_texts:
            self.query_texts = {q.query_id: q.text for q in self.queries}
        if not self.code_texts:
            self.code_texts = {u.func_id: u.source for u in self.units}

    @classmethod
    def prepare(cls, queries: List[DocQuery], units: List[FunctionUnit], pairs: List[PairRecord],
                cfg: PipelineConfig, with_asts: bool = True) -> 'ExperimentData':
        train_ids, held_ids = split_holdout([q.query_id for q in queries], cfg.eval.holdout_fraction, cfg.seed)
        data = cls(queries, units, pairs, train_ids, held_ids)
        if with_asts:
            data.asts = parse_asts(data.code_texts, cfg.corpus.ast_backend)
        return data


def run_experiment(data: ExperimentData, cfg: PipelineConfig, judge: Optional[PreferenceJudge] = None) -> Dict:
    """
    修正 → 训练 → 留出集评测

    Returns:
        {'mrr', 'map', 'adjusted', 'final_loss'}
    """
    judge = judge or get_judge(cfg.backends.judge, cfg.refine.judge_fraction)
    refined, report = refine_pairs(data.pairs, cfg.refine, judge, data.query_texts, data.code_texts,
                                   asts=data.asts, ast_backend=cfg.corpus.ast_backend, seed=cfg.seed)

    train_set = set(data.train_ids)
    train_records = [r for r in refined if r.query_id in train_set]
    model = EncoderModel.from_config(cfg.train)
    model, curve = train(train_records, model, cfg.train, data.query_texts, data.code_texts)

    ds = build_nl2code_dataset(data.queries, data.units, set(data.held_ids))
    result = evaluate(model, ds, cfg.eval.k_cutoff, model_name='trained')
    return {
        'mrr': result.mrr,
        'map': result.map,
        'adjusted': report['adjusted'],
        'final_loss': float(curve['L'].iloc[-1]) if len(curve) else float('nan')
    }


def grid_search_delta_s(values: Sequence[float], cfg: PipelineConfig, data: ExperimentData) -> pd.DataFrame:
    """
    Δs 网格搜索（共享同一个种子）

    Returns:
        DataFrame[delta_s, mrr, mrr_percent, status, is_best]；失败的取值 status=failed
    """
    if not values:
        raise PipelineError("grid needs at least one value", code='empty_grid')

    rows = []
    for value in values:
        run_cfg = cfg.copy()
        run_cfg.refine.delta_s = float(value)
        run_cfg.sync()
        try:
            result = run_experiment(data, run_cfg)
            rows.append({'delta_s': float(value), 'mrr': result['mrr'], 'status': 'ok'})
            logger.info(f"[Grid] delta_s={value}: MRR={result['mrr']:.4f}")
        except PipelineError as e:
            logger.error(f"[Grid] delta_s={value} failed: {e}")
            rows.append({'delta_s': float(value), 'mrr': float('nan'), 'status': 'failed'})

    table = pd.DataFrame(rows, columns=['delta_s', 'mrr', 'status'])
    table['mrr_percent'] = (table['mrr'] * 100).round(2)
    ok = table[table['status'] == 'ok']
    table['is_best'] = False
    if len(ok):
        # 同分取较小的 Δs
        best = ok.sort_values(['mrr', 'delta_s'], ascending=[False, True]).index[0]
        table.loc[best, 'is_best'] = True
        logger.info(f"[Grid] argmax delta_s={table.loc[best, 'delta_s']}")
    return table[['delta_s', 'mrr', 'mrr_percent', 'status', 'is_best']]


def run_ablation(
    cfg: PipelineConfig,
    queries: List[DocQuery],
    units: List[FunctionUnit],
    seeds: Sequence[int],
    objectives: Sequence[str] = OBJECTIVES,
    refinements: Sequence[str] = tuple(REFINEMENT_MODES),
    annotator: Optional[SimilarityAnnotator] = None
) -> pd.DataFrame:
    """
    消融实验：每个种子重新挖掘 / 标注 / 划分，再对每个 (目标, 修正) 组合训练与评测

    每次训练 eval.ablation_epochs 轮；同一种子下各组合共享初始化与批次顺序

    Returns:
        逐次结果 DataFrame[seed, objective, refinement, mrr]
    """
    annotator = annotator or HashedBagAnnotator(cfg.synth.hash_dim)
    rows = []
    for seed in seeds:
        seed_cfg = cfg.copy()
        seed_cfg.seed = int(seed)
        seed_cfg.sync()
        pairs = build_groups(queries, units, seed_cfg.synth.k, seed_cfg.seed, annotator)
        data = ExperimentData.prepare(queries, units, pairs, seed_cfg,
                                      with_asts=any('ast' in REFINEMENT_MODES[r] for r in refinements))

        for refinement in refinements:
            for objective in objectives:
                run_cfg = seed_cfg.copy()
                run_cfg.refine.strategies = list(REFINEMENT_MODES[refinement])
                run_cfg.train.objective = Objective(objective)
                run_cfg.train.w1, run_cfg.train.w2 = cfg.train.w1, cfg.train.w2
                run_cfg.train.epochs = cfg.eval.ablation_epochs
                run_cfg.train.normalize()
                try:
                    result = run_experiment(data, run_cfg)
                    mrr = result['mrr']
                except PipelineError as e:
                    logger.error(f"[Ablation] seed={seed} {objective}/{refinement} failed: {e}")
                    mrr = float('nan')
                rows.append({'seed': int(seed), 'objective': objective, 'refinement': refinement, 'mrr': mrr})
                logger.info(f"[Ablation] seed={seed} objective={objective} refinement={refinement} MRR={mrr:.4f}")

    return pd.DataFrame(rows, columns=['seed', 'objective', 'refinement', 'mrr'])


def summarize_ablation(runs: pd.DataFrame) -> pd.DataFrame:
    """按 (目标, 修正) 汇总种子均值"""
    summary = (runs.groupby(['objective', 'refinement'], sort=True)['mrr']
               .agg(['mean', 'std', 'count']).reset_index()
               .rename(columns={'mean': 'mrr_mean', 'std': 'mrr_std', 'count': 'seeds'}))
    summary['mrr_percent'] = (summary['mrr_mean'] * 100).round(2)
    return summary
