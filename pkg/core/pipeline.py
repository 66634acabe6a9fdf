#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
流水线执行器
按阶段顺序执行，每个阶段读取上游产物、原子写出自己的产物并记录清单；
输入与配置哈希均未变化的阶段直接跳过
"""

import os
import time
import logging
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.config import PipelineConfig
from core.errors import EncoderError, MissingInputError, StageLockedError
from core.models import (
    DocQuery, FunctionUnit, PairRecord, StageManifest, StageName, STAGE_ORDER
)
from database.manifest_dao import ManifestDAO
from services.annotator import HashedBagAnnotator, get_annotator
from services.docgen import generate_docstrings, get_docstring_generator
from services.encoder import EncoderModel
from services.evaluation import (
    build_code2code_dataset, build_nl2code_dataset, dataset_to_records, evaluate, hard_subset
)
from services.grid_search import ExperimentData, grid_search_delta_s, run_ablation, summarize_ablation
from services.judge import get_judge
from services.mds import mds_coords, mds_table
from services.refine import compare_annotators, refine_pairs
from services.repo_scanner import scan_corpus
from services.synth import annotate_pairs, mine_pairs
from services.synthetic_corpus import make_synthetic_corpus
from services.trainer import split_holdout, train
from utils.format_utils import format_duration, render_table, summary_table
from utils.io_utils import (
    file_hash, read_json, read_jsonl, tree_hash, write_csv, write_json, write_jsonl
)
from utils.text_utils import derive_seed


logger = logging.getLogger(__name__)

LOCK_FILE = '.pipeline.lock'

# 阶段 → (输入产物, 输出产物)，名称为 PathsConfig 字段；ingest 的输入是语料目录
STAGE_IO: Dict[StageName, Tuple[Tuple[str, ...], Tuple[str, ...]]] = {
    StageName.INGEST: ((), ('functions',)),
    StageName.DOCGEN: (('functions',), ('queries',)),
    StageName.MINE: (('functions', 'queries'), ('pairs_mined',)),
    StageName.ANNOTATE: (('pairs_mined', 'functions', 'queries'), ('pairs',)),
    StageName.REFINE: (('pairs', 'functions', 'queries'), ('pairs_refined', 'refine_report')),
    StageName.TRAIN: (('pairs_refined', 'functions', 'queries'), ('checkpoint', 'loss_curve', 'train_summary')),
    StageName.EVAL: (('checkpoint', 'functions', 'queries'), ('eval_dataset', 'code2code_dataset', 'eval_report')),
    StageName.GRID: (('pairs', 'functions', 'queries'), ('grid',)),
    StageName.MDS: (('checkpoint', 'functions'), ('mds',))
}


def _now() -> str:
    return datetime.now().isoformat(timespec='seconds')


class PipelineRunner:
    """
    流水线执行器（单个工作目录同时只允许一个实例）

    用法：
        runner = PipelineRunner(config)
        runner.run_all()
    """

    def __init__(self, config: PipelineConfig, strict: bool = False, show_progress: bool = False,
                 force_unlock: bool = False):
        """
        Args:
            config: 流水线配置（已应用命令行覆盖）
            strict: 严格模式，跳过前额外校验输出文件哈希
            show_progress: 是否显示进度条
            force_unlock: 启动前删除残留的锁文件
        """
        self.config = config
        self.strict = strict
        self.show_progress = show_progress
        self.force_unlock = force_unlock
        self.workdir = Path(config.paths.workdir)
        self._lock_depth = 0
        self.current_stage: Optional[str] = None

    # ========================================================================
    # 锁与路径
    # ========================================================================

    @property
    def lock_path(self) -> Path:
        return self.workdir / LOCK_FILE

    @property
    def manifest_db(self) -> Path:
        return self.config.paths.resolve('manifest_db')

    def path(self, name: str) -> Path:
        return self.config.paths.resolve(name)

    @contextmanager
    def lock(self):
        """
        工作目录锁（O_EXCL 创建，可重入）

        Raises:
            StageLockedError: 锁文件已存在
        """
        if self._lock_depth == 0:
            self.workdir.mkdir(parents=True, exist_ok=True)
            if self.force_unlock and self.lock_path.exists():
                logger.warning(f"[Pipeline] Removing stale lock {self.lock_path}")
                self.lock_path.unlink()
            try:
                fd = os.open(str(self.lock_path), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                raise StageLockedError(
                    f"{self.lock_path} exists; another pipeline is running (use --force-unlock if stale)"
                )
            with os.fdopen(fd, 'w') as f:
                f.write(f"{os.getpid()}\n")

        self._lock_depth += 1
        try:
            yield
        finally:
            self._lock_depth -= 1
            if self._lock_depth == 0 and self.lock_path.exists():
                self.lock_path.unlink()

    # ========================================================================
    # 阶段调度
    # ========================================================================

    def run_all(self, stages: Sequence[StageName] = STAGE_ORDER) -> List[StageManifest]:
        """按顺序执行全部阶段"""
        with self.lock():
            return [self.run_stage(stage) for stage in stages]

    def run_stage(self, stage) -> StageManifest:
        """
        执行单个阶段

        Args:
            stage: StageName 或阶段名字符串

        Returns:
            StageManifest（skipped=True 表示命中清单而跳过）

        Raises:
            MissingInputError: 上游产物不存在
        """
        stage = StageName(stage)
        self.current_stage = stage.value
        with self.lock():
            inputs, outputs = STAGE_IO[stage]
            input_hashes = self._input_hashes(stage, inputs)
            config_hash = self.config.stage_hash(stage)

            previous = ManifestDAO.get(self.manifest_db, stage.value)
            if previous is not None and self._can_skip(previous, input_hashes, config_hash, outputs):
                logger.info(f"[Pipeline] Stage {stage.value}: up to date, skipped")
                previous.skipped = True
                return previous

            manifest = StageManifest(stage=stage.value, input_hashes=input_hashes,
                                     config_hash=config_hash, started_at=_now())
            logger.info(f"[Pipeline] Stage {stage.value}: running")
            start = time.monotonic()
            getattr(self, f"_stage_{stage.value}")()

            manifest.output_hashes = {name: file_hash(self.path(name)) for name in outputs}
            manifest.finished_at = _now()
            ManifestDAO.save(self.manifest_db, manifest)
            logger.info(f"[Pipeline] Stage {stage.value}: done in {format_duration(time.monotonic() - start)}")
            return manifest

    def _input_hashes(self, stage: StageName, inputs: Tuple[str, ...]) -> Dict[str, str]:
        if stage == StageName.INGEST:
            root = Path(self.config.corpus.corpus_root)
            if not root.is_dir():
                raise MissingInputError(str(root))
            return {'corpus_root': tree_hash(root)}

        hashes = {}
        for name in inputs:
            path = self.path(name)
            if not path.exists():
                raise MissingInputError(str(path))
            hashes[name] = file_hash(path)
        return hashes

    def _can_skip(self, previous: StageManifest, input_hashes: Dict[str, str], config_hash: str,
                  outputs: Tuple[str, ...]) -> bool:
        if not previous.matches(input_hashes, config_hash):
            return False
        for name in outputs:
            path = self.path(name)
            if not path.exists():
                return False
            # 严格模式：输出被改动过则拒绝跳过
            if self.strict and previous.output_hashes.get(name) != file_hash(path):
                logger.warning(f"[Pipeline] Output {path} changed since last run, refusing to skip")
                return False
        return True

    # ========================================================================
    # 产物读取
    # ========================================================================

    def load_units(self) -> List[FunctionUnit]:
        return [FunctionUnit.from_dict(d) for d in read_jsonl(self.path('functions'))]

    def load_queries(self) -> List[DocQuery]:
        return [DocQuery.from_dict(d) for d in read_jsonl(self.path('queries'))]

    def load_pairs(self, name: str = 'pairs') -> List[PairRecord]:
        path = self.path(name)
        if not path.exists():
            raise MissingInputError(str(path))
        return [PairRecord.from_dict(d) for d in read_jsonl(path)]

    def _texts(self, units: List[FunctionUnit], queries: List[DocQuery]) -> Tuple[Dict[str, str], Dict[str, str]]:
        return {q.query_id: q.text for q in queries}, {u.func_id: u.source for u in units}

    def _holdout(self, queries: List[DocQuery]) -> Tuple[List[str], List[str]]:
        return split_holdout([q.query_id for q in queries], self.config.eval.holdout_fraction, self.config.seed)

    # ========================================================================
    # 各阶段
    # ========================================================================

    def _stage_ingest(self):
        corpus = self.config.corpus
        units = scan_corpus(corpus.corpus_root, corpus.ast_backend, corpus.workers)
        write_jsonl(self.path('functions'), [u.to_dict() for u in units])

    def _stage_docgen(self):
        provider = self.config.backends.docgen
        generator = get_docstring_generator(provider)
        queries = generate_docstrings(self.load_units(), generator, self.config.corpus.prompt_budget,
                                      provider.max_in_flight, self.show_progress)
        write_jsonl(self.path('queries'), [q.to_dict() for q in queries])

    def _stage_mine(self):
        pairs = mine_pairs(self.load_queries(), self.load_units(), self.config.synth.k, self.config.seed)
        write_jsonl(self.path('pairs_mined'), [p.to_dict() for p in pairs])

    def _stage_annotate(self):
        provider = self.config.backends.embed
        query_texts, code_texts = self._texts(self.load_units(), self.load_queries())
        annotator = get_annotator(provider, self.config.synth.hash_dim)
        pairs = annotate_pairs(self.load_pairs('pairs_mined'), annotator, query_texts, code_texts,
                               provider.max_in_flight)
        write_jsonl(self.path('pairs'), [p.to_dict() for p in pairs])

    def _stage_refine(self):
        query_texts, code_texts = self._texts(self.load_units(), self.load_queries())
        judge = get_judge(self.config.backends.judge, self.config.refine.judge_fraction)
        refined, report = refine_pairs(
            self.load_pairs('pairs'), self.config.refine, judge, query_texts, code_texts,
            ast_backend=self.config.corpus.ast_backend,
            max_in_flight=self.config.backends.judge.max_in_flight,
            seed=derive_seed(self.config.seed, 'refine')
        )
        write_jsonl(self.path('pairs_refined'), [r.to_dict() for r in refined])
        write_json(self.path('refine_report'), report)

    def _stage_train(self):
        queries = self.load_queries()
        query_texts, code_texts = self._texts(self.load_units(), queries)
        train_ids, held_ids = self._holdout(queries)
        train_set = set(train_ids)
        records = [r for r in self.load_pairs('pairs_refined') if r.query_id in train_set]

        model = EncoderModel.from_config(self.config.train)
        model, curve = train(records, model, self.config.train, query_texts, code_texts, self.show_progress)

        model.save(self.path('checkpoint'))
        write_csv(self.path('loss_curve'), curve)
        write_json(self.path('train_summary'), {
            'objective': self.config.train.objective.value,
            'w1': self.config.train.w1,
            'w2': self.config.train.w2,
            'epochs': self.config.train.epochs,
            'steps': int(len(curve)),
            'final_loss': float(curve['L'].iloc[-1]) if len(curve) else None,
            'train_queries': len(train_ids),
            'held_out_queries': len(held_ids),
            'train_records': len(records)
        })

    def _stage_eval(self):
        cfg = self.config
        units = self.load_units()
        queries = self.load_queries()
        _, held_ids = self._holdout(queries)
        held = set(held_ids)
        if not held:
            logger.warning("[Pipeline] Held-out split is empty, evaluating on all queries")
            held = {q.query_id for q in queries}

        nl2code = build_nl2code_dataset(queries, units, held)
        held_funcs = {q.func_id for q in queries if q.query_id in held}
        code2code = build_code2code_dataset(units, held_funcs)
        write_jsonl(self.path('eval_dataset'), dataset_to_records(nl2code))
        write_jsonl(self.path('code2code_dataset'), dataset_to_records(code2code))

        embedders = [
            ('annotator', get_annotator(cfg.backends.embed, cfg.synth.hash_dim)),
            ('untrained', EncoderModel.from_config(cfg.train)),
            ('trained', EncoderModel.load(self.path('checkpoint')))
        ]
        nl2code_reports = [evaluate(m, nl2code, cfg.eval.k_cutoff, name) for name, m in embedders]
        hard = hard_subset(nl2code_reports)
        for report in nl2code_reports:
            report.hard_subset = hard

        code2code_reports = []
        if code2code.queries:
            code2code_reports = [evaluate(m, code2code, cfg.eval.k_cutoff, name) for name, m in embedders]
        else:
            logger.warning("[Pipeline] No code-to-code queries (no cross-repository name matches), skipped")

        rows = []
        for report in nl2code_reports + code2code_reports:
            rows.append({'model': report.model_name, 'task': report.task, 'metric': f"MRR@{report.k_cutoff}",
                         'value': report.mrr})
            rows.append({'model': report.model_name, 'task': report.task, 'metric': 'MAP', 'value': report.map})
        table = summary_table(rows)
        logger.info(f"[Pipeline] Evaluation summary ({len(hard)} hard queries):\n{render_table(table)}")

        write_json(self.path('eval_report'), {
            'nl2code': {r.model_name: r.to_dict() for r in nl2code_reports},
            'code2code': {r.model_name: r.to_dict() for r in code2code_reports},
            'hard_subset': hard,
            'summary': table.to_dict(orient='records')
        })

    def _stage_grid(self):
        units = self.load_units()
        queries = self.load_queries()
        data = ExperimentData.prepare(queries, units, self.load_pairs('pairs'), self.config,
                                      with_asts='ast' in self.config.refine.strategies)
        table = grid_search_delta_s(self.config.eval.grid_values, self.config, data)
        write_csv(self.path('grid'), table)

    def _stage_mds(self):
        cfg = self.config
        model = EncoderModel.load(self.path('checkpoint'))
        units = sorted(self.load_units(), key=lambda u: u.func_id)
        if len(units) > cfg.eval.mds_max_points:
            rng = np.random.default_rng(derive_seed(cfg.seed, 'mds', 'sample'))
            picked = sorted(int(i) for i in rng.choice(len(units), size=cfg.eval.mds_max_points, replace=False))
            units = [units[i] for i in picked]

        ids, vectors = [], []
        for unit in units:
            try:
                vectors.append(model.encode(unit.source))
                ids.append(unit.func_id)
            except EncoderError as e:
                logger.warning(f"[Pipeline] MDS skips {unit.func_id}: {e}")

        coords = mds_coords(vectors, cfg.eval.power_tol, cfg.eval.power_max_iter,
                            seed=derive_seed(cfg.seed, 'mds'))
        write_csv(self.path('mds'), mds_table(ids, coords))

    # ========================================================================
    # 独立命令
    # ========================================================================

    def synth_corpus(self, n_repos: Optional[int] = None, funcs_per_repo: Optional[int] = None) -> Path:
        """在 corpus.corpus_root 生成合成语料"""
        corpus = self.config.corpus
        return make_synthetic_corpus(
            corpus.corpus_root,
            n_repos if n_repos is not None else corpus.synthetic_repos,
            funcs_per_repo if funcs_per_repo is not None else corpus.synthetic_funcs,
            self.config.seed
        )

    def compare_annotators(self, against_hash_dim: int = 256) -> float:
        """
        配置的标注器与另一个内置标注器之间的组内 nDCG 一致性

        Args:
            against_hash_dim: 对照内置标注器的哈希维度
        """
        with self.lock():
            query_texts, code_texts = self._texts(self.load_units(), self.load_queries())
            ann_a = get_annotator(self.config.backends.embed, self.config.synth.hash_dim)
            ann_b = HashedBagAnnotator(against_hash_dim)
            return compare_annotators(self.load_pairs('pairs_mined'), ann_a, ann_b, query_texts, code_texts)

    def run_ablation(self, n_seeds: Optional[int] = None):
        """
        消融：每个种子 × 训练目标 × 修正策略

        Returns:
            (逐次结果, 汇总) 两个 DataFrame，同时写出 CSV
        """
        with self.lock():
            n_seeds = n_seeds or self.config.eval.ablation_seeds
            seeds = [self.config.seed + i for i in range(n_seeds)]
            annotator = get_annotator(self.config.backends.embed, self.config.synth.hash_dim)
            runs = run_ablation(self.config, self.load_queries(), self.load_units(), seeds, annotator=annotator)
            summary = summarize_ablation(runs)
            write_csv(self.path('ablation'), runs)
            write_csv(self.path('ablation_summary'), summary)
            logger.info(f"[Pipeline] Ablation summary:\n{render_table(summary)}")
            return runs, summary

    def report(self) -> Dict:
        """读取最近一次评测报告"""
        path = self.path('eval_report')
        if not path.exists():
            raise MissingInputError(str(path))
        return read_json(path)


def run_stage(name, cfg: PipelineConfig, strict: bool = False, force_unlock: bool = False) -> StageManifest:
    """执行单个阶段（便捷函数）"""
    return PipelineRunner(cfg, strict=strict, force_unlock=force_unlock).run_stage(name)
