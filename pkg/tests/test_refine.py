#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""相似度修正测试：候选选择、判定调整、nDCG 一致性、完整流程"""

import math

import numpy as np
import pytest

from core.config import RefineConfig
from core.errors import APIError, RefineError
from core.models import AstTree, DocQuery, JudgeChoice, PairRecord, PairRole, Refinement, group_records
from services.annotator import HashedBagAnnotator
from services.judge import OverlapJudge, PreferenceJudge
from services.refine import (
    adjudicate_and_adjust, adjusted_similarity, annotator_consistency_ndcg, compare_annotators,
    language_of, parse_asts, refine_pairs, select_ast_candidates, select_threshold_candidates
)
from services.repo_scanner import scan_corpus
from services.synth import build_groups, mine_pairs
from services.synthetic_corpus import make_synthetic_corpus


def _pos(gid, sim=1.0, code=None):
    return PairRecord(f"p-{gid}", gid, f"q-{gid}", code or f"c-{gid}", PairRole.POSITIVE, sim, 1.0)


def _neg(gid, j, sim, code=None):
    return PairRecord(f"n-{gid}-{j}", gid, f"q-{gid}", code or f"c-{gid}-{j}", PairRole.NEGATIVE, sim, sim)


class _FixedJudge(PreferenceJudge):
    name = 'fixed'

    def __init__(self, choice=JudgeChoice.B, fail_on=()):
        self.choice = choice
        self.fail_on = set(fail_on)
        self.calls = []

    def choose(self, docstring, positive_code, candidate_code):
        self.calls.append(candidate_code)
        if candidate_code in self.fail_on:
            raise APIError('judge down')
        return self.choice


class TestThresholdCandidates:
    """阈值策略"""

    def test_selects_above_threshold_or_positive(self):
        records = [
            _pos('g1', 0.6), _neg('g1', 0, 0.3), _neg('g1', 1, 0.5), _neg('g1', 2, 0.7),
            _pos('g2', 0.3), _neg('g2', 0, 0.35), _neg('g2', 1, 0.2),
        ]
        selected = select_threshold_candidates(records, s_star=0.4)
        assert selected == ['n-g1-1', 'n-g1-2', 'n-g2-0']
        assert select_threshold_candidates(records, s_star=0.9) == ['n-g1-2', 'n-g2-0']
        assert records[3].refinement == Refinement.THRESHOLD_SELECTED
        assert records[0].refinement == Refinement.NONE


class TestAstCandidates:
    """结构策略"""

    def _records(self):
        return [_pos('g', code='pos'), _neg('g', 0, 0.1, 'same'), _neg('g', 1, 0.1, 'other'),
                _neg('g', 2, 0.1, 'broken')]

    def _asts(self):
        return {
            'pos': AstTree.from_nested(('a', ['b', 'c'])),
            'same': AstTree.from_nested(('a', ['b', 'c'])),
            'other': AstTree.from_nested(('x', ['y', 'z'])),
            'broken': None,
        }

    def test_selection(self):
        records = self._records()
        selected = select_ast_candidates(records, self._asts(), ratio_max=0.25)
        assert selected == ['n-g-0']
        assert records[1].refinement == Refinement.AST_SELECTED

    def test_pruning_does_not_change_selection(self):
        rng = np.random.default_rng(0)
        labels = ['a', 'b', 'c', 'd']
        asts = {}
        records = [_pos('g', code='pos')]
        asts['pos'] = AstTree.from_nested(('a', ['b', ('c', ['d'])]))
        for j in range(40):
            kids = [str(rng.choice(labels)) for _ in range(int(rng.integers(1, 4)))]
            asts[f"c{j}"] = AstTree.from_nested((str(rng.choice(labels)), kids))
            records.append(_neg('g', j, 0.1, f"c{j}"))
        pruned = select_ast_candidates([r for r in records], asts, 0.3, prune=True)
        full = select_ast_candidates([r for r in records], asts, 0.3, prune=False)
        assert pruned == full

    def test_keeps_threshold_mark(self):
        records = self._records()
        records[1].refinement = Refinement.THRESHOLD_SELECTED
        select_ast_candidates(records, self._asts(), 0.25)
        assert records[1].refinement == Refinement.THRESHOLD_SELECTED

    def test_language_and_parse(self):
        assert language_of('repo/src/app.js#f@0') == 'javascript'
        assert language_of('repo/x#f@0') == 'unknown'
        asts = parse_asts({'r/a.py#f@0': 'def f():\n    return 1', 'r/b.py#g@0': 'def g(:'})
        assert asts['r/a.py#f@0'] is not None
        assert asts['r/b.py#g@0'] is None


class TestAdjudication:
    """判定与调整"""

    @pytest.mark.parametrize('sim,expected', [(0.6397, 0.70367), (0.2662, 0.29282), (0.4871, 0.53581)])
    def test_adjusted_values(self, sim, expected):
        assert adjusted_similarity(sim, 0.1) == pytest.approx(expected, abs=1e-9)

    def test_cap(self):
        assert adjusted_similarity(0.95, 0.1) == 0.999
        assert adjusted_similarity(0.9995, 0.1) == 0.9995

    def _setup(self):
        records = [_pos('g', code='P'), _neg('g', 0, 0.6397, 'A'), _neg('g', 1, 0.2662, 'B'), _neg('g', 2, 0.5, 'C')]
        query_texts = {'q-g': 'doc'}
        code_texts = {'P': 'P', 'A': 'A', 'B': 'B', 'C': 'C'}
        return records, query_texts, code_texts

    def test_accepted_candidates_are_adjusted(self):
        records, qt, ct = self._setup()
        stats = {}
        out = adjudicate_and_adjust(['n-g-0', 'n-g-1', 'n-g-0', 'p-g'], records, _FixedJudge(), 0.1, qt, ct,
                                    stats=stats)
        assert out[1].sim_train == pytest.approx(0.70367)
        assert out[2].sim_train == pytest.approx(0.29282)
        assert out[1].refinement == Refinement.ADJUSTED
        assert out[3].sim_train == 0.5 and out[3].refinement == Refinement.NONE
        assert out[0].sim_train == 1.0 and out[0].role == PairRole.POSITIVE
        assert stats == {'adjudicated': 2, 'accepted': 2, 'failed': 0}
        # 输入不被修改
        assert records[1].sim_train == 0.6397

    def test_rejection_and_failure_keep_values(self):
        records, qt, ct = self._setup()
        stats = {}
        out = adjudicate_and_adjust(['n-g-0'], records, _FixedJudge(JudgeChoice.A), 0.1, qt, ct, stats=stats)
        assert out[1].sim_train == 0.6397
        out = adjudicate_and_adjust(['n-g-0', 'n-g-1'], records, _FixedJudge(fail_on={'A'}), 0.1, qt, ct,
                                    max_in_flight=2, stats=stats)
        assert out[1].sim_train == 0.6397
        assert out[2].refinement == Refinement.ADJUSTED
        assert stats['failed'] == 1

    def test_capped_similarity_is_not_marked(self):
        records = [_pos('g', code='P'), _neg('g', 0, 0.9995, 'A'), _neg('g', 1, 0.95, 'B')]
        stats = {}
        out = adjudicate_and_adjust(['n-g-0', 'n-g-1'], records, _FixedJudge(), 0.1, {'q-g': 'doc'},
                                    {'P': 'P', 'A': 'A', 'B': 'B'}, stats=stats)
        assert out[1].sim_train == 0.9995
        assert out[1].refinement == Refinement.NONE
        assert out[2].sim_train == 0.999
        assert out[2].refinement == Refinement.ADJUSTED
        assert stats['accepted'] == 2

    def test_invalid_delta(self):
        records, qt, ct = self._setup()
        with pytest.raises(RefineError) as info:
            adjudicate_and_adjust([], records, _FixedJudge(), 0.0, qt, ct)
        assert info.value.code == 'invalid_delta_s'


class TestConsistency:
    """标注器一致性 nDCG"""

    def test_identical_rankings(self):
        assert annotator_consistency_ndcg([[0.9, 0.5, 0.1]], [[0.8, 0.4, 0.2]]) == pytest.approx(1.0)

    def test_reversed_ranking(self):
        expected = (1 + 2 / math.log2(3) + 3 / 2) / (3 + 2 / math.log2(3) + 1 / 2)
        assert annotator_consistency_ndcg([[3, 2, 1]], [[1, 2, 3]]) == pytest.approx(expected)

    def test_ties_break_by_position(self):
        assert annotator_consistency_ndcg([[1, 2]], [[0.5, 0.5]]) == pytest.approx(
            (1 + 2 / math.log2(3)) / (2 + 1 / math.log2(3)))

    def test_small_groups_are_skipped(self):
        assert annotator_consistency_ndcg([[1.0], [0.9, 0.1]], [[0.2], [0.7, 0.3]]) == pytest.approx(1.0)
        with pytest.raises(RefineError):
            annotator_consistency_ndcg([[1.0]], [[1.0]])
        with pytest.raises(RefineError):
            annotator_consistency_ndcg([[1.0, 2.0]], [])

    def test_compare_same_annotator(self, tmp_path):
        root = make_synthetic_corpus(tmp_path / 'c', 3, 5, seed=2)
        units = scan_corpus(str(root))
        queries = [DocQuery(f"q:{u.func_id}", u.func_id, u.name.replace('_', ' ')) for u in units]
        pairs = mine_pairs(queries, units, 3, 0)
        qt = {q.query_id: q.text for q in queries}
        ct = {u.func_id: u.source for u in units}
        score = compare_annotators(pairs, HashedBagAnnotator(512), HashedBagAnnotator(512), qt, ct)
        assert score == pytest.approx(1.0)
        other = compare_annotators(pairs, HashedBagAnnotator(512), HashedBagAnnotator(16), qt, ct)
        assert 0.0 < other <= 1.0 + 1e-12


class TestRefinePairs:
    """完整修正流程"""

    @pytest.fixture
    def corpus(self, tmp_path):
        root = make_synthetic_corpus(tmp_path / 'c', 4, 8, seed=1)
        units = scan_corpus(str(root))
        queries = [DocQuery(f"q:{u.func_id}", u.func_id, u.name.replace('_', ' ')) for u in units]
        records = build_groups(queries, units, 4, 0, HashedBagAnnotator(1024))
        return records, {q.query_id: q.text for q in queries}, {u.func_id: u.source for u in units}

    def test_report_and_invariants(self, corpus):
        records, qt, ct = corpus
        cfg = RefineConfig()
        refined, report = refine_pairs(records, cfg, OverlapJudge(0.8), qt, ct)

        assert len(refined) == len(records)
        assert [r.pair_id for r in refined] == [r.pair_id for r in records]
        assert report['total_pairs'] == len(records)
        assert report['s_star'] == cfg.s_star
        assert report['gmm_s_star'] is not None
        assert report['adjudicated'] == report['candidates']
        assert report['adjusted'] <= report['accepted']
        for before, after in zip(records, refined):
            assert before.role == after.role
            assert after.sim_annotated == before.sim_annotated
            if after.is_positive:
                assert after.sim_train == 1.0 and after.refinement == Refinement.NONE
            elif after.refinement == Refinement.ADJUSTED:
                assert after.sim_train == pytest.approx(adjusted_similarity(before.sim_annotated, cfg.delta_s))
            else:
                assert after.sim_train == before.sim_annotated
        for members in group_records(refined).values():
            assert sum(r.is_positive for r in members) == 1

    def test_no_strategy_means_no_change(self, corpus):
        records, qt, ct = corpus
        cfg = RefineConfig(strategies=[])
        refined, report = refine_pairs(records, cfg, OverlapJudge(), qt, ct)
        assert report['candidates'] == 0
        assert all(r.refinement == Refinement.NONE for r in refined)

    def test_saturated_threshold_is_reported(self, corpus, caplog):
        records, qt, ct = corpus
        cfg = RefineConfig(strategies=['threshold'])
        with caplog.at_level('WARNING', logger='services.refine'):
            _, report = refine_pairs(records, cfg, OverlapJudge(), qt, ct)
        # 内置标注器的相似度不低于 0.5，s*=0.4 选中全部负样本
        assert report['threshold_selected'] == report['negatives']
        assert report['threshold_saturated'] is True
        assert any('selects' in r.getMessage() for r in caplog.records)

    def test_unsaturated_threshold(self):
        records = [_pos('g', 0.8, 'P')] + [_neg('g', j, s, f"N{j}") for j, s in enumerate([0.2, 0.3, 0.5, 0.6])]
        cfg = RefineConfig(strategies=['threshold'])
        texts = {f"N{j}": 'x' for j in range(4)}
        texts['P'] = 'x'
        _, report = refine_pairs(records, cfg, _FixedJudge(JudgeChoice.A), {'q-g': 'doc'}, texts)
        assert report['threshold_selected'] == 2
        assert report['threshold_saturated'] is False

    def test_gmm_threshold_source(self, corpus):
        records, qt, ct = corpus
        cfg = RefineConfig(threshold_source='gmm', strategies=['threshold'])
        _, report = refine_pairs(records, cfg, OverlapJudge(), qt, ct)
        assert report['s_star'] == report['gmm_s_star']

    def test_gmm_failure(self):
        records = [_pos('g', 0.9), _neg('g', 0, 0.5), _neg('g', 1, 0.3)]
        qt, ct = {'q-g': 'doc'}, {'c-g': 'x', 'c-g-0': 'y', 'c-g-1': 'z'}
        refined, report = refine_pairs(records, RefineConfig(strategies=['threshold']), OverlapJudge(), qt, ct)
        assert report['gmm_s_star'] is None
        assert len(refined) == 3
        with pytest.raises(RefineError):
            refine_pairs(records, RefineConfig(threshold_source='gmm', strategies=['threshold']),
                         OverlapJudge(), qt, ct)
