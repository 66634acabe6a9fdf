#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""优化器、梯度校验与训练循环测试"""

import time
from typing import Dict, List, Tuple

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.config import TrainConfig
from core.errors import LossError
from core.models import PairRecord, PairRole
from services.encoder import EncoderModel
from services.trainer import (
    GRAD_FLOOR, SGD, Adam, TextBatch, grad_check, make_optimizer, split_holdout, train
)


VOCAB = [f"tok{i}" for i in range(40)]


def _text(rng: np.random.Generator) -> str:
    return ' '.join(rng.choice(VOCAB, size=int(rng.integers(3, 9))))


def _dataset(seed: int, groups: int = 8, k: int = 5) -> Tuple[List[PairRecord], Dict[str, str], Dict[str, str]]:
    """随机文本组成的样本对：每组 1 个正样本 + k 个负样本"""
    rng = np.random.default_rng(seed)
    records, query_texts, code_texts = [], {}, {}
    for g in range(groups):
        gid, qid = f"g{g}", f"q{g}"
        query_texts[qid] = _text(rng)
        code_texts[f"c{g}"] = _text(rng)
        records.append(PairRecord(f"p{g}", gid, qid, f"c{g}", PairRole.POSITIVE, 1.0, 1.0))
        for j in range(k):
            cid = f"c{g}_{j}"
            code_texts[cid] = _text(rng)
            sim = float(rng.uniform(0.05, 0.95))
            records.append(PairRecord(f"n{g}_{j}", gid, qid, cid, PairRole.NEGATIVE, sim, sim))
    return records, query_texts, code_texts


def _text_batch(records, query_texts, code_texts) -> TextBatch:
    groups: Dict[str, List[PairRecord]] = {}
    for record in records:
        groups.setdefault(record.group_id, []).append(record)
    return TextBatch([groups[g] for g in sorted(groups)], query_texts, code_texts)


class TestOptimizers:
    """优化器单步"""

    def test_sgd(self):
        p = {'w': np.array([1.0, -2.0])}
        SGD(0.5).step(p, {'w': np.array([0.2, -0.4])})
        assert_allclose(p['w'], [0.9, -1.8])

    def test_adam_first_step_moves_by_lr(self):
        p = {'w': np.array([1.0, -2.0])}
        Adam(0.1).step(p, {'w': np.array([0.5, -0.1])})
        assert_allclose(p['w'], [0.9, -1.9], rtol=1e-6)

    def test_zero_lr_keeps_params(self):
        p = {'w': np.array([1.0, 2.0])}
        Adam(0.0).step(p, {'w': np.array([3.0, 4.0])})
        assert_array_equal(p['w'], [1.0, 2.0])

    def test_factory(self):
        assert isinstance(make_optimizer(TrainConfig(optimizer='sgd')), SGD)
        adam = make_optimizer(TrainConfig(lr=0.01, beta1=0.8))
        assert isinstance(adam, Adam) and adam.beta1 == 0.8


class TestGradCheck:
    """有限差分梯度校验"""

    @pytest.mark.parametrize('objective', ['infonce', 'cosent', 'hybrid'])
    def test_training_temperature(self, objective):
        records, qt, ct = _dataset(0)
        cfg = TrainConfig(objective=objective, embed_dim=16)
        assert cfg.tau == 0.05
        model = EncoderModel.from_config(cfg, seed=0)
        err = grad_check(model, _text_batch(records, qt, ct), cfg, max_coords=0)
        assert err <= 1e-4

    def test_every_coordinate_of_small_model(self):
        records, qt, ct = _dataset(0)
        cfg = TrainConfig(tau=1.0, hash_dim=64, embed_dim=16)
        model = EncoderModel.from_config(cfg, seed=0)
        assert sum(p.size for p in model.params().values()) <= 2000
        err = grad_check(model, _text_batch(records, qt, ct), cfg, floor=1e-5)
        assert err <= 1e-4

    def test_invalid_step(self):
        records, qt, ct = _dataset(0, groups=2, k=1)
        cfg = TrainConfig(hash_dim=16, embed_dim=4)
        model = EncoderModel.from_config(cfg)
        with pytest.raises(LossError) as info:
            grad_check(model, _text_batch(records, qt, ct), cfg, h=0.01)
        assert info.value.code == 'invalid_step'

    def test_check_leaves_params_untouched(self):
        records, qt, ct = _dataset(1, groups=2, k=2)
        cfg = TrainConfig(tau=1.0, hash_dim=16, embed_dim=4)
        model = EncoderModel.from_config(cfg)
        before = model.copy()
        grad_check(model, _text_batch(records, qt, ct), cfg, floor=1e-5)
        assert_array_equal(model.table, before.table)
        assert_array_equal(model.projection, before.projection)

    @pytest.mark.slow
    def test_twenty_seeds_sampled(self):
        started = time.monotonic()
        for seed in range(20):
            records, qt, ct = _dataset(100 + seed)
            for objective in ('infonce', 'cosent', 'hybrid'):
                cfg = TrainConfig(objective=objective, embed_dim=16)
                model = EncoderModel.from_config(cfg, seed=seed)
                err = grad_check(model, _text_batch(records, qt, ct), cfg, max_coords=0, seed=seed,
                                 floor=GRAD_FLOOR)
                assert err <= 1e-4, (seed, objective)
        assert time.monotonic() - started < 30.0


class TestSplitHoldout:
    """留出集划分"""

    def test_partition(self):
        ids = [f"q{i}" for i in range(10)]
        kept, held = split_holdout(ids, 0.2, seed=3)
        assert len(held) == 2
        assert sorted(kept + held) == sorted(ids)
        assert split_holdout(ids, 0.2, seed=3) == (kept, held)

    def test_edge_cases(self):
        assert split_holdout(['a'], 0.5, 0) == (['a'], [])
        assert split_holdout(['a', 'b'], 0.0, 0) == (['a', 'b'], [])
        kept, held = split_holdout(['a', 'b'], 0.9, 0)
        assert len(kept) == 1 and len(held) == 1


class TestTrain:
    """训练循环"""

    def test_curve_shape(self):
        records, qt, ct = _dataset(2, groups=6, k=3)
        cfg = TrainConfig(tau=0.1, lr=0.01, batch_groups=4, epochs=2, hash_dim=64, embed_dim=8)
        model = EncoderModel.from_config(cfg)
        _, curve = train(records, model, cfg, qt, ct)
        assert list(curve.columns) == ['step', 'epoch', 'L_ibn', 'L_cos', 'L']
        assert len(curve) == 4
        assert curve['step'].tolist() == [1, 2, 3, 4]
        assert_allclose(curve['L'], 0.98 * curve['L_ibn'] + 0.02 * curve['L_cos'])

    def test_deterministic(self):
        records, qt, ct = _dataset(3)
        cfg = TrainConfig(lr=0.01, batch_groups=3, epochs=2, hash_dim=64, embed_dim=8)
        a, curve_a = train(records, EncoderModel.from_config(cfg), cfg, qt, ct)
        b, curve_b = train(records, EncoderModel.from_config(cfg), cfg, qt, ct)
        assert_array_equal(a.table, b.table)
        assert curve_a.equals(curve_b)

    def test_zero_epochs_keeps_model(self):
        records, qt, ct = _dataset(4)
        cfg = TrainConfig(epochs=0, hash_dim=32, embed_dim=4)
        model = EncoderModel.from_config(cfg)
        before = model.table.copy()
        _, curve = train(records, model, cfg, qt, ct)
        assert curve.empty
        assert_array_equal(model.table, before)

    def test_loss_decreases(self):
        records, qt, ct = _dataset(5, groups=8, k=3)
        cfg = TrainConfig(tau=0.1, lr=0.05, batch_groups=8, epochs=15, hash_dim=128, embed_dim=16,
                          objective='infonce')
        _, curve = train(records, EncoderModel.from_config(cfg), cfg, qt, ct)
        assert curve['L'].iloc[-1] < curve['L'].iloc[0]

    def test_skips_tokenless_groups(self):
        records, qt, ct = _dataset(6, groups=3, k=1)
        qt['q0'] = '... ---'
        cfg = TrainConfig(lr=0.01, batch_groups=1, epochs=1, hash_dim=32, embed_dim=4)
        _, curve = train(records, EncoderModel.from_config(cfg), cfg, qt, ct)
        assert len(curve) == 2
