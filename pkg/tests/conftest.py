#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
共享 fixture：小型语料、随机批次、离线配置
"""

from pathlib import Path
from typing import List

import numpy as np
import pytest

from core.config import PipelineConfig
from core.models import PairRecord, PairRole
from services.losses import Batch


TINY_REPO_A = {
    'utils.py': (
        "def parse_header(line):\n"
        "    parts = line.split(':')\n"
        "    return parts[0].strip()\n"
        "\n"
        "\n"
        "def read_headers(lines):\n"
        "    result = []\n"
        "    for line in lines:\n"
        "        result.append(parse_header(line))\n"
        "    return result\n"
    ),
    'main.py': (
        "def run(path):\n"
        "    with open(path) as handle:\n"
        "        return read_headers(handle.readlines())\n"
    )
}

TINY_REPO_B = {
    'lib.js': (
        "function add(a, b) {\n"
        "  return a + b;\n"
        "}\n"
        "\n"
        "function sum(items) {\n"
        "  let total = 0;\n"
        "  for (const x of items) { total = add(total, x); }\n"
        "  return total;\n"
        "}\n"
    )
}


def write_repo(root: Path, name: str, files: dict, language: str = None) -> Path:
    repo = root / name
    repo.mkdir(parents=True, exist_ok=True)
    for rel, text in files.items():
        (repo / rel).write_text(text, encoding='utf-8')
    if language:
        (repo / '.language').write_text(language + '\n', encoding='utf-8')
    return repo


@pytest.fixture
def tiny_corpus(tmp_path) -> Path:
    """两个仓库：Python（3 个函数，有调用链）与 JavaScript（2 个函数）"""
    root = tmp_path / 'corpus'
    write_repo(root, 'repo_a', TINY_REPO_A)
    write_repo(root, 'repo_b', TINY_REPO_B)
    return root


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_records(rng: np.random.Generator, m: int, k: int, tied: bool = False) -> List[PairRecord]:
    """m 组，每组 1 正 + k 负；负样本标签随机（tied=True 时取少量离散值制造并列）"""
    records = []
    for g in range(m):
        gid = f"g{g}"
        records.append(PairRecord(f"p{g}", gid, f"q{g}", f"c{g}", PairRole.POSITIVE, 1.0, 1.0))
        for j in range(k):
            sim = float(rng.choice([0.3, 0.5, 0.7])) if tied else float(rng.uniform(0.1, 0.95))
            records.append(PairRecord(f"n{g}_{j}", gid, f"q{g}", f"c{g}_{j}", PairRole.NEGATIVE, sim, sim))
    return records


@pytest.fixture
def make_batch():
    """工厂：随机向量批次"""
    def factory(rng: np.random.Generator, m: int = 4, k: int = 3, dim: int = 8, tied: bool = False) -> Batch:
        records = make_records(rng, m, k, tied)
        return Batch(
            groups=[f"g{g}" for g in range(m)],
            records=records,
            query_vectors=unit_rows(rng, m, dim),
            code_vectors=unit_rows(rng, len(records), dim)
        )
    return factory


@pytest.fixture
def offline_config(tmp_path) -> PipelineConfig:
    """离线、小维度的流水线配置"""
    cfg = PipelineConfig()
    cfg.corpus.corpus_root = str(tmp_path / 'corpus')
    cfg.corpus.workers = 2
    cfg.synth.hash_dim = 1024
    cfg.train.hash_dim = 1024
    cfg.train.embed_dim = 16
    cfg.train.batch_groups = 4
    cfg.eval.grid_values = [0.05, 0.1]
    cfg.eval.mds_max_points = 30
    cfg.paths.workdir = str(tmp_path / 'work')
    cfg.backends.force_offline()
    cfg.sync()
    return cfg
