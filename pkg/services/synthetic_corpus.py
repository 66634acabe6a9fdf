#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
合成语料生成
函数名 = 动词族 + 对象词；函数体由动词族的语句模板代入对象词生成，
同族或同对象的函数共享部分 token，不同族不同对象的函数几乎不共享 token，
因此仓库内负样本的相似度覆盖从低到高的区间。同名函数跨仓库重复出现。
"""

import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from core.errors import CorpusError
from utils.io_utils import atomic_write_text
from utils.text_utils import derive_seed


logger = logging.getLogger(__name__)

OBJECTS = ('user', 'order', 'invoice', 'session', 'ticket', 'product', 'account', 'shipment', 'review', 'coupon')

# 动词族：(参数后缀, 首行, 可选语句, 返回变量)
FAMILIES: Dict[str, Tuple[str, str, Tuple[str, ...], str]] = {
    'load': (
        'path',
        "{o}_rows = open_stream({o}_path).read_lines()",
        ("{o}_rows = [row.strip() for row in {o}_rows]",
         "cache_store[{o}_path] = {o}_rows",
         "trace_io('load', {o}_path)"),
        "{o}_rows"
    ),
    'save': (
        'rows',
        "target_file = open_stream({o}_rows.destination, mode='w')",
        ("target_file.write_lines({o}_rows)",
         "target_file.flush_buffer()",
         "trace_io('save', {o}_rows.destination)"),
        "target_file.close_handle()"
    ),
    'parse': (
        'text',
        "{o}_tokens = {o}_text.split(delimiter_char)",
        ("{o}_fields = {{key: value for key, value in zip(header_names, {o}_tokens)}}",
         "{o}_tokens = [token for token in {o}_tokens if token]",
         "grammar_check({o}_tokens)"),
        "{o}_tokens"
    ),
    'validate': (
        'entry',
        "problems = []",
        ("if not {o}_entry.identifier:\n        problems.append('missing identifier')",
         "if {o}_entry.amount < minimum_amount:\n        problems.append('amount too small')",
         "schema_rules.check({o}_entry, problems)"),
        "len(problems) == 0"
    ),
    'compute': (
        'values',
        "running_total = sum(weight * {o}_values[index] for index, weight in enumerate(weight_table))",
        ("running_total = round(running_total, precision_digits)",
         "running_total += baseline_offset",
         "metrics_gauge.observe(running_total)"),
        "running_total"
    ),
    'filter': (
        'items',
        "kept_{o}s = [candidate for candidate in {o}_items if predicate_fn(candidate)]",
        ("kept_{o}s = kept_{o}s[:page_limit]",
         "rejected_count = len({o}_items) - len(kept_{o}s)",
         "audit_filter(kept_{o}s)"),
        "kept_{o}s"
    ),
    'merge': (
        'batches',
        "merged_{o}s = {{}}",
        ("for batch in {o}_batches:\n        merged_{o}s.update(batch)",
         "conflict_policy.resolve(merged_{o}s)",
         "merged_{o}s = dict(sorted(merged_{o}s.items()))"),
        "merged_{o}s"
    ),
    'format': (
        'record',
        "pieces = [template_prefix, str({o}_record.identifier)]",
        ("pieces.append({o}_record.display_name.title())",
         "pieces.append(currency_symbol + str({o}_record.amount))",
         "pieces = [piece.strip() for piece in pieces]"),
        "separator_char.join(pieces)"
    )
}

FUNCS_PER_FILE = 3
CALL_PROBABILITY = 0.3


def _render_function(verb: str, obj: str, rng: np.random.Generator, callees: List[Tuple[str, str]]) -> str:
    arg_suffix, first, optional, returns = FAMILIES[verb]
    arg = f"{obj}_{arg_suffix}"
    n_extra = int(rng.integers(0, len(optional) + 1))
    picked = sorted(int(i) for i in rng.choice(len(optional), size=n_extra, replace=False)) if n_extra else []

    lines = [f"def {verb}_{obj}({arg}):", f"    {first.format(o=obj)}"]
    lines += [f"    {optional[i].format(o=obj)}" for i in picked]
    if callees and rng.random() < CALL_PROBABILITY:
        name, callee_arg = callees[int(rng.integers(0, len(callees)))]
        lines.append(f"    {name}({arg})")
    lines.append(f"    return {returns.format(o=obj)}")
    return '\n'.join(lines) + '\n'


def make_synthetic_corpus(root, n_repos: int = 20, funcs_per_repo: int = 10, seed: int = 0) -> Path:
    """
    生成合成语料

    Args:
        root: 输出目录（每个仓库一个子目录，带 .language 文件）
        n_repos: 仓库数
        funcs_per_repo: 每个仓库的函数数
        seed: 种子，输出逐字节可复现

    Returns:
        root 路径
    """
    if n_repos < 1 or funcs_per_repo < 1:
        raise CorpusError(f"n_repos and funcs_per_repo must be >= 1, got {n_repos}, {funcs_per_repo}",
                          code='invalid_size')

    root = Path(root)
    verbs = sorted(FAMILIES)
    total = 0
    for r in range(n_repos):
        rng = np.random.default_rng(derive_seed(seed, 'synthetic', r))
        repo_dir = root / f"repo_{r:03d}"
        atomic_write_text(repo_dir / '.language', 'python\n')

        defined: List[Tuple[str, str]] = []
        sources: List[str] = []
        for _ in range(funcs_per_repo):
            verb = verbs[int(rng.integers(0, len(verbs)))]
            obj = OBJECTS[int(rng.integers(0, len(OBJECTS)))]
            sources.append(_render_function(verb, obj, rng, defined))
            defined.append((f"{verb}_{obj}", FAMILIES[verb][0]))

        for k in range(0, len(sources), FUNCS_PER_FILE):
            module = '\n\n'.join(sources[k:k + FUNCS_PER_FILE])
            atomic_write_text(repo_dir / f"module_{k // FUNCS_PER_FILE:02d}.py", module)
        total += len(sources)

    logger.info(f"[SyntheticCorpus] Wrote {n_repos} repositories, {total} functions to {root}")
    return root
