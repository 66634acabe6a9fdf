#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
仓库扫描服务
负责发现仓库、抽取函数级单元、解析近似调用图
"""

import os
import re
import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

from core.errors import CorpusError
from core.models import FunctionUnit, Repository, SOURCE_EXTENSIONS
from services.ast_provider import AstProvider, get_ast_provider


logger = logging.getLogger(__name__)

LANGUAGE_FILE = '.language'

# 调用形式的标识符：名字后紧跟左括号
_CALL_RE = re.compile(r'([A-Za-z_$][A-Za-z0-9_$]*)\(')
_DEF_PREFIX_RE = re.compile(r"\b(?:def|function|func|fn)\s+$")


class RepoScanner:
    """仓库扫描器"""

    def __init__(self, corpus_root: str, ast_backend: str = 'nesting', workers: int = 4):
        """
        初始化扫描器

        Args:
            corpus_root: 语料根目录，每个直接子目录是一个仓库
            ast_backend: nesting / python / auto
            workers: 并行抽取的线程数
        """
        self.corpus_root = Path(corpus_root)
        self.ast_backend = ast_backend
        self.workers = workers

    def discover_repositories(self) -> List[Repository]:
        """发现语料根目录下的全部仓库"""
        if not self.corpus_root.exists():
            raise CorpusError(f"corpus root does not exist: {self.corpus_root}")

        repos = []
        for item in sorted(self.corpus_root.iterdir()):
            if not item.is_dir() or item.name.startswith('.'):
                continue
            repos.append(Repository(
                repo_id=item.name,
                root_path=str(item),
                language_tag=self._detect_language(item)
            ))
        return repos

    @staticmethod
    def _detect_language(repo_dir: Path) -> str:
        """优先读取 .language 文件，否则取数量最多的源码扩展名"""
        marker = repo_dir / LANGUAGE_FILE
        if marker.exists():
            tag = marker.read_text(encoding='utf-8').strip()
            if tag:
                return tag.lower()

        counts = Counter()
        for root, dirs, files in os.walk(repo_dir):
            dirs[:] = [d for d in dirs if not d.startswith('.')]
            for name in files:
                lang = SOURCE_EXTENSIONS.get(Path(name).suffix.lower())
                if lang:
                    counts[lang] += 1
        if not counts:
            return 'unknown'
        # 数量相同时按名字排序，保证确定性
        return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    def scan(self) -> List[FunctionUnit]:
        """
        扫描整个语料：并行抽取每个仓库，再在仓库内解析调用图

        Returns:
            按 (repo_id, 文件, 偏移) 排序的函数单元
        """
        repos = self.discover_repositories()
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            per_repo = list(pool.map(self._scan_repo, repos))

        units = []
        for repo_units in per_repo:
            units.extend(repo_units)
        logger.info(f"[RepoScanner] {len(repos)} repositories, {len(units)} functions")
        return units

    def _scan_repo(self, repo: Repository) -> List[FunctionUnit]:
        provider = get_ast_provider(self.ast_backend, repo.language_tag)
        return resolve_call_graph(extract_functions(repo, provider))


# ============================================================================
# 抽取与调用图
# ============================================================================

def _source_files(repo: Repository) -> List[Path]:
    root = Path(repo.root_path)
    files = []
    for dirpath, dirs, names in os.walk(root):
        dirs[:] = sorted(d for d in dirs if not d.startswith('.'))
        for name in names:
            if Path(name).suffix.lower() in SOURCE_EXTENSIONS:
                files.append(Path(dirpath) / name)
    return sorted(files, key=lambda p: p.relative_to(root).as_posix())


def extract_functions(repo: Repository, parser: Optional[AstProvider] = None) -> List[FunctionUnit]:
    """
    抽取仓库内全部具名函数（含嵌套函数）

    Args:
        repo: 仓库
        parser: 语法树提供者，None 时按语言标签选择（不支持时回退到内置嵌套解析器）

    Returns:
        按 (文件路径, 起始偏移) 排序的函数单元；func_id 在多次运行间稳定
    """
    if parser is None or not parser.supports(repo.language_tag):
        parser = get_ast_provider('auto' if parser is None else 'nesting', repo.language_tag)

    root = Path(repo.root_path)
    units: List[FunctionUnit] = []

    for path in _source_files(repo):
        rel = path.relative_to(root).as_posix()
        try:
            data = path.read_bytes()
            text = data.decode('utf-8')
        except (OSError, UnicodeDecodeError) as e:
            logger.warning(f"[RepoScanner] Skipping unreadable file {path}: {e}")
            continue

        try:
            spans = parser.find_functions(text)
        except CorpusError as e:
            logger.warning(f"[RepoScanner] Skipping unparseable file {path}: {e}")
            continue

        for span in spans:
            source = data[span.start_byte:span.end_byte].decode('utf-8')
            if not source.strip():
                continue
            units.append(FunctionUnit(
                func_id=f"{repo.repo_id}/{rel}#{span.name}@{span.start_byte}",
                repo_id=repo.repo_id,
                name=span.name,
                source=source,
                file_path=rel,
                start_byte=span.start_byte,
                end_byte=span.end_byte
            ))

    if not units:
        logger.info(f"[RepoScanner] No functions found in {repo.repo_id}")
    return units


def call_tokens(source: str) -> List[str]:
    """源码中以调用形式出现的标识符（函数定义头中的名字不算调用）"""
    names = []
    for m in _CALL_RE.finditer(source):
        if _DEF_PREFIX_RE.search(source, max(0, m.start() - 24), m.start()):
            continue
        names.append(m.group(1))
    return names


def resolve_call_graph(units: List[FunctionUnit]) -> List[FunctionUnit]:
    """
    仓库内按名字解析调用关系

    callees(u) = 名字以调用形式出现在 u.source 中的同仓库函数（不含 u 自身）；
    callers 为其精确转置。同名函数全部接收这条边。

    Returns:
        新的 FunctionUnit 列表（输入不被修改）
    """
    if not units:
        return []

    repo_ids = {u.repo_id for u in units}
    if len(repo_ids) != 1:
        raise CorpusError(f"resolve_call_graph expects one repository, got {sorted(repo_ids)}")

    by_name: Dict[str, List[FunctionUnit]] = defaultdict(list)
    for unit in units:
        by_name[unit.name].append(unit)

    for name, owners in by_name.items():
        if len(owners) > 1:
            logger.info(f"[RepoScanner] Ambiguous function name '{name}' in {units[0].repo_id} "
                        f"({len(owners)} definitions), edges go to all of them")

    callees: Dict[str, List[str]] = {u.func_id: [] for u in units}
    callers: Dict[str, List[str]] = {u.func_id: [] for u in units}

    for unit in units:
        # 递归调用由自环排除处理
        seen = set()
        for name in call_tokens(unit.source):
            if name in seen or name not in by_name:
                continue
            seen.add(name)
            for target in by_name[name]:
                if target.func_id == unit.func_id:
                    continue
                callees[unit.func_id].append(target.func_id)

    for unit in units:
        for target_id in callees[unit.func_id]:
            callers[target_id].append(unit.func_id)

    resolved = []
    for unit in units:
        resolved.append(FunctionUnit(
            func_id=unit.func_id,
            repo_id=unit.repo_id,
            name=unit.name,
            source=unit.source,
            callers=sorted(set(callers[unit.func_id])),
            callees=sorted(set(callees[unit.func_id])),
            docstring=unit.docstring,
            file_path=unit.file_path,
            start_byte=unit.start_byte,
            end_byte=unit.end_byte
        ))
    return resolved


# ============================================================================
# 快捷函数
# ============================================================================

def scan_corpus(corpus_root: str, ast_backend: str = 'nesting', workers: int = 4) -> List[FunctionUnit]:
    """扫描语料（快捷函数）"""
    return RepoScanner(corpus_root, ast_backend, workers).scan()


def units_by_repo(units: List[FunctionUnit]) -> Dict[str, List[FunctionUnit]]:
    """按仓库分组，保持原顺序"""
    out: Dict[str, List[FunctionUnit]] = defaultdict(list)
    for unit in units:
        out[unit.repo_id].append(unit)
    return dict(out)
