#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
文件读写工具
JSONL 读写、原子写入、内容哈希
"""

import os
import json
import hashlib
import tempfile
from pathlib import Path
from typing import Iterable, List, Dict, Union

import pandas as pd


PathLike = Union[str, Path]


def atomic_write_text(path: PathLike, content: str):
    """
    原子写入文本：先写同目录临时文件，再 os.replace

    中断时最终路径上不会留下半截文件
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=str(path.parent))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(content)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_bytes(path: PathLike, writer):
    """
    原子写入二进制内容

    Args:
        path: 目标路径
        writer: 回调，接收已打开的二进制文件对象
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix='.tmp', dir=str(path.parent))
    try:
        with os.fdopen(fd, 'wb') as f:
            writer(f)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def dumps_record(record: Dict) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def write_jsonl(path: PathLike, records: Iterable[Dict]):
    """原子写出 JSONL（键排序，保证字节级可复现）"""
    lines = [dumps_record(r) for r in records]
    atomic_write_text(path, ''.join(line + '\n' for line in lines))


def read_jsonl(path: PathLike) -> List[Dict]:
    """读取 JSONL，跳过空行"""
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_json(path: PathLike, data: Dict):
    atomic_write_text(path, json.dumps(data, sort_keys=True, ensure_ascii=False, indent=2) + '\n')


def read_json(path: PathLike) -> Dict:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_csv(path: PathLike, frame: pd.DataFrame):
    """原子写出 CSV"""
    atomic_write_text(path, frame.to_csv(index=False, lineterminator='\n'))


def file_hash(path: PathLike) -> str:
    """文件内容 SHA-256"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def tree_hash(root: PathLike) -> str:
    """目录树哈希（相对路径 + 内容），遍历顺序固定"""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob('*') if p.is_file()):
        digest.update(str(path.relative_to(root)).encode('utf-8'))
        digest.update(file_hash(path).encode('ascii'))
    return digest.hexdigest()
