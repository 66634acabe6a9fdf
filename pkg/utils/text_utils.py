#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
文本工具
分词、特征哈希、种子派生
"""

import re
import hashlib
from functools import lru_cache
from typing import List, Optional


_ALNUM_RE = re.compile(r'[A-Za-z0-9]+')
_IDENT_RE = re.compile(r'[A-Za-z_][A-Za-z0-9_]*')
_CAMEL_RE = re.compile(r'[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[0-9]+')


def tokenize(text: str, max_tokens: Optional[int] = None) -> List[str]:
    """
    按非字母数字边界切分并转小写

    Args:
        text: 原始文本
        max_tokens: 截断长度（None 不截断）
    """
    tokens = [t.lower() for t in _ALNUM_RE.findall(text)]
    if max_tokens is not None:
        tokens = tokens[:max_tokens]
    return tokens


def whitespace_tokens(text: str) -> List[str]:
    """预算计数用的 token：空白分隔"""
    return text.split()


def identifiers(text: str) -> List[str]:
    """源码中的标识符（保留原始大小写与下划线）"""
    return _IDENT_RE.findall(text)


def split_identifier(name: str) -> List[str]:
    """snake_case / camelCase 拆词"""
    words = []
    for part in name.split('_'):
        words.extend(w.lower() for w in _CAMEL_RE.findall(part))
    return words


@lru_cache(maxsize=1 << 16)
def _token_digest(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode('utf-8'), digest_size=8).digest(), 'little')


def hash_token(token: str, dim: int) -> int:
    """token → 桶编号（与进程无关的稳定哈希）"""
    return _token_digest(token) % dim


def derive_seed(root: int, *labels) -> int:
    """
    从根种子派生子种子

    seed = BLAKE2b("root:label1:label2...") 的前 8 字节（小端）对 2**63 取模
    """
    payload = ':'.join([str(root)] + [str(label) for label in labels])
    digest = hashlib.blake2b(payload.encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little') % (1 << 63)


def stable_id(*parts) -> str:
    """由若干字段生成短而稳定的 id"""
    payload = '\x1f'.join(str(p) for p in parts)
    return hashlib.blake2b(payload.encode('utf-8'), digest_size=8).hexdigest()
