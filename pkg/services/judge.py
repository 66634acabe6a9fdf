#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
偏好判定器
给定 (docstring, 正样本代码, 候选代码)，判断候选代码是否同样满足 docstring
"""

import re
import logging
from typing import Optional

import httpx

from core.config import ProviderConfig
from core.errors import ParseError
from core.models import JudgeChoice
from services.llm_client import ChatBackend, HttpBackend
from utils.text_utils import tokenize


logger = logging.getLogger(__name__)


def jaccard(a: str, b: str) -> float:
    """token 集合的 Jaccard 系数"""
    sa, sb = set(tokenize(a)), set(tokenize(b))
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


class PreferenceJudge:
    """判定器接口"""

    name = 'base'

    def choose(self, docstring: str, positive_code: str, candidate_code: str) -> JudgeChoice:
        raise NotImplementedError

    def candidate_satisfies(self, docstring: str, positive_code: str, candidate_code: str) -> bool:
        return self.choose(docstring, positive_code, candidate_code).accepts_candidate


class OverlapJudge(PreferenceJudge):
    """
    内置确定性判定器

    候选与 docstring 的 Jaccard 重叠 > fraction × 正样本的重叠 时接受
    """

    name = 'overlap'

    def __init__(self, fraction: float = 0.8):
        self.fraction = fraction

    def choose(self, docstring: str, positive_code: str, candidate_code: str) -> JudgeChoice:
        candidate = jaccard(docstring, candidate_code)
        positive = jaccard(docstring, positive_code)
        if candidate > self.fraction * positive:
            return JudgeChoice.BOTH if candidate <= positive else JudgeChoice.B
        return JudgeChoice.A


def parse_choice(raw) -> JudgeChoice:
    """把后端返回的 a / b / both（大小写不敏感）解析为 JudgeChoice"""
    if not isinstance(raw, str):
        raise ParseError(f"judge choice must be a string, got {type(raw).__name__}")
    match = re.match(r'\s*(both|a|b)\b', raw.strip().lower())
    if not match:
        raise ParseError(f"unrecognized judge choice: {raw[:40]!r}")
    return JudgeChoice(match.group(1))


class HttpJudge(PreferenceJudge):
    """HTTP 判定：POST {docstring, code_a, code_b} → {choice}"""

    name = 'http'

    def __init__(self, config: ProviderConfig, client: Optional[httpx.Client] = None):
        self.backend = HttpBackend(config, client=client, tag='JudgeHttp')

    def choose(self, docstring: str, positive_code: str, candidate_code: str) -> JudgeChoice:
        data = self.backend.post_json({
            'docstring': docstring,
            'code_a': positive_code,
            'code_b': candidate_code
        })
        return parse_choice(data.get('choice'))


JUDGE_PROMPT = """You are reviewing code search results.

QUERY (docstring):
{docstring}

CODE A:
{code_a}

CODE B:
{code_b}

Which code satisfies the query? Answer with exactly one word: A, B, or BOTH."""


class ChatJudge(PreferenceJudge):
    """OpenAI 兼容对话判定"""

    name = 'chat'

    def __init__(self, config: ProviderConfig, client=None):
        self.backend = ChatBackend(config, client=client, tag='JudgeChat')

    def choose(self, docstring: str, positive_code: str, candidate_code: str) -> JudgeChoice:
        prompt = JUDGE_PROMPT.format(docstring=docstring, code_a=positive_code, code_b=candidate_code)
        return parse_choice(self.backend.complete(prompt))


def get_judge(config: ProviderConfig, fraction: float = 0.8) -> PreferenceJudge:
    """按后端类型创建判定器"""
    if config.kind == 'http':
        return HttpJudge(config)
    if config.kind == 'chat':
        return ChatJudge(config)
    return OverlapJudge(fraction)
