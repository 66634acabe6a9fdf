#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""偏好判定器测试"""

import json
from types import SimpleNamespace

import httpx
import pytest

from core.config import ProviderConfig
from core.errors import BackendError, ParseError
from core.models import JudgeChoice
from services.judge import ChatJudge, HttpJudge, OverlapJudge, get_judge, jaccard, parse_choice


class TestOverlapJudge:
    """内置判定器"""

    def test_jaccard(self):
        assert jaccard('load user', 'load_user path') == pytest.approx(2 / 3)
        assert jaccard('', '') == 0.0

    def test_rejects_unrelated_candidate(self):
        judge = OverlapJudge(0.8)
        assert judge.choose('load user', 'def load_user(): pass', 'def merge(): pass') == JudgeChoice.A
        assert not judge.candidate_satisfies('load user', 'def load_user(): pass', 'def merge(): pass')

    def test_accepts_close_candidate(self):
        judge = OverlapJudge(0.8)
        choice = judge.choose('load user', 'def load_user(): pass', 'def load_user(): return')
        assert choice == JudgeChoice.BOTH

    def test_prefers_better_candidate(self):
        judge = OverlapJudge(0.8)
        assert judge.choose('load user', 'def save_user(): pass', 'def load_user(): pass') == JudgeChoice.B


class TestParseChoice:
    """后端回答解析"""

    @pytest.mark.parametrize('raw,choice', [
        ('a', JudgeChoice.A), (' B\n', JudgeChoice.B), ('Both.', JudgeChoice.BOTH), ('BOTH of them', JudgeChoice.BOTH)
    ])
    def test_valid(self, raw, choice):
        assert parse_choice(raw) == choice

    @pytest.mark.parametrize('raw', ['maybe', 'abc', '', None, 1])
    def test_invalid(self, raw):
        with pytest.raises(ParseError):
            parse_choice(raw)


class TestBackendJudges:
    """HTTP / 对话判定器"""

    def test_http_payload(self):
        seen = {}

        def handler(request):
            seen.update(json.loads(request.content))
            return httpx.Response(200, json={'choice': 'B'})

        config = ProviderConfig(kind='http', base_url='http://judge.test', backoff=0.0)
        judge = HttpJudge(config, client=httpx.Client(transport=httpx.MockTransport(handler)))
        assert judge.candidate_satisfies('doc', 'code a', 'code b')
        assert seen == {'docstring': 'doc', 'code_a': 'code a', 'code_b': 'code b'}

    def test_http_unparseable_choice(self):
        def handler(request):
            return httpx.Response(200, json={'choice': 'perhaps'})

        config = ProviderConfig(kind='http', base_url='http://judge.test', backoff=0.0)
        judge = HttpJudge(config, client=httpx.Client(transport=httpx.MockTransport(handler)))
        with pytest.raises(BackendError):
            judge.choose('doc', 'a', 'b')

    def test_chat_prompt(self):
        prompts = []

        def create(**kwargs):
            prompts.append(kwargs['messages'][0]['content'])
            return SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content='A'))])

        client = SimpleNamespace(chat=SimpleNamespace(completions=SimpleNamespace(create=create)))
        judge = ChatJudge(ProviderConfig(kind='chat', base_url='http://x', backoff=0.0), client=client)
        assert judge.choose('find max', 'max(xs)', 'min(xs)') == JudgeChoice.A
        assert 'find max' in prompts[0] and 'CODE B:\nmin(xs)' in prompts[0]

    def test_factory(self):
        assert isinstance(get_judge(ProviderConfig(), 0.5), OverlapJudge)
        assert get_judge(ProviderConfig(), 0.5).fraction == 0.5
