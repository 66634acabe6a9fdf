#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""文档生成与外部后端客户端测试"""

import json
from types import SimpleNamespace

import httpx
import pytest

from core.config import ProviderConfig
from core.errors import APIError, BudgetTooSmallError
from core.models import FunctionUnit
from services.docgen import (
    ChatDocstringGenerator, DocstringGenerator, HttpDocstringGenerator, TemplateDocstringGenerator,
    build_docgen_prompt, generate_docstrings, get_docstring_generator
)
from services.llm_client import ChatBackend, HttpBackend


def _units():
    caller = FunctionUnit('r/m#main@0', 'r', 'main', 'def main(): return f()', callees=['r/m#f@30'])
    target = FunctionUnit('r/m#f@30', 'r', 'f', 'def f(): return g()',
                          callers=['r/m#main@0'], callees=['r/m#g@60'])
    callee = FunctionUnit('r/m#g@60', 'r', 'g', 'def g(): return 1', callers=['r/m#f@30'])
    return {u.func_id: u for u in (caller, target, callee)}


def _provider(**kwargs) -> ProviderConfig:
    defaults = dict(kind='http', base_url='http://backend.test/gen', max_retries=3, backoff=0.0)
    defaults.update(kwargs)
    return ProviderConfig(**defaults)


class TestPromptBudget:
    """prompt 预算截断"""

    def test_full_context_fits(self):
        units = _units()
        prompt = build_docgen_prompt(units['r/m#f@30'], units, budget=100)
        assert prompt.code_tokens == 12
        assert prompt.callers == ['r/m#main@0']
        assert prompt.callees == ['r/m#g@60']
        assert not prompt.truncated
        assert prompt.text.index('### Target function') < prompt.text.index('### Caller: main')
        assert prompt.text.index('### Caller: main') < prompt.text.index('### Callee: g')

    def test_last_callee_is_truncated_first(self):
        units = _units()
        prompt = build_docgen_prompt(units['r/m#f@30'], units, budget=10)
        assert prompt.code_tokens == 10
        assert prompt.callees == ['r/m#g@60']
        assert prompt.truncated
        assert "### Callee: g\ndef g():\n" in prompt.text

    def test_only_target_when_budget_is_tight(self):
        units = _units()
        prompt = build_docgen_prompt(units['r/m#f@30'], units, budget=4)
        assert prompt.code_tokens == 4
        assert prompt.callers == [] and prompt.callees == []
        assert prompt.truncated

    def test_budget_smaller_than_target(self):
        units = _units()
        with pytest.raises(BudgetTooSmallError):
            build_docgen_prompt(units['r/m#f@30'], units, budget=3)

    @pytest.mark.parametrize('budget', [4, 5, 8, 9, 12, 50])
    def test_code_tokens_never_exceed_budget(self, budget):
        units = _units()
        assert build_docgen_prompt(units['r/m#f@30'], units, budget).code_tokens <= budget


class TestTemplateGenerator:
    """内置模板生成器"""

    def test_summary_and_terms(self):
        unit = FunctionUnit('x', 'r', 'parse_header',
                            "def parse_header(line):\n    parts = line.split(':')\n    return parts[0].strip()")
        assert TemplateDocstringGenerator().generate(unit) == "Parse header. Uses line, parts, split, strip."

    def test_max_terms(self):
        unit = FunctionUnit('x', 'r', 'f', 'def f(): return a + b + c + d')
        assert TemplateDocstringGenerator(max_terms=2).generate(unit) == "F. Uses a, b."

    def test_factory(self):
        assert isinstance(get_docstring_generator(ProviderConfig()), TemplateDocstringGenerator)
        assert isinstance(get_docstring_generator(_provider()), HttpDocstringGenerator)


class TestHttpBackend:
    """HTTP 后端重试"""

    def test_retries_then_succeeds(self):
        calls = []

        def handler(request: httpx.Request) -> httpx.Response:
            calls.append(json.loads(request.content))
            if len(calls) < 3:
                return httpx.Response(503)
            return httpx.Response(200, json={'text': '"""Load the user."""'})

        client = httpx.Client(transport=httpx.MockTransport(handler))
        gen = HttpDocstringGenerator(_provider(), client=client)
        units = _units()
        prompt = build_docgen_prompt(units['r/m#g@60'], units, 100)
        assert gen.generate(units['r/m#g@60'], prompt) == 'Load the user.'
        assert len(calls) == 3
        assert calls[0]['prompt'] == prompt.text

    def test_exhausted_retries_raise(self):
        client = httpx.Client(transport=httpx.MockTransport(lambda request: httpx.Response(500)))
        backend = HttpBackend(_provider(max_retries=2), client=client)
        with pytest.raises(APIError):
            backend.post_json({'x': 1})

    def test_non_object_json_is_retried(self):
        client = httpx.Client(transport=httpx.MockTransport(lambda request: httpx.Response(200, json=[1])))
        backend = HttpBackend(_provider(max_retries=2), client=client)
        with pytest.raises(APIError):
            backend.post_json({})


class _FakeCompletions:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def create(self, **kwargs):
        self.calls += 1
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        message = SimpleNamespace(content=reply)
        return SimpleNamespace(choices=[SimpleNamespace(message=message)])


def _fake_openai(replies):
    completions = _FakeCompletions(replies)
    return SimpleNamespace(chat=SimpleNamespace(completions=completions)), completions


class TestChatBackend:
    """对话后端"""

    def test_retry_then_clean(self):
        client, completions = _fake_openai([RuntimeError('boom'), '   ', '```\nReturns one.\n```'])
        gen = ChatDocstringGenerator(_provider(kind='chat', model_name='m'), client=client)
        unit = _units()['r/m#g@60']
        assert gen.generate(unit, build_docgen_prompt(unit, _units(), 100)) == 'Returns one.'
        assert completions.calls == 3

    def test_exhausted(self):
        client, _ = _fake_openai([RuntimeError('a'), RuntimeError('b')])
        backend = ChatBackend(_provider(kind='chat', max_retries=2), client=client)
        with pytest.raises(APIError):
            backend.complete('hi')


class _FlakyGenerator(DocstringGenerator):
    name = 'flaky'

    def generate(self, unit, prompt):
        if unit.name == 'main':
            raise APIError('down')
        if unit.name == 'g':
            return '   '
        return f"Doc for {unit.name}."


class TestGenerateDocstrings:
    """批量生成"""

    def test_failures_are_excluded(self):
        units = list(_units().values())
        queries = generate_docstrings(units, _FlakyGenerator(), budget=100, max_in_flight=2)
        assert [(q.query_id, q.text) for q in queries] == [('q:r/m#f@30', 'Doc for f.')]

    def test_budget_failures_are_excluded(self):
        units = list(_units().values())
        queries = generate_docstrings(units, TemplateDocstringGenerator(), budget=2)
        assert queries == []

    def test_order_follows_input(self):
        units = list(_units().values())
        queries = generate_docstrings(units, TemplateDocstringGenerator(), budget=100, max_in_flight=3)
        assert [q.func_id for q in queries] == [u.func_id for u in units]
