#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
文档字符串生成模块
主要内容：
1. 组装带调用上下文的生成 prompt（预算内按优先级截断）
2. 三种生成器：内置模板 / HTTP / OpenAI 兼容对话
3. 批量生成（有界并发，失败的函数标记为未文档化并排除）
"""

import re
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import httpx
from tqdm import tqdm

from core.config import ProviderConfig
from core.errors import BackendError, BudgetTooSmallError, ParseError
from core.models import DocQuery, FunctionUnit
from services.llm_client import ChatBackend, HttpBackend
from utils.format_utils import truncate_text
from utils.text_utils import identifiers, split_identifier, whitespace_tokens


logger = logging.getLogger(__name__)


# ============================================================================
# Prompt 组装
# ============================================================================

# 固定模板：模板文字不计入预算，预算只约束代码内容的空白分隔 token 数
PROMPT_HEADER = (
    "Write a concise docstring for the target function.\n"
    "The caller and callee code is context only; describe the target function.\n"
)
TARGET_SECTION = "### Target function\n{code}\n"
CALLER_SECTION = "### Caller: {name}\n{code}\n"
CALLEE_SECTION = "### Callee: {name}\n{code}\n"
PROMPT_FOOTER = "### Docstring\n"

_TOKEN_RE = re.compile(r'\S+')


@dataclass
class PromptText:
    """组装好的 prompt"""
    text: str
    code_tokens: int
    callers: List[str] = field(default_factory=list)
    callees: List[str] = field(default_factory=list)
    truncated: bool = False


def _head_tokens(code: str, n: int) -> str:
    """保留前 n 个空白分隔 token（保留原始排版）"""
    if n <= 0:
        return ''
    end = 0
    for i, m in enumerate(_TOKEN_RE.finditer(code)):
        if i == n:
            break
        end = m.end()
    return code[:end]


def build_docgen_prompt(unit: FunctionUnit, units: Dict[str, FunctionUnit], budget: int) -> PromptText:
    """
    构建文档生成 prompt

    顺序：目标函数源码（原样）→ 调用者源码 → 被调用者源码。
    超出预算时从后往前舍弃：放不下的段落按 token 截断，之后的段落整段丢弃，
    因此最后一个被调用者最先被舍弃。

    Args:
        unit: 目标函数
        units: func_id → FunctionUnit 查找表
        budget: 代码内容的 token 预算

    Returns:
        PromptText，code_tokens <= budget

    Raises:
        BudgetTooSmallError: 预算容不下目标函数本身
    """
    source_tokens = len(whitespace_tokens(unit.source))
    if budget < source_tokens:
        raise BudgetTooSmallError(
            f"budget {budget} < {source_tokens} tokens of {unit.func_id}"
        )

    parts = [PROMPT_HEADER, TARGET_SECTION.format(code=unit.source)]
    remaining = budget - source_tokens
    truncated = False
    included = {'caller': [], 'callee': []}

    neighbors = [('caller', fid) for fid in unit.callers] + [('callee', fid) for fid in unit.callees]
    for kind, fid in neighbors:
        other = units.get(fid)
        if other is None:
            continue
        if remaining <= 0:
            truncated = True
            break

        code = other.source
        n = len(whitespace_tokens(code))
        if n > remaining:
            code = _head_tokens(code, remaining)
            n = remaining
            truncated = True

        template = CALLER_SECTION if kind == 'caller' else CALLEE_SECTION
        parts.append(template.format(name=other.name, code=code))
        included[kind].append(fid)
        remaining -= n

    parts.append(PROMPT_FOOTER)
    return PromptText(
        text=''.join(parts),
        code_tokens=budget - remaining,
        callers=included['caller'],
        callees=included['callee'],
        truncated=truncated
    )


# ============================================================================
# 生成器
# ============================================================================

class DocstringGenerator:
    """生成器接口"""

    name = 'base'

    def generate(self, unit: FunctionUnit, prompt: PromptText) -> str:
        raise NotImplementedError


# 模板生成器忽略的常见关键字
_KEYWORDS = frozenset("""
def return if else elif for while in function func fn let const var class import from
self this none true false null nil and or not is pass new lambda try except finally
with as yield break continue switch case default do end then throw catch raise async
await public private static void int str bool float string err go defer range package
""".split())


def _clean_completion(text: str) -> str:
    """去掉模型常带的代码块与三引号包裹"""
    text = text.strip()
    if text.startswith("```"):
        lines = text.split('\n')[1:]
        if lines and lines[-1].strip() == "```":
            lines = lines[:-1]
        text = '\n'.join(lines).strip()
    for quote in ('"""', "'''"):
        if text.startswith(quote) and text.endswith(quote) and len(text) >= 6:
            text = text[3:-3].strip()
    return text


class TemplateDocstringGenerator(DocstringGenerator):
    """
    内置确定性生成器

    摘要 = 函数名拆词 + 源码中出现的标识符（按首次出现顺序，至多 max_terms 个）
    """

    name = 'template'

    def __init__(self, max_terms: int = 8):
        self.max_terms = max_terms

    def generate(self, unit: FunctionUnit, prompt: Optional[PromptText] = None) -> str:
        words = split_identifier(unit.name) or [unit.name.lower()]
        summary = ' '.join(words)
        summary = summary[:1].upper() + summary[1:]

        terms = []
        seen = {unit.name}
        for ident in identifiers(unit.source):
            if ident in seen or ident.lower() in _KEYWORDS:
                continue
            seen.add(ident)
            terms.append(ident)
            if len(terms) >= self.max_terms:
                break

        text = f"{summary}."
        if terms:
            text += f" Uses {', '.join(terms)}."
        return text


class HttpDocstringGenerator(DocstringGenerator):
    """HTTP 生成器：POST {prompt} → {text}"""

    name = 'http'

    def __init__(self, config: ProviderConfig, client: Optional[httpx.Client] = None):
        self.backend = HttpBackend(config, client=client, tag='DocgenHttp')

    def generate(self, unit: FunctionUnit, prompt: PromptText) -> str:
        data = self.backend.post_json({'prompt': prompt.text})
        text = data.get('text')
        if not isinstance(text, str) or not text.strip():
            raise ParseError(f"docgen response for {unit.func_id} has no 'text'")
        return _clean_completion(text)


class ChatDocstringGenerator(DocstringGenerator):
    """OpenAI 兼容对话生成器"""

    name = 'chat'

    def __init__(self, config: ProviderConfig, client=None):
        self.backend = ChatBackend(config, client=client, tag='DocgenChat')

    def generate(self, unit: FunctionUnit, prompt: PromptText) -> str:
        text = _clean_completion(self.backend.complete(prompt.text))
        if not text:
            raise ParseError(f"empty docstring for {unit.func_id}")
        return text


def get_docstring_generator(config: ProviderConfig) -> DocstringGenerator:
    """按后端类型创建生成器"""
    if config.kind == 'http':
        return HttpDocstringGenerator(config)
    if config.kind == 'chat':
        return ChatDocstringGenerator(config)
    return TemplateDocstringGenerator()


# ============================================================================
# 批量生成
# ============================================================================

def query_id_for(func_id: str) -> str:
    return f"q:{func_id}"


def generate_docstrings(
    units: List[FunctionUnit],
    gen: DocstringGenerator,
    budget: int = 1024,
    max_in_flight: int = 1,
    show_progress: bool = False
) -> List[DocQuery]:
    """
    为每个函数生成一条 DocQuery

    Args:
        units: 函数单元（调用上下文在同一列表中查找）
        gen: 生成器
        budget: prompt 代码预算
        max_in_flight: 并发请求上限
        show_progress: 是否显示进度条

    Returns:
        与输入同序的 DocQuery；生成失败或预算不足的函数被排除
    """
    lookup = {u.func_id: u for u in units}

    def work(unit: FunctionUnit) -> Optional[DocQuery]:
        try:
            prompt = build_docgen_prompt(unit, lookup, budget)
            text = gen.generate(unit, prompt)
        except BudgetTooSmallError as e:
            logger.warning(f"[Docgen] Undocumented {unit.func_id}: {e}")
            return None
        except BackendError as e:
            logger.warning(f"[Docgen] Undocumented {unit.func_id} after retries: {e}")
            return None

        text = text.strip()
        if not text:
            logger.warning(f"[Docgen] Undocumented {unit.func_id}: empty text")
            return None
        logger.debug(f"[Docgen] {unit.func_id}: {truncate_text(text, 60)}")
        return DocQuery(query_id=query_id_for(unit.func_id), func_id=unit.func_id, text=text)

    workers = max(1, max_in_flight)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(tqdm(pool.map(work, units), total=len(units), desc='docgen',
                            disable=not show_progress))

    queries = [q for q in results if q is not None]
    skipped = len(units) - len(queries)
    if skipped:
        logger.info(f"[Docgen] {skipped}/{len(units)} units left undocumented")
    logger.info(f"[Docgen] Generated {len(queries)} docstrings with '{gen.name}' generator")
    return queries
