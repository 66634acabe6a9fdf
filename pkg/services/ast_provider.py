#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
语法树提供者
- NestingAstProvider：内置、与语言无关，按括号/缩进嵌套构树，节点标签为 token 类别
- PythonAstProvider：基于标准库 ast，节点标签为语法节点类型
"""

import re
import ast
import logging
import textwrap
from dataclasses import dataclass
from typing import List, Optional, Tuple

from core.errors import UnparseableCodeError
from core.models import AstNode, AstTree


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FunctionSpan:
    """源文件中一个函数的位置（字节偏移）"""
    name: str
    start_byte: int
    end_byte: int


@dataclass(frozen=True)
class Token:
    """词法单元"""
    kind: str      # keyword / identifier / literal / punct
    text: str
    start: int     # 字符偏移
    end: int
    line: int      # 0 起始行号


# ============================================================================
# 接口
# ============================================================================

class AstProvider:
    """语法树提供者接口"""

    name = 'abstract'

    def supports(self, language_tag: str) -> bool:
        raise NotImplementedError

    def find_functions(self, text: str) -> List[FunctionSpan]:
        """返回文件内全部具名函数（含嵌套），按起始偏移排序"""
        raise NotImplementedError

    def parse(self, source: str) -> AstTree:
        """把一段代码解析为有序带标签树"""
        raise NotImplementedError


# ============================================================================
# 内置嵌套解析器
# ============================================================================

KEYWORDS = frozenset({
    'def', 'function', 'func', 'fn', 'return', 'if', 'elif', 'else', 'for',
    'while', 'in', 'not', 'and', 'or', 'is', 'class', 'import', 'from', 'as',
    'try', 'except', 'finally', 'raise', 'with', 'yield', 'lambda', 'pass',
    'break', 'continue', 'None', 'True', 'False', 'null', 'nil', 'true',
    'false', 'var', 'let', 'const', 'new', 'switch', 'case', 'default', 'do',
    'throw', 'throws', 'catch', 'struct', 'impl', 'pub', 'package', 'public',
    'private', 'protected', 'static', 'void', 'async', 'await', 'global',
    'nonlocal', 'del', 'assert', 'end', 'then', 'match', 'go', 'defer',
    'range', 'type', 'interface', 'enum', 'mut', 'loop', 'where', 'extends'
})

DEF_KEYWORDS = frozenset({'def', 'function', 'func', 'fn'})

HASH_COMMENT_LANGS = frozenset({'python', 'ruby', 'shell', 'bash', 'perl', 'r'})

OPEN_BRACKETS = {'(': ')', '[': ']', '{': '}'}
CLOSE_BRACKETS = {v: k for k, v in OPEN_BRACKETS.items()}

_STRING = (
    r'"""[\s\S]*?"""|\'\'\'[\s\S]*?\'\'\''
    r'|"(?:\\.|[^"\\\n])*"|\'(?:\\.|[^\'\\\n])*\'|`(?:\\.|[^`\\])*`'
)
_NUMBER = r'0[xX][0-9a-fA-F]+|\d+(?:\.\d+)?(?:[eE][+-]?\d+)?'
_IDENT = r'[A-Za-z_$][A-Za-z0-9_$]*'
_OPERATOR = r'==|!=|<=|>=|->|=>|\*\*|&&|\|\||::|\+=|-=|\*=|/=|<<|>>|//|\S'


def _build_lexer(hash_comments: bool):
    comment = r'#[^\n]*' if hash_comments else r'//[^\n]*|/\*[\s\S]*?\*/'
    pattern = (
        rf'(?P<ws>[ \t\r\f\v]+)|(?P<nl>\n)|(?P<comment>{comment})'
        rf'|(?P<string>{_STRING})|(?P<number>{_NUMBER})'
        rf'|(?P<ident>{_IDENT})|(?P<op>{_OPERATOR})'
    )
    return re.compile(pattern)


_LEXERS = {True: _build_lexer(True), False: _build_lexer(False)}


class NestingAstProvider(AstProvider):
    """
    按括号与缩进嵌套构树

    树结构：module → stmt → (叶子 token | group | block)
    - 括号内容成为 group 节点（标签 group:( 等）
    - 缩进加深的行挂在上一条 stmt 下的 block 节点中
    叶子标签：identifier / literal 只记类别；keyword / punct 带上词素
    """

    name = 'nesting'

    def __init__(self, language_tag: str = 'python'):
        self.language_tag = language_tag
        self.hash_comments = language_tag.lower() in HASH_COMMENT_LANGS
        self._lexer = _LEXERS[self.hash_comments]

    def supports(self, language_tag: str) -> bool:
        return True

    # ------------------------------------------------------------------ 词法

    def tokenize(self, text: str) -> List[Token]:
        tokens = []
        line = 0
        for m in self._lexer.finditer(text):
            kind = m.lastgroup
            value = m.group()
            if kind == 'nl':
                line += 1
                continue
            if kind in ('ws', 'comment'):
                line += value.count('\n')
                continue
            if kind == 'string' or kind == 'number':
                tok_kind = 'literal'
            elif kind == 'ident':
                tok_kind = 'keyword' if value in KEYWORDS else 'identifier'
            else:
                tok_kind = 'punct'
            tokens.append(Token(tok_kind, value, m.start(), m.end(), line))
            line += value.count('\n')
        return tokens

    @staticmethod
    def _label(tok: Token) -> str:
        if tok.kind in ('keyword', 'punct'):
            return f"{tok.kind}:{tok.text}"
        return tok.kind

    # ------------------------------------------------------------------ 构树

    def parse(self, source: str) -> AstTree:
        tokens = self.tokenize(source)
        line_indent = _line_indents(source)

        root = AstNode('module')
        # 缩进栈：(缩进, 容器节点)
        indent_stack: List[Tuple[int, AstNode]] = [(-1, root)]
        bracket_stack: List[Tuple[str, AstNode]] = []
        current_stmt: Optional[AstNode] = None
        current_stmt_indent = -1
        current_line = -1

        for tok in tokens:
            if not bracket_stack and tok.line != current_line:
                # 新逻辑行：先退出比它深的 block，再视缩进决定是否开新 block
                indent = line_indent[tok.line]
                while len(indent_stack) > 1 and indent <= indent_stack[-1][0]:
                    indent_stack.pop()
                container = indent_stack[-1][1]
                if current_stmt is not None and indent > current_stmt_indent:
                    block = current_stmt.add(AstNode('block'))
                    indent_stack.append((current_stmt_indent, block))
                    container = block
                current_stmt = container.add(AstNode('stmt'))
                current_stmt_indent = indent
                current_line = tok.line

            target = bracket_stack[-1][1] if bracket_stack else current_stmt

            if tok.text in OPEN_BRACKETS:
                group = target.add(AstNode(f"group:{tok.text}"))
                bracket_stack.append((tok.text, group))
            elif tok.text in CLOSE_BRACKETS:
                if not bracket_stack or bracket_stack[-1][0] != CLOSE_BRACKETS[tok.text]:
                    raise UnparseableCodeError(f"unbalanced '{tok.text}' at offset {tok.start}")
                bracket_stack.pop()
            else:
                target.add(AstNode(self._label(tok)))
            # 跨行的括号或字符串结束后，同一行的后续 token 仍属于当前 stmt
            current_line = tok.line + tok.text.count("\n")

        if bracket_stack:
            raise UnparseableCodeError(f"unclosed '{bracket_stack[-1][0]}'")
        return AstTree(root)

    # ------------------------------------------------------------------ 函数定位

    def find_functions(self, text: str) -> List[FunctionSpan]:
        tokens = self.tokenize(text)
        line_indent = _line_indents(text)
        line_ends = _line_end_offsets(text)
        spans = []

        for i in range(len(tokens) - 2):
            kw, name, paren = tokens[i], tokens[i + 1], tokens[i + 2]
            if not (kw.text in DEF_KEYWORDS and name.kind == 'identifier' and paren.text == '('):
                continue
            close = _matching(tokens, i + 2)
            if close is None:
                logger.debug(f"[NestingAst] Unclosed parameter list for {name.text}")
                continue

            end_char = self._function_end(tokens, close, kw, line_indent, line_ends)
            if end_char is None:
                continue
            start_b = _byte_offset(text, kw.start)
            end_b = _byte_offset(text, end_char)
            spans.append(FunctionSpan(name.text, start_b, end_b))

        spans.sort(key=lambda s: (s.start_byte, s.end_byte))
        return spans

    def _function_end(self, tokens: List[Token], close: int, kw: Token,
                      line_indent: List[int], line_ends: List[int]) -> Optional[int]:
        """参数表之后：遇到行尾 ':' 按缩进取体，遇到 '{' 按括号取体"""
        depth = 0
        for j in range(close + 1, len(tokens)):
            tok = tokens[j]
            if tok.text in OPEN_BRACKETS and tok.text != '{':
                depth += 1
            elif tok.text in CLOSE_BRACKETS and tok.text != '}':
                depth -= 1
            elif depth == 0 and tok.text == '{':
                brace_close = _matching(tokens, j)
                return tokens[brace_close].end if brace_close is not None else None
            elif depth == 0 and tok.text == ':':
                return self._indented_body_end(tokens, j, kw, line_indent, line_ends)
            elif depth == 0 and tok.text == ';':
                return None  # 仅声明
        return None

    @staticmethod
    def _indented_body_end(tokens: List[Token], colon: int, kw: Token,
                           line_indent: List[int], line_ends: List[int]) -> int:
        def_indent = line_indent[kw.line]
        last_line = tokens[colon].line
        depth = 0
        for tok in tokens[colon + 1:]:
            if depth == 0 and tok.line > last_line and line_indent[tok.line] <= def_indent:
                break
            if tok.text in OPEN_BRACKETS:
                depth += 1
            elif tok.text in CLOSE_BRACKETS:
                depth -= 1
            last_line = max(last_line, tok.line + tok.text.count('\n'))
        return line_ends[last_line]


def _line_indents(text: str) -> List[int]:
    """每行前导空白宽度（tab 记 4）"""
    indents = []
    for line in text.split('\n'):
        stripped = line.lstrip(' \t')
        width = 0
        for ch in line[:len(line) - len(stripped)]:
            width += 4 if ch == '\t' else 1
        indents.append(width)
    return indents


def _line_end_offsets(text: str) -> List[int]:
    """每行末尾（不含换行符）的字符偏移"""
    ends = []
    pos = 0
    for line in text.split('\n'):
        pos += len(line)
        ends.append(pos)
        pos += 1
    return ends


def _matching(tokens: List[Token], open_index: int) -> Optional[int]:
    """找到与 open_index 处括号匹配的闭括号下标"""
    stack = []
    for j in range(open_index, len(tokens)):
        text = tokens[j].text
        if text in OPEN_BRACKETS:
            stack.append(text)
        elif text in CLOSE_BRACKETS:
            if not stack or stack[-1] != CLOSE_BRACKETS[text]:
                return None
            stack.pop()
            if not stack:
                return j
    return None


def _byte_offset(text: str, char_offset: int) -> int:
    return len(text[:char_offset].encode('utf-8'))


# ============================================================================
# Python 标准库 ast
# ============================================================================

# 不参与结构比较的上下文节点
_SKIPPED_NODES = (ast.Load, ast.Store, ast.Del, ast.expr_context)


class PythonAstProvider(AstProvider):
    """Python 语法后端"""

    name = 'python'

    def supports(self, language_tag: str) -> bool:
        return language_tag.lower() == 'python'

    def find_functions(self, text: str) -> List[FunctionSpan]:
        try:
            module = ast.parse(text)
        except SyntaxError as e:
            raise UnparseableCodeError(f"python syntax error: {e}")

        data = text.encode('utf-8')
        line_starts = [0]
        for idx, byte in enumerate(data):
            if byte == 0x0A:
                line_starts.append(idx + 1)

        spans = []
        for node in ast.walk(module):
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                start = line_starts[node.lineno - 1] + node.col_offset
                end = line_starts[node.end_lineno - 1] + node.end_col_offset
                spans.append(FunctionSpan(node.name, start, end))
        spans.sort(key=lambda s: (s.start_byte, s.end_byte))
        return spans

    def parse(self, source: str) -> AstTree:
        try:
            module = ast.parse(textwrap.dedent(source))
        except SyntaxError as e:
            raise UnparseableCodeError(f"python syntax error: {e}")
        return AstTree(self._convert(module))

    def _convert(self, node: ast.AST) -> AstNode:
        out = AstNode(type(node).__name__)
        for child in ast.iter_child_nodes(node):
            if isinstance(child, _SKIPPED_NODES):
                continue
            out.children.append(self._convert(child))
        return out


# ============================================================================
# 工厂
# ============================================================================

def get_ast_provider(backend: str, language_tag: str) -> AstProvider:
    """
    按配置选择提供者

    Args:
        backend: nesting / python / auto
        language_tag: 仓库声明的语言
    """
    if backend == 'nesting':
        return NestingAstProvider(language_tag)

    python = PythonAstProvider()
    if python.supports(language_tag):
        return python

    if backend == 'python':
        logger.warning(f"[AstProvider] python backend does not support '{language_tag}', "
                       f"falling back to nesting parser")
    return NestingAstProvider(language_tag)
