#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义
每个异常携带一个机器可读的 code，CLI 失败时原样输出
"""

from typing import Optional


class PipelineError(Exception):
    """流水线错误基类"""

    code = 'pipeline_error'

    def __init__(self, message: str = '', code: Optional[str] = None):
        super().__init__(message or (code or self.code))
        if code is not None:
            self.code = code


class ConfigError(PipelineError):
    """配置错误（未知字段、取值越界）"""
    code = 'config_error'


class CorpusError(PipelineError):
    """语料抽取错误"""
    code = 'corpus_error'


class BudgetTooSmallError(CorpusError):
    """prompt 预算小于函数源码本身"""
    code = 'budget_too_small'


class BackendError(PipelineError):
    """外部后端错误基类"""
    code = 'backend_error'


class APIError(BackendError):
    """API 调用失败（重试耗尽）"""
    code = 'api_error'


class ParseError(BackendError):
    """后端响应无法解析"""
    code = 'parse_error'


class RefineError(PipelineError):
    """相似度修正错误"""
    code = 'refine_error'


class EncoderError(PipelineError):
    """编码器错误"""
    code = 'encoder_error'


class LossError(PipelineError):
    """损失计算错误"""
    code = 'loss_error'


class NonFiniteError(PipelineError):
    """出现 NaN / Inf"""
    code = 'nonfinite'


class EvalError(PipelineError):
    """评测错误"""
    code = 'eval_error'


class MissingInputError(PipelineError):
    """阶段输入文件缺失"""

    def __init__(self, path: str):
        super().__init__(f"missing input file {path}", code=f"missing_input:{path}")
        self.path = path


class StageLockedError(PipelineError):
    """同一工作目录已有流水线实例在运行"""
    code = 'stage_locked'


class UnparseableCodeError(CorpusError):
    """代码无法解析为语法树"""
    code = 'unparseable'
