#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
格式化工具函数
评测汇总表、百分比与耗时格式化
"""

from typing import Dict, List, Optional

import pandas as pd


def format_percent(value: Optional[float], decimals: int = 2) -> str:
    """
    格式化百分比

    Args:
        value: [0, 1] 区间的指标值，None / NaN 显示为 "-"
        decimals: 小数位数

    Returns:
        百分比字符串（如 "69.75%"）
    """
    if value is None or value != value:
        return "-"
    return f"{value * 100:.{decimals}f}%"


def format_duration(seconds: float) -> str:
    """
    格式化时长

    Returns:
        格式化后的时长（如 "1m 23s"）
    """
    seconds = int(round(seconds))
    hours = seconds // 3600
    minutes = (seconds % 3600) // 60
    secs = seconds % 60

    if hours > 0:
        return f"{hours}h {minutes}m"
    elif minutes > 0:
        return f"{minutes}m {secs}s"
    else:
        return f"{secs}s"


def truncate_text(text: str, max_length: int = 50, suffix: str = "...") -> str:
    """截断文本（日志中显示 docstring 等长文本）"""
    if len(text) <= max_length:
        return text
    return text[:max_length - len(suffix)] + suffix


def summary_table(rows: List[Dict]) -> pd.DataFrame:
    """
    指标汇总表：每行 {model, task, metric, value}，追加 percent 列

    Args:
        rows: 指标行

    Returns:
        DataFrame[model, task, metric, value, percent]
    """
    table = pd.DataFrame(rows, columns=['model', 'task', 'metric', 'value'])
    table['percent'] = [format_percent(v) for v in table['value']]
    return table


def render_table(table: pd.DataFrame) -> str:
    """终端输出用的纯文本表格"""
    if table.empty:
        return "(empty)"
    return table.to_string(index=False)
