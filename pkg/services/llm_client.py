#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
外部后端客户端
- HttpBackend：POST JSON → JSON（httpx），用于文档生成 / 向量标注 / 判定
- ChatBackend：OpenAI 兼容的对话接口（openai），用于文档生成与判定
两者共享同一套重试策略：第 n 次失败后等待 n * backoff 秒
"""

import json
import time
import logging
from typing import Dict, Optional

import httpx
from openai import OpenAI

from core.config import ProviderConfig
from core.errors import APIError, ParseError


logger = logging.getLogger(__name__)


class HttpBackend:
    """JSON over HTTP 后端"""

    def __init__(self, config: ProviderConfig, client: Optional[httpx.Client] = None, tag: str = 'Http'):
        """
        Args:
            config: 后端配置（base_url 为完整端点）
            client: 可注入的 httpx.Client（测试用 MockTransport）
            tag: 日志标签
        """
        self.config = config
        self.tag = tag
        headers = {}
        if config.api_key:
            headers['Authorization'] = f"Bearer {config.api_key}"
        self.client = client or httpx.Client(timeout=config.timeout, headers=headers)

    def post_json(self, payload: Dict) -> Dict:
        """
        发送请求（带重试）

        Raises:
            APIError: 重试耗尽
        """
        last_error: Optional[Exception] = None
        for attempt in range(self.config.max_retries):
            try:
                response = self.client.post(self.config.base_url, json=payload)
                response.raise_for_status()
                data = response.json()
                if not isinstance(data, dict):
                    raise ParseError(f"expected JSON object, got {type(data).__name__}")
                return data
            except (httpx.HTTPError, json.JSONDecodeError, ParseError) as e:
                last_error = e
                if attempt < self.config.max_retries - 1:
                    wait_time = (attempt + 1) * self.config.backoff
                    logger.warning(f"[{self.tag}] Request failed, retry in {wait_time}s "
                                   f"({attempt + 1}/{self.config.max_retries}): {e}")
                    time.sleep(wait_time)

        raise APIError(f"{self.tag} request failed after {self.config.max_retries} attempts: {last_error}")

    def close(self):
        self.client.close()


class ChatBackend:
    """OpenAI 兼容对话后端"""

    def __init__(self, config: ProviderConfig, client: Optional[OpenAI] = None, tag: str = 'Chat'):
        self.config = config
        self.tag = tag

        api_key = config.api_key
        if "ollama" in config.base_url.lower() or "localhost:11434" in config.base_url:
            api_key = "ollama"

        self.client = client or OpenAI(api_key=api_key or 'unset', base_url=config.base_url)

    def complete(self, prompt: str, temperature: float = 0.0) -> str:
        """
        单轮补全（带重试）

        Raises:
            APIError: 重试耗尽
        """
        last_error: Optional[Exception] = None
        for attempt in range(self.config.max_retries):
            try:
                response = self.client.chat.completions.create(
                    model=self.config.model_name,
                    messages=[{"role": "user", "content": prompt}],
                    temperature=temperature,
                    timeout=self.config.timeout
                )
                content = response.choices[0].message.content
                if not content or not content.strip():
                    raise ParseError("empty completion")
                return content.strip()
            except Exception as e:
                last_error = e
                if attempt < self.config.max_retries - 1:
                    wait_time = (attempt + 1) * self.config.backoff
                    logger.warning(f"[{self.tag}] API error, retry in {wait_time}s "
                                   f"({attempt + 1}/{self.config.max_retries}): {e}")
                    time.sleep(wait_time)

        raise APIError(f"{self.tag} completion failed after {self.config.max_retries} attempts: {last_error}")
