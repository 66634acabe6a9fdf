#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
数据库连接管理
阶段清单保存在 workdir 下的 sqlite 文件中，首次打开时建表
"""

import logging
import sqlite3
from pathlib import Path
from typing import Optional


logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = """
    CREATE TABLE IF NOT EXISTS stage_manifests (
        stage TEXT PRIMARY KEY,
        input_hashes TEXT NOT NULL DEFAULT '{}',
        config_hash TEXT NOT NULL,
        output_hashes TEXT NOT NULL DEFAULT '{}',
        started_at TEXT,
        finished_at TEXT
    )
"""


def get_db_connection(db_path) -> sqlite3.Connection:
    """
    打开清单数据库（父目录不存在时自动创建）

    Args:
        db_path: sqlite 文件路径

    Returns:
        已建表的 sqlite3.Connection
    """
    path = Path(db_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(str(path), check_same_thread=False)
    try:
        conn.execute(MANIFEST_SCHEMA)
    except sqlite3.Error as e:
        logger.error(f"[Database] Cannot create schema in {path}: {e}")
        conn.close()
        raise
    return conn


class DatabaseConnection:
    """
    单次事务：正常退出提交，异常回滚，最后关闭

        with DatabaseConnection(path) as conn:
            conn.execute("DELETE FROM stage_manifests WHERE stage = ?", (stage,))
    """

    def __init__(self, db_path):
        self.db_path = db_path
        self.conn: Optional[sqlite3.Connection] = None

    def __enter__(self) -> sqlite3.Connection:
        self.conn = get_db_connection(self.db_path)
        return self.conn

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.conn is None:
            return False
        try:
            if exc_type is None:
                self.conn.commit()
            else:
                logger.warning(f"[Database] Rolling back after {exc_type.__name__}: {exc_val}")
                self.conn.rollback()
        finally:
            self.conn.close()
            self.conn = None
        return False
