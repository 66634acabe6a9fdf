#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
阶段清单数据访问对象（DAO）
负责清单的读取、写入与清除
"""

import json
import logging
import sqlite3
from typing import List, Optional

from database.connection import DatabaseConnection
from core.models import StageManifest


logger = logging.getLogger(__name__)


class ManifestDAO:
    """阶段清单数据访问对象"""

    @staticmethod
    def get(db_path, stage: str) -> Optional[StageManifest]:
        """
        读取阶段清单

        Returns:
            StageManifest，不存在或解析失败时为 None
        """
        with DatabaseConnection(db_path) as conn:
            row = conn.execute(
                "SELECT stage, input_hashes, config_hash, output_hashes, started_at, finished_at "
                "FROM stage_manifests WHERE stage = ?",
                (stage,)
            ).fetchone()

        if row is None:
            return None
        try:
            return StageManifest(
                stage=row[0],
                input_hashes=json.loads(row[1]),
                config_hash=row[2],
                output_hashes=json.loads(row[3]),
                started_at=row[4],
                finished_at=row[5]
            )
        except json.JSONDecodeError as e:
            logger.warning(f"[ManifestDAO] Corrupt manifest for {stage}: {e}")
            return None

    @staticmethod
    def save(db_path, manifest: StageManifest) -> bool:
        """
        写入（覆盖）阶段清单

        Returns:
            成功标志
        """
        try:
            with DatabaseConnection(db_path) as conn:
                conn.execute(
                    "INSERT OR REPLACE INTO stage_manifests "
                    "(stage, input_hashes, config_hash, output_hashes, started_at, finished_at) "
                    "VALUES (?, ?, ?, ?, ?, ?)",
                    (
                        manifest.stage,
                        json.dumps(manifest.input_hashes, sort_keys=True),
                        manifest.config_hash,
                        json.dumps(manifest.output_hashes, sort_keys=True),
                        manifest.started_at,
                        manifest.finished_at
                    )
                )
            return True
        except sqlite3.Error as e:
            logger.error(f"[ManifestDAO] Failed to save manifest for {manifest.stage}: {e}")
            return False

    @staticmethod
    def list_all(db_path) -> List[StageManifest]:
        with DatabaseConnection(db_path) as conn:
            stages = [row[0] for row in conn.execute("SELECT stage FROM stage_manifests ORDER BY stage")]
        return [m for m in (ManifestDAO.get(db_path, s) for s in stages) if m is not None]

    @staticmethod
    def delete(db_path, stage: str) -> int:
        """删除阶段清单，返回删除行数"""
        with DatabaseConnection(db_path) as conn:
            return conn.execute("DELETE FROM stage_manifests WHERE stage = ?", (stage,)).rowcount
