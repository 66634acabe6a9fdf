#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""阶段清单 DAO 测试"""

from core.models import StageManifest
from database.connection import DatabaseConnection
from database.manifest_dao import ManifestDAO


def _manifest(stage='ingest', config_hash='abc'):
    return StageManifest(stage=stage, input_hashes={'corpus_root': 'h1'}, config_hash=config_hash,
                         output_hashes={'functions': 'h2'}, started_at='2024-01-01T00:00:00',
                         finished_at='2024-01-01T00:00:01')


class TestManifestDAO:
    """清单读写"""

    def test_missing(self, tmp_path):
        assert ManifestDAO.get(tmp_path / 'm.db', 'ingest') is None

    def test_save_and_get(self, tmp_path):
        db = tmp_path / 'sub' / 'm.db'
        assert ManifestDAO.save(db, _manifest())
        loaded = ManifestDAO.get(db, 'ingest')
        assert loaded == _manifest()
        assert loaded.matches({'corpus_root': 'h1'}, 'abc')
        assert not loaded.matches({'corpus_root': 'h1'}, 'other')

    def test_replace(self, tmp_path):
        db = tmp_path / 'm.db'
        ManifestDAO.save(db, _manifest())
        ManifestDAO.save(db, _manifest(config_hash='new'))
        assert ManifestDAO.get(db, 'ingest').config_hash == 'new'
        assert len(ManifestDAO.list_all(db)) == 1

    def test_list_and_delete(self, tmp_path):
        db = tmp_path / 'm.db'
        ManifestDAO.save(db, _manifest('train'))
        ManifestDAO.save(db, _manifest('eval'))
        assert [m.stage for m in ManifestDAO.list_all(db)] == ['eval', 'train']
        assert ManifestDAO.delete(db, 'eval') == 1
        assert ManifestDAO.delete(db, 'eval') == 0
        assert [m.stage for m in ManifestDAO.list_all(db)] == ['train']

    def test_corrupt_row(self, tmp_path):
        db = tmp_path / 'm.db'
        ManifestDAO.save(db, _manifest())
        with DatabaseConnection(db) as conn:
            conn.execute("UPDATE stage_manifests SET input_hashes = '{broken' WHERE stage = 'ingest'")
        assert ManifestDAO.get(db, 'ingest') is None
