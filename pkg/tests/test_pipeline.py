#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""流水线执行器测试：清单跳过、缺失输入、工作目录锁、严格模式、端到端"""

import pytest

from core.errors import MissingInputError, StageLockedError
from core.models import STAGE_ORDER, StageName
from core.pipeline import LOCK_FILE, STAGE_IO, PipelineRunner
from database.manifest_dao import ManifestDAO
from utils.io_utils import file_hash, read_json, read_jsonl, write_jsonl


@pytest.fixture
def runner(offline_config):
    runner = PipelineRunner(offline_config)
    runner.synth_corpus(3, 6)
    return runner


# 全流程的全部阶段产物
ARTIFACTS = sorted({name for _, outputs in STAGE_IO.values() for name in outputs})


class TestStageSkipping:
    """清单命中时跳过"""

    def test_rerun_is_skipped(self, runner):
        first = runner.run_stage('ingest')
        assert not first.skipped
        assert runner.path('functions').exists()
        second = runner.run_stage(StageName.INGEST)
        assert second.skipped
        assert second.output_hashes == first.output_hashes

    def test_config_change_reruns(self, runner):
        runner.run_stage('ingest')
        runner.run_stage('docgen')
        runner.run_stage('mine')
        runner.config.synth.k = 2
        runner.config.sync()
        assert not runner.run_stage('mine').skipped
        # 与挖掘无关的配置不影响 ingest
        assert runner.run_stage('ingest').skipped

    def test_input_change_reruns(self, runner):
        runner.run_stage('ingest')
        functions = runner.path('functions')
        runner.run_stage('docgen')
        assert runner.run_stage('docgen').skipped
        write_jsonl(functions, read_jsonl(functions)[:-1])
        assert not runner.run_stage('docgen').skipped

    def test_manifest_is_recorded(self, runner):
        runner.run_stage('ingest')
        manifest = ManifestDAO.get(runner.manifest_db, 'ingest')
        assert manifest.output_hashes == {'functions': file_hash(runner.path('functions'))}
        assert 'corpus_root' in manifest.input_hashes


class TestMissingInputs:
    """缺失上游产物"""

    def test_missing_upstream(self, runner):
        with pytest.raises(MissingInputError) as info:
            runner.run_stage('docgen')
        assert info.value.code == f"missing_input:{runner.path('functions')}"

    def test_missing_corpus(self, offline_config):
        with pytest.raises(MissingInputError):
            PipelineRunner(offline_config).run_stage('ingest')

    def test_report_without_eval(self, runner):
        with pytest.raises(MissingInputError):
            runner.report()


class TestLock:
    """工作目录锁"""

    def test_existing_lock_blocks(self, runner):
        runner.workdir.mkdir(parents=True, exist_ok=True)
        (runner.workdir / LOCK_FILE).write_text('123\n')
        with pytest.raises(StageLockedError) as info:
            runner.run_stage('ingest')
        assert info.value.code == 'stage_locked'

    def test_force_unlock(self, runner, offline_config):
        runner.workdir.mkdir(parents=True, exist_ok=True)
        (runner.workdir / LOCK_FILE).write_text('123\n')
        PipelineRunner(offline_config, force_unlock=True).run_stage('ingest')
        assert not (runner.workdir / LOCK_FILE).exists()

    def test_lock_released_after_failure(self, runner):
        with pytest.raises(MissingInputError):
            runner.run_stage('train')
        assert not runner.lock_path.exists()


class TestStrictMode:
    """严格模式校验输出"""

    def test_tampered_output(self, runner, offline_config):
        runner.run_stage('ingest')
        functions = runner.path('functions')
        functions.write_text(functions.read_text(encoding='utf-8') + '\n', encoding='utf-8')
        assert runner.run_stage('ingest').skipped
        strict = PipelineRunner(offline_config, strict=True)
        assert not strict.run_stage('ingest').skipped
        assert strict.run_stage('ingest').skipped


@pytest.mark.slow
class TestEndToEnd:
    """完整流水线"""

    def test_full_run(self, runner):
        manifests = runner.run_all()
        assert [m.stage for m in manifests] == [s.value for s in STAGE_ORDER]
        report = runner.report()
        assert set(report['nl2code']) == {'annotator', 'untrained', 'trained'}
        for entry in report['nl2code'].values():
            assert 0.0 <= entry['mrr'] <= 1.0
        refine_report = read_json(runner.path('refine_report'))
        assert refine_report['total_pairs'] == len(read_jsonl(runner.path('pairs')))
        assert runner.path('grid').exists() and runner.path('mds').exists()
        assert all(m.skipped for m in runner.run_all())

    def test_deterministic(self, tmp_path, offline_config):
        hashes = []
        for name in ('a', 'b'):
            cfg = offline_config.copy()
            cfg.paths.workdir = str(tmp_path / name)
            runner = PipelineRunner(cfg)
            runner.synth_corpus(3, 6)
            runner.run_all()
            runner.run_ablation(1)
            hashes.append({n: file_hash(runner.path(n)) for n in ARTIFACTS + ['ablation', 'ablation_summary']})
        assert len(hashes[0]) == 16
        assert hashes[0] == hashes[1]

    def test_ablation_and_compare(self, runner):
        runner.run_all([StageName.INGEST, StageName.DOCGEN, StageName.MINE])
        assert runner.compare_annotators(256) > 0.0
        runs, summary = runner.run_ablation(1)
        assert len(runs) == 12
        assert runner.path('ablation_summary').exists()
        assert len(summary) == 12
