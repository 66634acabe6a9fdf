#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""配置加载、校验与阶段哈希测试"""

import pytest
import yaml

from core.config import ConfigManager, PipelineConfig
from core.errors import ConfigError
from core.models import Objective, StageName


class TestConfigLoad:
    """YAML 加载"""

    def test_missing_file_uses_defaults(self, tmp_path):
        cfg = ConfigManager(str(tmp_path / 'nope.yaml')).load()
        assert cfg.seed == 3407
        assert cfg.synth.k == 5
        assert cfg.train.tau == 0.05

    def test_values_are_read(self, tmp_path):
        path = tmp_path / 'c.yaml'
        path.write_text(yaml.safe_dump({'seed': 7, 'synth': {'k': 3}, 'refine': {'delta_s': 0.2}}))
        cfg = ConfigManager(str(path)).load()
        assert cfg.seed == 7
        assert cfg.train.k == 3
        assert cfg.train.delta_s == 0.2
        assert cfg.train.seed == 7

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / 'c.yaml'
        path.write_text(yaml.safe_dump({'synth': {'k': 3, 'kk': 1}}))
        with pytest.raises(ConfigError, match='kk'):
            ConfigManager(str(path)).load()

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({'extra': {}})

    def test_mirrored_train_keys_not_allowed_in_file(self):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict({'train': {'k': 3}})

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / 'c.yaml'
        path.write_text("seed: [1, 2\n")
        with pytest.raises(ConfigError):
            ConfigManager(str(path)).load()

    @pytest.mark.parametrize('data', [
        {'refine': {'delta_s': 0}},
        {'train': {'tau': 0}},
        {'synth': {'k': 0}},
        {'eval': {'holdout_fraction': 1.0}},
        {'seed': -1},
        {'backends': {'judge': {'kind': 'http'}}},
    ])
    def test_validation(self, data):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(data)

    @pytest.mark.parametrize('data', [
        {'train': {'tau': 'fast'}},
        {'train': {'epochs': 1.5}},
        {'train': {'objective': 'triplet'}},
        {'synth': {'k': True}},
        {'refine': {'weighted_intersection': 'yes'}},
        {'refine': {'strategies': 'threshold'}},
        {'eval': {'grid_values': [0.1, 'x']}},
        {'backends': {'judge': {'backoff': None}}},
        {'seed': True},
    ])
    def test_wrong_type_is_config_error(self, data):
        with pytest.raises(ConfigError):
            PipelineConfig.from_dict(data)

    def test_integer_accepted_for_float(self):
        cfg = PipelineConfig.from_dict({'train': {'tau': 1}, 'eval': {'grid_values': [1, 0.5]}})
        assert cfg.train.tau == 1.0 and isinstance(cfg.train.tau, float)
        assert cfg.eval.grid_values == [1.0, 0.5]

    def test_objective_overrides_weights(self):
        cfg = PipelineConfig.from_dict({'train': {'objective': 'infonce'}})
        assert cfg.train.objective == Objective.INFONCE
        assert (cfg.train.w1, cfg.train.w2) == (1.0, 0.0)


class TestConfigOverrides:
    """命令行覆盖与凭据"""

    def test_apply_overrides(self):
        cfg = PipelineConfig.from_dict({'backends': {'judge': {'kind': 'http', 'base_url': 'http://x'}}})
        cfg.apply_overrides(seed=11, offline=True, workdir='/tmp/w')
        assert cfg.seed == 11 and cfg.train.seed == 11
        assert cfg.backends.judge.kind == 'builtin'
        assert cfg.paths.workdir == '/tmp/w'

    def test_env_only_overrides_credentials(self):
        cfg = PipelineConfig()
        cfg.apply_env_credentials({'CODEORDER_JUDGE_API_KEY': 'secret', 'CODEORDER_SEED': '5'})
        assert cfg.backends.judge.api_key == 'secret'
        assert cfg.seed == 3407

    def test_save_strips_credentials(self, tmp_path):
        path = tmp_path / 'out.yaml'
        manager = ConfigManager(str(path))
        cfg = manager.load()
        cfg.backends.docgen.api_key = 'secret'
        assert manager.save(cfg) is True
        data = yaml.safe_load(path.read_text())
        assert data['backends']['docgen']['api_key'] == ''
        assert manager.save(cfg) is False

    def test_preset_fills_endpoint(self, tmp_path):
        path = tmp_path / 'c.yaml'
        path.write_text(yaml.safe_dump({'backends': {
            'docgen': {'kind': 'chat', 'preset': 'deepseek'},
            'judge': {'kind': 'chat', 'preset': 'ollama', 'model_name': 'llama3'}
        }}))
        cfg = ConfigManager(str(path)).load()
        assert cfg.backends.docgen.base_url == 'https://api.deepseek.com'
        assert cfg.backends.docgen.model_name == 'deepseek-chat'
        # 显式字段优先于预设
        assert cfg.backends.judge.base_url == 'http://localhost:11434/v1'
        assert cfg.backends.judge.model_name == 'llama3'

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError, match='preset'):
            PipelineConfig.from_dict({'backends': {'docgen': {'kind': 'chat', 'preset': 'nope'}}})


class TestStageHash:
    """阶段配置哈希"""

    def test_unrelated_change_keeps_hash(self):
        a, b = PipelineConfig(), PipelineConfig()
        b.train.lr = 0.1
        assert a.stage_hash(StageName.MINE) == b.stage_hash(StageName.MINE)
        assert a.stage_hash(StageName.TRAIN) != b.stage_hash(StageName.TRAIN)

    def test_credentials_excluded(self):
        a, b = PipelineConfig(), PipelineConfig()
        b.backends.judge.api_key = 'secret'
        assert a.stage_hash(StageName.REFINE) == b.stage_hash(StageName.REFINE)
