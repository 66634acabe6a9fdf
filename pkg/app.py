#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
codeorder 命令行入口
负责解析参数、加载配置、配置日志，并把子命令分派给流水线执行器
"""

import sys
import json
import logging
import argparse
from typing import List, Optional

from core.config import ConfigManager, PipelineConfig
from core.errors import ConfigError, PipelineError
from core.models import STAGE_ORDER, StageName
from core.pipeline import PipelineRunner


# 抑制第三方客户端的请求日志
logging.getLogger('httpx').setLevel(logging.WARNING)
logging.getLogger('openai').setLevel(logging.WARNING)

logger = logging.getLogger('codeorder')

STAGE_COMMANDS = [stage.value for stage in STAGE_ORDER]


# ============================================================================
# 参数解析
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='codeorder', description="Order-augmented code search embedding pipeline")
    parser.add_argument('--config', default=None, help="YAML config file (default: built-in defaults)")
    parser.add_argument('--seed', type=int, default=None, help="override the root seed")
    parser.add_argument('--strict', action='store_true', help="also verify output hashes before skipping a stage")
    parser.add_argument('--offline', action='store_true', help="force built-in backends")
    parser.add_argument('--workdir', default=None, help="artifact directory (default: ./work)")
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--quiet', action='store_true', help="disable progress bars")
    parser.add_argument('--force-unlock', action='store_true', help="remove a stale lock file before running")

    sub = parser.add_subparsers(dest='command', required=True)
    for name in STAGE_COMMANDS:
        sub.add_parser(name, help=f"run the {name} stage")
    sub.add_parser('all', help="run every stage in order")

    synth = sub.add_parser('synth-corpus', help="generate the synthetic corpus at corpus.corpus_root")
    synth.add_argument('--repos', type=int, default=None)
    synth.add_argument('--funcs', type=int, default=None)

    ablation = sub.add_parser('ablation', help="objective x refinement ablation over several seeds")
    ablation.add_argument('--seeds', type=int, default=None)

    compare = sub.add_parser('compare-annotators', help="nDCG consistency of two annotators on mined pairs")
    compare.add_argument('--against-hash-dim', type=int, default=256)
    return parser


def setup_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
        stream=sys.stderr
    )


def load_config(args) -> PipelineConfig:
    config = ConfigManager(args.config).load()
    config.apply_overrides(seed=args.seed, offline=args.offline, workdir=args.workdir)
    return config


# ============================================================================
# 主程序
# ============================================================================

def dispatch(runner: PipelineRunner, args):
    command = args.command
    if command == 'all':
        manifests = runner.run_all()
        ran = [m.stage for m in manifests if not m.skipped]
        logger.info(f"[CLI] Pipeline finished: {len(ran)} stages ran, {len(manifests) - len(ran)} skipped")
    elif command in STAGE_COMMANDS:
        runner.run_stage(StageName(command))
    elif command == 'synth-corpus':
        root = runner.synth_corpus(args.repos, args.funcs)
        print(root)
    elif command == 'ablation':
        _, summary = runner.run_ablation(args.seeds)
        print(summary.to_string(index=False))
    elif command == 'compare-annotators':
        score = runner.compare_annotators(args.against_hash_dim)
        print(json.dumps({'ndcg_consistency': score}))


def main(argv: Optional[List[str]] = None) -> int:
    """
    主函数

    Returns:
        退出码：0 成功，1 流水线错误，2 配置错误
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    try:
        config = load_config(args)
    except ConfigError as e:
        print(f"error={e.code} stage=config message={e}", file=sys.stderr)
        return 2

    runner = PipelineRunner(
        config,
        strict=args.strict,
        show_progress=not args.quiet and sys.stderr.isatty(),
        force_unlock=args.force_unlock
    )
    try:
        dispatch(runner, args)
    except PipelineError as e:
        print(f"error={e.code} stage={runner.current_stage or args.command} message={e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
