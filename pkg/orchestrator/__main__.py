# orchestrator/__main__.py
import argparse
import logging
import os
import sys
from typing import List, Optional

from common.config_loader import config_hash, load_config, validate_config
from common.data_models import RunHeader
from common.errors import BrwLabError
from brw.simulate import DEFAULT_ESCAPE_CAP

from .command_handlers import PLANNERS, RunContext, columns_for
from .csv_report import render_report, write_report
from .orchestrator import Orchestrator

logger = logging.getLogger("orchestrator")

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m orchestrator",
        description="Killed branching random walk experiments: constants, survival "
                    "estimates, exact oracles and spine checks, written as CSV.")
    parser.add_argument('command', choices=sorted(PLANNERS), help='Experiment to run')
    parser.add_argument('--config', type=str, required=True, help='Path to the JSON/YAML experiment config')
    parser.add_argument('--seed', type=int, default=None, help='Override the config seed')
    parser.add_argument('--threads', type=int, default=None,
                        help='Worker threads (default: config value, else CPU count)')
    parser.add_argument('--out', type=str, default=None, help='CSV output path (default: stdout)')
    parser.add_argument('--escape-cap', type=float, default=None,
                        help='Population at which a Monte Carlo replicate counts as surviving')
    parser.add_argument('--log-level', type=str, default='INFO',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--timings', action='store_true',
                        help='Fill the runtime_ms column (output is then not byte-reproducible)')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, stream=sys.stderr)

    # 設定ファイルの読み込み
    config = load_config(os.path.abspath(args.config))
    if config is None:
        logger.error("Failed to load configuration file. Exiting.")
        return 2

    # CLI の指定が設定ファイルより優先
    if args.seed is not None:
        config["seed"] = args.seed
    if args.escape_cap is not None:
        config["escape_cap"] = args.escape_cap
    # スレッド数は出力に影響しないのでヘッダーには書かずログにだけ残す
    threads = args.threads or config.get("threads") or os.cpu_count() or 1
    logger.info(f"Using {threads} worker threads")

    try:
        # スキーマ検証、seed の有無もここで確認
        validate_config(config, args.command)
        # null は上限なし (無限大)
        escape_cap = config.get("escape_cap", DEFAULT_ESCAPE_CAP)
        context = RunContext(config=config, command=args.command, seed=config.get("seed"),
                             escape_cap=float("inf") if escape_cap is None else float(escape_cap))
        orchestrator = Orchestrator(context, threads=threads,
                                    runtime_budget_sec=config.get("runtime_budget_sec"))
        rows = orchestrator.run()
        header = RunHeader(command=args.command, config_hash=config_hash(config), seed=context.seed)
        text = render_report(header, columns_for(context), rows, context.footer, timings=args.timings)
        write_report(text, args.out)
    except BrwLabError as e:
        # 例外ごとの終了コード (2, 3, 4) をそのまま返す
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted.")
        return 130

    logger.info(f"{args.command}: {len(rows)} rows written to {args.out or 'stdout'}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
