#!/usr/bin/env python3
import os
import sys
import logging
from pathlib import Path

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.cli import main as cli_main

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / 'config' / 'default.toml'


def experiment_commands(config, out_dir):
    """Both markets on the default community, then the diversity factor sweep"""
    df_values = os.environ.get('DF_VALUES', '1.0 1.1 1.2 1.3 1.4 1.5').split()
    communities = os.environ.get('DF_COMMUNITIES', '5')
    return [
        ['simulate', '--config', str(config), '--market', 'central', '--out', str(out_dir / 'central')],
        ['simulate', '--config', str(config), '--market', 'negotiation', '--out', str(out_dir / 'negotiation')],
        ['df-sweep', '--config', str(config), '--out', str(out_dir / 'df_sweep'),
         '--communities', communities, '--df-values', *df_values],
    ]


def main():
    """Run the experiment suite, or forward arguments to the CLI"""
    if len(sys.argv) > 1:
        return cli_main(sys.argv[1:])

    config = Path(os.environ.get('P2P_CONFIG', str(DEFAULT_CONFIG)))
    out_dir = Path(os.environ.get('P2P_OUTPUT_DIR', 'results'))
    logger.info(f"Running experiments with {config} into {out_dir}")
    for command in experiment_commands(config, out_dir):
        code = cli_main(command)
        if code != 0:
            logger.error(f"Command {command[0]} failed with exit code {code}")
            return code
    logger.info("Experiments completed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
