#!/usr/bin/env python3
import os
import sys
import logging
from pathlib import Path

# Add the repository root to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.visualization.plots import PLOTLY_AVAILABLE, create_all_figures

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main():
    """Render HTML figures for every results directory found"""
    if not PLOTLY_AVAILABLE:
        logger.error("Plotly is required to plot results")
        return 1
    results_dir = Path(sys.argv[1] if len(sys.argv) > 1 else os.environ.get('P2P_OUTPUT_DIR', 'results'))
    if not results_dir.exists():
        logger.error(f"Results directory {results_dir} does not exist")
        return 1

    directories = [results_dir] + sorted(p for p in results_dir.iterdir() if p.is_dir())
    count = 0
    for directory in directories:
        figures = create_all_figures(directory)
        count += len(figures)
    logger.info(f"Rendered {count} figures from {results_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
