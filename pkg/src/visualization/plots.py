import logging
from pathlib import Path

import pandas as pd

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

try:
    import plotly.graph_objects as go
    PLOTLY_AVAILABLE = True
except ImportError:
    PLOTLY_AVAILABLE = False
    logger.warning("Plotly not available. Install with: pip install plotly")


def load_curve(path):
    """Load an emitted convergence curve or sweep table"""
    path = Path(path)
    if not path.exists():
        logger.warning(f"No results found at {path}")
        return None
    return pd.read_csv(path)


def _save(fig, output_file):
    if output_file:
        fig.write_html(str(output_file))
        logger.info(f"Saved figure to {output_file}")


def create_convergence_figure(curves, x_column, x_title, title, output_file=None):
    """Cumulative GT % against one curve column, one line per market"""
    if not PLOTLY_AVAILABLE:
        logger.error("Plotly is required for convergence figures")
        return None
    fig = go.Figure()
    for name, curve in curves.items():
        if curve is None or curve.empty:
            continue
        fig.add_trace(go.Scatter(x=curve[x_column], y=curve['gt_pct'], mode='lines+markers', name=name))
    fig.update_layout(
        title=title,
        xaxis_title=x_title,
        yaxis_title='Gains from trade (% of grand coalition)',
        yaxis_range=[0, 105],
        height=600,
        width=900
    )
    _save(fig, output_file)
    return fig


def create_gt_vs_contracts(curves, output_file=None):
    return create_convergence_figure(curves, 'contracts_pct', 'Accepted contracts (% of possible pairings)',
                                     'Convergence of the gains from trade', output_file)


def create_gt_vs_participation(curves, output_file=None):
    return create_convergence_figure(curves, 'participation_pct', 'Participating prosumers (%)',
                                     'Gains from trade against participation', output_file)


def create_df_sweep_figure(table, output_file=None):
    """Median GT (% of bills) and participation for 80 % GT against diversity factor"""
    if not PLOTLY_AVAILABLE:
        logger.error("Plotly is required for sweep figures")
        return None
    if table is None or table.empty:
        logger.error("No sweep results to plot")
        return None
    fig = go.Figure()
    for mechanism, group in table.groupby('mechanism', sort=True):
        fig.add_trace(go.Scatter(x=group['target_df'], y=group['median_gt_pct_of_bill'],
                                 mode='lines+markers', name=f"{mechanism}: GT % of bill"))
        fig.add_trace(go.Scatter(x=group['target_df'], y=group['median_participation_for_80pct_gt'],
                                 mode='lines+markers', name=f"{mechanism}: participation for 80 % GT",
                                 yaxis='y2', line={'dash': 'dot'}))
    fig.update_layout(
        title='Influence of the diversity factor',
        xaxis_title='Diversity factor',
        yaxis={'title': 'Gains from trade (% of bills)'},
        yaxis2={'title': 'Participation (%)', 'overlaying': 'y', 'side': 'right', 'range': [0, 100]},
        height=600,
        width=1000
    )
    _save(fig, output_file)
    return fig


def create_all_figures(results_dir, output_dir=None):
    """Render every figure whose inputs exist in `results_dir`"""
    results_dir = Path(results_dir)
    output_dir = Path(output_dir or results_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    figures = {}
    mechanisms = ('central', 'negotiation')
    contracts = {m: load_curve(results_dir / f"{m}_gt_vs_contracts.csv") for m in mechanisms
                 if (results_dir / f"{m}_gt_vs_contracts.csv").exists()}
    if contracts:
        figures['gt_vs_contracts'] = create_gt_vs_contracts(contracts, output_dir / 'gt_vs_contracts.html')
    participation = {m: load_curve(results_dir / f"{m}_gt_vs_participation.csv") for m in mechanisms
                     if (results_dir / f"{m}_gt_vs_participation.csv").exists()}
    if participation:
        figures['gt_vs_participation'] = create_gt_vs_participation(participation,
                                                                    output_dir / 'gt_vs_participation.html')
    if (results_dir / 'df_sweep.csv').exists():
        figures['df_sweep'] = create_df_sweep_figure(load_curve(results_dir / 'df_sweep.csv'),
                                                     output_dir / 'df_sweep.html')
    return figures
