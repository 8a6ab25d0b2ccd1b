import pytest

from src.market import central
from src.market.common import initial_state, write_outputs
from src.visualization.plots import create_all_figures, load_curve

pytest.importorskip('plotly')


def test_figures_from_emitted_curves(hand_community, unit_tariffs, tmp_path):
    write_outputs(central.run(initial_state(hand_community, unit_tariffs)), tmp_path)
    figures = create_all_figures(tmp_path, tmp_path / 'figures')
    assert set(figures) == {'gt_vs_contracts', 'gt_vs_participation'}
    assert len(figures['gt_vs_contracts'].data) == 1
    assert (tmp_path / 'figures' / 'gt_vs_contracts.html').exists()


def test_missing_curve(tmp_path):
    assert load_curve(tmp_path / 'central_gt_vs_contracts.csv') is None
    assert create_all_figures(tmp_path) == {}
