import json
from dataclasses import replace

import numpy as np
import pytest

from src.market import central
from src.market.common import (CoalitionPartition, build_contract_space, convergence_curves, initial_state,
                               merge_log, partition_gt, participation_for_gt, run_summary, write_outputs)
from src.market.grid import GridCheckResult, PASS
from src.models.profiles import flat_tariffs


@pytest.fixture
def hand_state(hand_community, unit_tariffs):
    return initial_state(hand_community, unit_tariffs)


def test_initial_state_of_hand_scenario(hand_state):
    assert hand_state.standalone_total == pytest.approx(18.0)
    assert hand_state.grand_gt == pytest.approx(18.0)
    assert hand_state.possible_pairings == 3
    assert [c.parties for c in hand_state.contract_space] == [('A', 'B'), ('A', 'C'), ('B', 'C')]
    assert [c.gt for c in hand_state.contract_space] == pytest.approx([10.0, 6.0, 2.0])


def test_single_coalition_has_empty_contract_space(hand_community, unit_tariffs):
    partition = CoalitionPartition.singletons(hand_community, unit_tariffs)
    partition, _ = partition.merged(('A',), ('B',))
    partition, _ = partition.merged(('A', 'B'), ('C',))
    assert build_contract_space(partition, unit_tariffs) == ()


def test_contract_space_size(make_prosumer):
    tariffs = flat_tariffs(16.0, 0.0, 2, 1.0)
    prosumers = [make_prosumer(f"p{i:02d}", [i % 3, 1.0], generator_kw=1.0, resource=[0.0, (i % 2) * 1.0])
                 for i in range(12)]
    partition = CoalitionPartition.singletons(prosumers, tariffs)
    assert len(build_contract_space(partition, tariffs)) == 12 * 11 // 2


def test_pair_mode_lists_prosumer_pairs(hand_community, unit_tariffs):
    partition = CoalitionPartition.singletons(hand_community, unit_tariffs)
    partition, _ = partition.merged(('A',), ('B',))
    space = build_contract_space(partition, unit_tariffs, pair_mode=True)
    assert [c.parties for c in space] == [('A', 'C'), ('B', 'C')]
    assert all(c.gt == pytest.approx(8.0) for c in space)


def test_first_round_accepts_best_contract(hand_state):
    state, accepted = central.clearing_round(hand_state, threshold=0.0)
    assert accepted.parties == ('A', 'B')
    assert accepted.gt == pytest.approx(10.0)
    assert (accepted.share_a, accepted.share_b) == pytest.approx((5.0, 5.0))
    assert state.partition.keys == [('A', 'B'), ('C',)]
    assert state.contract_space[0].gt == pytest.approx(8.0)


def test_grid_blocked_candidate_is_skipped(hand_state):
    def block_ab(contract, state):
        if contract.pair_key == (('A',), ('B',)):
            return GridCheckResult(False, 'n1', 0, 1.0)
        return PASS

    _, accepted = central.clearing_round(hand_state, block_ab)
    assert accepted.parties == ('A', 'C')


def test_run_reaches_grand_coalition(hand_state, unit_tariffs):
    trace = central.run(hand_state)
    state = trace.final_state
    assert [r['contract'] for r in trace.records] == [['A', 'B'], ['A+1', 'C']]
    assert [r['gt_pence'] for r in trace.records] == pytest.approx([10.0, 8.0])
    assert state.cumulative_gt == pytest.approx(state.grand_gt)
    assert state.gt_pct == pytest.approx(100.0)
    assert state.partition.sizes == [3]
    assert state.cumulative_gt == pytest.approx(partition_gt(state.partition, unit_tariffs))
    assert trace.records[-1]['participation_pct'] == pytest.approx(100.0)


def test_threshold_stops_clearing(hand_state):
    trace = central.run(hand_state, threshold=9.0)
    assert len(trace.records) == 1
    assert central.run(hand_state, threshold=20.0).records == []


def test_community_without_gains_trades_nothing(make_prosumer, unit_tariffs):
    prosumers = [make_prosumer(pid, [1, 2, 3]) for pid in 'ABC']
    trace = central.run(initial_state(prosumers, unit_tariffs))
    assert trace.records == []
    assert trace.final_state.gt_pct == 0.0


def test_curves_and_merge_log(hand_state):
    trace = central.run(hand_state)
    by_contracts, by_participation = convergence_curves(trace)
    assert by_contracts['gt_pct'].tolist() == pytest.approx([0.0, 10 / 18 * 100, 100.0])
    assert by_contracts['contracts_pct'].tolist() == pytest.approx([0.0, 100 / 3, 200 / 3])
    assert by_participation['participation_pct'].tolist() == pytest.approx([0.0, 200 / 3, 100.0])
    assert participation_for_gt(by_participation, 50.0) == pytest.approx(200 / 3)
    assert participation_for_gt(by_participation, 101.0) is None
    log = merge_log(trace)
    assert log['coalition_a'].tolist() == ['A', 'A+B']
    assert log['size'].tolist() == [2, 3]
    assert log['coalition_gt'].tolist() == pytest.approx([10.0, 18.0])


def test_write_outputs(hand_state, tmp_path):
    paths = write_outputs(central.run(hand_state), tmp_path)
    lines = paths['trace'].read_text().splitlines()
    assert len(lines) == 2
    record = json.loads(lines[0])
    for field in ('round', 'contract', 'gt_pence', 'cumulative_gt_pct', 'contracts_pct', 'participation_pct',
                  'coalition_sizes', 'partition_digest'):
        assert field in record
    assert (tmp_path / 'central_gt_vs_contracts.csv').exists()
    assert (tmp_path / 'central_gt_vs_participation.csv').exists()
    assert (tmp_path / 'central_merges.csv').exists()


def test_parallel_contract_space_matches_serial(make_prosumer):
    rng = np.random.default_rng(5)
    tariffs = flat_tariffs(16.0, 0.0, 6, 1.0)
    prosumers = [make_prosumer(f"p{i}", rng.uniform(0, 2, 6), generator_kw=2.0, resource=rng.uniform(0, 1, 6))
                 for i in range(8)]
    partition = CoalitionPartition.singletons(prosumers, tariffs)
    serial = build_contract_space(partition, tariffs)
    parallel = build_contract_space(partition, tariffs, workers=2)
    assert [(c.key_a, c.key_b) for c in serial] == [(c.key_a, c.key_b) for c in parallel]
    assert [c.gt for c in serial] == pytest.approx([c.gt for c in parallel])


def test_run_invariants_on_random_community(make_prosumer):
    rng = np.random.default_rng(17)
    horizon = 24
    tariffs = flat_tariffs(16.0, 0.0, horizon, 1.0)
    prosumers = [make_prosumer(f"p{i}", rng.uniform(0, 3, horizon), generator_kw=float(rng.integers(0, 4)),
                               resource=rng.uniform(0, 1, horizon)) for i in range(6)]
    trace = central.run(initial_state(prosumers, tariffs))
    state = trace.final_state
    gt_pct = [r['cumulative_gt_pct'] for r in trace.records]
    participation = [r['participation_pct'] for r in trace.records]
    assert gt_pct == sorted(gt_pct)
    assert participation == sorted(participation)
    assert all(0.0 <= v <= 100.0 for v in gt_pct)
    assert all(a.gt >= 0 for a in state.accepted)
    assert state.cumulative_gt <= state.grand_gt + 1e-6
    assert state.cumulative_gt == pytest.approx(partition_gt(state.partition, tariffs), abs=1e-6)


def test_summary_of_a_complete_run(hand_state, tmp_path):
    paths = write_outputs(central.run(hand_state), tmp_path)
    summary = json.loads(paths['summary'].read_text())
    assert paths['summary'] == tmp_path / 'central_summary.json'
    assert summary['contracts'] == 2
    assert summary['cumulative_gt_pct'] == pytest.approx(100.0)
    assert summary['gt_pct_raw'] == pytest.approx(100.0)
    assert summary['exceeds_grand'] is False
    assert summary == json.loads(json.dumps(run_summary(central.run(hand_state))))


def test_gains_beyond_the_grand_coalition_are_reported(hand_state, tmp_path, caplog):
    # accepted gains of 18 against a grand coalition worth 15
    trace = central.run(replace(hand_state, grand_gt=15.0))
    state = trace.final_state
    assert state.gt_pct == 100.0
    assert state.gt_pct_raw == pytest.approx(120.0)
    assert state.exceeds_grand
    assert [r['exceeds_grand'] for r in trace.records] == [False, True]
    assert [r['cumulative_gt_pct_raw'] for r in trace.records] == pytest.approx([200 / 3, 120.0])
    assert 'exceeds grand coalition GT' in caplog.text
    summary = json.loads(write_outputs(trace, tmp_path)['summary'].read_text())
    assert summary['cumulative_gt_pct'] == 100.0
    assert summary['gt_pct_raw'] == pytest.approx(120.0)
    assert summary['exceeds_grand'] is True


def test_raw_gt_pct_needs_a_positive_grand_coalition(make_prosumer, unit_tariffs):
    state = initial_state([make_prosumer(pid, [1, 2, 3]) for pid in 'AB'], unit_tariffs)
    assert state.gt_pct_raw is None
    assert not state.exceeds_grand
