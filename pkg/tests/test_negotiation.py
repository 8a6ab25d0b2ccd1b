import pytest

from src.data.archetypes import default_library, synthesize_community
from src.exceptions import ProtocolError, ValidationError
from src.market import central, negotiation
from src.market.common import ContractCandidate, initial_state, partition_gt
from src.market.grid import GridCheckResult
from src.market.negotiation import (AgentStrategy, Offer, commit_phase, concession_offer, offer_phase,
                                    select_peers)
from src.models.profiles import flat_tariffs


def strategy(rv, deadline, umax):
    return AgentStrategy(rv, deadline).with_max_utility(umax)


def test_concession_cases():
    assert concession_offer(strategy(0, 10, 10), 0) == pytest.approx(10)
    assert concession_offer(strategy(0, 10, 10), 10) == pytest.approx(0)
    assert concession_offer(strategy(2, 8, 10), 4) == pytest.approx(6)


def test_concession_is_nonincreasing():
    s = strategy(3, 12, 15)
    levels = [concession_offer(s, r) for r in range(13)]
    assert levels == sorted(levels, reverse=True)


def test_concession_outside_window():
    with pytest.raises(ProtocolError):
        concession_offer(strategy(0, 10, 10), 11)
    with pytest.raises(ProtocolError):
        concession_offer(AgentStrategy(0, 10), 0)


def test_strategy_validation():
    with pytest.raises(ValidationError):
        AgentStrategy(-1, 10)
    with pytest.raises(ValidationError):
        AgentStrategy(0, 0)
    assert strategy(5, 10, 2).max_utility == 5


def test_offer_cannot_claim_more_than_the_contract():
    candidate = ContractCandidate(('A',), ('B',), 4.0, ('A', 'B'))
    with pytest.raises(ProtocolError):
        Offer(('A',), ('B',), 0, 5.0, candidate)
    assert Offer(('A',), ('B',), 0, 3.0, candidate).left_to_recipient == pytest.approx(1.0)


def test_select_peers():
    gains = {'B': 5.0, 'C': 3.0, 'D': 9.0, 'E': 1.0}
    space = [ContractCandidate(('A',), (p,), gt, ('A', p)) for p, gt in gains.items()]
    space.append(ContractCandidate(('B',), ('C',), 20.0, ('B', 'C')))
    assert select_peers(('A',), space, 2) == [('D',), ('B',)]
    assert len(select_peers(('A',), space, 5)) == 4
    assert select_peers(('C',), space, 5) == [('B',), ('A',)]
    with pytest.raises(ValidationError):
        select_peers(('A',), space, 0)


def test_symmetric_pair_meets_halfway(pair_community, pair_tariffs):
    state = initial_state(pair_community, pair_tariffs)
    accepted, meta = offer_phase(state, default_strategy=AgentStrategy(0, 10))
    assert {o.round for o in accepted} == {5}
    assert meta['rounds_used'] == 6
    trace = negotiation.run(state, default_strategy=AgentStrategy(0, 10))
    cleared = trace.accepted[0]
    assert (cleared.share_a, cleared.share_b) == pytest.approx((5.0, 5.0))
    assert cleared.meta['offer_round'] == 5
    assert trace.records[0]['rounds_used'] == 6


def test_reservation_value_equal_to_gains(pair_community, pair_tariffs):
    state = initial_state(pair_community, pair_tariffs)
    trace = negotiation.run(state, {'A': AgentStrategy(10, 10)}, default_strategy=AgentStrategy(0, 10))
    cleared = trace.accepted[0]
    assert cleared.meta['offer_round'] == 10
    assert (cleared.share_a, cleared.share_b) == pytest.approx((10.0, 0.0))


def test_no_gains_no_acceptance(make_prosumer, pair_tariffs):
    prosumers = [make_prosumer('A', [1.0]), make_prosumer('B', [1.0])]
    state = initial_state(prosumers, pair_tariffs)
    accepted, _ = offer_phase(state, default_strategy=AgentStrategy(1, 10))
    assert accepted == []
    assert negotiation.run(state).records == []


@pytest.fixture
def two_market_community(make_prosumer):
    return [
        make_prosumer('A', [0, 0], generator_kw=12.0, resource=[1.0, 0.0]),
        make_prosumer('B', [12, 0]),
        make_prosumer('C', [0, 0], generator_kw=8.0, resource=[0.0, 1.0]),
        make_prosumer('D', [0, 8]),
    ]


def test_commit_clears_highest_gain(two_market_community):
    state = initial_state(two_market_community, flat_tariffs(1.0, 0.0, 2, 1.0))
    by_parties = {c.parties: c for c in state.contract_space}
    small = Offer(('C',), ('D',), 3, 4.0, by_parties[('C', 'D')])
    large = Offer(('A',), ('B',), 3, 6.0, by_parties[('A', 'B')])
    new_state, cleared = commit_phase(state, [small, large])
    assert cleared.parties == ('A', 'B')
    assert (cleared.share_a, cleared.share_b) == pytest.approx((6.0, 6.0))
    assert len(new_state.accepted) == 1
    assert new_state.partition.digest() != state.partition.digest()
    assert all(('A',) not in (c.key_a, c.key_b) for c in new_state.contract_space)


def test_commit_with_grid_blocked_offer(two_market_community):
    state = initial_state(two_market_community, flat_tariffs(1.0, 0.0, 2, 1.0))
    offer = Offer(('A',), ('B',), 0, 6.0, state.contract_space[0])
    new_state, cleared = commit_phase(state, [offer], lambda contract, s: GridCheckResult(False, 'n1', 0, 1.0))
    assert cleared is None
    assert new_state is state


def test_split_respects_reservation_values(two_market_community):
    state = initial_state(two_market_community, flat_tariffs(1.0, 0.0, 2, 1.0))
    strategies = {'B': AgentStrategy(4, 20)}
    trace = negotiation.run(state, strategies)
    assert trace.accepted
    for cleared in trace.accepted:
        if cleared.key_b == ('B',):
            assert cleared.share_b >= 4 - 1e-9


def test_hand_scenario_reaches_grand_coalition(hand_community, unit_tariffs):
    state = initial_state(hand_community, unit_tariffs)
    trace = negotiation.run(state)
    final = trace.final_state
    assert [r['contract'] for r in trace.records] == [['A', 'B'], ['A+1', 'C']]
    assert [(a.share_a, a.share_b) for a in trace.accepted] == [pytest.approx((5.0, 5.0)),
                                                                 pytest.approx((4.0, 4.0))]
    assert final.cumulative_gt == pytest.approx(18.0)
    assert final.cumulative_gt == pytest.approx(partition_gt(final.partition, unit_tariffs))
    assert final.cumulative_gt == pytest.approx(central.run(state).final_state.cumulative_gt)
    for record in trace.records:
        assert {'rounds_used', 'offers_sent', 'acceptances'} <= set(record)


def test_sum_mode_raises_opening_claims(hand_community, unit_tariffs):
    state = initial_state(hand_community, unit_tariffs)
    best = negotiation.run(state, max_iterations=1)
    summed = negotiation.run(state, umax_mode=negotiation.UMAX_SUM, max_iterations=1)
    assert best.records[0]['rounds_used'] < summed.records[0]['rounds_used']


def test_fifty_prosumer_rounds_only_move_forward():
    tariffs = flat_tariffs(16.0, 0.0, 96, 0.5)
    sizing = {'generator': {'cost_per_kw': 107200.0, 'lifetime': 20.0},
              'grids': {'battery_candidates': (0.0, 1.0, 2.0, 4.0, 6.0),
                        'generation_candidates': (0.0, 0.5, 1.0, 2.0, 3.0, 4.0), 'power_ratio': 0.5}}
    prosumers = synthesize_community(default_library(), 50, seed=12, horizon=96, tariffs=tariffs, sizing=sizing)
    trace = negotiation.run(initial_state(prosumers, tariffs))
    assert trace.records
    for column in ('participation_pct', 'cumulative_gt_pct', 'cumulative_gt_pct_raw'):
        values = [r[column] for r in trace.records]
        assert all(later >= earlier for earlier, later in zip(values, values[1:])), column
    assert [r['round'] for r in trace.records] == list(range(1, len(trace.records) + 1))
    assert all(a.gt > negotiation.DEFAULT_THRESHOLD for a in trace.accepted)
    assert trace.records[-1]['participation_pct'] > trace.records[0]['participation_pct']
