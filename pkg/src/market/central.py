"""Centralised matching: accept the best grid-feasible contract each round.

Each accepted contract merges two coalitions into one, which then trades as
a single prosumer; its gains are split equally between the two sides.
"""
import logging

from src.market.common import (DEFAULT_THRESHOLD, SimulationTrace, apply_contract, round_record)
from src.market.grid import unconstrained_checker
from src.models.optimiser import pairwise_gt

logger = logging.getLogger(__name__)

MECHANISM = 'central'


def contract_for(state, candidate):
    """Full contract (joint trace and schedule) behind a contract-space entry"""
    a = state.partition.coalitions[candidate.key_a]
    b = state.partition.coalitions[candidate.key_b]
    _, contract = pairwise_gt(a, b, state.tariffs, state.cache)
    return contract


def clearing_round(state, grid_checker=unconstrained_checker, threshold=DEFAULT_THRESHOLD):
    """Accept the highest-GT candidate that passes the grid check.

    Returns (new_state, accepted record) or (state, None) when no candidate
    above the threshold is grid-feasible.
    """
    round_number = len(state.accepted) + 1
    for candidate in state.contract_space:
        if candidate.gt <= threshold:
            break
        contract = contract_for(state, candidate)
        if contract is None:
            continue
        if not grid_checker(contract, state):
            logger.debug(f"Round {round_number}: {candidate.parties} fails grid check, trying next")
            continue
        share = contract.gt / 2.0
        new_state = apply_contract(state, round_number, candidate, contract, share, share)
        accepted = new_state.accepted[-1]
        logger.info(f"Round {round_number}: accepted {candidate.parties} GT {contract.gt:.2f}p, "
                    f"cumulative {new_state.gt_pct:.1f}% of GT_N")
        return new_state, accepted
    logger.info(f"Round {round_number}: no contract above {threshold}p passes; clearing stops")
    return state, None


def run(state, grid_checker=unconstrained_checker, threshold=DEFAULT_THRESHOLD, max_rounds=None):
    """Clear rounds until no more trades can be made"""
    records = []
    while max_rounds is None or len(records) < max_rounds:
        state, accepted = clearing_round(state, grid_checker, threshold)
        if accepted is None:
            break
        records.append(round_record(state, accepted))
    logger.info(f"Centralised market finished after {len(records)} contracts: "
                f"{state.gt_pct:.1f}% of GT_N, {state.participation_pct:.1f}% participation")
    return SimulationTrace(MECHANISM, records, state)

