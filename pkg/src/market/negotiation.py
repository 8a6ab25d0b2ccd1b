"""Decentralised P2P market with a linear concession strategy.

Every market iteration each coalition negotiates with its top-k peers. In
round r an agent claims o(r) = rv + (u_max - rv)(1 - r/dl) of any contract it
offers, and accepts an incoming offer when the value left to it is at least
its own claim for that round. The first round with acceptances ends the offer
phase; the commit phase then clears the single best grid-feasible acceptance.
"""
import logging
from dataclasses import dataclass, replace

from src.exceptions import ProtocolError, ValidationError
from src.market.central import contract_for
from src.market.common import DEFAULT_THRESHOLD, SimulationTrace, apply_contract, round_record
from src.market.grid import unconstrained_checker

logger = logging.getLogger(__name__)

MECHANISM = 'negotiation'
DEFAULT_DEADLINE = 20
DEFAULT_PEERS = 5
UMAX_BEST = 'best'
UMAX_SUM = 'sum'
_ACCEPT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class AgentStrategy:
    """Linear concession from max_utility down to reservation_value over `deadline` rounds.

    max_utility is left unset on per-prosumer strategies and filled in by
    the market at the start of every iteration.
    """
    reservation_value: float = 0.0
    deadline: int = DEFAULT_DEADLINE
    max_utility: float = None

    def __post_init__(self):
        if self.reservation_value < 0:
            raise ValidationError(f"reservation value must be >= 0, got {self.reservation_value}")
        if int(self.deadline) != self.deadline or self.deadline < 1:
            raise ValidationError(f"deadline must be an integer >= 1, got {self.deadline}")
        if self.max_utility is not None and self.max_utility < self.reservation_value:
            raise ValidationError(
                f"max utility {self.max_utility} is below reservation value {self.reservation_value}"
            )

    def with_max_utility(self, value):
        return replace(self, max_utility=max(float(value), self.reservation_value))


@dataclass(frozen=True)
class Offer:
    proposer: tuple
    recipient: tuple
    round: int
    claimed_value: float
    candidate: object

    def __post_init__(self):
        if self.claimed_value > self.candidate.gt + _ACCEPT_TOLERANCE:
            raise ProtocolError(f"offer claims {self.claimed_value}p of a {self.candidate.gt}p contract")

    @property
    def left_to_recipient(self):
        return self.candidate.gt - self.claimed_value


def concession_offer(strategy, r):
    """o(r) = rv + (u_max - rv)(1 - r/dl)"""
    if strategy.max_utility is None:
        raise ProtocolError("strategy has no max utility for this market iteration")
    if r < 0 or r > strategy.deadline:
        raise ProtocolError(f"round {r} outside negotiation window 0..{strategy.deadline}")
    rv = strategy.reservation_value
    return rv + (strategy.max_utility - rv) * (1.0 - r / strategy.deadline)


def candidates_by_agent(contract_space, threshold=DEFAULT_THRESHOLD):
    """agent key -> {partner key: candidate}, one entry per coalition pair above threshold"""
    table = {}
    for candidate in contract_space:
        if candidate.gt <= threshold:
            continue
        table.setdefault(candidate.key_a, {}).setdefault(candidate.key_b, candidate)
        table.setdefault(candidate.key_b, {}).setdefault(candidate.key_a, candidate)
    return table


def select_peers(agent, contract_space, k=DEFAULT_PEERS):
    """The k partners with the highest GT for `agent`, ties broken by partner id"""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    partners = {}
    for candidate in contract_space:
        if candidate.key_a == agent:
            partners.setdefault(candidate.key_b, candidate.gt)
        elif candidate.key_b == agent:
            partners.setdefault(candidate.key_a, candidate.gt)
    ranked = sorted(partners.items(), key=lambda item: (-item[1], item[0]))
    return [partner for partner, _ in ranked[:k]]


def coalition_strategy(key, strategies, candidates, k=DEFAULT_PEERS, umax_mode=UMAX_BEST, default=None):
    """Strategy of a coalition: summed reservation values, earliest member deadline"""
    default = default or AgentStrategy()
    members = [strategies.get(member, default) for member in key]
    reservation = sum(s.reservation_value for s in members)
    deadline = min(s.deadline for s in members)
    gains = sorted((c.gt for c in candidates.values()), reverse=True)[:k]
    if umax_mode == UMAX_SUM:
        max_utility = sum(gains)
    elif umax_mode == UMAX_BEST:
        max_utility = gains[0] if gains else 0.0
    else:
        raise ValidationError(f"unknown max utility mode '{umax_mode}'")
    return AgentStrategy(reservation, deadline).with_max_utility(max_utility)


def offer_phase(state, strategies=None, k=DEFAULT_PEERS, threshold=DEFAULT_THRESHOLD, umax_mode=UMAX_BEST,
                default_strategy=None):
    """Exchange offers round by round until some are accepted or every deadline passes.

    Returns (accepted offers, negotiation metadata).
    """
    strategies = strategies or {}
    table = candidates_by_agent(state.contract_space, threshold)
    agents = sorted(table)
    agent_strategies = {key: coalition_strategy(key, strategies, table[key], k, umax_mode, default_strategy)
                       for key in agents}
    peers = {key: select_peers(key, state.contract_space, k) for key in agents}
    last_round = max((s.deadline for s in agent_strategies.values()), default=-1)

    offers_sent = 0
    rounds_used = 0
    accepted = []
    for r in range(last_round + 1):
        rounds_used = r + 1
        levels = {key: concession_offer(s, r) for key, s in agent_strategies.items() if r <= s.deadline}
        offers = []
        for key in agents:
            if key not in levels:
                continue
            for partner in peers[key]:
                candidate = table[key].get(partner)
                if candidate is None or levels[key] > candidate.gt:
                    continue
                offers.append(Offer(key, partner, r, levels[key], candidate))
        offers_sent += len(offers)
        accepted = [offer for offer in offers
                    if offer.recipient in levels
                    and offer.left_to_recipient >= levels[offer.recipient] - _ACCEPT_TOLERANCE]
        if accepted:
            break

    meta = {'rounds_used': rounds_used, 'offers_sent': offers_sent, 'acceptances': len(accepted)}
    logger.debug(f"Offer phase: {len(agents)} agents, {offers_sent} offers, "
                 f"{len(accepted)} acceptances after {rounds_used} rounds")
    return accepted, meta


def commit_phase(state, accepted, grid_checker=unconstrained_checker, meta=None):
    """Clear the highest-GT accepted offer that meets the grid constraints.

    All other acceptances of the iteration are rejected. Returns
    (new_state, accepted record) or (state, None).
    """
    round_number = len(state.accepted) + 1
    ordered = sorted(accepted, key=lambda o: (-o.candidate.gt, o.proposer, o.recipient))
    for offer in ordered:
        contract = contract_for(state, offer.candidate)
        if contract is None or not grid_checker(contract, state):
            continue
        proposer_share = offer.claimed_value
        recipient_share = contract.gt - proposer_share
        if offer.proposer == offer.candidate.key_a:
            share_a, share_b = proposer_share, recipient_share
        else:
            share_a, share_b = recipient_share, proposer_share
        details = dict(meta or {})
        details.update({'proposer': _label(state, offer.proposer),
                        'claimed_value': offer.claimed_value, 'offer_round': offer.round})
        new_state = apply_contract(state, round_number, offer.candidate, contract, share_a, share_b, details)
        logger.info(f"Iteration {round_number}: cleared {offer.candidate.parties} GT {contract.gt:.2f}p "
                    f"split {share_a:.2f}/{share_b:.2f} at round {offer.round}")
        return new_state, new_state.accepted[-1]
    if accepted:
        logger.info(f"Iteration {round_number}: all {len(accepted)} accepted offers grid-blocked")
    return state, None


def _label(state, key):
    return state.partition.coalitions[key].label


def run(state, strategies=None, k=DEFAULT_PEERS, grid_checker=unconstrained_checker,
        threshold=DEFAULT_THRESHOLD, umax_mode=UMAX_BEST, max_iterations=None, default_strategy=None):
    """Alternate offer and commit phases until no contract clears"""
    records = []
    while max_iterations is None or len(records) < max_iterations:
        accepted, meta = offer_phase(state, strategies, k, threshold, umax_mode, default_strategy)
        if not accepted:
            logger.info(f"No offers accepted after {meta['rounds_used']} rounds; negotiation stops")
            break
        state, cleared = commit_phase(state, accepted, grid_checker, meta)
        if cleared is None:
            break
        records.append(round_record(state, cleared))
    logger.info(f"Negotiation finished after {len(records)} contracts: "
                f"{state.gt_pct:.1f}% of GT_N, {state.participation_pct:.1f}% participation")
    return SimulationTrace(MECHANISM, records, state)
