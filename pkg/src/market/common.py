"""Market state shared by the centralised and negotiated markets.

Holds the coalition partition, the contract space and the log of accepted
contracts, and turns a finished run into the JSON-lines trace, the two
convergence curves and the coalition merge log.
"""
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from src.exceptions import ValidationError
from src.models.optimiser import (GainCache, aggregate, coalition_bill, evaluate, merge, pair_gain,
                                  post_trade_bills)

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.01
GRAND_GT_TOLERANCE = 1e-6
PARTICIPATION_LEVELS = (60, 80, 90)


@dataclass(frozen=True)
class CoalitionPartition:
    """Disjoint coalitions covering every prosumer, keyed by sorted member ids"""
    coalitions: dict
    membership: dict

    @classmethod
    def singletons(cls, prosumers, tariffs):
        coalitions = {}
        for prosumer in prosumers:
            coalition = aggregate([prosumer], tariffs)
            coalitions[coalition.key] = coalition
        membership = {key[0]: key for key in coalitions}
        return cls(coalitions, membership)

    def __len__(self):
        return len(self.coalitions)

    @property
    def keys(self):
        return sorted(self.coalitions)

    @property
    def prosumer_count(self):
        return len(self.membership)

    def coalition_of(self, prosumer_id):
        return self.coalitions[self.membership[prosumer_id]]

    def merged(self, key_a, key_b):
        """New partition with the two coalitions replaced by their union"""
        if key_a == key_b:
            raise ValidationError(f"cannot merge coalition {key_a} with itself")
        joint = merge(self.coalitions[key_a], self.coalitions[key_b])
        coalitions = {k: v for k, v in self.coalitions.items() if k not in (key_a, key_b)}
        coalitions[joint.key] = joint
        membership = dict(self.membership)
        for member in joint.members:
            membership[member] = joint.key
        return CoalitionPartition(coalitions, membership), joint

    @property
    def sizes(self):
        return sorted((len(key) for key in self.coalitions), reverse=True)

    @property
    def participation(self):
        """Fraction of prosumers belonging to a coalition of two or more"""
        if not self.membership:
            return 0.0
        trading = sum(len(key) for key in self.coalitions if len(key) > 1)
        return trading / len(self.membership)

    def digest(self):
        h = hashlib.blake2b(digest_size=8)
        for key in self.keys:
            h.update(('|'.join(key) + ';').encode())
        return h.hexdigest()


@dataclass(frozen=True)
class ContractCandidate:
    """Entry of the contract space: a pair of coalitions and the GT of merging them.

    `parties` names the contracting prosumers in pair mode and the two
    coalition labels otherwise.
    """
    key_a: tuple
    key_b: tuple
    gt: float
    parties: tuple

    def sort_key(self):
        return -self.gt, self.parties, self.key_a, self.key_b


@dataclass(frozen=True)
class AcceptedContract:
    round: int
    key_a: tuple
    key_b: tuple
    parties: tuple
    gt: float
    share_a: float
    share_b: float
    payment_a: float
    payment_b: float
    to_a: np.ndarray = field(repr=False)
    to_b: np.ndarray = field(repr=False)
    merged_gt: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def merged_key(self):
        return tuple(sorted(self.key_a + self.key_b))


@dataclass(frozen=True)
class MarketState:
    prosumers: tuple
    tariffs: object
    partition: CoalitionPartition
    contract_space: tuple
    accepted: tuple = ()
    cumulative_gt: float = 0.0
    grand_gt: float = 0.0
    standalone_total: float = 0.0
    pair_mode: bool = False
    workers: int = 1
    cache: GainCache = field(default_factory=GainCache, repr=False, compare=False)

    @property
    def n(self):
        return len(self.prosumers)

    @property
    def possible_pairings(self):
        return self.n * (self.n - 1) // 2

    @property
    def gt_pct(self):
        return gt_percentage(self.cumulative_gt, self.grand_gt)

    @property
    def gt_pct_raw(self):
        """Unclamped cumulative GT as % of GT_N; None without a positive GT_N"""
        if self.grand_gt <= 0:
            return None
        return 100.0 * self.cumulative_gt / self.grand_gt

    @property
    def exceeds_grand(self):
        return self.cumulative_gt > self.grand_gt + GRAND_GT_TOLERANCE

    @property
    def contracts_pct(self):
        if self.possible_pairings == 0:
            return 0.0
        return 100.0 * len(self.accepted) / self.possible_pairings

    @property
    def participation_pct(self):
        return 100.0 * self.partition.participation


@dataclass
class SimulationTrace:
    """Per-round records of a market run plus its final state"""
    mechanism: str
    records: list
    final_state: MarketState

    @property
    def accepted(self):
        return self.final_state.accepted


def gt_percentage(gt, grand_gt):
    if grand_gt <= 0:
        return 0.0
    return min(max(100.0 * gt / grand_gt, 0.0), 100.0)


def partition_gt(partition, tariffs, cache=None):
    """GT of a partition from scratch: Σ over coalitions of member bills minus joint bill"""
    total = []
    for coalition in partition.coalitions.values():
        if coalition.size == 1:
            continue
        standalone = math.fsum(coalition.standalone_bills[m] for m in coalition.key)
        total.append(standalone - coalition_bill(coalition, tariffs, cache))
    return math.fsum(total)


def coalition_gt(coalition, tariffs, cache=None):
    if coalition.size == 1:
        return 0.0
    standalone = math.fsum(coalition.standalone_bills[m] for m in coalition.key)
    return standalone - coalition_bill(coalition, tariffs, cache)


def _joint_bill(pair, tariffs):
    a, b = pair
    bill, _ = evaluate(merge(a, b), tariffs)
    return bill


def _prefill_gains(pairs, tariffs, cache, workers):
    """Evaluate uncached joint bills in a process pool and seed the cache"""
    missing = [(a, b) for a, b in pairs if cache.get_gain(a, b) is None]
    if workers <= 1 or len(missing) < 2 * workers:
        return
    logger.info(f"Evaluating {len(missing)} coalition pairs on {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        bills = list(pool.map(_joint_bill, missing, [tariffs] * len(missing), chunksize=16))
    for (a, b), joint_bill in zip(missing, bills):
        gt = coalition_bill(a, tariffs, cache) + coalition_bill(b, tariffs, cache) - joint_bill
        cache.put_bill(merge(a, b), joint_bill)
        cache.put_gain(a, b, gt)


def build_contract_space(partition, tariffs, cache=None, pair_mode=False, workers=1):
    """Candidate contracts between current coalitions, sorted by GT descending.

    In pair mode every pair of prosumers from different coalitions is a
    candidate, valued by the GT of merging their coalitions.
    """
    cache = cache if cache is not None else GainCache()
    keys = partition.keys
    pairs = [(partition.coalitions[a], partition.coalitions[b])
             for i, a in enumerate(keys) for b in keys[i + 1:]]
    _prefill_gains(pairs, tariffs, cache, workers)

    gains = {}
    for a, b in pairs:
        gains[(a.key, b.key)] = pair_gain(a, b, tariffs, cache)

    candidates = []
    if pair_mode:
        ids = sorted(partition.membership)
        for i, first in enumerate(ids):
            for second in ids[i + 1:]:
                key_a, key_b = sorted([partition.membership[first], partition.membership[second]])
                if key_a == key_b:
                    continue
                candidates.append(ContractCandidate(key_a, key_b, gains[(key_a, key_b)], (first, second)))
    else:
        for (key_a, key_b), gt in gains.items():
            parties = (partition.coalitions[key_a].label, partition.coalitions[key_b].label)
            candidates.append(ContractCandidate(key_a, key_b, gt, parties))
    candidates.sort(key=ContractCandidate.sort_key)
    return tuple(candidates)


def initial_state(prosumers, tariffs, pair_mode=False, workers=1, cache=None):
    """Singleton partition, its contract space and the grand-coalition GT"""
    prosumers = tuple(prosumers)
    ids = [p.id for p in prosumers]
    if len(set(ids)) != len(ids):
        raise ValidationError("prosumer ids must be unique")
    cache = cache if cache is not None else GainCache()
    partition = CoalitionPartition.singletons(prosumers, tariffs)
    standalone_total = math.fsum(c.standalone_bills[c.key[0]] for c in partition.coalitions.values())
    grand_gt = 0.0
    if len(prosumers) > 1:
        bills = {key[0]: c.standalone_bills[key[0]] for key, c in partition.coalitions.items()}
        grand = replace(aggregate(prosumers), standalone_bills=bills)
        grand_gt = standalone_total - coalition_bill(grand, tariffs, cache)
    logger.info(f"Community of {len(prosumers)} prosumers: standalone bills {standalone_total:.2f}p, "
                f"grand coalition GT {grand_gt:.2f}p")
    space = build_contract_space(partition, tariffs, cache, pair_mode, workers)
    return MarketState(
        prosumers=prosumers,
        tariffs=tariffs,
        partition=partition,
        contract_space=space,
        standalone_total=standalone_total,
        grand_gt=grand_gt,
        pair_mode=pair_mode,
        workers=workers,
        cache=cache,
    )


def apply_contract(state, round_number, candidate, contract, share_a, share_b, meta=None):
    """Merge the contract's coalitions, settle payments and refresh the contract space"""
    bill_a, bill_b = post_trade_bills(contract, state.tariffs, share_a, share_b)
    partition, joint = state.partition.merged(candidate.key_a, candidate.key_b)
    record = AcceptedContract(
        round=round_number,
        key_a=candidate.key_a,
        key_b=candidate.key_b,
        parties=candidate.parties,
        gt=contract.gt,
        share_a=share_a,
        share_b=share_b,
        payment_a=bill_a.trade_payments,
        payment_b=bill_b.trade_payments,
        to_a=np.asarray(contract.schedule.to_a.values),
        to_b=np.asarray(contract.schedule.to_b.values),
        merged_gt=coalition_gt(joint, state.tariffs, state.cache),
        meta=dict(meta or {}),
    )
    space = build_contract_space(partition, state.tariffs, state.cache, state.pair_mode, state.workers)
    new_state = replace(state, partition=partition, contract_space=space,
                        accepted=state.accepted + (record,), cumulative_gt=state.cumulative_gt + contract.gt)
    if new_state.exceeds_grand:
        # coalition bills are not additive once batteries are pooled
        logger.warning(f"Cumulative GT {new_state.cumulative_gt:.4f}p exceeds grand coalition GT "
                       f"{state.grand_gt:.4f}p after round {round_number}")
    return new_state


def round_record(state, accepted):
    """One JSON-lines trace record for the round that accepted `accepted`"""
    record = {
        'round': accepted.round,
        'contract': list(accepted.parties),
        'gt_pence': accepted.gt,
        'cumulative_gt_pct': state.gt_pct,
        'cumulative_gt_pct_raw': state.gt_pct_raw,
        'exceeds_grand': state.exceeds_grand,
        'contracts_pct': state.contracts_pct,
        'participation_pct': state.participation_pct,
        'coalition_sizes': state.partition.sizes,
        'partition_digest': state.partition.digest(),
    }
    record.update(accepted.meta)
    return record


def write_trace(trace, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in trace.records:
            f.write(json.dumps(record) + '\n')
    return path


def convergence_curves(trace):
    """(GT% vs contracts, GT% vs participation) frames, starting at the origin"""
    rows = [{'contracts': 0, 'contracts_pct': 0.0, 'participation_pct': 0.0, 'gt_pct': 0.0}]
    for i, record in enumerate(trace.records, start=1):
        rows.append({
            'contracts': i,
            'contracts_pct': record['contracts_pct'],
            'participation_pct': record['participation_pct'],
            'gt_pct': record['cumulative_gt_pct'],
        })
    frame = pd.DataFrame(rows)
    return (frame[['contracts', 'contracts_pct', 'gt_pct']],
            frame[['participation_pct', 'gt_pct']])


def merge_log(trace):
    rows = []
    state = trace.final_state
    for accepted in trace.accepted:
        rows.append({
            'round': accepted.round,
            'coalition_a': '+'.join(accepted.key_a),
            'coalition_b': '+'.join(accepted.key_b),
            'size': len(accepted.merged_key),
            'contract_gt': accepted.gt,
            'coalition_gt': accepted.merged_gt,
            'coalition_gt_pct': gt_percentage(accepted.merged_gt, state.grand_gt),
            'share_a': accepted.share_a,
            'share_b': accepted.share_b,
            'payment_a': accepted.payment_a,
            'payment_b': accepted.payment_b,
        })
    columns = ['round', 'coalition_a', 'coalition_b', 'size', 'contract_gt', 'coalition_gt',
               'coalition_gt_pct', 'share_a', 'share_b', 'payment_a', 'payment_b']
    return pd.DataFrame(rows, columns=columns)


def run_summary(trace):
    """Final figures of a run; `cumulative_gt_pct` is clamped, `gt_pct_raw` is not"""
    state = trace.final_state
    return {
        'mechanism': trace.mechanism,
        'prosumers': state.n,
        'contracts': len(state.accepted),
        'possible_pairings': state.possible_pairings,
        'standalone_bills_pence': state.standalone_total,
        'grand_coalition_gt_pence': state.grand_gt,
        'cumulative_gt_pence': state.cumulative_gt,
        'cumulative_gt_pct': state.gt_pct,
        'gt_pct_raw': state.gt_pct_raw,
        'exceeds_grand': state.exceeds_grand,
        'participation_pct': state.participation_pct,
        'coalition_sizes': state.partition.sizes,
    }


def write_outputs(trace, out_dir, prefix=None):
    """Trace JSON-lines, both convergence curves, the merge log and the run summary"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = prefix or trace.mechanism
    paths = {'trace': write_trace(trace, out_dir / f"{prefix}_trace.jsonl")}
    by_contracts, by_participation = convergence_curves(trace)
    paths['gt_vs_contracts'] = out_dir / f"{prefix}_gt_vs_contracts.csv"
    by_contracts.to_csv(paths['gt_vs_contracts'], index=False)
    paths['gt_vs_participation'] = out_dir / f"{prefix}_gt_vs_participation.csv"
    by_participation.to_csv(paths['gt_vs_participation'], index=False)
    paths['merge_log'] = out_dir / f"{prefix}_merges.csv"
    merge_log(trace).to_csv(paths['merge_log'], index=False)
    paths['summary'] = out_dir / f"{prefix}_summary.json"
    with open(paths['summary'], 'w', encoding='utf-8') as f:
        json.dump(run_summary(trace), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.info(f"Wrote {trace.mechanism} results to {out_dir}")
    return paths


def participation_for_gt(curve, gt_pct):
    """Smallest participation % at which the GT% curve reaches `gt_pct`, or None"""
    frame = curve if isinstance(curve, pd.DataFrame) else pd.DataFrame(curve)
    reached = frame[frame['gt_pct'] >= gt_pct - 1e-9]
    if reached.empty:
        return None
    return float(reached['participation_pct'].min())
