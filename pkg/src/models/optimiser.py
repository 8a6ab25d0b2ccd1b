"""Joint profile optimiser.

Aggregates the assets of coalitions, evaluates their bills with the battery
heuristic, computes the Gains from Trade of a merge and allocates the joint
schedule back to the two contracting sides. Also sizes prosumer assets.
"""
import hashlib
import logging
import threading
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from src.exceptions import LogicError, ValidationError
from src.models.battery import dispatch, trace_depreciation
from src.models.billing import BillBreakdown, bill, energy_costs, generator_cost, post_trade_bill
from src.models.profiles import BatterySpec, TimeSeries

logger = logging.getLogger(__name__)

DEFAULT_POWER_RATIO = 0.5
DEFAULT_BATTERY_CANDIDATES = tuple(np.round(np.arange(0.0, 15.0 + 1e-9, 0.5), 6))
DEFAULT_GENERATION_CANDIDATES = tuple(np.round(np.arange(0.0, 10.0 + 1e-9, 0.25), 6))
_TIE_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class CoalitionProfile:
    """Aggregate demand, generation and storage of a set of prosumers"""
    members: frozenset
    demand: TimeSeries
    generation: TimeSeries
    battery: BatterySpec
    generator_depreciation: float = 0.0
    standalone_bills: dict = field(default_factory=dict)

    @property
    def key(self):
        return tuple(sorted(self.members))

    @property
    def label(self):
        """Smallest member id, with the number of other members for coalitions"""
        first = self.key[0]
        return first if self.size == 1 else f"{first}+{self.size - 1}"

    @property
    def size(self):
        return len(self.members)

    @cached_property
    def digest(self):
        h = hashlib.blake2b(digest_size=12)
        h.update(self.demand.values.tobytes())
        h.update(self.generation.values.tobytes())
        return h.hexdigest()

    @property
    def net_demand(self):
        return self.demand - self.generation


@dataclass(frozen=True)
class TradeSchedule:
    """Per-step allocation of a joint schedule to the two contracting sides.

    Energies are kWh per step, member net demands kW and SoC kWh. `to_a` is
    the energy delivered by side b to side a, `to_b` the reverse; at most one
    of them is positive at any step.
    """
    to_a: TimeSeries
    to_b: TimeSeries
    net_a: TimeSeries
    net_b: TimeSeries
    soc_a: TimeSeries
    soc_b: TimeSeries

    @property
    def received_a(self):
        return self.to_a.values - self.to_b.values

    @property
    def received_b(self):
        return self.to_b.values - self.to_a.values


@dataclass(frozen=True, eq=False)
class EnergyContract:
    """ω = (receiver, provider, θ) between two coalitions, with the joint evaluation"""
    a: CoalitionProfile
    b: CoalitionProfile
    gt: float
    bill_a: float
    bill_b: float
    joint_bill: BillBreakdown
    joint_trace: object

    @cached_property
    def schedule(self):
        return derive_trades(self.a, self.b, self.joint_trace)

    @cached_property
    def _a_receives(self):
        schedule = self.schedule
        return schedule.to_a.values.sum() >= schedule.to_b.values.sum()

    @property
    def receiver(self):
        return self.a if self._a_receives else self.b

    @property
    def provider(self):
        return self.b if self._a_receives else self.a

    @property
    def theta(self):
        """Energy flowing provider -> receiver per step (kWh)"""
        return self.schedule.to_a if self._a_receives else self.schedule.to_b

    @property
    def theta_back(self):
        return self.schedule.to_b if self._a_receives else self.schedule.to_a

    @property
    def pair_key(self):
        return pair_key(self.a.key, self.b.key)


def pair_key(key_a, key_b):
    return (key_a, key_b) if key_a <= key_b else (key_b, key_a)


class GainCache:
    """Thread-safe memo of coalition bills and pairwise gains.

    Entries are keyed by member set and profile digest so that a changed
    profile never hits a stale value.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._bills = {}
        self._gains = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def bill_key(coalition):
        return coalition.key, coalition.digest

    @staticmethod
    def gain_key(a, b):
        first, second = sorted([(a.key, a.digest), (b.key, b.digest)])
        return first, second

    def get_bill(self, coalition):
        with self._lock:
            value = self._bills.get(self.bill_key(coalition))
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
            return value

    def put_bill(self, coalition, value):
        with self._lock:
            self._bills.setdefault(self.bill_key(coalition), value)

    def get_gain(self, a, b):
        with self._lock:
            return self._gains.get(self.gain_key(a, b))

    def put_gain(self, a, b, value):
        with self._lock:
            self._gains.setdefault(self.gain_key(a, b), value)

    def invalidate(self, member_ids):
        """Drop every entry that involves one of `member_ids`"""
        member_ids = set(member_ids)
        with self._lock:
            self._bills = {k: v for k, v in self._bills.items() if not member_ids & set(k[0])}
            self._gains = {k: v for k, v in self._gains.items()
                           if not member_ids & (set(k[0][0]) | set(k[1][0]))}

    def __len__(self):
        with self._lock:
            return len(self._gains)


def _weighted(values, weights, total):
    return float(sum(v * w for v, w in zip(values, weights)) / total)


def combine_batteries(batteries):
    """Single virtual battery: summed capacity and power, capacity-weighted rest"""
    batteries = list(batteries)
    if len(batteries) == 1:
        return batteries[0]
    capacity = float(sum(b.capacity for b in batteries))
    max_power = float(sum(b.max_power for b in batteries))
    if capacity <= 0:
        return replace(batteries[0], capacity=0.0, max_power=max_power)
    caps = [b.capacity for b in batteries]

    def mean(name):
        return _weighted([getattr(b, name) for b in batteries], caps, capacity)

    soc_max = min(mean('soc_max_pct'), 100.0)
    soc_min = min(max(mean('soc_min_pct'), 0.0), soc_max)
    initial = min(max(mean('initial_soc_pct'), soc_min), soc_max)
    return replace(
        batteries[0],
        capacity=capacity,
        max_power=max_power,
        soc_min_pct=soc_min,
        soc_max_pct=soc_max,
        initial_soc_pct=initial,
        charge_efficiency=min(mean('charge_efficiency'), 1.0),
        discharge_efficiency=min(mean('discharge_efficiency'), 1.0),
        cost_per_kwh=mean('cost_per_kwh'),
        lifetime=mean('lifetime'),
    )


def aggregate(members, tariffs=None):
    """Coalition profile of `members`; caches standalone bills when tariffs are given"""
    members = list(members)
    if not members:
        raise ValidationError("cannot aggregate an empty coalition")
    ids = [m.id for m in members]
    if len(set(ids)) != len(ids):
        raise LogicError(f"duplicate prosumer ids in coalition: {ids}")
    first = members[0]
    for member in members[1:]:
        first.demand.check_compatible(member.demand)

    demand = first.demand.values.copy()
    generation = first.generation.values.copy()
    for member in members[1:]:
        demand = demand + member.demand.values
        generation = generation + member.generation.values
    years = first.demand.years
    bills = {}
    if tariffs is not None:
        for member in members:
            trace = dispatch(member.demand, member.generation, member.battery)
            bills[member.id] = bill(trace, tariffs, member).total
    dt = first.demand.step_duration
    return CoalitionProfile(
        members=frozenset(ids),
        demand=TimeSeries(demand, dt),
        generation=TimeSeries(generation, dt),
        battery=combine_batteries(m.battery for m in members),
        generator_depreciation=float(sum(generator_cost(m.generator, years) for m in members)),
        standalone_bills=bills,
    )


def merge(a, b):
    """Union of two disjoint coalitions"""
    if a.members & b.members:
        raise LogicError(f"coalitions overlap: {sorted(a.members & b.members)}")
    a.demand.check_compatible(b.demand)
    return CoalitionProfile(
        members=a.members | b.members,
        demand=a.demand + b.demand,
        generation=a.generation + b.generation,
        battery=combine_batteries([a.battery, b.battery]),
        generator_depreciation=a.generator_depreciation + b.generator_depreciation,
        standalone_bills={**a.standalone_bills, **b.standalone_bills},
    )


def evaluate_breakdown(coalition, tariffs):
    """Dispatch the coalition's combined battery and itemise its bill"""
    trace = dispatch(coalition.demand, coalition.generation, coalition.battery)
    import_cost, export_revenue = energy_costs(trace.imports.values, trace.exports.values, tariffs)
    _, battery_cost = trace_depreciation(trace, coalition.battery)
    breakdown = BillBreakdown(
        import_cost=import_cost,
        export_revenue=export_revenue,
        battery_depreciation=battery_cost,
        generator_depreciation=coalition.generator_depreciation,
    )
    return breakdown, trace


def evaluate(coalition, tariffs):
    """(bill in pence, battery trace) of a coalition operated as one prosumer"""
    breakdown, trace = evaluate_breakdown(coalition, tariffs)
    return breakdown.total, trace


def coalition_bill(coalition, tariffs, cache=None):
    if cache is not None:
        cached = cache.get_bill(coalition)
        if cached is not None:
            return cached
    if coalition.size == 1 and coalition.key[0] in coalition.standalone_bills:
        value = coalition.standalone_bills[coalition.key[0]]
    else:
        value, _ = evaluate(coalition, tariffs)
    if cache is not None:
        cache.put_bill(coalition, value)
    return value


def pair_gain(a, b, tariffs, cache=None):
    """GT of merging `a` and `b` without building the contract"""
    if cache is not None:
        cached = cache.get_gain(a, b)
        if cached is not None:
            return cached
    joint = merge(a, b)
    gt = coalition_bill(a, tariffs, cache) + coalition_bill(b, tariffs, cache) - coalition_bill(joint, tariffs, cache)
    if cache is not None:
        cache.put_gain(a, b, gt)
    return gt


def pairwise_gt(a, b, tariffs, cache=None):
    """(GT, contract) of merging two coalitions; no contract when GT < 0"""
    if a.members & b.members:
        raise LogicError(f"pairwise_gt on overlapping coalitions {a.label} and {b.label}")
    joint = merge(a, b)
    joint_bill, trace = evaluate_breakdown(joint, tariffs)
    bill_a = coalition_bill(a, tariffs, cache)
    bill_b = coalition_bill(b, tariffs, cache)
    gt = bill_a + bill_b - joint_bill.total
    if cache is not None:
        cache.put_bill(joint, joint_bill.total)
        cache.put_gain(a, b, gt)
    if gt < 0:
        logger.warning(f"Negative gains {gt:.6f}p between {a.label} and {b.label}; no contract")
        return 0.0, None
    contract = EnergyContract(a=a, b=b, gt=gt, bill_a=bill_a, bill_b=bill_b,
                              joint_bill=joint_bill, joint_trace=trace)
    return gt, contract


def derive_trades(a, b, joint_trace):
    """Allocate a joint schedule back to the two sides.

    The joint battery's SoC change is split pro-rata to each side's headroom
    when charging and to its stored energy above minimum when discharging, so
    the side SoCs always sum to the joint SoC and the side net demands sum to
    the joint net demand. Surplus of one side then covers the deficit of the
    other.
    """
    dt = joint_trace.step_duration
    horizon = joint_trace.horizon
    joint_soc = joint_trace.soc_kwh.values.tolist()
    joint_power = joint_trace.power.values.tolist()
    capacity = a.battery.capacity + b.battery.capacity
    cap_share_a = a.battery.capacity / capacity if capacity > 0 else 0.5

    soc_a = a.battery.initial_soc_kwh
    previous = soc_a + b.battery.initial_soc_kwh
    min_a, max_a = a.battery.soc_min_kwh, a.battery.soc_max_kwh
    min_b, max_b = b.battery.soc_min_kwh, b.battery.soc_max_kwh
    socs_a = [0.0] * horizon
    socs_b = [0.0] * horizon
    power_a = [0.0] * horizon

    for t in range(horizon):
        soc_b = previous - soc_a
        delta = joint_soc[t] - previous
        if delta > 0:
            room_a, room_b = max(max_a - soc_a, 0.0), max(max_b - soc_b, 0.0)
        elif delta < 0:
            room_a, room_b = max(soc_a - min_a, 0.0), max(soc_b - min_b, 0.0)
        else:
            room_a = room_b = 0.0
        total = room_a + room_b
        share_a = room_a / total if total > 0 else cap_share_a
        soc_a = soc_a + share_a * delta
        socs_a[t] = soc_a
        socs_b[t] = joint_soc[t] - soc_a
        power_a[t] = share_a * joint_power[t]
        previous = joint_soc[t]

    p_a = np.array(power_a)
    p_b = joint_trace.power.values - p_a
    net_a = a.demand.values - a.generation.values + p_a
    net_b = b.demand.values - b.generation.values + p_b
    x_a = net_a * dt
    x_b = net_b * dt
    to_a = np.where((x_a > 0) & (x_b < 0), np.minimum(x_a, -x_b), 0.0)
    to_b = np.where((x_b > 0) & (x_a < 0), np.minimum(x_b, -x_a), 0.0)
    return TradeSchedule(
        to_a=TimeSeries(to_a, dt),
        to_b=TimeSeries(to_b, dt),
        net_a=TimeSeries(net_a, dt),
        net_b=TimeSeries(net_b, dt),
        soc_a=TimeSeries(socs_a, dt),
        soc_b=TimeSeries(socs_b, dt),
    )


def post_trade_bills(contract, tariffs, share_a=None, share_b=None):
    """Re-bill both sides after applying the contract's trades.

    Joint battery depreciation is allocated pro-rata to capacity. When shares
    of the GT are given, each side's payment is set so that its final bill
    equals its standalone bill minus its share.
    """
    schedule = contract.schedule
    a, b = contract.a, contract.b
    capacity = a.battery.capacity + b.battery.capacity
    dep = contract.joint_bill.battery_depreciation
    dep_a = dep * a.battery.capacity / capacity if capacity > 0 else 0.0
    dep_b = dep - dep_a
    bill_a = post_trade_bill(schedule.net_a, schedule.received_a, tariffs, dep_a, a.generator_depreciation)
    bill_b = post_trade_bill(schedule.net_b, schedule.received_b, tariffs, dep_b, b.generator_depreciation)
    if share_a is None or share_b is None:
        return bill_a, bill_b
    payment_a = bill_a.total - (contract.bill_a - share_a)
    payment_b = bill_b.total - (contract.bill_b - share_b)
    return replace(bill_a, trade_payments=payment_a), replace(bill_b, trade_payments=payment_b)


def _power_ratio(prosumer, default):
    battery = prosumer.battery
    if battery.capacity > 0 and battery.max_power > 0:
        return battery.max_power / battery.capacity
    return default


def size_battery(prosumer, tariffs, candidates=DEFAULT_BATTERY_CANDIDATES, power_ratio=DEFAULT_POWER_RATIO):
    """Capacity (kWh) minimising the standalone bill, ties to the smaller size"""
    candidates = sorted(float(c) for c in candidates)
    if not candidates:
        raise ValidationError("battery candidate grid must not be empty")
    ratio = _power_ratio(prosumer, power_ratio)
    generation = prosumer.generation
    best_capacity, best_bill = None, None
    for capacity in candidates:
        spec = prosumer.battery.resized(capacity, ratio)
        trace = dispatch(prosumer.demand, generation, spec)
        total = bill(trace, tariffs, prosumer.with_battery(spec)).total
        if best_bill is None or total < best_bill - _TIE_TOLERANCE:
            best_capacity, best_bill = capacity, total
    logger.debug(f"Battery for {prosumer.id}: {best_capacity} kWh (bill {best_bill:.2f}p)")
    return best_capacity


def size_generation(prosumer, resource_profile, tariffs, candidates=DEFAULT_GENERATION_CANDIDATES):
    """Installed power (kW) minimising the bill without storage, ties to the smaller share"""
    candidates = sorted(float(c) for c in candidates)
    if not candidates:
        raise ValidationError("generation candidate grid must not be empty")
    no_storage = prosumer.battery.resized(0.0, 0.0)
    base = replace(prosumer, battery=no_storage,
                   generator=replace(prosumer.generator, resource_profile=resource_profile))
    best_power, best_bill = None, None
    for power in candidates:
        candidate = base.with_generator(power)
        trace = dispatch(candidate.demand, candidate.generation, no_storage)
        total = bill(trace, tariffs, candidate).total
        if best_bill is None or total < best_bill - _TIE_TOLERANCE:
            best_power, best_bill = power, total
    logger.debug(f"Generation for {prosumer.id}: {best_power} kW (bill {best_bill:.2f}p)")
    return best_power


def size_assets(prosumer, tariffs, battery_candidates=DEFAULT_BATTERY_CANDIDATES,
                generation_candidates=DEFAULT_GENERATION_CANDIDATES, power_ratio=DEFAULT_POWER_RATIO):
    """Generator share first (no storage), then the battery for that share"""
    power = size_generation(prosumer, prosumer.generator.resource_profile, tariffs, generation_candidates)
    sized = prosumer.with_generator(power)
    capacity = size_battery(sized, tariffs, battery_candidates, power_ratio)
    return sized.with_battery(sized.battery.resized(capacity, _power_ratio(sized, power_ratio)))
