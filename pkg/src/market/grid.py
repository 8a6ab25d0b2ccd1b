"""Capacity check of candidate trades on a radial low-voltage feeder.

Each non-root node has one line to its parent with a thermal limit in kW. The
flow on a line is the net load of the subtree below it, so a trade between two
nodes only loads the lines on the path between them.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np
import pandas as pd

from src.exceptions import ConfigError, ProfileParseError, ValidationError
from src.models.battery import dispatch

logger = logging.getLogger(__name__)

ROOT = 'root'


@dataclass(frozen=True)
class GridCheckResult:
    ok: bool
    line: str = None
    step: int = None
    overload_kw: float = 0.0

    def __bool__(self):
        return self.ok


PASS = GridCheckResult(True)


class FeederModel:
    """Radial feeder: parent array, per-line limits and prosumer placement"""

    def __init__(self, parents, limits, assignment):
        tree = nx.DiGraph()
        roots = [node for node, parent in parents.items() if parent is None]
        if len(roots) != 1:
            raise ValidationError(f"feeder needs exactly one root, found {len(roots)}")
        tree.add_nodes_from(parents)
        for node, parent in parents.items():
            if parent is None:
                continue
            if parent not in parents:
                raise ValidationError(f"node {node} has unknown parent {parent}")
            limit = limits.get(node)
            if limit is None or not limit > 0:
                raise ValidationError(f"line {node} needs a positive limit, got {limit}")
            tree.add_edge(parent, node)
        if not nx.is_arborescence(tree):
            raise ValidationError("feeder topology must be radial (a tree rooted at the root node)")
        for prosumer, node in assignment.items():
            if node not in parents:
                raise ConfigError(f"prosumer {prosumer} mapped to unknown node {node}")

        self.root = roots[0]
        self.tree = tree
        self.limits = {node: float(limits[node]) for node in parents if node != self.root}
        self.assignment = dict(assignment)
        self.nodes = sorted(parents, key=str)
        self.lines = sorted(self.limits, key=str)
        index = {node: i for i, node in enumerate(self.nodes)}
        # lines x nodes incidence of "node lies in the subtree of the line"
        self._subtree = np.zeros((len(self.lines), len(self.nodes)))
        for row, line in enumerate(self.lines):
            for node in nx.descendants(tree, line) | {line}:
                self._subtree[row, index[node]] = 1.0
        self._index = index
        self._limit_vector = np.array([self.limits[line] for line in self.lines])

    @classmethod
    def unconstrained(cls, prosumer_ids):
        """Single bus, no lines: every trade passes"""
        return cls({ROOT: None}, {}, {pid: ROOT for pid in prosumer_ids})

    @property
    def is_unconstrained(self):
        return not self.lines or bool(np.all(np.isinf(self._limit_vector)))

    def node_of(self, prosumer_id):
        try:
            return self.assignment[prosumer_id]
        except KeyError:
            raise ConfigError(f"prosumer {prosumer_id} is not mapped to a feeder node") from None

    def path(self, prosumer_a, prosumer_b):
        """Nodes on the radial path between two prosumers"""
        return nx.shortest_path(self.tree.to_undirected(as_view=True),
                                self.node_of(prosumer_a), self.node_of(prosumer_b))

    def node_loads(self, loads_by_prosumer, horizon):
        """Sum prosumer load series (kW) onto their nodes"""
        loads = np.zeros((len(self.nodes), horizon))
        for prosumer, series in loads_by_prosumer.items():
            loads[self._index[self.node_of(prosumer)]] += series
        return loads

    def line_flows(self, node_loads):
        return self._subtree @ node_loads

    def first_violation(self, node_loads):
        if not self.lines:
            return PASS
        overload = np.abs(self.line_flows(node_loads)) - self._limit_vector[:, None]
        violating = overload > 1e-9
        if not violating.any():
            return PASS
        steps = np.flatnonzero(violating.any(axis=0))
        step = int(steps[0])
        row = int(np.argmax(np.where(violating[:, step], overload[:, step], -np.inf)))
        return GridCheckResult(False, str(self.lines[row]), step, float(overload[row, step]))


def contract_injections(contract, step_duration):
    """Per-prosumer load change (kW) caused by a contract.

    Traded energy is routed from the provider to the receiver: it enters the
    feeder at the provider's members and leaves at the receiver's, split
    equally across the members of each side.
    """
    schedule = contract.schedule if hasattr(contract, 'schedule') else contract
    to_a = np.asarray(schedule.to_a.values if hasattr(schedule.to_a, 'values') else schedule.to_a)
    to_b = np.asarray(schedule.to_b.values if hasattr(schedule.to_b, 'values') else schedule.to_b)
    members_a, members_b = _sides(contract)
    delta_a = (to_a - to_b) / step_duration
    delta_b = -delta_a
    loads = {}
    for member in members_a:
        loads[member] = delta_a / len(members_a)
    for member in members_b:
        loads[member] = delta_b / len(members_b)
    return loads


def _sides(contract):
    if hasattr(contract, 'a'):
        return sorted(contract.a.members), sorted(contract.b.members)
    return list(contract.key_a), list(contract.key_b)


def check(contract, partition, feeder, baseline=None):
    """Pass, or the first (line, step, overload) a contract causes.

    `baseline` maps prosumer id to a load series in kW; prosumers missing from
    it contribute nothing. Limits bound the absolute line flow, so shrinking a
    trade can only relieve a line while the trade flows the same way as the
    baseline there; against a counter-flowing baseline a smaller trade may fail
    where a larger one passes.
    """
    for prosumer in partition.membership:
        feeder.node_of(prosumer)
    if feeder.is_unconstrained:
        return PASS
    step_duration = contract.joint_trace.step_duration
    horizon = contract.joint_trace.horizon
    loads = feeder.node_loads(contract_injections(contract, step_duration), horizon)
    if baseline:
        loads = loads + feeder.node_loads(baseline, horizon)
    return feeder.first_violation(loads)


def unconstrained_checker(contract, state):
    return PASS


class FeederChecker:
    """Grid check against a feeder, with standalone flows and accepted trades as baseline"""

    def __init__(self, feeder, prosumers):
        self.feeder = feeder
        self.base = {}
        for prosumer in prosumers:
            feeder.node_of(prosumer.id)
            if not feeder.is_unconstrained:
                trace = dispatch(prosumer.demand, prosumer.generation, prosumer.battery)
                self.base[prosumer.id] = trace.grid_net.values

    def baseline(self, state):
        loads = {pid: series.copy() for pid, series in self.base.items()}
        step_duration = state.tariffs.step_duration
        for accepted in state.accepted:
            for pid, delta in contract_injections(accepted, step_duration).items():
                loads[pid] = loads[pid] + delta
        return loads

    def __call__(self, contract, state):
        result = check(contract, state.partition, self.feeder,
                       None if self.feeder.is_unconstrained else self.baseline(state))
        if not result.ok:
            logger.info(f"Contract {contract.a.label}-{contract.b.label} blocked on line {result.line} "
                        f"at step {result.step} ({result.overload_kw:.2f} kW over)")
        return result


def _parse_limit(value, path, row):
    if value is None or (isinstance(value, float) and math.isnan(value)) or str(value).strip() == '':
        return None
    text = str(value).strip().lower()
    if text in ('inf', 'infinity'):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise ProfileParseError(f"{path}: invalid limit '{value}'", row=row) from None


def load_feeder(feeder_path, mapping_path):
    """Read `node,parent,limit_kw` and `prosumer_id,node` CSVs into a FeederModel"""
    feeder_path, mapping_path = Path(feeder_path), Path(mapping_path)
    for path in (feeder_path, mapping_path):
        if not path.exists():
            raise ConfigError(f"feeder file not found: {path}")
    lines = pd.read_csv(feeder_path, dtype=str, keep_default_na=False)
    if not {'node', 'parent', 'limit_kw'} <= set(lines.columns):
        raise ProfileParseError(f"{feeder_path}: expected columns node,parent,limit_kw")
    parents, limits = {}, {}
    for row, record in enumerate(lines.itertuples(index=False), start=2):
        node = record.node.strip()
        if not node:
            raise ProfileParseError(f"{feeder_path}: empty node", row=row)
        if node in parents:
            raise ProfileParseError(f"{feeder_path}: duplicate node {node}", row=row)
        parents[node] = record.parent.strip() or None
        limit = _parse_limit(record.limit_kw, feeder_path, row)
        if parents[node] is not None:
            if limit is None:
                raise ProfileParseError(f"{feeder_path}: line {node} has no limit", row=row)
            limits[node] = limit

    mapping = pd.read_csv(mapping_path, dtype=str, keep_default_na=False)
    if not {'prosumer_id', 'node'} <= set(mapping.columns):
        raise ProfileParseError(f"{mapping_path}: expected columns prosumer_id,node")
    assignment = {r.prosumer_id.strip(): r.node.strip() for r in mapping.itertuples(index=False)}
    try:
        feeder = FeederModel(parents, limits, assignment)
    except ValidationError as e:
        raise ConfigError(f"{feeder_path}: {e}") from e
    logger.info(f"Loaded feeder with {len(feeder.nodes)} nodes and {len(assignment)} prosumers")
    return feeder
