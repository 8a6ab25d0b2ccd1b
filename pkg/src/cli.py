"""Command line front-end for the energy community experiments.

Subcommands: simulate, cluster, df-sweep, size-assets. Exit codes are 0 on
success, 1 for configuration errors and 2 for any other failure.
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from src.config import load_config
from src.data.archetypes import (default_library, diversity_factor, generate_for_df, library_from_clustering,
                                 load_library, save_library, synthesize_community, synthesize_wind_resource)
from src.data.clustering import ProfileCalendar, select_k, winter_weekday_average
from src.data.ingest import SLOT_COLUMNS, load_profiles, load_wind_resource, profile_start_dates
from src.exceptions import ConfigError, DegenerateInputError, P2PError
from src.market import central, negotiation
from src.market.common import (PARTICIPATION_LEVELS, convergence_curves, initial_state, participation_for_gt,
                               write_outputs)
from src.market.grid import FeederChecker, load_feeder, unconstrained_checker
from src.models.billing import bill
from src.models.battery import dispatch
from src.models.optimiser import size_assets
from src.models.profiles import GeneratorSpec, ProsumerSpec, TimeSeries

# Set up logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _library(config):
    return load_library(config.library_path) if config.library_path else default_library()


def _resource(config, seed):
    if config.wind_path:
        return load_wind_resource(config.wind_path, config.steps, config.step_duration)
    return synthesize_wind_resource(config.steps, seed or 0, config.step_duration)


def _community_kwargs(config):
    tariffs = config.tariffs() if config.size_assets else None
    return {
        'horizon': config.steps,
        'step_duration': config.step_duration,
        'daily_kwh': (config.daily_kwh_mean, config.daily_kwh_std),
        'day_noise': config.day_noise,
        'generator_kw': config.generator_kw,
        'battery': config.battery_spec(),
        'tariffs': tariffs,
        'sizing': config.sizing(),
    }


def _from_csv(config):
    profiles = load_profiles(config.profiles_path, config.step_duration)
    if not profiles:
        raise ConfigError(f"no profiles in {config.profiles_path}")
    horizon = profiles[0][1].horizon
    if horizon < config.steps:
        raise ConfigError(f"{config.profiles_path} covers {horizon} steps, scenario needs {config.steps}")
    resource = _resource(config, config.seed)
    sizing = config.sizing()
    tariffs = config.tariffs()
    prosumers = []
    for prosumer_id, demand in profiles:
        prosumer = ProsumerSpec(
            id=prosumer_id,
            demand=TimeSeries(demand.values[:config.steps], config.step_duration),
            generator=GeneratorSpec(config.generator_kw, resource, **sizing['generator']),
            battery=config.battery_spec(),
        )
        if config.size_assets:
            prosumer = size_assets(prosumer, tariffs, **sizing['grids'])
        prosumers.append(prosumer)
    return prosumers


def build_community(config, seed=None, target_df=None):
    """Prosumers of the configured scenario with sized assets"""
    seed = config.seed if seed is None else seed
    if config.source == 'csv':
        return _from_csv(config)
    kwargs = _community_kwargs(config)
    kwargs['resource'] = _resource(config, seed)
    target_df = config.target_df if target_df is None else target_df
    if config.source == 'df_target' or target_df is not None:
        return generate_for_df(_library(config), config.size, target_df, config.df_tolerance, seed, **kwargs)
    return synthesize_community(_library(config), config.size, seed, **kwargs)


def grid_checker_for(config, prosumers):
    if config.feeder_path:
        return FeederChecker(load_feeder(config.feeder_path, config.mapping_path), prosumers)
    return unconstrained_checker


def run_market(mechanism, prosumers, config, grid_checker=None):
    """Run one market on a community and return its trace"""
    grid_checker = grid_checker or grid_checker_for(config, prosumers)
    state = initial_state(prosumers, config.tariffs(), pair_mode=config.pair_mode and mechanism == 'central',
                          workers=config.workers)
    if mechanism == 'central':
        return central.run(state, grid_checker, config.threshold)
    strategies, default = config.strategies()
    return negotiation.run(state, strategies, config.k, grid_checker, config.threshold,
                           umax_mode=config.umax_mode, default_strategy=default)


def _write_json(payload, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


def cmd_simulate(config):
    prosumers = build_community(config)
    trace = run_market(config.mechanism, prosumers, config)
    out_dir = Path(config.output_dir)
    write_outputs(trace, out_dir)
    logger.info(f"Simulation finished: {len(trace.records)} contracts, "
                f"{trace.final_state.gt_pct:.1f}% of GT_N")
    if trace.final_state.exceeds_grand:
        logger.warning(f"Accepted gains {trace.final_state.cumulative_gt:.2f}p exceed the grand coalition GT "
                       f"{trace.final_state.grand_gt:.2f}p")
    return EXIT_OK


def cluster_vectors(profiles_path, step_duration=0.5):
    """(ids, winter weekday vectors) of every profile with retained days"""
    starts = profile_start_dates(profiles_path)
    ids, vectors = [], []
    for prosumer_id, profile in load_profiles(profiles_path, step_duration):
        try:
            vectors.append(winter_weekday_average(profile, ProfileCalendar(starts[prosumer_id])))
            ids.append(prosumer_id)
        except DegenerateInputError:
            logger.warning(f"Profile {prosumer_id} has no winter weekdays; skipped")
    return ids, np.array(vectors)


def cmd_cluster(profiles_path, k_range, seed, out_dir):
    ids, vectors = cluster_vectors(profiles_path)
    if len(ids) == 0:
        raise DegenerateInputError(f"no profiles to cluster in {profiles_path}")
    k_range = [k for k in k_range if k <= len(ids)]
    if not k_range:
        raise DegenerateInputError(f"k range exceeds the {len(ids)} available profiles")
    selection = select_k(vectors, k_range, seed)
    result = selection.results[selection.chosen]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(result.centroids, columns=SLOT_COLUMNS).rename_axis('cluster').to_csv(out_dir / 'centroids.csv')
    pd.DataFrame({'id': ids, 'cluster': result.assignments}).to_csv(out_dir / 'assignments.csv', index=False)
    frame = selection.as_frame()
    frame[['k', 'inertia']].to_csv(out_dir / 'elbow.csv', index=False)
    frame[['k', 'silhouette']].to_csv(out_dir / 'silhouette.csv', index=False)
    save_library(library_from_clustering(vectors, result), out_dir / 'archetypes.json')
    _write_json({'profiles': len(ids), 'chosen_k': selection.chosen, 'elbow_k': selection.elbow,
                 'inertia': result.inertia, 'silhouette': result.silhouette}, out_dir / 'cluster_summary.json')
    logger.info(f"Clustered {len(ids)} profiles into {selection.chosen} clusters")
    return EXIT_OK


def _cell_seed(seed, df_index, community):
    return int(seed) * 10007 + df_index * 101 + community


def sweep_cell(config, df_index, target_df, community):
    """Rows of one DF sweep cell: one community traded under both markets"""
    seed = _cell_seed(config.seed or 0, df_index, community)
    prosumers = build_community(config, seed=seed, target_df=target_df)
    realised = diversity_factor([p.demand for p in prosumers])
    rows = []
    for mechanism in ('central', 'negotiation'):
        trace = run_market(mechanism, prosumers, config)
        state = trace.final_state
        _, by_participation = convergence_curves(trace)
        row = {
            'target_df': target_df,
            'community': community,
            'seed': seed,
            'realised_df': realised,
            'mechanism': mechanism,
            'status': 'ok',
            'standalone_bills_pence': state.standalone_total,
            'gt_pence': state.cumulative_gt,
            'gt_pct_of_bill': 100.0 * state.cumulative_gt / state.standalone_total
            if state.standalone_total > 0 else 0.0,
            'contracts': len(state.accepted),
        }
        for level in PARTICIPATION_LEVELS:
            row[f'participation_for_{level}pct_gt'] = participation_for_gt(by_participation, level)
        rows.append(row)
    return rows


def _safe_cell(args):
    config, df_index, target_df, community = args
    try:
        return sweep_cell(config, df_index, target_df, community)
    except P2PError as e:
        logger.warning(f"DF sweep cell (DF {target_df}, community {community}) failed: {e}")
        return [{'target_df': target_df, 'community': community, 'mechanism': mechanism,
                 'status': f"failed: {e}"} for mechanism in ('central', 'negotiation')]


def sweep_table(rows):
    """Median GT % of bill and participation needed per DF target and mechanism"""
    columns = ['target_df', 'mechanism', 'communities', 'median_gt_pct_of_bill'] + \
        [f'median_participation_for_{level}pct_gt' for level in PARTICIPATION_LEVELS]
    frame = pd.DataFrame(rows)
    if frame.empty or 'gt_pct_of_bill' not in frame:
        return pd.DataFrame(columns=columns)
    frame = frame[frame['status'] == 'ok']
    table = []
    for (target, mechanism), group in frame.groupby(['target_df', 'mechanism'], sort=True):
        entry = {'target_df': target, 'mechanism': mechanism, 'communities': len(group),
                 'median_gt_pct_of_bill': float(group['gt_pct_of_bill'].median())}
        for level in PARTICIPATION_LEVELS:
            values = pd.to_numeric(group[f'participation_for_{level}pct_gt'], errors='coerce')
            entry[f'median_participation_for_{level}pct_gt'] = float(values.median())
        table.append(entry)
    return pd.DataFrame(table, columns=columns)


def cmd_df_sweep(config, df_values, communities_per_value):
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [(config, i, float(df), c) for i, df in enumerate(df_values) for c in range(communities_per_value)]
    logger.info(f"DF sweep: {len(df_values)} targets x {communities_per_value} communities")
    if config.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_safe_cell, cells))
    else:
        results = [_safe_cell(cell) for cell in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    pd.DataFrame(rows).to_csv(out_dir / 'df_sweep_runs.csv', index=False)
    sweep_table(rows).to_csv(out_dir / 'df_sweep.csv', index=False)
    failed = sum(1 for row in rows if row.get('status') != 'ok')
    logger.info(f"DF sweep finished: {len(rows)} runs, {failed} failed")
    return EXIT_OK


def cmd_size_assets(config):
    prosumers = build_community(config)
    tariffs = config.tariffs()
    rows = []
    for prosumer in prosumers:
        trace = dispatch(prosumer.demand, prosumer.generation, prosumer.battery)
        rows.append({
            'id': prosumer.id,
            'generator_kw': prosumer.generator.installed_power,
            'battery_kwh': prosumer.battery.capacity,
            'battery_kw': prosumer.battery.max_power,
            'annual_demand_kwh': float(prosumer.demand.to_energy().values.sum() / prosumer.demand.years),
            'standalone_bill_pence': bill(trace, tariffs, prosumer).total,
        })
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(out_dir / 'assets.csv', index=False)
    logger.info(f"Sized assets for {len(rows)} prosumers")
    return EXIT_OK


def _df_values(args):
    if args.df_values is not None:
        return list(args.df_values)
    if args.df_start is None:
        return []
    if args.df_stop is None or args.df_step is None or args.df_step <= 0:
        raise ConfigError("--df-start needs --df-stop and a positive --df-step")
    return [round(v, 6) for v in np.arange(args.df_start, args.df_stop + args.df_step / 2, args.df_step)]


def build_parser():
    parser = argparse.ArgumentParser(prog='p2p-community', description=__doc__.splitlines()[0])
    parser.add_argument('--log-level', default=os.environ.get('P2P_LOG_LEVEL', 'INFO'),
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    subparsers = parser.add_subparsers(dest='command', required=True)

    def scenario(sub):
        sub.add_argument('--config', help='scenario TOML file')
        sub.add_argument('--seed', type=int)
        sub.add_argument('--out', help='output directory')
        sub.add_argument('--market', choices=['central', 'negotiation'])
        sub.add_argument('--k', type=int, help='peers per agent in the negotiation market')
        sub.add_argument('--threshold', type=float, help='minimum gains (pence) for a contract')
        sub.add_argument('--steps', type=int, help='horizon length in steps')
        sub.add_argument('--size', type=int, help='community size for synthetic sources')
        sub.add_argument('--workers', type=int)
        return sub

    scenario(subparsers.add_parser('simulate', help='run a market on one community'))
    scenario(subparsers.add_parser('size-assets', help='size generator shares and batteries'))
    sweep = scenario(subparsers.add_parser('df-sweep', help='gains from trade against diversity factor'))
    sweep.add_argument('--df-values', type=float, nargs='*')
    sweep.add_argument('--df-start', type=float)
    sweep.add_argument('--df-stop', type=float)
    sweep.add_argument('--df-step', type=float)
    sweep.add_argument('--communities', type=int, default=1)

    cluster = subparsers.add_parser('cluster', help='cluster winter weekday demand shapes')
    cluster.add_argument('--profiles', required=True, help='profile CSV (id,date,hh01..hh48)')
    cluster.add_argument('--k-min', type=int, default=8)
    cluster.add_argument('--k-max', type=int, default=12)
    cluster.add_argument('--seed', type=int, default=0)
    cluster.add_argument('--out', default=os.environ.get('P2P_OUTPUT_DIR', 'results'))
    return parser


def _config_from(args):
    return load_config(
        args.config,
        seed=args.seed,
        output_dir=args.out,
        mechanism=args.market,
        k=args.k,
        threshold=args.threshold,
        steps=args.steps,
        size=args.size,
        workers=args.workers,
    )


def run_command(args):
    if args.command == 'cluster':
        if args.k_min < 1 or args.k_max < args.k_min:
            raise ConfigError(f"invalid k range {args.k_min}..{args.k_max}")
        return cmd_cluster(args.profiles, range(args.k_min, args.k_max + 1), args.seed, args.out)
    config = _config_from(args)
    if args.command == 'simulate':
        return cmd_simulate(config)
    if args.command == 'size-assets':
        return cmd_size_assets(config)
    return cmd_df_sweep(config, _df_values(args), args.communities)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.getLogger().setLevel(args.log_level)
    try:
        return run_command(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except (P2PError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
