"""Bills for single prosumers, coalitions and post-trade members.

All amounts are in pence. Depreciation horizons are expressed in years.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.exceptions import ValidationError
from src.models.battery import trace_depreciation
from src.models.profiles import HOURS_PER_YEAR

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BillBreakdown:
    import_cost: float = 0.0
    export_revenue: float = 0.0
    battery_depreciation: float = 0.0
    generator_depreciation: float = 0.0
    trade_payments: float = 0.0
    total: float = field(init=False)

    def __post_init__(self):
        total = (self.import_cost - self.export_revenue + self.battery_depreciation
                 + self.generator_depreciation - self.trade_payments)
        if not math.isfinite(total):
            raise ValidationError("bill components must be finite")
        object.__setattr__(self, 'total', total)

    def as_dict(self):
        return {
            'import_cost': self.import_cost,
            'export_revenue': self.export_revenue,
            'battery_depreciation': self.battery_depreciation,
            'generator_depreciation': self.generator_depreciation,
            'trade_payments': self.trade_payments,
            'total': self.total,
        }


def horizon_years(steps, step_duration):
    return steps * step_duration / HOURS_PER_YEAR


def generator_cost(spec, horizon):
    """Straight-line depreciation of a generator share over `horizon` years"""
    return spec.installed_power * spec.cost_per_kw * horizon / spec.lifetime


def energy_costs(imports_kwh, exports_kwh, tariffs):
    """(Σ e_b τ_b, Σ e_s τ_s) for energy series in kWh"""
    import_cost = float(np.dot(imports_kwh, tariffs.import_tariff.values))
    export_revenue = float(np.dot(exports_kwh, tariffs.export_tariff.values))
    return import_cost, export_revenue


def bill(trace, tariffs, spec):
    """Standalone bill of a prosumer whose battery produced `trace`"""
    trace.imports.check_compatible(tariffs.import_tariff)
    import_cost, export_revenue = energy_costs(trace.imports.values, trace.exports.values, tariffs)
    _, battery_cost = trace_depreciation(trace, spec.battery)
    return BillBreakdown(
        import_cost=import_cost,
        export_revenue=export_revenue,
        battery_depreciation=battery_cost,
        generator_depreciation=generator_cost(spec.generator, trace.power.years),
    )


def post_trade_bill(net_demand, received, tariffs, battery_depreciation=0.0,
                    generator_depreciation=0.0, payment=0.0):
    """Bill after P2P trading.

    `net_demand` is the member's own e(t) in kW, `received` the energy traded
    in kWh per step (positive when the member received more than it sent) and
    `payment` the net money it received from contracts.
    """
    net_demand.check_compatible(tariffs.import_tariff)
    residual = net_demand.values * net_demand.step_duration - np.asarray(received, dtype=float)
    import_cost, export_revenue = energy_costs(np.maximum(residual, 0.0), np.maximum(-residual, 0.0), tariffs)
    return BillBreakdown(
        import_cost=import_cost,
        export_revenue=export_revenue,
        battery_depreciation=battery_depreciation,
        generator_depreciation=generator_depreciation,
        trade_payments=payment,
    )


def gains_from_trade(individual_bills, group_bill):
    """GT = Σ individual bills - joint bill"""
    individual_bills = list(individual_bills)
    if not individual_bills:
        raise ValidationError("gains from trade needs at least one individual bill")
    return math.fsum(individual_bills) - group_bill
