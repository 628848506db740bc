"""Super-replication of European claims in a binomial market with delayed information."""

from .asymptotics import ScalingSequence, build_scaling, bs_price, convergence_sweep, simulate_chain
from .direct import direct_price, direct_values
from .dp import ValueSurface, backward_induct, dp_price, hedge_plan
from .lattice import InvalidParameters, MarketParams, PayoffSpec, delay_measures, validate
from .oracle import arbitrage_search, minmax_lp_oracle, superrep_check, verification_report
from .smile import SmileBase, implied_vol, smile_curve

__version__ = "0.1.0"

__all__ = [
    "InvalidParameters",
    "MarketParams",
    "PayoffSpec",
    "ScalingSequence",
    "SmileBase",
    "ValueSurface",
    "arbitrage_search",
    "backward_induct",
    "bs_price",
    "build_scaling",
    "convergence_sweep",
    "delay_measures",
    "direct_price",
    "direct_values",
    "dp_price",
    "hedge_plan",
    "implied_vol",
    "minmax_lp_oracle",
    "simulate_chain",
    "smile_curve",
    "superrep_check",
    "validate",
    "verification_report",
]
