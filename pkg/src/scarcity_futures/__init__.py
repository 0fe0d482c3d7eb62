"""Pricing and hedging of scarcity-driven commodity futures.

Modules: ``demand`` (OU demand and its risk-neutral law), ``market`` (spot map
and producer economics), ``pricing`` (futures price, forward vol and drift),
``control`` (producer HJB solver and policies), ``sim`` (joint path simulation)
and ``cli``.
"""
from .demand import DemandModel, GaussianLaw, RiskPrice, conditional_law, transition_factor
from .market import CostSpec, ProducerSpec, SpotMap, q_star, spot_psi
from .pricing import FuturesModel, forward_drift, forward_vol, futures_price

__version__ = "0.1.0"

__all__ = [
    "CostSpec",
    "DemandModel",
    "FuturesModel",
    "GaussianLaw",
    "ProducerSpec",
    "RiskPrice",
    "SpotMap",
    "conditional_law",
    "forward_drift",
    "forward_vol",
    "futures_price",
    "q_star",
    "spot_psi",
    "transition_factor",
]
