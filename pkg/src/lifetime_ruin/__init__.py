"""Optimal investment to minimise the probability of lifetime ruin.

Fund vectors and two-fund decompositions (:mod:`.fundalg`), the exact
constant-coefficient solution (:mod:`.closedform`), a policy-iteration HJB
solver (:mod:`.hjb`) and a Monte Carlo simulator (:mod:`.mcsim`), all
driven by a :class:`~.market.MarketModel`.
"""

from .errors import RuinError
from .market import MarketModel, ParameterCurve, SigmaBundle, sigma_bundle, validate

__all__ = ["MarketModel", "ParameterCurve", "RuinError", "SigmaBundle", "sigma_bundle", "validate"]
__version__ = "0.1.0"
