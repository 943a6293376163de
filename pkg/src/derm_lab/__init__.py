"""derm-lab: neural feedback controls for stopping, hedging and allocation,
trained on simulated markets and cross-checked against classical numerical
methods (finite differences, semi-analytic transforms, regression Monte
Carlo, closed forms)."""

__version__ = "0.1.0"
