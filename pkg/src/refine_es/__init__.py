"""Two-stage policy refinement: PPO pretraining followed by evolution
strategies with bounded-support triangular perturbations."""

__version__ = "0.1.0"
