"""Goal-conditioned DDPG + hindsight replay on a small constrained-tabletop simulator."""

__version__ = "0.1.0"
