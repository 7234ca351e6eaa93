"""Budget-constrained index selection with a TD3 agent and an adaptive action selector."""

__version__ = "0.1.0"
