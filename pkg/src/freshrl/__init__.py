"""freshrl: reward shaping from binary human feedback on desk-scale RL tasks."""

__version__ = "0.1.0"
