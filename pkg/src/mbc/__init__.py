"""Two-agent (blind + perceptive) quadruped locomotion training at desk scale."""

__version__ = "0.1.0"
