"""Deep actor-critic controllers for set-point tracking on simulated processes."""

__version__ = "0.1.0"
