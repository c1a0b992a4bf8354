"""formctl: formation-control simulation, supervision, and gain-tuning toolkit."""

__version__ = "0.1.0"
