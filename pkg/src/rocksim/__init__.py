"""rocksim: simulation and control stack for a one-motor pendulum-driven ball robot."""

__version__ = "0.1.0"
