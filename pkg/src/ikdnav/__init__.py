"""Learned inverse kinodynamics for off-road navigation in simulation.

Modules: ``sim`` (vehicle, terrain and IMU), ``plan`` (global plans and
carrots), ``control`` (baseline and learned controllers), ``nn`` (the
inverse model), ``data`` (exploration datasets), ``eval`` (lap benchmark)
and ``cli``.
"""

__version__ = "0.1.0"
