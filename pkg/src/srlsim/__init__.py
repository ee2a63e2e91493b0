"""Planar simulator for a two-joint wearable leg on a moving torso.

Modules, bottom up: ``dynamics`` (rigid-body terms), ``contact`` (ground
model and phase labels), ``gait`` (reference trajectories and the linear
human-to-leg mapping), ``controller`` (hip impedance and knee PID),
``classifier`` and ``vic`` (phase recognition and gated impedance
scheduling), ``sim`` (closed-loop runs and sweeps), ``metrics`` and
``plotting`` (evaluation), ``config`` and ``cli`` (file and command-line
front ends).
"""

__version__ = "0.1.0"
