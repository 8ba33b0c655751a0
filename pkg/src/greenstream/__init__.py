"""Energy-efficient predictive power allocation for mobile video streaming.

Simulator plus learner: closed-form per-slot power control under Rayleigh
fading, a constrained buffer/playback MDP, and DDPG / PDS-DDPG agents with a
safety layer and virtual-experience acceleration, plus non-predictive and
offline-optimal baselines.
"""

__version__ = "0.1.0"
