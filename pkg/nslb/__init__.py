# =============================================================================
# NSLB - NON-STATIONARY LATENT BANDITS
# =============================================================================

"""
Simulation library for non-stationary latent bandits.

Features:
- Synthetic and MovieLens superuser environments with common random numbers
- Model-based Thompson sampling with exact filtering or particle filtering
- Sliding-window model-based UCB
- Change-detection, UCB/TS, linear and fixed-share exponential-weights baselines
- Offline matrix completion and clustering pipeline for the superuser prior
- Seeded parallel experiment runner with CSV output
"""

__version__ = "1.0.0"
__description__ = "Non-stationary latent bandit experiments"
