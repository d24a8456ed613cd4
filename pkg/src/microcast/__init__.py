"""Cooperative mobile video streaming toolkit.

Pieces: GF(2^8) generation codec (gf256, rlnc), rate-allocation solver
and LP reference (num), shared-medium event simulator (netsim), the
download scheduler plus the three dissemination protocols (protocols),
and the scenario/recipe command line (scenarios, cli, acceptance).
"""

__version__ = "0.1.0"
