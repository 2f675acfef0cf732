"""Hashing-based data structures built on few random choices per key.

Subpackages cover seeded hashing primitives (`hashcore`), cuckoo-style
placement and tables (`orientation`), XOR retrieval over GF(2) linear
systems (`linsys`), ribbon retrieval (`ribbon`), bumped ribbon retrieval
(`burr`), and a seeded Monte Carlo harness (`experiments`).

Everything is deterministic given a 64-bit seed.
"""

from . import burr, experiments, hashcore, linsys, orientation, ribbon

__all__ = ["burr", "experiments", "hashcore", "linsys", "orientation", "ribbon"]
__version__ = "0.1.0"
