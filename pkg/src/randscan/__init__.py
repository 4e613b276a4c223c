"""randscan: weak-randomness analysis for EVM bytecode.

Static side: simulated execution with taint tracking flags contracts whose
seed-derived pseudo-random numbers reach Ether transfers. Dynamic side: a
replay engine re-executes recorded transactions against world-state fixtures
and flags manipulation/prediction and rollback attack transactions.
"""

__version__ = "0.1.0"

from .engine import EngineConfig, scan_bytecode  # noqa: F401
from .taint import TaintPolicy  # noqa: F401
