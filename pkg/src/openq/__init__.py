"""Open quantum spin-chain simulation: exact, trajectory and tensor-network engines."""

from __future__ import annotations

__version__ = "0.1.0"
