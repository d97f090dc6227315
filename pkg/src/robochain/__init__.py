"""Blockchain-mediated control of a simulated pick-and-place cell.

Robot events and image anchors go onto a hash-chained ledger, an oracle
counts balls in camera frames, and a contract turns that count into a
robot velocity in seconds per movement.
"""

from robochain.contract import (
    ContractDef,
    ContractEngine,
    EmittedOperation,
    OpKind,
    compute_velocity,
    compute_x,
    velocity_contract,
)
from robochain.ledger import BlobStore, Block, Ledger, Transaction, TxKind, verify_chain
from robochain.oracle import OracleConfig, count_balls, render_scene, random_scene
from robochain.sim import ExperimentConfig, GateSchedule, PickPlaceCell, run_experiment

__all__ = [
    "BlobStore",
    "Block",
    "ContractDef",
    "ContractEngine",
    "EmittedOperation",
    "ExperimentConfig",
    "GateSchedule",
    "Ledger",
    "OpKind",
    "OracleConfig",
    "PickPlaceCell",
    "Transaction",
    "TxKind",
    "compute_velocity",
    "compute_x",
    "count_balls",
    "random_scene",
    "render_scene",
    "run_experiment",
    "velocity_contract",
    "verify_chain",
]

__version__ = "0.1.0"
