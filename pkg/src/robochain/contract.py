"""Contract definitions and a serialized execution engine.

A contract has the five-part shape of a Liquidity program: a version
string, type definitions, a storage schema, a one-shot ``init`` and named
entry points. Entry points take ``(caller, params, storage)`` and return
``(operations, new_storage)``. The engine keeps storage, applies results
atomically and records each transition as a ContractCall transaction.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Callable, Mapping

from robochain import codec
from robochain.ledger import ContractCallPayload, Ledger, LedgerError, Receipt, TxKind

Storage = dict[str, Any]
EntryFn = Callable[[str, Mapping[str, Any], Storage], "tuple[list[EmittedOperation], Storage]"]


class ContractError(Exception):
    pass


class AddressCollision(ContractError):
    pass


class UnknownContract(ContractError):
    pass


class UnknownEntry(ContractError):
    pass


class Unauthorized(ContractError):
    pass


class InvalidArguments(ContractError):
    pass


class ContractFault(ContractError):
    """The contract reached a state its own logic rules out."""


class OpKind(Enum):
    SET_VELOCITY = "SetVelocity"
    STOP_AT_HOME = "StopAtHome"


@dataclass(frozen=True)
class EmittedOperation:
    kind: OpKind
    value: int | None = None

    def __post_init__(self):
        if self.kind is OpKind.STOP_AT_HOME and self.value is not None:
            raise ValueError("StopAtHome carries no value")
        if self.kind is OpKind.SET_VELOCITY and (self.value is None or self.value <= 0):
            raise ValueError("SetVelocity needs a positive seconds-per-movement value")

    @property
    def velocity(self) -> int:
        """Seconds per movement this operation commands; 0 means stop."""
        return 0 if self.kind is OpKind.STOP_AT_HOME else self.value

    def to_value(self) -> dict:
        return {"kind": self.kind.value, "value": self.value}

    def __str__(self) -> str:
        return self.kind.value if self.value is None else f"{self.kind.value} {self.value}"


_SCHEMA_TYPES = {"int": int, "bool": bool, "str": str}


@dataclass(frozen=True)
class ContractDef:
    version: str
    storage_schema: tuple[tuple[str, str], ...]
    init: Callable[..., Storage]
    entry_points: Mapping[str, EntryFn]
    types: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "storage_schema", tuple(tuple(f) for f in self.storage_schema))
        object.__setattr__(self, "entry_points", MappingProxyType(dict(self.entry_points)))
        object.__setattr__(self, "types", MappingProxyType(dict(self.types)))
        for name, type_name in self.storage_schema:
            if type_name not in _SCHEMA_TYPES:
                raise ValueError(f"storage field {name}: unsupported type {type_name!r}")

    def code_digest(self) -> bytes:
        """Identity of the definition: version, types, schema and the bytecode
        of init and every entry point."""

        def fn_identity(fn: Callable) -> dict:
            code = fn.__code__
            return {"name": fn.__qualname__, "code": code.co_code, "consts": repr(code.co_consts)}

        return codec.digest(
            codec.encode_value(
                {
                    "version": self.version,
                    "types": dict(self.types),
                    "schema": [list(f) for f in self.storage_schema],
                    "init": fn_identity(self.init),
                    "entries": {k: fn_identity(v) for k, v in self.entry_points.items()},
                }
            )
        )

    def check_storage(self, storage: Mapping[str, Any]) -> None:
        names = [name for name, _ in self.storage_schema]
        if sorted(storage) != sorted(names):
            raise ContractFault(f"storage fields {sorted(storage)} != schema {sorted(names)}")
        for name, type_name in self.storage_schema:
            value = storage[name]
            want = _SCHEMA_TYPES[type_name]
            if type(value) is not want:
                raise ContractFault(f"storage field {name} must be {type_name}, got {value!r}")


def storage_bytes(storage: Mapping[str, Any]) -> bytes:
    return codec.encode_value(dict(storage))


@dataclass(frozen=True)
class CallReceipt:
    address: str
    entry: str
    operations: tuple[EmittedOperation, ...]
    storage_digest: bytes
    tx: Receipt


@dataclass
class _Deployed:
    definition: ContractDef
    code_digest: bytes
    storage: Storage


class ContractEngine:
    """Hosts deployed contracts. Calls are serialized by one lock; a call
    either commits storage and a ContractCall transaction together or
    changes nothing."""

    def __init__(self, ledger: Ledger):
        self.ledger = ledger
        self._contracts: dict[str, _Deployed] = {}
        self._lock = threading.RLock()

    def deploy(self, definition: ContractDef, init_args: Mapping[str, Any], sender: str,
               address: str | None = None, description: str = "") -> str:
        with self._lock:
            code_digest = definition.code_digest()
            if address is None:
                seed = code_digest + sender.encode() + codec.u64(self.ledger.next_nonce(sender))
                address = "KT1" + codec.digest(seed).hex()[:32]
            if address in self._contracts:
                raise AddressCollision(f"address {address} is already occupied")
            try:
                storage = definition.init(**init_args)
            except TypeError as exc:
                raise InvalidArguments(f"init: {exc}") from None
            definition.check_storage(storage)
            payload = ContractCallPayload(
                address, "%init", codec.encode_value(dict(init_args)), code_digest,
                storage_bytes(storage), codec.encode_value([]),
            )
            self.ledger.submit(
                TxKind.CONTRACT_CALL, sender, payload,
                description or f"deploy {definition.version} contract at {address}",
            )
            self._contracts[address] = _Deployed(definition, code_digest, storage)
            return address

    def storage(self, address: str) -> Storage:
        """A copy of the current storage."""
        with self._lock:
            return dict(self._lookup(address).storage)

    def code_digest(self, address: str) -> bytes:
        return self._lookup(address).code_digest

    def addresses(self) -> list[str]:
        return sorted(self._contracts)

    def _lookup(self, address: str) -> _Deployed:
        try:
            return self._contracts[address]
        except KeyError:
            raise UnknownContract(address) from None

    def call_entry(self, address: str, entry: str, caller: str,
                   params: Mapping[str, Any] | None = None,
                   description: str | None = None) -> tuple[list[EmittedOperation], CallReceipt]:
        params = dict(params or {})
        with self._lock:
            deployed = self._lookup(address)
            fn = deployed.definition.entry_points.get(entry)
            if fn is None:
                raise UnknownEntry(f"{address} has no entry point {entry!r}")
            ops, new_storage = fn(caller, MappingProxyType(params), dict(deployed.storage))
            ops = list(ops)
            deployed.definition.check_storage(new_storage)
            snapshot = storage_bytes(new_storage)
            payload = ContractCallPayload(
                address, entry, codec.encode_value(params), deployed.code_digest,
                snapshot, codec.encode_value([op.to_value() for op in ops]),
            )
            if description is None:
                args = ", ".join(f"{k}={v}" for k, v in sorted(params.items()))
                description = f"{entry}({args}) -> {', '.join(map(str, ops)) or 'no-op'}"
            try:
                tx = self.ledger.submit(TxKind.CONTRACT_CALL, caller, payload, description)
            except LedgerError as exc:
                raise ContractError(f"ledger refused the call: {exc}") from exc
            deployed.storage = new_storage
            return ops, CallReceipt(address, entry, tuple(ops), codec.digest(snapshot), tx)


# --- velocity control contract -------------------------------------------

MAX_BALLS = 3


def compute_x(ball_count: int, transporting: bool) -> int:
    """Balls the robot has to deal with: those seen by the oracle plus the one in the gripper."""
    if ball_count < 0:
        raise ContractFault(f"negative ball count {ball_count}")
    return ball_count + (1 if transporting else 0)


def compute_velocity(x: int, max_speed: int = 2, mean_speed: int = 4) -> EmittedOperation:
    """Seconds per movement for ``x`` pending balls.

    ``(max_speed + mean_speed) // x`` clamped to ``[max_speed, max_speed + mean_speed]``;
    no balls means stop at home.
    """
    if x < 0:
        raise ContractFault(f"negative ball total {x}")
    if x == 0:
        return EmittedOperation(OpKind.STOP_AT_HOME)
    slowest = max_speed + mean_speed
    v = min(max((max_speed + mean_speed) // x, max_speed), slowest)
    return EmittedOperation(OpKind.SET_VELOCITY, v)


def _init_velocity(trusted_oracle: str, controller: str) -> Storage:
    for name, key in (("trusted_oracle", trusted_oracle), ("controller", controller)):
        if not isinstance(key, str) or not key:
            raise InvalidArguments(f"{name} must be a non-empty key-hash")
    return {
        "trusted_oracle": trusted_oracle,
        "controller": controller,
        "ball_count": 0,
        "transporting": False,
        "max_speed": 2,
        "mean_speed": 4,
        "current_velocity": 0,
    }


def _decide(storage: Storage) -> tuple[list[EmittedOperation], Storage]:
    x = compute_x(storage["ball_count"], storage["transporting"])
    op = compute_velocity(x, storage["max_speed"], storage["mean_speed"])
    storage["current_velocity"] = op.velocity
    return [op], storage


def _report_count(caller: str, params: Mapping[str, Any], storage: Storage):
    if caller != storage["trusted_oracle"]:
        raise Unauthorized(f"{caller} is not the trusted oracle")
    count = params.get("count")
    if type(count) is not int or not 0 <= count <= MAX_BALLS:
        raise InvalidArguments(f"count must be an int in 0..{MAX_BALLS}, got {count!r}")
    storage["ball_count"] = count
    return _decide(storage)


def _set_transporting(caller: str, params: Mapping[str, Any], storage: Storage):
    if caller != storage["controller"]:
        raise Unauthorized(f"{caller} is not the robot controller")
    flag = params.get("flag")
    if type(flag) is not bool:
        raise InvalidArguments(f"flag must be a bool, got {flag!r}")
    storage["transporting"] = flag
    return _decide(storage)


def velocity_contract() -> ContractDef:
    return ContractDef(
        version="0.5",
        types={"oracles": "key_hash list"},
        storage_schema=(
            ("trusted_oracle", "str"),
            ("controller", "str"),
            ("ball_count", "int"),
            ("transporting", "bool"),
            ("max_speed", "int"),
            ("mean_speed", "int"),
            ("current_velocity", "int"),
        ),
        init=_init_velocity,
        entry_points={"report_count": _report_count, "set_transporting": _set_transporting},
    )


def entry_report_count(engine: ContractEngine, address: str, caller: str, count: int):
    return engine.call_entry(address, "report_count", caller, {"count": count})


def entry_set_transporting(engine: ContractEngine, address: str, caller: str, flag: bool):
    return engine.call_entry(address, "set_transporting", caller, {"flag": flag})
