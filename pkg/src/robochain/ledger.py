"""Append-only, hash-chained consortium ledger.

Blocks are sealed in strict round-robin order over a fixed validator set.
On-chain we keep robot event logs, (hash, id) anchors for camera frames and
contract calls; the frame bytes themselves live in a :class:`BlobStore`.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

from robochain import codec
from robochain.codec import DIGEST_SIZE, ZERO_HASH, DecodeError, Reader

PathLike = Union[str, os.PathLike]


class LedgerError(Exception):
    pass


class NonceError(LedgerError):
    pass


class StaleNonceError(NonceError):
    """The nonce was already used by this sender (replay)."""


class MalformedTransaction(LedgerError):
    pass


class OutOfTurnError(LedgerError):
    pass


class TxKind(IntEnum):
    ROBOT_EVENT = 1
    IMAGE_ANCHOR = 2
    CONTRACT_CALL = 3


@dataclass(frozen=True)
class RobotEventPayload:
    timestamp: float
    position: str
    velocity: int  # seconds per movement, 0 = stopped at home
    effort: float

    def encode(self) -> bytes:
        return (
            codec.f64(self.timestamp)
            + codec.text(self.position)
            + codec.u32(self.velocity)
            + codec.f64(self.effort)
        )

    @classmethod
    def decode(cls, r: Reader) -> RobotEventPayload:
        return cls(r.f64(), r.text(), r.u32(), r.f64())


@dataclass(frozen=True)
class ImageAnchorPayload:
    image_hash: bytes
    image_id: str

    def encode(self) -> bytes:
        return codec.blob(self.image_hash) + codec.text(self.image_id)

    @classmethod
    def decode(cls, r: Reader) -> ImageAnchorPayload:
        return cls(r.blob(), r.text())


@dataclass(frozen=True)
class ContractCallPayload:
    """One contract state transition, including deployment (entry ``%init``).

    ``params``, ``storage`` and ``operations`` hold tagged canonical values;
    ``storage`` is the complete post-call storage snapshot.
    """

    address: str
    entry: str
    params: bytes
    code_digest: bytes
    storage: bytes
    operations: bytes

    def encode(self) -> bytes:
        return b"".join(
            [
                codec.text(self.address),
                codec.text(self.entry),
                codec.blob(self.params),
                codec.blob(self.code_digest),
                codec.blob(self.storage),
                codec.blob(self.operations),
            ]
        )

    @classmethod
    def decode(cls, r: Reader) -> ContractCallPayload:
        return cls(r.text(), r.text(), r.blob(), r.blob(), r.blob(), r.blob())


Payload = Union[RobotEventPayload, ImageAnchorPayload, ContractCallPayload]

PAYLOAD_TYPES: dict[TxKind, type] = {
    TxKind.ROBOT_EVENT: RobotEventPayload,
    TxKind.IMAGE_ANCHOR: ImageAnchorPayload,
    TxKind.CONTRACT_CALL: ContractCallPayload,
}


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    sender: str
    description: str
    payload: Payload
    nonce: int

    def encode(self) -> bytes:
        return b"".join(
            [
                codec.u8(int(self.kind)),
                codec.text(self.sender),
                codec.text(self.description),
                codec.u64(self.nonce),
                codec.blob(self.payload.encode()),
            ]
        )

    @classmethod
    def decode(cls, data: bytes, base: int = 0) -> Transaction:
        r = Reader(data, base)
        at = r.offset
        raw_kind = r.u8()
        try:
            kind = TxKind(raw_kind)
        except ValueError:
            raise DecodeError(f"unknown transaction kind {raw_kind}", at) from None
        sender = r.text()
        description = r.text()
        nonce = r.u64()
        payload_base = r.offset + 4
        body = r.blob()
        r.expect_end()
        pr = Reader(body, payload_base)
        payload = PAYLOAD_TYPES[kind].decode(pr)
        pr.expect_end()
        return cls(kind, sender, description, payload, nonce)

    @property
    def digest(self) -> bytes:
        return codec.digest(self.encode())


def validate_transaction(tx: Transaction) -> None:
    """Shape checks done at intake; raises :class:`MalformedTransaction`."""
    if not isinstance(tx.kind, TxKind):
        raise MalformedTransaction(f"unknown kind {tx.kind!r}")
    expected = PAYLOAD_TYPES[tx.kind]
    if not isinstance(tx.payload, expected):
        raise MalformedTransaction(
            f"{tx.kind.name} needs {expected.__name__}, got {type(tx.payload).__name__}"
        )
    if not isinstance(tx.sender, str) or not tx.sender:
        raise MalformedTransaction("sender key-hash must be a non-empty string")
    if not isinstance(tx.description, str):
        raise MalformedTransaction("description must be a string (may be empty)")
    if not isinstance(tx.nonce, int) or tx.nonce < 0:
        raise MalformedTransaction("nonce must be a non-negative integer")
    p = tx.payload
    if isinstance(p, RobotEventPayload):
        if p.velocity < 0 or p.effort < 0:
            raise MalformedTransaction("velocity and effort must be non-negative")
        if (p.velocity == 0) != (p.position == "home"):
            raise MalformedTransaction("velocity is 0 exactly when the robot is at home")
    elif isinstance(p, ImageAnchorPayload):
        if len(p.image_hash) != DIGEST_SIZE:
            raise MalformedTransaction(f"image_hash must be {DIGEST_SIZE} bytes")
        if not p.image_id:
            raise MalformedTransaction("image_id must be non-empty")
    elif isinstance(p, ContractCallPayload):
        if not p.address or not p.entry:
            raise MalformedTransaction("contract call needs an address and entry name")
    try:
        tx.encode()
    except (ValueError, TypeError, OverflowError) as exc:
        raise MalformedTransaction(str(exc)) from None


@dataclass
class Block:
    height: int
    prev_hash: bytes
    timestamp: float
    transactions: list[Transaction]
    validator: str
    block_hash: bytes = b""

    def header_bytes(self) -> bytes:
        txs = b"".join(codec.blob(tx.encode()) for tx in self.transactions)
        return b"".join(
            [
                codec.u64(self.height),
                codec.blob(self.prev_hash),
                codec.f64(self.timestamp),
                codec.u32(len(self.transactions)),
                txs,
                codec.text(self.validator),
            ]
        )

    def compute_hash(self) -> bytes:
        return codec.digest(self.header_bytes())

    def encode(self) -> bytes:
        return self.header_bytes() + codec.blob(self.block_hash)


def decode_block(data: bytes, base: int = 0) -> tuple[Block, bytes]:
    """Parse one block; also return the raw hashed prefix so callers can
    check the stored hash against exactly the bytes that were on disk."""
    r = Reader(data, base)
    height = r.u64()
    prev_hash = r.blob()
    timestamp = r.f64()
    count = r.u32()
    txs = []
    for _ in range(count):
        tx_base = r.offset + 4
        txs.append(Transaction.decode(r.blob(), tx_base))
    validator = r.text()
    header = bytes(data[: r.pos])
    block_hash = r.blob()
    r.expect_end()
    return Block(height, prev_hash, timestamp, txs, validator, block_hash), header


@dataclass(frozen=True)
class Verdict:
    """Result of verifying a chain. ``first_bad_height`` is None when valid."""

    first_bad_height: int | None = None
    reason: str = ""
    offset: int | None = None

    @property
    def valid(self) -> bool:
        return self.first_bad_height is None

    def __bool__(self) -> bool:
        return self.valid


def _check_block(block: Block, height: int, prev: bytes, header: bytes | None = None) -> str:
    if block.height != height:
        return f"height field {block.height} != position {height}"
    if block.prev_hash != prev:
        return "prev_hash does not link to previous block"
    actual = codec.digest(header) if header is not None else block.compute_hash()
    if actual != block.block_hash:
        return "block_hash does not match contents"
    return ""


def verify_chain(chain: Sequence[Block]) -> Verdict:
    prev = ZERO_HASH
    for h, block in enumerate(chain):
        try:
            reason = _check_block(block, h, prev)
        except (ValueError, TypeError, OverflowError) as exc:
            reason = f"unencodable block: {exc}"
        if reason:
            return Verdict(h, reason)
        prev = block.block_hash
    return Verdict()


# Chain file: sequence of records, each a u32 length followed by block bytes.


def encode_chain(chain: Iterable[Block]) -> bytes:
    return b"".join(codec.blob(b.encode()) for b in chain)


def iter_chain_records(data: bytes) -> Iterator[tuple[int, bytes]]:
    """Yield (offset, record bytes); raises DecodeError on a torn record."""
    r = Reader(data)
    while not r.done():
        at = r.offset
        try:
            record = r.blob()
        except DecodeError as exc:
            raise DecodeError(f"truncated block record starting at {at}", exc.offset) from None
        yield at, record


def verify_chain_bytes(data: bytes) -> Verdict:
    """Parse and verify a serialized chain, attributing any failure to a height."""
    prev = ZERO_HASH
    height = 0
    records = iter_chain_records(data)
    while True:
        try:
            at, record = next(records)
        except StopIteration:
            return Verdict()
        except DecodeError as exc:
            return Verdict(height, f"parse error: {exc}", exc.offset)
        try:
            block, header = decode_block(record, at + 4)
        except DecodeError as exc:
            return Verdict(height, f"parse error: {exc}", exc.offset)
        reason = _check_block(block, height, prev, header)
        if reason:
            return Verdict(height, reason, at)
        prev = block.block_hash
        height += 1


def load_chain(path: PathLike) -> list[Block]:
    """Read a chain file; raises DecodeError (with offset) if it does not parse."""
    data = Path(path).read_bytes()
    return [decode_block(rec, at + 4)[0] for at, rec in iter_chain_records(data)]


class BlobStore:
    """Frame bytes on disk (one file per image id), or in memory if ``root`` is None.

    Image ids are sequential so that a replayed run names blobs identically.
    """

    def __init__(self, root: PathLike | None = None, prefix: str = "img"):
        self.root = Path(root) if root is not None else None
        self.prefix = prefix
        self._mem: dict[str, bytes] = {}
        self._lock = threading.Lock()
        self._next = 0
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            self._next = sum(1 for p in self.root.iterdir() if p.name.startswith(prefix + "-"))

    def put(self, data: bytes) -> tuple[bytes, str]:
        if not data:
            raise ValueError("cannot anchor an empty image")
        with self._lock:
            image_id = f"{self.prefix}-{self._next:08d}"
            self._next += 1
            if self.root is None:
                self._mem[image_id] = bytes(data)
            else:
                path = self.root / image_id
                with open(path, "xb") as fh:
                    fh.write(data)
        return codec.digest(data), image_id

    def get(self, image_id: str) -> bytes | None:
        if self.root is None:
            return self._mem.get(image_id)
        path = self.root / image_id
        if not path.is_file():
            return None
        return path.read_bytes()

    def verify(self, image_id: str, expected_hash: bytes) -> bool:
        data = self.get(image_id)
        return data is not None and codec.digest(data) == expected_hash

    def ids(self) -> list[str]:
        if self.root is None:
            return sorted(self._mem)
        return sorted(p.name for p in self.root.iterdir() if p.is_file())


@dataclass(frozen=True)
class Receipt:
    pool_position: int
    tx_digest: bytes


@dataclass
class Ledger:
    """Single-writer ledger. ``submit_transaction`` and ``seal_block`` share one
    lock, so callers on several threads are serialized through one intake."""

    validators: Sequence[str]
    blob_store: BlobStore = field(default_factory=BlobStore)
    chain_path: PathLike | None = None
    chain: list[Block] = field(default_factory=list)
    pending: list[Transaction] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.validators:
            raise ValueError("at least one validator is required")
        self.validators = tuple(self.validators)
        self._lock = threading.RLock()
        self._nonces: dict[str, int] = {}
        for block in self.chain:
            for tx in block.transactions:
                self._nonces[tx.sender] = tx.nonce + 1
        if self.chain_path is not None:
            Path(self.chain_path).parent.mkdir(parents=True, exist_ok=True)
            Path(self.chain_path).write_bytes(encode_chain(self.chain))

    @property
    def height(self) -> int:
        """Height the next sealed block will get."""
        return len(self.chain)

    @property
    def head_hash(self) -> bytes:
        return self.chain[-1].block_hash if self.chain else ZERO_HASH

    def next_nonce(self, sender: str) -> int:
        with self._lock:
            return self._nonces.get(sender, 0)

    def validator_for(self, height: int) -> str:
        return self.validators[height % len(self.validators)]

    def submit_transaction(self, tx: Transaction) -> Receipt:
        with self._lock:
            validate_transaction(tx)
            expected = self._nonces.get(tx.sender, 0)
            if tx.nonce < expected:
                raise StaleNonceError(
                    f"nonce {tx.nonce} from {tx.sender} already used (next is {expected})"
                )
            if tx.nonce > expected:
                raise NonceError(f"nonce {tx.nonce} from {tx.sender} skips ahead of {expected}")
            self._nonces[tx.sender] = expected + 1
            self.pending.append(tx)
            return Receipt(len(self.pending) - 1, tx.digest)

    def submit(self, kind: TxKind, sender: str, payload: Payload, description: str = "") -> Receipt:
        """Build and submit a transaction with the sender's next nonce."""
        with self._lock:
            tx = Transaction(kind, sender, description, payload, self.next_nonce(sender))
            return self.submit_transaction(tx)

    def seal_block(self, validator: str, now: float) -> Block:
        with self._lock:
            expected = self.validator_for(self.height)
            if validator != expected:
                raise OutOfTurnError(
                    f"height {self.height} belongs to {expected}, not {validator}"
                )
            if self.chain and now < self.chain[-1].timestamp:
                raise LedgerError(f"block time {now} precedes head time {self.chain[-1].timestamp}")
            block = Block(self.height, self.head_hash, float(now), list(self.pending), validator)
            block.block_hash = block.compute_hash()
            if self.chain_path is not None:
                with open(self.chain_path, "ab") as fh:
                    fh.write(codec.blob(block.encode()))
            self.chain.append(block)
            self.pending.clear()
            return block

    def seal_next(self, now: float) -> Block:
        """Seal as whichever validator owns the next height."""
        with self._lock:
            return self.seal_block(self.validator_for(self.height), now)

    def anchor_image(self, image_bytes: bytes) -> tuple[bytes, str]:
        return self.blob_store.put(image_bytes)

    def anchors(self) -> dict[str, bytes]:
        """image_id -> on-chain image_hash for every sealed ImageAnchor."""
        out = {}
        for block in self.chain:
            for tx in block.transactions:
                if tx.kind is TxKind.IMAGE_ANCHOR:
                    out[tx.payload.image_id] = tx.payload.image_hash
        return out

    def verify_anchor(self, image_id: str) -> bool:
        expected = self.anchors().get(image_id)
        return expected is not None and self.blob_store.verify(image_id, expected)

    def verify(self) -> Verdict:
        return verify_chain(self.chain)

    def query_events(
        self,
        sender: str | None = None,
        kind: TxKind | None = None,
        time_range: tuple[float, float] | None = None,
    ) -> list[tuple[int, Transaction]]:
        """Sealed transactions matching every given filter, in chain order.
        ``time_range`` is inclusive and applies to the block timestamp."""
        out = []
        for block in self.chain:
            if time_range is not None and not time_range[0] <= block.timestamp <= time_range[1]:
                continue
            for tx in block.transactions:
                if sender is not None and tx.sender != sender:
                    continue
                if kind is not None and tx.kind != kind:
                    continue
                out.append((block.height, tx))
        return out
