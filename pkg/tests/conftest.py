from collections import deque

import numpy as np
import pytest

from robochain.ledger import ImageAnchorPayload, Ledger, RobotEventPayload, TxKind

VALIDATORS = ("v0", "v1", "v2")


def connected_components(mask: np.ndarray) -> int:
    """4-connected component count by breadth-first search."""
    seen = np.zeros(mask.shape, dtype=bool)
    h, w = mask.shape
    count = 0
    for y, x in zip(*np.nonzero(mask)):
        if seen[y, x]:
            continue
        count += 1
        seen[y, x] = True
        todo = deque([(y, x)])
        while todo:
            cy, cx = todo.popleft()
            for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    todo.append((ny, nx))
    return count


def robot_event(t=0.0, velocity=2, position="carry"):
    return RobotEventPayload(t, position, velocity, 1.0)


def build_chain(ledger: Ledger, blocks: int, per_block: int = 2, start: float = 0.0) -> Ledger:
    """Seal ``blocks`` blocks with a mix of robot events and image anchors."""
    for h in range(blocks):
        t = start + h
        for i in range(per_block):
            if i % 2:
                image_hash, image_id = ledger.anchor_image(bytes([h % 256, i]) * 8)
                ledger.submit(TxKind.IMAGE_ANCHOR, "tz1oracle", ImageAnchorPayload(image_hash, image_id),
                              f"frame {h}/{i}")
            else:
                ledger.submit(TxKind.ROBOT_EVENT, "tz1controller", robot_event(t, 2 + i % 3),
                              f"event {h}/{i}")
        ledger.seal_next(t)
    return ledger


@pytest.fixture
def ledger():
    return Ledger(VALIDATORS)


@pytest.fixture
def chain50(tmp_path):
    from robochain.ledger import BlobStore

    led = Ledger(VALIDATORS, BlobStore(tmp_path / "blobs"), chain_path=tmp_path / "chain.bin")
    return build_chain(led, 50, per_block=3)


_acceptance_lines: list[str] = []


@pytest.fixture
def report(capsys):
    """Record and print one PASS/FAIL line; returns ``ok`` so callers can assert on it."""

    def _report(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        _acceptance_lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
