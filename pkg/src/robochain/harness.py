"""Command-line front end: run experiments, verify run directories, render tables.

A run directory holds::

    samples.csv      time,velocity
    events.ndjson    one {"time", "event", "detail"} object per line
    chain.bin        length-prefixed canonical blocks
    blobs/           one file per image id
    manifest.json    label, seed, config and a digest of every artifact
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from robochain import codec
from robochain.codec import DecodeError
from robochain.ledger import ImageAnchorPayload, TxKind, decode_block, iter_chain_records, verify_chain_bytes
from robochain.kv import ConfigError, read_kv
from robochain.oracle import OracleConfig
from robochain.sim import ExperimentConfig, ExperimentResult, PRESETS, run_experiment

log = logging.getLogger("robochain")

ARTIFACTS = ("samples.csv", "events.ndjson", "chain.bin", "blobs")
_ORACLE_KEYS = {f for f in OracleConfig.__dataclass_fields__}


class HarnessError(Exception):
    pass


@dataclass(frozen=True)
class RunManifest:
    label: str
    seed: int
    config_path: str | None
    out_dir: Path
    digests: dict[str, str]

    def to_json(self) -> str:
        return json.dumps(
            {"label": self.label, "seed": self.seed, "config": self.config_path, "artifacts": self.digests},
            indent=2, sort_keys=True,
        ) + "\n"


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def dir_digest(path: Path) -> str:
    """Digest over sorted (name, content digest) pairs of a flat directory."""
    h = hashlib.sha256()
    for child in sorted(path.iterdir()):
        h.update(codec.text(child.name) + bytes.fromhex(file_digest(child)))
    return h.hexdigest()


def artifact_digests(out: Path) -> dict[str, str]:
    return {
        name: dir_digest(out / name) if (out / name).is_dir() else file_digest(out / name)
        for name in ARTIFACTS
    }


def samples_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time", "velocity"])
    for s in result.samples:
        writer.writerow([f"{s.time:g}", s.velocity])
    return buf.getvalue()


def resolve_config(experiment: str, config: str | None = None,
                   seed: int | None = None) -> tuple[ExperimentConfig, OracleConfig]:
    """An experiment label or a config file path, optionally overlaid by ``config``.

    Keys naming oracle thresholds go to the oracle config, the rest to the
    experiment config.
    """
    if experiment.upper() in PRESETS:
        base, values = PRESETS[experiment.upper()], {}
    else:
        base, values = None, read_kv(experiment)
    if config is not None:
        values.update(read_kv(config))
    oracle_values = {k: v for k, v in values.items() if k in _ORACLE_KEYS}
    exp_values = {k: v for k, v in values.items() if k not in _ORACLE_KEYS}
    if seed is not None:
        exp_values["seed"] = str(seed)
    return ExperimentConfig.from_kv(exp_values, base), OracleConfig.from_kv(oracle_values)


def cmd_run(experiment: str, out: Path, config: str | None = None, seed: int | None = None) -> RunManifest:
    exp_cfg, oracle_cfg = resolve_config(experiment, config, seed)
    out.mkdir(parents=True, exist_ok=True)
    stale = [name for name in ARTIFACTS + ("manifest.json",) if (out / name).exists()]
    if stale:
        raise HarnessError(f"{out} already holds a run ({', '.join(stale)})")
    result = run_experiment(exp_cfg, oracle_cfg, out)
    (out / "samples.csv").write_text(samples_csv(result), encoding="utf-8", newline="")
    with open(out / "events.ndjson", "w", encoding="utf-8", newline="\n") as fh:
        for ev in result.trace:
            fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")
    (out / "config.txt").write_text(exp_cfg.dump() + oracle_cfg.dump(), encoding="utf-8")
    manifest = RunManifest(exp_cfg.label, exp_cfg.seed, config or (None if experiment.upper() in PRESETS else experiment),
                           out, artifact_digests(out))
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


@dataclass(frozen=True)
class VerifyReport:
    ok: bool
    problems: list[str]
    blocks: int = 0
    anchors: int = 0


def cmd_verify(run_dir: Path) -> VerifyReport:
    missing = [name for name in ARTIFACTS + ("manifest.json",) if not (run_dir / name).exists()]
    if missing:
        raise HarnessError(f"{run_dir} is missing {', '.join(missing)}")
    data = (run_dir / "chain.bin").read_bytes()
    verdict = verify_chain_bytes(data)
    if not verdict.valid:
        where = f" (offset {verdict.offset})" if verdict.offset is not None else ""
        return VerifyReport(False, [f"chain: bad block at height {verdict.first_bad_height}{where}: {verdict.reason}"])
    anchors: dict[str, bytes] = {}
    blocks = 0
    for at, record in iter_chain_records(data):
        block, _ = decode_block(record, at + 4)
        blocks += 1
        for tx in block.transactions:
            if tx.kind is TxKind.IMAGE_ANCHOR:
                payload: ImageAnchorPayload = tx.payload
                anchors[payload.image_id] = payload.image_hash
    problems = []
    blob_dir = run_dir / "blobs"
    for image_id, expected in anchors.items():
        path = blob_dir / image_id
        if not path.is_file():
            problems.append(f"anchor mismatch: {image_id} missing from blob store")
        elif codec.digest(path.read_bytes()) != expected:
            problems.append(f"anchor mismatch: {image_id} does not hash to its on-chain anchor")
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    for name, recorded in manifest.get("artifacts", {}).items():
        target = run_dir / name
        actual = dir_digest(target) if target.is_dir() else file_digest(target)
        if actual != recorded:
            problems.append(f"manifest: digest of {name} changed")
    return VerifyReport(not problems, problems, blocks, len(anchors))


def read_samples(path: Path) -> list[tuple[float, int]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["time", "velocity"]:
        raise HarnessError(f"{path}: expected header time,velocity")
    try:
        return [(float(t), int(v)) for t, v in rows[1:]]
    except ValueError as exc:
        raise HarnessError(f"{path}: {exc}") from None


def cmd_table(run_dirs: Sequence[Path]) -> str:
    if len(run_dirs) != 4:
        raise HarnessError(f"the table needs four runs, got {len(run_dirs)}")
    columns: dict[str, dict[float, int]] = {}
    for i, d in enumerate(run_dirs):
        label = str(i)
        manifest = d / "manifest.json"
        if manifest.is_file():
            label = json.loads(manifest.read_text(encoding="utf-8")).get("label", label)
        if label in columns:
            raise HarnessError(f"two runs share the label {label!r}")
        columns[label] = dict(read_samples(d / "samples.csv"))
    grids = {tuple(sorted(c)) for c in columns.values()}
    if len(grids) != 1:
        raise HarnessError("runs were sampled on different time grids")
    labels = sorted(columns)
    times = [t for t in grids.pop() if t > 0]
    lines = ["Time (s)  " + "  ".join(f"{lab:>3}" for lab in labels)]
    for t in times:
        lines.append(f"{t:>8g}  " + "  ".join(f"{columns[lab][t]:>3}" for lab in labels))
    return "\n".join(lines) + "\n"


def latest_storage(run_dir: Path) -> dict[str, dict]:
    """Storage of every contract as of the last ContractCall in the chain."""
    out = {}
    data = (run_dir / "chain.bin").read_bytes()
    for at, record in iter_chain_records(data):
        block, _ = decode_block(record, at + 4)
        for tx in block.transactions:
            if tx.kind is TxKind.CONTRACT_CALL:
                out[tx.payload.address] = codec.decode_value(tx.payload.storage)
    return out


def format_storage(address: str, storage: dict) -> str:
    lines = [f"[{address}]"] + [f"{k}={v}" for k, v in sorted(storage.items())]
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robochain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one experiment")
    run.add_argument("experiment", help="A, B, C, D or a key=value config file")
    run.add_argument("--config", help="key=value overrides (experiment or oracle keys)")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=Path, help="run directory (default: runs/<label>)")

    verify = sub.add_parser("verify", help="check chain links and image anchors of a run")
    verify.add_argument("run_dir", type=Path)

    table = sub.add_parser("table", help="velocity table from four runs")
    table.add_argument("run_dirs", type=Path, nargs="+")

    dump = sub.add_parser("dump-storage", help="print contract storage from a run's chain")
    dump.add_argument("run_dir", type=Path)
    dump.add_argument("--address")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "run":
            label = args.experiment.upper() if args.experiment.upper() in PRESETS else Path(args.experiment).stem
            out = args.out or Path("runs") / label
            manifest = cmd_run(args.experiment, out, args.config, args.seed)
            sys.stdout.write((out / "samples.csv").read_text(encoding="utf-8"))
            print(f"run {manifest.label} written to {out}", file=sys.stderr)
        elif args.command == "verify":
            report = cmd_verify(args.run_dir)
            if not report.ok:
                for problem in report.problems:
                    print(problem)
                return 1
            print(f"valid: {report.blocks} blocks, {report.anchors} anchors")
        elif args.command == "table":
            sys.stdout.write(cmd_table(args.run_dirs))
        elif args.command == "dump-storage":
            storages = latest_storage(args.run_dir)
            if args.address is not None:
                if args.address not in storages:
                    raise HarnessError(f"no contract at {args.address}")
                storages = {args.address: storages[args.address]}
            for address, storage in sorted(storages.items()):
                sys.stdout.write(format_storage(address, storage))
    except (HarnessError, ConfigError, DecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
