"""Discrete-event simulation of the pick-and-place cell.

Three balls circulate: a gate releases one ball from its queue into the
pick zone every gate interval, the robot picks from the zone, carries the
ball and puts it back at the start of the track (the gate queue). Each
robot movement lasts ``current_velocity`` seconds, a value that only the
velocity contract sets. Events at equal times run in the order
gate < robot < control.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from robochain.contract import ContractEngine, ContractError, EmittedOperation, velocity_contract
from robochain.kv import ConfigError, PathLike, dataclass_from_kv, format_kv, read_kv
from robochain.ledger import BlobStore, Ledger, RobotEventPayload, TxKind
from robochain.oracle import Oracle, OracleConfig, random_scene, render_scene

log = logging.getLogger(__name__)

TOTAL_BALLS = 3
ORACLE_KEY = "tz1oracle"
CONTROLLER_KEY = "tz1controller"
OPERATOR_KEY = "tz1operator"
TABLE_TIMES = (10.0, 20.0, 30.0, 50.0, 75.0, 100.0, 125.0, 150.0, 175.0, 200.0, 225.0, 250.0, 275.0, 300.0)
EFFORT = 1.0

_GATE, _ROBOT, _CONTROL = 0, 1, 2


class RobotMode(Enum):
    HOME = "home"
    MOVING_TO_PICK = "moving_to_pick"
    TRANSPORTING = "transporting"
    PLACING = "placing"


# pose label written to the ledger for each mode
POSITIONS = {
    RobotMode.HOME: "home",
    RobotMode.MOVING_TO_PICK: "pick-approach",
    RobotMode.TRANSPORTING: "carry",
    RobotMode.PLACING: "place",
}


@dataclass(frozen=True)
class GateSchedule:
    """Gate release intervals: ``initial + k * step`` after ``k`` openings."""

    initial: float
    step: float = 0.0

    def __post_init__(self):
        if self.initial <= 0 or self.step < 0:
            raise ValueError(f"gate interval must be positive and step non-negative: {self}")

    @classmethod
    def fixed(cls, n: float) -> GateSchedule:
        return cls(n, 0.0)

    @classmethod
    def incremental(cls, initial: float, step: float) -> GateSchedule:
        return cls(initial, step)

    @property
    def mode(self) -> str:
        return "fixed" if self.step == 0 else "incremental"

    def interval(self, openings: int) -> float:
        return self.initial + openings * self.step


@dataclass(frozen=True)
class ExperimentConfig:
    label: str = "custom"
    gate_mode: str = "fixed"
    gate_interval: float = 5.0
    gate_step: float = 0.0
    initial_pick_zone: int = 3
    duration: float = 300.0
    sample_times: tuple = TABLE_TIMES
    sampling_period: float = 1.0
    seed: int = 0
    validators: int = 3
    noise: float = 6.0

    def __post_init__(self):
        if self.gate_mode not in ("fixed", "incremental"):
            raise ConfigError(f"gate_mode must be fixed or incremental, got {self.gate_mode!r}")
        if self.gate_mode == "fixed" and self.gate_step != 0:
            raise ConfigError("a fixed gate has gate_step=0")
        if not 0 <= self.initial_pick_zone <= TOTAL_BALLS:
            raise ConfigError(f"initial_pick_zone must be in 0..{TOTAL_BALLS}")
        if self.duration < 0 or self.sampling_period <= 0 or self.validators < 1:
            raise ConfigError("duration >= 0, sampling_period > 0 and validators >= 1 required")
        if any(t < 0 for t in self.sample_times):
            raise ConfigError("sample times must be non-negative")
        try:
            self.gate
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def gate(self) -> GateSchedule:
        return GateSchedule(self.gate_interval, self.gate_step)

    @classmethod
    def preset(cls, label: str, **overrides) -> ExperimentConfig:
        try:
            base = PRESETS[label.upper()]
        except KeyError:
            raise ConfigError(f"unknown experiment {label!r}; expected one of {', '.join(PRESETS)}") from None
        return replace(base, **overrides)

    @classmethod
    def from_kv(cls, values: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
        if base is not None:
            merged = {k: v for k, v in _as_strings(base).items()}
            merged.update(values)
            values = merged
        return dataclass_from_kv(cls, values)

    @classmethod
    def load(cls, path: PathLike) -> ExperimentConfig:
        return cls.from_kv(read_kv(path))

    def dump(self) -> str:
        return format_kv(self)


def _as_strings(cfg: ExperimentConfig) -> dict[str, str]:
    out = {}
    for line in format_kv(cfg).splitlines():
        key, _, value = line.partition("=")
        out[key] = value
    return out


PRESETS = {
    "A": ExperimentConfig("A", "fixed", 5.0),
    "B": ExperimentConfig("B", "fixed", 15.0),
    "C": ExperimentConfig("C", "fixed", 40.0),
    "D": ExperimentConfig("D", "incremental", 20.0, 5.0),
}


@dataclass
class CellState:
    sim_time: float = 0.0
    pick_zone: int = TOTAL_BALLS
    gate_queue: int = 0
    gate_next_open: float = 0.0
    gate_openings: int = 0
    robot_mode: RobotMode = RobotMode.HOME
    current_velocity: int = 0
    transporting: bool = False

    def snapshot(self) -> dict:
        return {
            "pick_zone": self.pick_zone,
            "gate_queue": self.gate_queue,
            "transporting": self.transporting,
            "mode": self.robot_mode.value,
            "velocity": self.current_velocity,
        }

    def violations(self) -> list[str]:
        out = []
        held = 1 if self.transporting else 0
        if self.pick_zone + self.gate_queue + held != TOTAL_BALLS:
            out.append(f"ball count {self.pick_zone}+{self.gate_queue}+{held} != {TOTAL_BALLS}")
        if not 0 <= self.pick_zone <= TOTAL_BALLS:
            out.append(f"pick_zone {self.pick_zone} out of range")
        if self.transporting != (self.robot_mode is RobotMode.TRANSPORTING):
            out.append("transporting flag disagrees with robot mode")
        if self.robot_mode is RobotMode.HOME and self.current_velocity != 0:
            out.append("robot at home with non-zero velocity")
        return out


@dataclass(frozen=True)
class TraceEvent:
    time: float
    event: str
    detail: dict

    def to_json(self) -> dict:
        return {"time": self.time, "event": self.event, "detail": self.detail}


@dataclass(frozen=True)
class VelocitySample:
    time: float
    velocity: int


class PickPlaceCell:
    """The closed loop: gate, robot, oracle and velocity contract over one ledger."""

    def __init__(self, cfg: ExperimentConfig, oracle_config: OracleConfig | None = None,
                 ledger: Ledger | None = None):
        self.cfg = cfg
        self.ledger = ledger or Ledger([f"tz1validator{i}" for i in range(cfg.validators)])
        self.engine = ContractEngine(self.ledger)
        self.address = self.engine.deploy(
            velocity_contract(),
            {"trusted_oracle": ORACLE_KEY, "controller": CONTROLLER_KEY},
            sender=OPERATOR_KEY,
        )
        self.oracle = Oracle(ORACLE_KEY, self.engine, self.address, oracle_config)
        self.state = CellState(
            pick_zone=cfg.initial_pick_zone,
            gate_queue=TOTAL_BALLS - cfg.initial_pick_zone,
            gate_next_open=cfg.gate.interval(0),
        )
        self.trace: list[TraceEvent] = []
        self.decisions: list[EmittedOperation] = []
        self._queue: list[tuple[float, int, int, str]] = []
        self._seq = 0
        self._frames = 0
        self._last_tick: float | None = None
        self._reported_transporting = False
        self._motion_velocity = 0
        self._schedule(self.state.gate_next_open, _GATE, "gate")
        self._schedule(0.0, _CONTROL, "tick")

    def _schedule(self, time: float, priority: int, kind: str) -> None:
        heapq.heappush(self._queue, (time, priority, self._seq, kind))
        self._seq += 1

    def _emit(self, event: str, **detail) -> TraceEvent:
        ev = TraceEvent(self.state.sim_time, event, {**detail, **self.state.snapshot()})
        self.trace.append(ev)
        return ev

    def step(self, until: float) -> list[TraceEvent]:
        """Process every event with time <= ``until``; return the events emitted."""
        if until < self.state.sim_time:
            raise ValueError(f"cannot step back from {self.state.sim_time} to {until}")
        start = len(self.trace)
        while self._queue and self._queue[0][0] <= until:
            time, _, _, kind = heapq.heappop(self._queue)
            self.state.sim_time = time
            if kind == "gate":
                self._on_gate()
            elif kind == "robot":
                self._on_phase_done()
            else:
                self._on_periodic_tick()
        self.state.sim_time = until
        return self.trace[start:]

    # --- gate ------------------------------------------------------------

    def _on_gate(self) -> None:
        s = self.state
        s.gate_openings += 1
        if s.gate_queue > 0:
            s.gate_queue -= 1
            s.pick_zone += 1
            self._emit("gate_open", openings=s.gate_openings)
        else:
            log.debug("gate opened at t=%g with no ball waiting", s.sim_time)
            self._emit("gate_idle", openings=s.gate_openings)
        s.gate_next_open = s.sim_time + self.cfg.gate.interval(s.gate_openings)
        self._schedule(s.gate_next_open, _GATE, "gate")

    # --- robot -----------------------------------------------------------

    def _start_phase(self, mode: RobotMode) -> None:
        s = self.state
        if s.current_velocity > 0:
            self._motion_velocity = s.current_velocity
        duration = self._motion_velocity
        s.robot_mode = mode
        s.transporting = mode is RobotMode.TRANSPORTING
        self._log_robot(duration)
        self._schedule(s.sim_time + duration, _ROBOT, "robot")

    def _go_home(self) -> None:
        self.state.robot_mode = RobotMode.HOME
        self.state.transporting = False
        self._log_robot(0)
        self._emit("home")

    def _log_robot(self, velocity: int) -> None:
        s = self.state
        payload = RobotEventPayload(s.sim_time, POSITIONS[s.robot_mode], velocity, EFFORT)
        self.ledger.submit(
            TxKind.ROBOT_EVENT, CONTROLLER_KEY, payload,
            f"robot {s.robot_mode.value} at t={s.sim_time:g}s, {velocity} s/movement",
        )

    def _on_phase_done(self) -> None:
        s = self.state
        mode = s.robot_mode
        if mode is RobotMode.MOVING_TO_PICK:
            if s.pick_zone == 0:
                # oracle false positive sent the robot to an empty zone
                self._emit("pick_miss")
                self._control()
                self._resume_or_home()
                return
            s.pick_zone -= 1
            s.robot_mode = RobotMode.TRANSPORTING
            s.transporting = True
            self._emit("pick")
            self._control()
            self._start_phase(RobotMode.TRANSPORTING)
        elif mode is RobotMode.TRANSPORTING:
            s.gate_queue += 1
            s.robot_mode = RobotMode.PLACING
            s.transporting = False
            self._emit("place")
            self._control()
            self._start_phase(RobotMode.PLACING)
        elif mode is RobotMode.PLACING:
            self._emit("retract")
            self._control()
            self._resume_or_home()
        else:
            raise AssertionError(f"phase completion while {mode}")

    def _resume_or_home(self) -> None:
        if self.state.current_velocity > 0:
            self._start_phase(RobotMode.MOVING_TO_PICK)
        else:
            self._go_home()

    # --- control ---------------------------------------------------------

    def _on_periodic_tick(self) -> None:
        if self._last_tick != self.state.sim_time:
            self._control()
        self.ledger.seal_next(self.state.sim_time)
        self._schedule(self.state.sim_time + self.cfg.sampling_period, _CONTROL, "tick")

    def control_tick(self) -> EmittedOperation | None:
        """Run one sensing/decision round now and return the operation applied."""
        return self._control()

    def _control(self) -> EmittedOperation | None:
        s = self.state
        self._last_tick = s.sim_time
        applied = None
        count = None
        try:
            if s.transporting != self._reported_transporting:
                ops, _ = self.engine.call_entry(
                    self.address, "set_transporting", CONTROLLER_KEY, {"flag": s.transporting},
                    description=f"controller: transporting={s.transporting}",
                )
                self._reported_transporting = s.transporting
                applied = ops[-1]
            frame = render_scene(random_scene(s.pick_zone, self.cfg.seed * 1_000_003 + self._frames,
                                              noise=self.cfg.noise))
            self._frames += 1
            seen = self.oracle.observe(frame, s.sim_time)
            count = seen.count
            applied = seen.operations[-1]
        except ContractError as exc:
            log.warning("contract rejected a call at t=%g: %s", s.sim_time, exc)
            self._emit("contract_rejected", reason=str(exc))
        if applied is None:
            return None
        self.decisions.append(applied)
        s.current_velocity = applied.velocity
        self._emit("decision", operation=str(applied), count=count)
        if s.robot_mode is RobotMode.HOME and s.current_velocity > 0:
            self._start_phase(RobotMode.MOVING_TO_PICK)
        return applied


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    samples: list[VelocitySample]
    cell: PickPlaceCell
    trace: list[TraceEvent] = field(default_factory=list)

    @property
    def ledger(self) -> Ledger:
        return self.cell.ledger


def sample_grid(cfg: ExperimentConfig) -> list[float]:
    """t=0 plus every configured sample time within the run."""
    return sorted({0.0} | {float(t) for t in cfg.sample_times if t <= cfg.duration})


def run_experiment(cfg: ExperimentConfig, oracle_config: OracleConfig | None = None,
                   out_dir: PathLike | None = None) -> ExperimentResult:
    """Simulate ``cfg.duration`` seconds, sampling the commanded velocity.

    With ``out_dir`` the chain is appended to ``out_dir/chain.bin`` as blocks
    are sealed and frames are stored under ``out_dir/blobs``.
    """
    validators = [f"tz1validator{i}" for i in range(cfg.validators)]
    if out_dir is not None:
        out = Path(out_dir)
        ledger = Ledger(validators, BlobStore(out / "blobs"), chain_path=out / "chain.bin")
    else:
        ledger = Ledger(validators)
    cell = PickPlaceCell(cfg, oracle_config, ledger)
    samples = []
    for t in sample_grid(cfg):
        cell.step(t)
        samples.append(VelocitySample(t, cell.state.current_velocity))
    cell.step(cfg.duration)
    if ledger.pending:
        ledger.seal_next(cfg.duration)
    return ExperimentResult(cfg, samples, cell, cell.trace)
