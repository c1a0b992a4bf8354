"""Timed-automata mission supervisor.

A :class:`TimedAutomaton` is a finite set of named states, a bank of timers
that all advance with simulated time, four scalar inputs ``u1..u4``, and
guarded transitions with timer resets and explicit priorities.  ``ta_step``
advances the timers, fires at most one enabled transition (highest priority
wins), applies its resets, and emits a trace event.

Two rule sets are provided for the observation mission:

* :func:`raw_mission_automaton` -- the mission rule set exactly as tabled in
  the supervisor design notes (``configs/`` carries the same data).  Its
  science-exit guard ``u3 >= t3`` already holds when science is entered (t3
  starts the episode at its previous value and the guard compares downward),
  so science dwell collapses to a single step; the rule set is retained
  verbatim for static analysis, which flags exactly this kind of defect.
* :func:`mission_automaton` -- the operational variant: the science exit is
  flipped to the duration-exceeded form ``u3 < t3`` used by every other
  phase, and the science/decommissioning clocks restart on entry.  A full
  catalog replay then yields one timed science episode per target.

``u3`` follows the mission catalog: it always equals the (time-scaled)
duration of the object the mission is currently serving.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

HOUR = 3600.0
DAY = 86400.0


class DeterminismFault(RuntimeError):
    """Two same-priority guards enabled at once."""


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Guard:
    """Comparison ``lhs op timer`` where lhs is an input name or a constant."""

    lhs: object  # input name (str) or numeric constant
    op: str      # "<" or "<=" or ">="
    timer: str

    def evaluate(self, inputs: Dict[str, float], timers: Dict[str, float]) -> bool:
        lhs = inputs[self.lhs] if isinstance(self.lhs, str) else float(self.lhs)
        t = timers[self.timer]
        if self.op == "<":
            return lhs < t
        if self.op == "<=":
            return lhs <= t
        if self.op == ">=":
            return lhs >= t
        raise ValueError(f"unknown guard operator {self.op!r}")

    def describe(self) -> str:
        return f"{self.lhs} {self.op} {self.timer}"


@dataclass(frozen=True)
class Transition:
    src: str
    dst: str
    guard: Guard
    resets: Tuple[str, ...] = ()
    priority: int = 0  # lower fires first


@dataclass(frozen=True)
class TimedAutomaton:
    """Deterministic timed automaton; value semantics, stepped functionally."""

    states: Tuple[str, ...]
    timer_names: Tuple[str, ...]
    input_names: Tuple[str, ...]
    transitions: Tuple[Transition, ...]
    active: str
    timers: Dict[str, float] = field(default_factory=dict)
    clock: float = 0.0

    def __post_init__(self) -> None:
        if self.active not in self.states:
            raise ValueError(f"active state {self.active!r} not declared")
        if not self.timers:
            object.__setattr__(
                self, "timers", {t: 0.0 for t in self.timer_names}
            )

    def outgoing(self, state: str) -> List[Transition]:
        out = [t for t in self.transitions if t.src == state]
        return sorted(out, key=lambda t: t.priority)


@dataclass(frozen=True)
class TransitionEvent:
    time: float
    src: str
    dst: str
    guard: str
    timers: Dict[str, float]


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def ta_step(
    ta: TimedAutomaton, dt: float, inputs: Dict[str, float]
) -> Tuple[TimedAutomaton, Optional[TransitionEvent]]:
    """Advance all timers by dt, then fire at most one enabled transition.

    Timers advance before guards are evaluated, fixing the semantics of
    strict comparisons at a single point.  Among enabled transitions the
    lowest priority number fires; two enabled transitions sharing a priority
    raise DeterminismFault.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    timers = {k: v + dt for k, v in ta.timers.items()}
    clock = ta.clock + dt

    enabled = [
        tr for tr in ta.outgoing(ta.active) if tr.guard.evaluate(inputs, timers)
    ]
    if not enabled:
        return replace(ta, timers=timers, clock=clock), None

    enabled.sort(key=lambda tr: tr.priority)
    if len(enabled) > 1 and enabled[0].priority == enabled[1].priority:
        raise DeterminismFault(
            f"guards {enabled[0].guard.describe()!r} and "
            f"{enabled[1].guard.describe()!r} enabled at the same priority "
            f"in state {ta.active!r}"
        )
    fired = enabled[0]
    for t in fired.resets:
        timers[t] = 0.0
    event = TransitionEvent(
        time=clock,
        src=fired.src,
        dst=fired.dst,
        guard=fired.guard.describe(),
        timers=dict(timers),
    )
    return replace(ta, active=fired.dst, timers=timers, clock=clock), event


# ---------------------------------------------------------------------------
# Static validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    overlaps: List[dict] = field(default_factory=list)
    unreachable_states: List[str] = field(default_factory=list)
    timers_never_reset: List[str] = field(default_factory=list)
    undefined_symbols: List[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not (
            self.overlaps
            or self.unreachable_states
            or self.timers_never_reset
            or self.undefined_symbols
        )


def _candidate_values(
    ta: TimedAutomaton, lo: float, hi: float, grid_n: int
) -> List[float]:
    """Grid for overlap search: range endpoints, every guard constant (with
    neighbors), and a uniform fill.  Constants must land exactly on the grid
    so boundary coincidences like equality overlaps are detected."""
    vals = {lo, hi}
    for tr in ta.transitions:
        if not isinstance(tr.guard.lhs, str):
            c = float(tr.guard.lhs)
            vals.update({c, c - 1e-9, c + 1e-9})
    step = (hi - lo) / max(grid_n - 1, 1)
    vals.update(lo + i * step for i in range(grid_n))
    return sorted(v for v in vals if lo <= v <= hi)


def validate(
    ta: TimedAutomaton,
    input_range: Tuple[float, float] = (0.0, 2.0e6),
    timer_range: Tuple[float, float] = (0.0, 2.0e6),
    grid_n: int = 21,
) -> ValidationReport:
    """Static checks: guard overlaps over a sampled boundary grid, state
    reachability (guards ignored), timers never reset, undefined symbols.

    Report-only; nothing raised.
    """
    report = ValidationReport()

    # (d) undefined symbols
    for tr in ta.transitions:
        if isinstance(tr.guard.lhs, str) and tr.guard.lhs not in ta.input_names:
            report.undefined_symbols.append(
                f"{tr.src}->{tr.dst}: input {tr.guard.lhs!r}"
            )
        if tr.guard.timer not in ta.timer_names:
            report.undefined_symbols.append(
                f"{tr.src}->{tr.dst}: timer {tr.guard.timer!r}"
            )

    # (a) pairwise guard overlaps per source state
    in_vals = _candidate_values(ta, *input_range, grid_n)
    t_vals = _candidate_values(ta, *timer_range, grid_n)
    for state in ta.states:
        out = ta.outgoing(state)
        for i in range(len(out)):
            for j in range(i + 1, len(out)):
                a, b = out[i], out[j]
                hit = _find_overlap(a.guard, b.guard, in_vals, t_vals)
                if hit is not None:
                    report.overlaps.append(
                        {
                            "state": state,
                            "guards": (a.guard.describe(), b.guard.describe()),
                            "dst": (a.dst, b.dst),
                            "witness": hit,
                        }
                    )

    # (b) reachability ignoring guards
    reachable = {ta.active}
    frontier = [ta.active]
    while frontier:
        s = frontier.pop()
        for tr in ta.outgoing(s):
            if tr.dst not in reachable:
                reachable.add(tr.dst)
                frontier.append(tr.dst)
    report.unreachable_states = [s for s in ta.states if s not in reachable]

    # (c) timers never reset
    reset_anywhere = {t for tr in ta.transitions for t in tr.resets}
    report.timers_never_reset = [
        t for t in ta.timer_names if t not in reset_anywhere
    ]
    return report


def _find_overlap(
    g1: Guard, g2: Guard, in_vals: Sequence[float], t_vals: Sequence[float]
) -> Optional[dict]:
    """Search a witness assignment making both guards true simultaneously."""
    symbols: List[Tuple[str, str]] = []  # (kind, name)
    for g in (g1, g2):
        if isinstance(g.lhs, str) and ("input", g.lhs) not in symbols:
            symbols.append(("input", g.lhs))
        if ("timer", g.timer) not in symbols:
            symbols.append(("timer", g.timer))

    def assignments(idx: int, inputs: dict, timers: dict):
        if idx == len(symbols):
            yield dict(inputs), dict(timers)
            return
        kind, name = symbols[idx]
        vals = in_vals if kind == "input" else t_vals
        for v in vals:
            if kind == "input":
                inputs[name] = v
            else:
                timers[name] = v
            yield from assignments(idx + 1, inputs, timers)

    for inputs, timers in assignments(0, {}, {}):
        if g1.evaluate(inputs, timers) and g2.evaluate(inputs, timers):
            return {"inputs": inputs, "timers": timers}
    return None


# ---------------------------------------------------------------------------
# Mission catalog
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CatalogEntry:
    id: int
    name: str
    duration_s: float  # unscaled mission seconds


@dataclass(frozen=True)
class MissionCatalog:
    """Ordered operational modes with durations, plus the replay time scale."""

    entries: Tuple[CatalogEntry, ...]
    time_scale: float = 1.0e-5  # simulation seconds per mission second

    def __post_init__(self) -> None:
        if not self.entries:
            raise ValueError("catalog must be non-empty")
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("catalog ids must be unique")
        if any(e.duration_s <= 0.0 for e in self.entries):
            raise ValueError("catalog durations must be > 0")

    def scaled_duration(self, entry_id: int) -> float:
        return self.by_id(entry_id).duration_s * self.time_scale

    def by_id(self, entry_id: int) -> CatalogEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise KeyError(f"no catalog entry with id {entry_id}")

    @property
    def science_ids(self) -> List[int]:
        """Everything between the commissioning (first) and decommissioning
        (last) entries, in order."""
        return [e.id for e in self.entries[1:-1]]


def default_mission_catalog(time_scale: float = 1.0e-5) -> MissionCatalog:
    """X-ray observation campaign: commissioning, eight targets, decommissioning."""
    raw = [
        (0, "Commissioning", 60 * DAY),
        (1, "Sco X-1", 0.2 * HOUR),
        (2, "GX 5-1", 1.5 * HOUR),
        (3, "GRS 1915+105", 4.2 * HOUR),
        (4, "Cyg X-3", 4.9 * HOUR),
        (5, "Crab Pulsar", 5.4 * HOUR),
        (6, "Cen X-3", 19 * HOUR),
        (7, "gamma Cas", 146 * HOUR),
        (8, "Eta Carinae", 452 * HOUR),
        (9, "Decommissioning", 5 * DAY),
    ]
    return MissionCatalog(
        entries=tuple(CatalogEntry(i, n, d) for i, n, d in raw),
        time_scale=time_scale,
    )


# ---------------------------------------------------------------------------
# Mission automaton builders
# ---------------------------------------------------------------------------

STATES = (
    "commissioning",
    "stabilization",
    "transient",
    "science",
    "next_object",
    "decommissioning",
    "end",
)
TIMERS = ("t0", "t1", "t2", "t3", "t4", "t5")
INPUTS = ("u1", "u2", "u3", "u4")

# Cumulative science time threshold that hands the mission to decommissioning;
# matches the longest catalog target so the final episode closes the mission.
DECOMMISSION_THRESHOLD_S = 452 * HOUR


def raw_mission_automaton(time_scale: float = 1.0e-5) -> TimedAutomaton:
    """The tabled rule set, verbatim.  Use for static analysis.

    Known defects surfaced by :func:`validate`: the science exits
    ``u3 >= t3`` / ``452h <= t3`` overlap at the boundary ``t3 = u3 = 452h``,
    and several timers are never reset.
    """
    thr = DECOMMISSION_THRESHOLD_S * time_scale
    transitions = (
        Transition("commissioning", "next_object", Guard("u3", "<", "t0"), ("t0",), 0),
        Transition("stabilization", "transient", Guard("u1", "<", "t1"), ("t1",), 0),
        Transition("transient", "science", Guard("u2", "<", "t2"), ("t2",), 0),
        # Priority: decommissioning outranks the next-object exit, which
        # outranks the re-stabilization exit.
        Transition("science", "next_object", Guard("u3", ">=", "t3"), ("t1",), 1),
        Transition("science", "stabilization", Guard("u3", "<", "t3"), (), 2),
        Transition("science", "decommissioning", Guard(thr, "<=", "t3"), ("t3",), 0),
        Transition("next_object", "transient", Guard("u4", "<", "t4"), ("t1",), 0),
        Transition("decommissioning", "end", Guard("u3", "<", "t5"), ("t5",), 0),
    )
    return TimedAutomaton(
        states=STATES,
        timer_names=TIMERS,
        input_names=INPUTS,
        transitions=transitions,
        active="commissioning",
    )


def mission_automaton(time_scale: float = 1.0e-5) -> TimedAutomaton:
    """Operational rule set: timed science episodes.

    Differences from :func:`raw_mission_automaton`, each needed for episodes
    to run their catalog durations:

    * science -> next_object fires on ``u3 < t3`` (duration exceeded), the
      same form as every other phase exit;
    * entering a phase restarts that phase's clock: ``t2`` resets on the
      edges into transient, ``t3`` on transient -> science, and ``t5`` on
      science -> decommissioning.
    """
    thr = DECOMMISSION_THRESHOLD_S * time_scale
    transitions = (
        Transition("commissioning", "next_object", Guard("u3", "<", "t0"), ("t0",), 0),
        Transition("stabilization", "transient", Guard("u1", "<", "t1"), ("t1", "t2"), 0),
        Transition("transient", "science", Guard("u2", "<", "t2"), ("t2", "t3"), 0),
        Transition("science", "next_object", Guard("u3", "<", "t3"), ("t1",), 1),
        Transition("science", "stabilization", Guard("u3", "<", "t3"), (), 2),
        Transition("science", "decommissioning", Guard(thr, "<=", "t3"), ("t3", "t5"), 0),
        Transition("next_object", "transient", Guard("u4", "<", "t4"), ("t1", "t2"), 0),
        Transition("decommissioning", "end", Guard("u3", "<", "t5"), ("t5",), 0),
    )
    return TimedAutomaton(
        states=STATES,
        timer_names=TIMERS,
        input_names=INPUTS,
        transitions=transitions,
        active="commissioning",
    )


# ---------------------------------------------------------------------------
# Mission replay
# ---------------------------------------------------------------------------

@dataclass
class SupervisorTrace:
    """Ordered transition events plus derived per-state episodes."""

    events: List[TransitionEvent] = field(default_factory=list)
    fault: Optional[str] = None
    initial_state: str = "commissioning"
    final_time: float = 0.0

    def episodes(self) -> List[dict]:
        """(state, enter, exit, duration) rows; the last row may be open."""
        rows = []
        current, enter = self.initial_state, 0.0
        for ev in self.events:
            rows.append(
                {
                    "state": current,
                    "enter": enter,
                    "exit": ev.time,
                    "duration": ev.time - enter,
                }
            )
            current, enter = ev.dst, ev.time
        rows.append(
            {
                "state": current,
                "enter": enter,
                "exit": self.final_time,
                "duration": self.final_time - enter,
            }
        )
        return rows

    def science_episodes(self) -> List[dict]:
        return [r for r in self.episodes() if r["state"] == "science"]

    def check_chaining(self) -> bool:
        prev = self.initial_state
        for ev in self.events:
            if ev.src != prev:
                return False
            prev = ev.dst
        return True

    def to_jsonl(self) -> str:
        lines = []
        for ev in self.events:
            lines.append(
                json.dumps(
                    {
                        "time": ev.time,
                        "from": ev.src,
                        "to": ev.dst,
                        "guard": ev.guard,
                        "timers": ev.timers,
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")

    def summary_rows(self) -> List[dict]:
        return self.episodes()


class MissionHooks:
    """Callbacks run_mission invokes; override what the experiment needs.

    ``transient_plan`` may return a new transient duration (u2 seconds) when
    a phase plan is computed at transient entry; returning None keeps the
    configured duration.  ``on_step`` advances any attached closed-loop
    simulation; ``on_enter`` observes phase changes.
    """

    def on_enter(self, state: str, ctx: dict) -> None:  # pragma: no cover
        pass

    def transient_plan(self, ctx: dict) -> Optional[float]:
        return None

    def on_step(self, state: str, dt: float, ctx: dict) -> None:  # pragma: no cover
        pass


def run_mission(
    ta: TimedAutomaton,
    catalog: MissionCatalog,
    T: float,
    hooks: Optional[MissionHooks] = None,
    dt: float = 0.02,
    u1: float = 1.0,
    u4: float = 0.5,
    max_steps: int = 2_000_000,
) -> SupervisorTrace:
    """Drive the automaton through the full catalog and return the trace.

    ``u3`` always carries the scaled duration of the object currently being
    served; the object pointer advances on entering next_object and jumps to
    the final catalog entry on entering decommissioning.  When the catalog is
    exhausted, ``u3`` becomes infinite so the mission parks in science until
    the cumulative decommissioning threshold trips.  ``T`` (u2) is the
    transient duration; hooks may supersede it per episode.
    """
    if not catalog.entries:
        raise ValueError("catalog must be non-empty")
    hooks = hooks or MissionHooks()
    science_ids = catalog.science_ids
    pointer: Optional[int] = catalog.entries[0].id
    next_science = 0
    u2 = float(T)
    trace = SupervisorTrace(initial_state=ta.active)

    for _ in range(max_steps):
        if ta.active == "end":
            break
        u3 = float("inf") if pointer is None else catalog.scaled_duration(pointer)
        inputs = {
            "u1": u1,
            "u2": u2,
            "u3": u3,
            "u4": u4,
        }
        ctx = {
            "object": None if pointer is None else catalog.by_id(pointer),
            "clock": ta.clock,
            "inputs": dict(inputs),
        }
        try:
            hooks.on_step(ta.active, dt, ctx)
            ta, event = ta_step(ta, dt, inputs)
        except DeterminismFault as exc:
            trace.fault = str(exc)
            break
        if event is not None:
            trace.events.append(event)
            if event.dst == "next_object":
                if next_science < len(science_ids):
                    pointer = science_ids[next_science]
                    next_science += 1
                else:
                    pointer = None  # catalog exhausted: park until decommissioning
            elif event.dst == "decommissioning":
                pointer = catalog.entries[-1].id
            ctx = {
                "object": None if pointer is None else catalog.by_id(pointer),
                "clock": ta.clock,
                "inputs": dict(inputs),
            }
            hooks.on_enter(event.dst, ctx)
            if event.dst == "transient":
                planned = hooks.transient_plan(ctx)
                if planned is not None:
                    u2 = float(planned)
    trace.final_time = ta.clock
    return trace
