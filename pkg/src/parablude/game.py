"""Two-player match engine: HP/ATK/DEF, location damage, replayable log.

State transitions are a pure fold: ``apply_event`` takes a match and a
plain-dict event and returns a new match, appending one log entry per
event with its disposition (applied, dropped, or rejected).  Replaying
the raw events of a log against the same config therefore reproduces
the final state field for field.

Event vocabulary (JSON objects, one per log line):

  {"type": "join", "player_id": p, "role": r}           lobby only
  {"type": "bind", "player_id": p, "pmu_id": u}         lobby only
  {"type": "start" | "pause" | "resume" | "finish"}     phase commands
  {"type": "reset"}                                     back to lobby, HP restored
  {"type": "hit", "pmu_id": u, "location": l,
   "confidence": c, "timestamp_ms": t}                  from a detector
  {"type": "sword_clash", "pmu_id": u, ...}             logged, no damage
  {"type": "override", "target_seq": n, "location": l}  referee correction

A hit damages the player wearing the emitting unit; the opponent is the
attacker.  Damage is ``max(1, ceil(atk * multiplier - def))``, so every
recognized hit costs at least one point.  Overrides re-derive a past
hit's damage under a corrected location and shift the defender's
current HP by the difference; a knockout can be revived this way, while
a match ended by explicit command stays ended.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

PHASES = ("lobby", "running", "paused", "finished")

DEFAULT_ROLES = {
    "balanced": {"hp": 100, "atk": 10, "def": 5},
    "tank": {"hp": 150, "atk": 6, "def": 10},
    "striker": {"hp": 70, "atk": 14, "def": 2},
}

DEFAULT_MULTIPLIERS = {"hand": 0.5, "forearm": 0.75, "upper_arm": 1.0, "torso": 1.5}


class MatchError(ValueError):
    """Event cannot be applied: bad reference, bad phase, or bad value."""


@dataclass(frozen=True)
class RoleStats:
    hp: int
    atk: int
    defense: int

    def __post_init__(self):
        if not 1 <= self.hp <= 999:
            raise ValueError(f"hp {self.hp} outside 1..999")
        if not 1 <= self.atk <= 99:
            raise ValueError(f"atk {self.atk} outside 1..99")
        if not 0 <= self.defense <= 99:
            raise ValueError(f"def {self.defense} outside 0..99")


@dataclass(frozen=True)
class RoleTable:
    roles: dict[str, RoleStats] = field(
        default_factory=lambda: {
            name: RoleStats(hp=v["hp"], atk=v["atk"], defense=v["def"])
            for name, v in DEFAULT_ROLES.items()
        }
    )

    def __post_init__(self):
        if not self.roles:
            raise ValueError("role table is empty")

    def stats(self, role: str) -> RoleStats:
        if role not in self.roles:
            raise MatchError(f"unknown role {role!r}; have {sorted(self.roles)}")
        return self.roles[role]

    def to_dict(self) -> dict:
        return {
            name: {"hp": s.hp, "atk": s.atk, "def": s.defense} for name, s in self.roles.items()
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RoleTable":
        return cls(
            roles={
                name: RoleStats(hp=v["hp"], atk=v["atk"], defense=v["def"])
                for name, v in doc.items()
            }
        )


@dataclass(frozen=True)
class LocationTable:
    multipliers: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MULTIPLIERS))

    def __post_init__(self):
        if not self.multipliers:
            raise ValueError("location table is empty")
        for name, m in self.multipliers.items():
            if m <= 0:
                raise ValueError(f"multiplier for {name!r} must be positive, got {m}")

    def multiplier(self, location: str) -> float:
        if location not in self.multipliers:
            raise MatchError(f"unknown location {location!r}; have {sorted(self.multipliers)}")
        return self.multipliers[location]

    def to_dict(self) -> dict:
        return dict(self.multipliers)

    @classmethod
    def from_dict(cls, doc: dict) -> "LocationTable":
        return cls(multipliers={k: float(v) for k, v in doc.items()})


@dataclass(frozen=True)
class MatchConfig:
    roles: RoleTable = field(default_factory=RoleTable)
    locations: LocationTable = field(default_factory=LocationTable)
    refractory_ms: float = 500.0

    def __post_init__(self):
        if self.refractory_ms < 0:
            raise ValueError("refractory_ms must be >= 0")

    def to_dict(self) -> dict:
        return {
            "roles": self.roles.to_dict(),
            "locations": self.locations.to_dict(),
            "refractory_ms": self.refractory_ms,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MatchConfig":
        return cls(
            roles=RoleTable.from_dict(doc["roles"]) if "roles" in doc else RoleTable(),
            locations=(
                LocationTable.from_dict(doc["locations"]) if "locations" in doc else LocationTable()
            ),
            refractory_ms=float(doc.get("refractory_ms", 500.0)),
        )


@dataclass(frozen=True)
class PlayerState:
    player_id: str
    role: str
    hp: int
    atk: int
    defense: int
    bindings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.hp < 0:
            raise ValueError("hp must be >= 0")
        object.__setattr__(self, "bindings", tuple(self.bindings))

    @property
    def defeated(self) -> bool:
        return self.hp == 0

    def to_dict(self) -> dict:
        return {
            "player_id": self.player_id,
            "role": self.role,
            "hp": self.hp,
            "atk": self.atk,
            "def": self.defense,
            "bindings": list(self.bindings),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PlayerState":
        return cls(
            player_id=doc["player_id"],
            role=doc["role"],
            hp=int(doc["hp"]),
            atk=int(doc["atk"]),
            defense=int(doc["def"]),
            bindings=tuple(doc.get("bindings", ())),
        )


def damage(attacker: PlayerState, defender: PlayerState, location: str,
           table: LocationTable | None = None) -> int:
    """Location-scaled attack minus defense, floored at one point."""
    table = table or LocationTable()
    return max(1, math.ceil(attacker.atk * table.multiplier(location) - defender.defense))


@dataclass(frozen=True)
class LogEntry:
    seq: int
    event: dict
    disposition: str  # applied | dropped | rejected
    effect: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        doc = {"seq": self.seq, "disposition": self.disposition, "event": self.event}
        if self.effect:
            doc["effect"] = self.effect
        if self.note:
            doc["note"] = self.note
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "LogEntry":
        return cls(
            seq=int(doc["seq"]),
            event=doc["event"],
            disposition=doc["disposition"],
            effect=doc.get("effect", {}),
            note=doc.get("note", ""),
        )


@dataclass(frozen=True)
class Match:
    """Immutable match state; ``apply_event`` returns the successor."""

    config: MatchConfig = field(default_factory=MatchConfig)
    players: tuple[PlayerState, ...] = ()
    phase: str = "lobby"
    log: tuple[LogEntry, ...] = ()
    finished_by: str | None = None  # "knockout" | "command" | None
    last_hit_ms: dict[str, float] = field(default_factory=dict)

    def player(self, player_id: str) -> PlayerState:
        for p in self.players:
            if p.player_id == player_id:
                return p
        raise MatchError(f"unknown player {player_id!r}")

    def bound_player(self, pmu_id: str) -> PlayerState:
        for p in self.players:
            if pmu_id in p.bindings:
                return p
        raise MatchError(f"pmu {pmu_id!r} is not bound to any player")

    def opponent(self, player_id: str) -> PlayerState:
        others = [p for p in self.players if p.player_id != player_id]
        if len(others) != 1:
            raise MatchError("match does not have exactly two players")
        return others[0]

    @property
    def winner(self) -> str | None:
        if self.phase != "finished":
            return None
        alive = [p for p in self.players if p.hp > 0]
        return alive[0].player_id if len(alive) == 1 else None

    def snapshot(self) -> dict:
        return {
            "phase": self.phase,
            "players": [p.to_dict() for p in self.players],
            "winner": self.winner,
            "log_length": len(self.log),
            "log": [entry.to_dict() for entry in self.log],
            "config": self.config.to_dict(),
        }

    def apply(self, event: dict) -> "Match":
        return apply_event(self, event)


def _with_player(match: Match, updated: PlayerState) -> tuple[PlayerState, ...]:
    return tuple(updated if p.player_id == updated.player_id else p for p in match.players)


def _append(match: Match, event: dict, disposition: str, effect: dict | None = None,
            note: str = "", **changes) -> Match:
    entry = LogEntry(
        seq=len(match.log) + 1,
        event=event,
        disposition=disposition,
        effect=effect or {},
        note=note,
    )
    return replace(match, log=match.log + (entry,), **changes)


def _require(condition: bool, message: str):
    if not condition:
        raise MatchError(message)


def _effective_hit_outcome(match: Match, target_seq: int, entry: LogEntry) -> dict:
    """A hit's outcome after any earlier overrides of the same entry."""
    outcome = entry.effect
    for later in match.log[target_seq:]:
        if (
            later.disposition == "applied"
            and later.event.get("type") == "override"
            and later.event.get("target_seq") == target_seq
        ):
            outcome = later.effect
    return outcome


def apply_event(match: Match, event: dict) -> Match:
    """Fold one event into the match; every event lands in the log."""
    if not isinstance(event, dict) or "type" not in event:
        raise MatchError("event must be an object with a 'type' field")
    kind = event["type"]

    if kind == "join":
        _require(match.phase == "lobby", f"cannot join during {match.phase}")
        _require(len(match.players) < 2, "match already has two players")
        player_id = event["player_id"]
        _require(
            all(p.player_id != player_id for p in match.players),
            f"player {player_id!r} already joined",
        )
        stats = match.config.roles.stats(event["role"])
        player = PlayerState(
            player_id=player_id,
            role=event["role"],
            hp=stats.hp,
            atk=stats.atk,
            defense=stats.defense,
        )
        return _append(match, event, "applied", players=match.players + (player,))

    if kind == "bind":
        _require(match.phase == "lobby", f"cannot bind during {match.phase}")
        pmu_id = event["pmu_id"]
        holder = next((p.player_id for p in match.players if pmu_id in p.bindings), None)
        _require(holder is None, f"pmu {pmu_id!r} already bound to {holder}")
        player = match.player(event["player_id"])
        updated = replace(player, bindings=player.bindings + (pmu_id,))
        return _append(match, event, "applied", players=_with_player(match, updated))

    if kind == "start":
        _require(match.phase == "lobby", f"cannot start from {match.phase}")
        _require(len(match.players) == 2, "starting needs exactly two players")
        return _append(match, event, "applied", phase="running")

    if kind == "pause":
        _require(match.phase == "running", f"cannot pause from {match.phase}")
        return _append(match, event, "applied", phase="paused")

    if kind == "resume":
        _require(match.phase == "paused", f"cannot resume from {match.phase}")
        return _append(match, event, "applied", phase="running")

    if kind == "finish":
        _require(match.phase in ("running", "paused"), f"cannot finish from {match.phase}")
        return _append(match, event, "applied", phase="finished", finished_by="command")

    if kind == "reset":
        players = tuple(
            replace(p, hp=match.config.roles.stats(p.role).hp) for p in match.players
        )
        return _append(
            match, event, "applied",
            players=players, phase="lobby", finished_by=None, last_hit_ms={},
        )

    if kind == "hit":
        if match.phase != "running":
            return _append(match, event, "rejected", note=f"match is {match.phase}, not running")
        defender = match.bound_player(event["pmu_id"])
        attacker = match.opponent(defender.player_id)
        ts = float(event.get("timestamp_ms", 0.0))
        last = match.last_hit_ms.get(defender.player_id)
        if last is not None and ts - last < match.config.refractory_ms:
            return _append(
                match, event, "dropped",
                note=f"within {match.config.refractory_ms:g} ms of previous hit",
            )
        dealt = damage(attacker, defender, event["location"], match.config.locations)
        hp_after = max(0, defender.hp - dealt)
        effect = {
            "defender": defender.player_id,
            "attacker": attacker.player_id,
            "location": event["location"],
            "damage": dealt,
            "hp_before": defender.hp,
            "hp_after": hp_after,
        }
        changes = {
            "players": _with_player(match, replace(defender, hp=hp_after)),
            "last_hit_ms": {**match.last_hit_ms, defender.player_id: ts},
        }
        if hp_after == 0:
            changes["phase"] = "finished"
            changes["finished_by"] = "knockout"
            effect["winner"] = attacker.player_id
        return _append(match, event, "applied", effect, **changes)

    if kind == "sword_clash":
        if match.phase != "running":
            return _append(match, event, "rejected", note=f"match is {match.phase}, not running")
        match.bound_player(event["pmu_id"])  # must reference a known unit
        return _append(match, event, "applied")

    if kind == "override":
        _require(match.phase != "lobby", "nothing to override in the lobby")
        target_seq = int(event["target_seq"])
        _require(1 <= target_seq <= len(match.log), f"no log entry with seq {target_seq}")
        target = match.log[target_seq - 1]
        _require(
            target.disposition == "applied" and target.event.get("type") == "hit",
            f"entry {target_seq} is not an applied hit",
        )
        new_location = event["location"]
        current = _effective_hit_outcome(match, target_seq, target)
        defender = match.player(current["defender"])
        attacker = match.player(target.effect["attacker"])
        new_damage = damage(attacker, defender, new_location, match.config.locations)
        new_hp_after = max(0, target.effect["hp_before"] - new_damage)
        delta = new_hp_after - current["hp_after"]
        corrected_hp = max(0, defender.hp + delta)
        effect = {
            "target_seq": target_seq,
            "defender": defender.player_id,
            "attacker": attacker.player_id,
            "location": new_location,
            "old_location": current["location"],
            "old_damage": current["damage"],
            "damage": new_damage,
            "hp_before": target.effect["hp_before"],
            "hp_after": new_hp_after,
            "hp_correction": corrected_hp - defender.hp,
        }
        changes = {"players": _with_player(match, replace(defender, hp=corrected_hp))}
        if corrected_hp == 0 and match.phase != "finished":
            changes["phase"] = "finished"
            changes["finished_by"] = "knockout"
            effect["winner"] = attacker.player_id
        elif corrected_hp > 0 and match.phase == "finished" and match.finished_by == "knockout":
            changes["phase"] = "running"
            changes["finished_by"] = None
        return _append(match, event, "applied", effect, **changes)

    raise MatchError(f"unknown event type {kind!r}")


def replay(events: list[dict], config: MatchConfig | None = None) -> Match:
    """Fold raw events over a fresh match; determinism makes this an audit."""
    match = Match(config=config or MatchConfig())
    for event in events:
        match = apply_event(match, event)
    return match


def log_to_jsonl(log: tuple[LogEntry, ...]) -> str:
    return "".join(json.dumps(entry.to_dict(), sort_keys=True) + "\n" for entry in log)


def log_from_jsonl(text: str) -> list[LogEntry]:
    entries = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            entries.append(LogEntry.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise MatchError(f"line {line_no}: bad log entry: {exc}") from exc
    for expected, entry in enumerate(entries, start=1):
        if entry.seq != expected:
            raise MatchError(f"log seq {entry.seq} at position {expected}; must be contiguous")
    return entries
