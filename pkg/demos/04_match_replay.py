"""Play a short match, save its log, and rebuild it from the log alone.

The match state is a pure fold over events: every incoming event gets a
log entry with its disposition (applied, dropped, or rejected), and
re-applying the logged events reproduces the exact final state. The
referee override shows damage being recomputed after the fact.
"""

from parablude import game

events = [
    {"type": "join", "player_id": "aoi", "role": "striker"},
    {"type": "join", "player_id": "riku", "role": "tank"},
    {"type": "bind", "player_id": "aoi", "pmu_id": "pmu-1"},
    {"type": "bind", "player_id": "riku", "pmu_id": "pmu-2"},
    {"type": "start"},
    # riku takes a torso hit: striker atk 14 * 1.5 - tank def 10 = 11
    {"type": "hit", "pmu_id": "pmu-2", "location": "torso",
     "confidence": 0.92, "timestamp_ms": 3000.0},
    # 200 ms later: inside the refractory window, dropped
    {"type": "hit", "pmu_id": "pmu-2", "location": "hand",
     "confidence": 0.88, "timestamp_ms": 3200.0},
    # aoi takes a forearm hit: tank atk 6 * 0.75 - striker def 2 = 2.5 -> 3
    {"type": "hit", "pmu_id": "pmu-1", "location": "forearm",
     "confidence": 0.84, "timestamp_ms": 5000.0},
    # referee decides the torso hit was actually a hand graze
    {"type": "override", "target_seq": 6, "location": "hand"},
    {"type": "finish"},
]

match = game.Match(config=game.MatchConfig())
for event in events:
    match = match.apply(event)

print("log:")
for entry in match.log:
    note = f" ({entry.note})" if entry.note else ""
    print(f"  #{entry.seq} {entry.event['type']:<10} {entry.disposition:<8}{note}")

print("\nfinal state:")
for player in match.players:
    print(f"  {player.player_id:<5} {player.role:<8} hp {player.hp}")

jsonl = game.log_to_jsonl(match.log)
print(f"\nserialized log: {len(jsonl.splitlines())} lines of JSONL")

rebuilt = game.replay([entry.event for entry in game.log_from_jsonl(jsonl)])
assert rebuilt.snapshot() == match.snapshot()
print("replay from the log reproduces the final state exactly")
