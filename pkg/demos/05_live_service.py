"""Run the match service and drive it with a scripted PMU client.

Starts the service on ephemeral ports, authenticates over the TCP
NDJSON socket, plays a few events, and confirms the HTTP snapshot
matches what the client saw acknowledged.
"""

import asyncio
import json

import httpx

from parablude.protocol import WireMessage, decode, encode
from parablude.serve import MatchService, ServiceConfig


async def main():
    config = ServiceConfig(tcp_port=0, http_port=0, token="demo-token")
    service = MatchService(config)
    await service.start()
    print(f"service up: tcp {service.tcp_port}, http {service.http_port}")
    try:
        reader, writer = await asyncio.open_connection(config.host, service.tcp_port)
        seq = 0

        async def send(type_, payload):
            nonlocal seq
            seq += 1
            writer.write(encode(WireMessage(type=type_, seq=seq, payload=payload)).encode())
            await writer.drain()
            reply = decode((await reader.readline()).decode())
            print(f"  {type_:<8} -> {reply.type} {reply.payload}")
            return reply

        await send("command", {"command": "auth", "token": "demo-token"})
        await send("command", {"command": "join", "player_id": "aoi", "role": "balanced"})
        await send("command", {"command": "join", "player_id": "riku", "role": "balanced"})
        await send("command", {"command": "bind", "player_id": "aoi", "pmu_id": "pmu-1"})
        await send("command", {"command": "bind", "player_id": "riku", "pmu_id": "pmu-2"})
        await send("command", {"command": "start"})
        await send("hit", {"pmu_id": "pmu-2", "location": "torso",
                           "confidence": 0.9, "timestamp_ms": 1000.0})

        async with httpx.AsyncClient() as http:
            url = f"http://{config.host}:{service.http_port}/state"
            state = (await http.get(url)).json()
        print("\nGET /state:")
        print(json.dumps(state, indent=2))

        writer.close()
        await writer.wait_closed()
    finally:
        await service.stop()


asyncio.run(main())
