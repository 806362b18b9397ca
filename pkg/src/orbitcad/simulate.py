"""Multi-client convergence harness.

Boots the real broker on a loopback port, connects N websocket clients,
and has each send a seeded stream of random session ops while folding
everything it receives into a local replica. One client drops mid-run and
rejoins through the late-join bundle. When every client has seen the echo
of its own last op, a coordinator publishes a marker op; each client
hashes its canonical state at the marker and disconnects. The run
converged when all client hashes, the server hash, and the hash folded
back from the on-disk log agree.
"""

from __future__ import annotations

import asyncio
import json
import random
import time
from pathlib import Path

import websockets

from .broker.app import create_app
from .sessionlog import SessionState, apply_op, decode_op, empty_state, state_hash

MARKER_MODEL = "sim-end"
SESSION_ID = "sim"

NODE_IDS = [f"n{i:02d}" for i in range(1, 21)]


def _random_transform(rng: random.Random) -> dict:
    return {
        "t": [rng.uniform(-5, 5) for _ in range(3)],
        "q": [1.0, 0.0, 0.0, 0.0],
        "s": [1.0, 1.0, 1.0],
    }


def _random_op(rng: random.Random, client_index: int, k: int) -> tuple[str, dict]:
    roll = rng.random()
    if roll < 0.30:
        return "transform_node", {"node_id": rng.choice(NODE_IDS),
                                  "transform": _random_transform(rng)}
    if roll < 0.50:
        return "set_node_visibility", {"node_id": rng.choice(NODE_IDS),
                                       "visible": rng.random() < 0.5}
    if roll < 0.65:
        axis = rng.choice(["X", "Y", "Z", "free"])
        delta = [rng.uniform(-1, 1) for _ in range(3)] if axis == "free" else rng.uniform(-1, 1)
        target = rng.choice(["", *NODE_IDS])
        return "nudge_transform", {"target": target, "axis": axis, "delta": delta}
    if roll < 0.75:
        return "transform_whole", {"transform": _random_transform(rng)}
    if roll < 0.85:
        return "set_cut_plane", {"axis": rng.choice(["X", "Y", "Z"]),
                                 "offset": rng.uniform(-2, 2),
                                 "enabled": rng.random() < 0.8}
    if roll < 0.90:
        return "place_poi", {"position": [rng.uniform(-3, 3) for _ in range(3)],
                             "anchor": rng.choice([None, *NODE_IDS])}
    if roll < 0.95:
        return "set_scale", {"factor": rng.uniform(0.25, 4.0)}
    if roll < 0.97:
        return "create_slide", {"name": f"slide-{client_index}-{k}"}
    if roll < 0.99:
        return "load_slide", {"slide_id": f"s{rng.randint(1, 400)}"}
    return "delete_slide", {"slide_id": f"s{rng.randint(1, 400)}"}


def _frame(kind: str, body: dict, cid: str) -> str:
    return json.dumps({"v": 1, "op": 0, "cid": cid, "t": 0, "type": kind, "body": body},
                      separators=(",", ":"))


async def _read_hello(ws) -> tuple[SessionState, int]:
    msg = json.loads(await asyncio.wait_for(ws.recv(), 10.0))
    hello = msg["hello"]
    state = empty_state()
    for wire in hello["bundle"]:
        state = apply_op(state, decode_op(json.dumps(wire)))
    return state, hello["head"]


class _Client:
    def __init__(self, uri: str, cid: str, seed, ops_count: int, index: int,
                 drop_after: int | None):
        self.uri = uri
        self.cid = cid
        self.rng = random.Random(seed)
        self.ops_count = ops_count
        self.index = index
        self.drop_after = drop_after  # acked own ops before forced rejoin
        self.state: SessionState = empty_state()
        self.acked = 0
        self.final_hash: str | None = None
        self.rejoined = False

    async def _connect(self):
        ws = await websockets.connect(f"{self.uri}&cid={self.cid}", max_size=2**24)
        self.state, _head = await _read_hello(ws)
        return ws

    def _consume(self, raw: str) -> bool:
        """Fold a frame; returns True when the end marker was applied."""
        msg = json.loads(raw)
        if "hello" in msg or "error" in msg:
            return False
        op = decode_op(json.dumps(msg))
        if op.op_id == 0 and op.kind != "participant_pose":
            return False
        self.state = apply_op(self.state, op)
        if op.op_id > 0 and op.client_id == self.cid and op.kind not in ("join", "leave"):
            self.acked += 1
        return op.kind == "set_active_model" and op.body.get("model_id") == MARKER_MODEL

    async def run(self, sent_all: asyncio.Event):
        ws = await self._connect()
        try:
            for k in range(self.ops_count):
                kind, body = _random_op(self.rng, self.index, k)
                await ws.send(_frame(kind, body, self.cid))
                if self.rng.random() < 0.10:  # presence noise, never acked
                    pose = {"pose": {"t": [0.0, 0.0, float(k)], "q": [1.0, 0.0, 0.0, 0.0]}}
                    await ws.send(_frame("participant_pose", pose, self.cid))
                target = self.acked + 1
                while self.acked < target:
                    self._consume(await asyncio.wait_for(ws.recv(), 10.0))
                if self.drop_after is not None and self.acked == self.drop_after \
                        and not self.rejoined:
                    await ws.close()
                    self.rejoined = True
                    ws = await self._connect()
            sent_all.set()
            while True:
                if self._consume(await asyncio.wait_for(ws.recv(), 30.0)):
                    break
            self.final_hash = state_hash(self.state)
        finally:
            await ws.close()


async def run_simulation(data_dir: Path | str, clients: int = 20, ops_per_client: int = 100,
                         seed: int = 0, host: str = "127.0.0.1") -> dict:
    import uvicorn

    started = time.perf_counter()
    app = create_app(data_dir, flush_secs=3600.0)
    broker = app.state.broker
    config = uvicorn.Config(app, host=host, port=0, log_level="error", lifespan="on")
    server = uvicorn.Server(config)
    server_task = asyncio.create_task(server.serve())
    while not server.started:
        if server_task.done():
            server_task.result()
            raise RuntimeError("server exited during startup")
        await asyncio.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]

    token = broker.users.users[0]["token"]
    await broker.create_session(SESSION_ID, "default", "simulated session", None)
    uri = f"ws://{host}:{port}/ws/sessions/{SESSION_ID}?token={token}"

    drop_index = clients // 2  # one client exercises disconnect + late join
    tasks = []
    events = []
    workers = []
    for i in range(clients):
        drop_after = ops_per_client // 2 if i == drop_index else None
        client = _Client(uri, f"c{i:02d}", f"{seed}:{i}", ops_per_client, i, drop_after)
        ev = asyncio.Event()
        workers.append(client)
        events.append(ev)
        tasks.append(asyncio.create_task(client.run(ev)))

    async def coordinate():
        for ev in events:
            await ev.wait()
        async with websockets.connect(f"{uri}&cid=coord", max_size=2**24) as ws:
            await asyncio.wait_for(ws.recv(), 10.0)  # hello
            await ws.send(_frame("set_active_model", {"model_id": MARKER_MODEL}, "coord"))
            while True:
                msg = json.loads(await asyncio.wait_for(ws.recv(), 10.0))
                if msg.get("type") == "set_active_model" \
                        and msg["body"].get("model_id") == MARKER_MODEL:
                    break

    coord_task = asyncio.create_task(coordinate())
    await asyncio.gather(*tasks, coord_task)

    live = broker.sessions[SESSION_ID]
    server_hash = state_hash(live.state)
    head = live.log.head

    server.should_exit = True
    await server_task

    # fold the log back from disk: what a restart would see
    from .broker.storage import SegmentedLog
    from .sessionlog import fold_ops
    store = SegmentedLog(Path(data_dir) / "sessions", SESSION_ID)
    recovered_hash = state_hash(fold_ops(store.recover()))
    store.close()

    hashes = {w.cid: w.final_hash for w in workers}
    converged = len(set(hashes.values())) == 1 and server_hash in set(hashes.values())
    return {
        "clients": clients,
        "ops_per_client": ops_per_client,
        "seed": seed,
        "head": head,
        "hashes": hashes,
        "server_hash": server_hash,
        "recovered_hash": recovered_hash,
        "converged": converged and recovered_hash == server_hash,
        "rejoined_client": f"c{drop_index:02d}",
        "elapsed_secs": round(time.perf_counter() - started, 3),
    }


def simulate(data_dir: Path | str, clients: int = 20, ops_per_client: int = 100,
             seed: int = 0) -> dict:
    """Synchronous wrapper: run the whole harness and return the report."""
    return asyncio.run(run_simulation(data_dir, clients, ops_per_client, seed))
