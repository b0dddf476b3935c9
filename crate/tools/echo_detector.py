#!/usr/bin/env python3
"""Loopback detector speaking the streamgate pipe protocol.

Without a script it answers every request with no detections. With
--script it replays a mock script (rules plus fixed latency) so runs can
be compared against the in-process mock.
"""
import argparse
import json
import struct
import sys
import time


def read_exact(f, n):
    buf = b""
    while len(buf) < n:
        chunk = f.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--script")
    ap.add_argument("--mode", default="ok", choices=["ok", "wrong-id", "hang", "die"])
    ap.add_argument("--latency-ms", type=float, default=None)
    args = ap.parse_args()

    rules, latency_ms = [], 0.0
    if args.script:
        with open(args.script) as f:
            script = json.load(f)
        rules = script.get("rules", [])
        fixed = script.get("latency", {}).get("fixed")
        if fixed is not None:
            latency_ms = fixed * 1000.0
    if args.latency_ms is not None:
        latency_ms = args.latency_ms

    inp, out = sys.stdin.buffer, sys.stdout.buffer
    while True:
        raw = read_exact(inp, 4)
        if raw is None:
            return
        (hlen,) = struct.unpack("<I", raw)
        header = json.loads(read_exact(inp, hlen))
        if read_exact(inp, header["width"] * header["height"] * 3) is None:
            return
        if args.mode == "hang":
            time.sleep(3600)
        if args.mode == "die":
            return
        key = header["id"]
        dets = []
        for r in rules:
            if r["from"] <= key < r["to"]:
                dets = r["detections"]
                break
        rid = header["id"] + (1 if args.mode == "wrong-id" else 0)
        body = json.dumps({"id": rid, "latency_ms": latency_ms, "detections": dets}).encode()
        out.write(struct.pack("<I", len(body)) + body)
        out.flush()


if __name__ == "__main__":
    main()
