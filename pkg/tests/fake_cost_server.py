"""Test subprocess speaking the newline-delimited JSON cost protocol.

Usage: fake_cost_server.py MODE [SCHEMA_JSON]

Modes:
  analytic   price requests with the brute-force oracle (needs SCHEMA_JSON)
  echo       every query costs 7.0
  malformed  answers evaluate requests with a broken frame
  bad_total  total_cost disagrees with the per-query sum
  slow       never answers evaluate requests
  bad_hello  rejects the handshake
"""

import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from oracles import brute_query_cost  # noqa: E402


def main():
    mode = sys.argv[1]
    schema = None
    if mode == "analytic":
        from idxadvisor.schema import load_schema
        schema = load_schema(sys.argv[2])
    for line in sys.stdin:
        msg = json.loads(line)
        if msg["op"] == "hello":
            reply = {"ok": mode != "bad_hello", "version": 1}
        elif mode == "malformed":
            sys.stdout.write("{not json\n")
            sys.stdout.flush()
            continue
        elif mode == "slow":
            time.sleep(3600)
            continue
        else:
            reply = price(msg, mode, schema)
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


def price(msg, mode, schema):
    from idxadvisor.candidates import IndexDef, candidate_storage
    from idxadvisor.workload import workload_from_dict

    workload = workload_from_dict(msg["workload"], allow_empty=True)
    indexes = [IndexDef(d["table"], tuple(d["columns"])) for d in msg["config"]]
    if mode == "analytic":
        costs = [brute_query_cost(q, indexes, schema) for q in workload.queries]
        storage = sum(candidate_storage(i, schema) for i in indexes)
    else:
        costs = [7.0 for _ in workload.queries]
        storage = 0.0
    total = sum(q.frequency * c for q, c in zip(workload.queries, costs))
    if mode == "bad_total":
        total += 1.0
    return {
        "total_cost": total,
        "per_query": [{"id": q.id, "cost": c} for q, c in zip(workload.queries, costs)],
        "storage_units": storage,
    }


if __name__ == "__main__":
    main()
