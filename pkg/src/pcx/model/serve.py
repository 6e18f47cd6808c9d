"""Serve a saved point-network model over the line protocol on stdin/stdout.

    python -m pcx.model.serve model.json
"""

import json
import sys

import numpy as np

from .network import forward_batch, load_model


def serve(params, stdin=sys.stdin, stdout=sys.stdout) -> None:
    pending = []
    for line in stdin:
        if not line.strip():
            continue
        msg = json.loads(line)
        if msg.get("end"):
            for rid, pts in pending:
                logits = forward_batch(params, np.asarray(pts, dtype=np.float64)[None])[0]
                stdout.write(json.dumps({"id": rid, "logits": [float(v) for v in logits]}) + "\n")
                stdout.flush()
            pending = []
        else:
            pending.append((msg["id"], msg["points"]))


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        sys.stderr.write("usage: python -m pcx.model.serve MODEL.json\n")
        return 2
    serve(load_model(argv[0]))
    return 0


if __name__ == "__main__":
    sys.exit(main())
