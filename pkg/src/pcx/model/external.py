"""Out-of-process classifiers speaking a newline-delimited JSON protocol.

For every batch the client writes one ``{"id": k, "points": [[x, y, z], ...]}``
line per cloud followed by ``{"id": k, "end": true}``; the server answers
with one ``{"id": k, "logits": [...]}`` line per cloud, in order.
"""

from __future__ import annotations

import json
import os
import selectors
import shlex
import subprocess
import threading
import time
from typing import List, Optional, Sequence, Union

import numpy as np

from ..errors import ClassifierTimeout, ProcessExit, ProtocolError
from .handle import ClassifierHandle


class SubprocessClassifier:
    def __init__(self, command: Union[str, Sequence[str]], timeout: float = 60.0, class_names: Optional[List[str]] = None):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.class_names = list(class_names or [])
        self.n_classes = len(self.class_names) or None
        self._next_id = 0
        self._buf = b""
        self._lock = threading.Lock()
        try:
            self.proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, bufsize=0
            )
        except OSError as exc:
            raise ProcessExit(f"cannot start classifier {self.argv[0]!r}: {exc}") from None
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)

    def _send(self, obj) -> None:
        try:
            self.proc.stdin.write((json.dumps(obj) + "\n").encode("utf-8"))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ProcessExit(self._exit_message()) from None

    def _exit_message(self) -> str:
        try:
            code = self.proc.wait(timeout=1.0)
        except subprocess.TimeoutExpired:
            code = None
        return f"classifier process exited (code {code})"

    def _readline(self, deadline: float) -> bytes:
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ClassifierTimeout(f"no reply within {self.timeout} s")
            if not self._sel.select(timeout=remaining):
                continue
            chunk = os.read(self.proc.stdout.fileno(), 65536)
            if not chunk:
                raise ProcessExit(self._exit_message())
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def predict(self, clouds: Sequence[np.ndarray]) -> np.ndarray:
        with self._lock:
            if self.proc.poll() is not None:
                raise ProcessExit(f"classifier process exited (code {self.proc.returncode})")
            ids = []
            for c in clouds:
                ids.append(self._next_id)
                self._send({"id": self._next_id, "points": np.asarray(c, dtype=np.float64).tolist()})
                self._next_id += 1
            self._send({"id": self._next_id, "end": True})
            self._next_id += 1
            deadline = time.monotonic() + self.timeout
            out = []
            for k in ids:
                raw = self._readline(deadline)
                try:
                    reply = json.loads(raw.decode("utf-8"))
                    logits = [float(v) for v in reply["logits"]]
                    rid = reply["id"]
                except (ValueError, KeyError, TypeError, UnicodeDecodeError):
                    raise ProtocolError(f"malformed reply: {raw[:200]!r}") from None
                if rid != k:
                    raise ProtocolError(f"reply id {rid!r} does not match request id {k}")
                if self.n_classes is None:
                    self.n_classes = len(logits)
                if len(logits) != self.n_classes or not np.all(np.isfinite(logits)):
                    raise ProtocolError(f"expected {self.n_classes} finite logits, got {logits!r}")
                out.append(logits)
            return np.array(out, dtype=np.float64).reshape(len(ids), -1)

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self._sel.close()


def external_classifier(command, timeout: float = 60.0, class_names: Optional[List[str]] = None) -> ClassifierHandle:
    """Handle backed by a subprocess; it exposes no gradients."""
    client = SubprocessClassifier(command, timeout=timeout, class_names=class_names)
    handle = ClassifierHandle(client.predict, list(class_names or []), None, "subprocess:" + " ".join(client.argv))
    handle.close = client.close
    return handle
