"""Client for an out-of-process evaluator speaking newline-delimited JSON.

Request:  {"id": <instance id>, "path": "<comma-joined layer indices>"}
Response: {"id": <same id>, "correct": <bool>, "answer": <str, optional>,
           "error": <str, optional>}

One response per request, in order.  The server may be a spawned process
(talking over its stdin/stdout) or a TCP endpoint ``host:port``.
"""

from __future__ import annotations

import json
import queue
import shlex
import socket
import subprocess
import threading

from cola.executors.base import EvaluationError, EvaluationOutcome, TaskInstance, make_outcome
from cola.paths import LayerPath, encode_path

DEFAULT_TIMEOUT = 30.0


class ConnectionFailed(OSError):
    """The evaluator server could not be reached or went away."""


class Connection:
    """A line-oriented duplex byte stream. Subclasses provide the transport."""

    timeout: float = DEFAULT_TIMEOUT

    def send_line(self, line: str) -> None:
        raise NotImplementedError

    def read_line(self) -> str:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class SubprocessConnection(Connection):
    def __init__(self, command: str | list[str], timeout: float = DEFAULT_TIMEOUT) -> None:
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         stderr=subprocess.DEVNULL)
        except OSError as exc:
            raise ConnectionFailed(f"cannot start evaluator {argv!r}: {exc}") from exc
        self._lines: queue.Queue[bytes | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        for raw in self.proc.stdout:
            self._lines.put(raw)
        self._lines.put(None)

    def send_line(self, line: str) -> None:
        try:
            self.proc.stdin.write(line.encode("utf-8") + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise ConnectionFailed(f"evaluator process exited: {exc}") from exc

    def read_line(self) -> str:
        try:
            raw = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise EvaluationError(f"no response within {self.timeout}s") from None
        if raw is None:
            self._lines.put(None)
            raise ConnectionFailed("evaluator process closed its output")
        return raw.decode("utf-8", errors="replace").rstrip("\r\n")

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class TcpConnection(Connection):
    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> None:
        self.timeout = timeout
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ConnectionFailed(f"cannot connect to {host}:{port}: {exc}") from exc
        self._file = self.sock.makefile("rwb")

    def send_line(self, line: str) -> None:
        try:
            self._file.write(line.encode("utf-8") + b"\n")
            self._file.flush()
        except OSError as exc:
            raise ConnectionFailed(str(exc)) from exc

    def read_line(self) -> str:
        try:
            raw = self._file.readline()
        except socket.timeout:
            raise EvaluationError(f"no response within {self.timeout}s") from None
        if not raw:
            raise ConnectionFailed("server closed the connection")
        return raw.decode("utf-8", errors="replace").rstrip("\r\n")

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self.sock.close()


def connect(server: str, timeout: float = DEFAULT_TIMEOUT) -> Connection:
    """``host:port`` opens TCP; anything else is treated as a command line to spawn."""
    host, sep, port = server.rpartition(":")
    if sep and port.isdigit() and host and " " not in host:
        return TcpConnection(host, int(port), timeout)
    return SubprocessConnection(server, timeout)


def parse_response(line: str, request_id: str) -> dict:
    try:
        msg = json.loads(line)
    except json.JSONDecodeError:
        raise EvaluationError("malformed JSON response", raw=line) from None
    if not isinstance(msg, dict):
        raise EvaluationError("response is not a JSON object", raw=line)
    if msg.get("id") != request_id:
        raise EvaluationError(f"response id {msg.get('id')!r} does not match {request_id!r}",
                              raw=line)
    if msg.get("error") is not None:
        raise EvaluationError(f"server error: {msg['error']}", raw=line)
    if not isinstance(msg.get("correct"), bool):
        raise EvaluationError("response lacks a boolean 'correct'", raw=line)
    answer = msg.get("answer")
    if answer is not None and not isinstance(answer, str):
        raise EvaluationError("'answer' must be a string", raw=line)
    return msg


class ExternalEvaluator:
    """Evaluator backed by a :class:`Connection`; requests are serialized per connection."""

    def __init__(self, connection: Connection, num_layers: int) -> None:
        self.connection = connection
        self._num_layers = num_layers
        self._lock = threading.Lock()

    @property
    def num_layers(self) -> int:
        return self._num_layers

    def evaluate(self, instance: TaskInstance, path: LayerPath,
                 rho: float = 0.0) -> EvaluationOutcome:
        request = json.dumps({"id": instance.id, "path": encode_path(path)},
                             separators=(",", ":"), ensure_ascii=False)
        with self._lock:
            self.connection.send_line(request)
            line = self.connection.read_line()
        msg = parse_response(line, instance.id)
        return make_outcome(msg["correct"], path, self._num_layers, rho, answer=msg.get("answer"))

    def close(self) -> None:
        self.connection.close()


def external_evaluate(connection: Connection, instance: TaskInstance, path: LayerPath,
                      num_layers: int, rho: float = 0.0) -> EvaluationOutcome:
    return ExternalEvaluator(connection, num_layers).evaluate(instance, path, rho)
