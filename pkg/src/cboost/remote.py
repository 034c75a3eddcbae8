"""Remote logit protocol: HTTP client and a reference server.

Wire format (JSON bodies, UTF-8):

    GET  /v1/info          -> {"vocab_size": int, "max_context": int, "name": str}
    POST /v1/next_logprobs {"tokens": [int...]}
                           -> {"logprobs": [float x vocab_size]}
    POST /v1/score         {"context": [int...], "continuation": [int...]}
                           -> {"logprob": float, "per_token": [float...]}

Status 400 signals a contract violation, 503 a transient overload.  The
client retries transient failures three times with exponential backoff
before giving up.  Any server may implement the protocol; the bundled
reference server wraps an in-process backend.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Sequence

import numpy as np
import requests

from .backend import Backend, BackendInfo, as_tokens
from .dist import LogProbs
from .errors import BackendError, ContractError

MAX_RETRIES = 3
BACKOFF_BASE_SECONDS = 0.5


class RemoteBackend(Backend):
    """Client for a server speaking the remote logit protocol.

    The protocol is token-level only; pass a client-side ``tokenizer``
    matching the server's vocabulary to work with text inputs.
    """

    def __init__(
        self,
        base_url: str,
        timeout: float = 30.0,
        auth_header: str | None = None,
        eot_token_id: int | None = None,
        backoff_base: float = BACKOFF_BASE_SECONDS,
        session: requests.Session | None = None,
        tokenizer=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.backoff_base = backoff_base
        self._headers = {"Content-Type": "application/json"}
        if auth_header:
            self._headers["Authorization"] = auth_header
        self._session = session or requests.Session()
        self.tokenizer = tokenizer
        if eot_token_id is None:
            eot_token_id = tokenizer.eot_id if tokenizer is not None else 0
        self._eot = int(eot_token_id)
        self._info: BackendInfo | None = None

    def _request(self, method: str, path: str, body: dict | None = None) -> dict:
        url = self.base_url + path
        last_error: Exception | None = None
        for attempt in range(MAX_RETRIES + 1):
            if attempt:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._session.request(
                    method,
                    url,
                    data=None if body is None else json.dumps(body),
                    headers=self._headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 200:
                return resp.json()
            if resp.status_code == 400:
                raise ContractError(f"server rejected request: {resp.text}")
            # 503 and other 5xx are treated as transient
            last_error = BackendError(f"HTTP {resp.status_code}: {resp.text}")
        raise BackendError(f"remote backend failed after {MAX_RETRIES} retries: {last_error}")

    def info(self) -> BackendInfo:
        if self._info is None:
            payload = self._request("GET", "/v1/info")
            self._info = BackendInfo(
                vocab_size=int(payload["vocab_size"]),
                max_context=int(payload["max_context"]),
                name=str(payload["name"]),
            )
        return self._info

    def next_logprobs(self, context: Sequence[int]) -> LogProbs:
        context = as_tokens(context)
        self._check_context(context)
        payload = self._request("POST", "/v1/next_logprobs", {"tokens": list(context)})
        vec = np.asarray(payload["logprobs"], dtype=np.float64)
        if vec.shape != (self.info().vocab_size,):
            raise BackendError("server returned a logprob vector of the wrong length")
        return vec

    def score_continuation(self, context: Sequence[int], continuation: Sequence[int]) -> float:
        context = as_tokens(context)
        continuation = as_tokens(continuation)
        self._check_score_args(context, continuation)
        payload = self._request(
            "POST", "/v1/score", {"context": list(context), "continuation": list(continuation)}
        )
        return float(payload["logprob"])

    def encode(self, text: str):
        if self.tokenizer is None:
            raise ContractError(
                "this remote backend has no client-side tokenizer; "
                "provide one (e.g. a vocabulary file) to use text inputs"
            )
        return self.tokenizer.encode(text)

    def decode(self, tokens) -> str:
        if self.tokenizer is None:
            raise ContractError("this remote backend has no client-side tokenizer")
        return self.tokenizer.decode(tokens)

    @property
    def eot_token_id(self) -> int:
        return self._eot


class _Handler(BaseHTTPRequestHandler):
    backend: Backend  # set on the server class

    def log_message(self, fmt, *args):  # quiet
        pass

    def _send(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/v1/info":
            self._send(400, {"error": f"unknown path {self.path}"})
            return
        info = self.server.backend.info()  # type: ignore[attr-defined]
        self._send(
            200,
            {"vocab_size": info.vocab_size, "max_context": info.max_context, "name": info.name},
        )

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, json.JSONDecodeError):
            self._send(400, {"error": "malformed JSON body"})
            return
        backend: Backend = self.server.backend  # type: ignore[attr-defined]
        try:
            if self.path == "/v1/next_logprobs":
                vec = backend.next_logprobs(as_tokens(body["tokens"]))
                self._send(200, {"logprobs": [float(x) for x in vec]})
            elif self.path == "/v1/score":
                ctx = as_tokens(body["context"])
                cont = as_tokens(body["continuation"])
                per_token = []
                running = ctx
                for tok in cont:
                    per_token.append(float(backend.next_logprobs(running)[tok]))
                    running = running + (tok,)
                self._send(200, {"logprob": float(sum(per_token)), "per_token": per_token})
            else:
                self._send(400, {"error": f"unknown path {self.path}"})
        except (ContractError, KeyError, TypeError) as exc:
            self._send(400, {"error": str(exc)})
        except Exception as exc:  # pragma: no cover - defensive
            self._send(503, {"error": str(exc)})


class BackendServer:
    """Threaded reference server exposing a backend over the protocol."""

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.backend = backend  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "BackendServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def __enter__(self) -> "BackendServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
