"""Routing service: checkpoint-backed classification over JSON/HTTP."""

from __future__ import annotations

import json
import logging
import threading
import uuid
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .checkpoint import Checkpoint, load_checkpoint
from .dataset import normalize_text
from .model import predict_topk
from .tokenize import encode_sequence

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 64 * 1024
DEFAULT_K = 5
DEFAULT_THRESHOLD = 0.5


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    label: str
    prob: float
    id: int


@dataclass(frozen=True)
class RouteResponse:
    predictions: tuple[Prediction, ...]
    uncertain: bool
    model_version: str

    def to_dict(self) -> dict:
        return {
            "predictions": [{"label": p.label, "prob": p.prob, "id": p.id} for p in self.predictions],
            "uncertain": self.uncertain,
            "model_version": self.model_version,
        }


class Router:
    """Read-only wrapper around a loaded checkpoint."""

    def __init__(self, ckpt: Checkpoint, threshold: float = DEFAULT_THRESHOLD):
        if not 0.0 <= threshold <= 1.0:
            raise ValueError("threshold must be in [0, 1]")
        self.ckpt = ckpt
        self.threshold = threshold

    @classmethod
    def from_path(cls, path: str | Path, threshold: float = DEFAULT_THRESHOLD) -> Router:
        return cls(load_checkpoint(path), threshold)

    @property
    def model_version(self) -> str:
        return self.ckpt.model_version

    @property
    def n_classes(self) -> int:
        return self.ckpt.model_config.n_classes

    def classify(self, text: str, k: int = DEFAULT_K, threshold: float | None = None) -> RouteResponse:
        threshold = self.threshold if threshold is None else threshold
        if not isinstance(text, str):
            raise ValidationError("text must be a string")
        if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= self.n_classes:
            raise ValidationError(f"k must be an integer in 1..{self.n_classes}")
        if not 0.0 <= threshold <= 1.0:
            raise ValidationError("threshold must be in [0, 1]")
        norm = normalize_text(text)
        if not norm:
            raise ValidationError("text is empty after normalization")
        cfg = self.ckpt.model_config
        seq = encode_sequence(self.ckpt.vocab, norm, cfg.max_len)
        ranked = predict_topk(self.ckpt.params, cfg, seq, k)
        preds = tuple(Prediction(self.ckpt.codec.decode(i), p, i) for i, p in ranked)
        return RouteResponse(preds, preds[0].prob < threshold, self.model_version)


class RoutingServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, router: Router | None = None, default_k: int = DEFAULT_K):
        super().__init__(address, _Handler)
        self.router = router
        self.default_k = default_k

    def load(self, path: str | Path, threshold: float = DEFAULT_THRESHOLD) -> None:
        self.router = Router.from_path(path, threshold)
        log.info("loaded model %s", self.router.model_version)

    def load_in_background(self, path: str | Path, threshold: float = DEFAULT_THRESHOLD) -> threading.Thread:
        t = threading.Thread(target=self.load, args=(path, threshold), daemon=True)
        t.start()
        return t

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


class _Handler(BaseHTTPRequestHandler):
    server: RoutingServer
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/health":
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
            return
        router = self.server.router
        if router is None:
            self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"status": "loading", "model_version": None})
        else:
            self._send(HTTPStatus.OK, {"status": "ok", "model_version": router.model_version})

    def do_POST(self):
        if self.path != "/classify":
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self.close_connection = True
            self._send(HTTPStatus.LENGTH_REQUIRED, {"error": "Content-Length required"})
            return
        if length > MAX_BODY_BYTES:
            self.close_connection = True
            self._send(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, {"error": f"body exceeds {MAX_BODY_BYTES} bytes"})
            return
        raw = self.rfile.read(length)
        router = self.server.router
        if router is None:
            self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"error": "model not loaded"})
            return
        try:
            req = json.loads(raw.decode("utf-8"))
            if not isinstance(req, dict):
                raise ValidationError("request body must be a JSON object")
            if "text" not in req:
                raise ValidationError("missing field 'text'")
            resp = router.classify(req["text"], req.get("k", self.server.default_k))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            self._send(HTTPStatus.BAD_REQUEST, {"error": f"malformed JSON: {exc}"})
            return
        except ValidationError as exc:
            self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
            return
        except Exception:  # noqa: BLE001
            incident = uuid.uuid4().hex[:12]
            log.exception("classify failed, incident %s", incident)
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "internal error", "incident": incident})
            return
        self._send(HTTPStatus.OK, resp.to_dict())


def make_server(host: str = "127.0.0.1", port: int = 8080, router: Router | None = None,
                default_k: int = DEFAULT_K) -> RoutingServer:
    return RoutingServer((host, port), router, default_k)
