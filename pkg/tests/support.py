"""Shared helpers for the test suite: oracles, fixtures and a stub HTTP server."""

from __future__ import annotations

import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from medroute.dataset import Dataset, QARecord
from medroute.model import Batch, ModelConfig, init_params, loss_and_grad

GRAD_H = 1e-4
GRAD_TOL = 1e-4
# below this magnitude both gradients count as zero (central differences of
# an exactly flat coordinate come out around 1e-12)
GRAD_FLOOR = 1e-6

GRAD_CONFIGS = (
    ModelConfig(vocab_size=20, n_classes=3, max_len=8, d_model=8, n_heads=2, n_layers=1, d_ff=16, seed=1),
    ModelConfig(vocab_size=25, n_classes=4, max_len=7, d_model=12, n_heads=3, n_layers=2, d_ff=10, seed=2),
    ModelConfig(vocab_size=16, n_classes=2, max_len=6, d_model=8, n_heads=1, n_layers=3, d_ff=12, seed=3),
)


def relative_error(a: float, b: float, floor: float = GRAD_FLOOR) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def random_batch(cfg: ModelConfig, batch_size: int, rng: np.random.Generator, with_targets: bool = True) -> Batch:
    """Ragged batch: CLS first, random real lengths, PAD after."""
    t = cfg.max_len
    ids = rng.integers(3, cfg.vocab_size, (batch_size, t))
    ids[:, 0] = 2
    lens = rng.integers(2, t + 1, batch_size)
    mask = (np.arange(t)[None, :] < lens[:, None]).astype(np.int64)
    ids[mask == 0] = 0
    targets = rng.integers(0, cfg.n_classes, batch_size) if with_targets else None
    return Batch(ids, mask, targets)


def perturbed_params(cfg: ModelConfig, rng: np.random.Generator, scale: float = 0.1):
    """Init params plus noise, so biases and layer-norm shifts are non-trivial."""
    params = init_params(cfg)
    for name in params:
        params[name] = params[name] + rng.normal(0.0, scale, params[name].shape)
    return params


def gradient_check(cfg: ModelConfig, n_coords: int = 100, seed: int = 0, h: float = GRAD_H) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    params = perturbed_params(cfg, rng)
    batch = random_batch(cfg, 4, rng)
    _, grads = loss_and_grad(params, cfg, batch)
    names = list(params)
    worst = 0.0
    for _ in range(n_coords):
        name = names[rng.integers(len(names))]
        idx = tuple(int(rng.integers(s)) for s in params[name].shape)
        orig = params[name][idx]
        params[name][idx] = orig + h
        lp = loss_and_grad(params, cfg, batch)[0]
        params[name][idx] = orig - h
        lm = loss_and_grad(params, cfg, batch)[0]
        params[name][idx] = orig
        worst = max(worst, relative_error(grads[name][idx], (lp - lm) / (2 * h)))
    return worst


# --- metrics fixture: 5 examples, 3 classes ---------------------------------

METRIC_LABELS = ("A", "B", "C")
METRIC_GOLDS = [0, 0, 1, 1, 2]
METRIC_PREDS = [0, 0, 0, 1, 2]
# hand-computed: A p=2/3 r=1 f=0.8; B p=1 r=1/2 f=2/3; C p=r=f=1
METRIC_EXPECTED = {
    "precision": [2 / 3, 1.0, 1.0],
    "recall": [1.0, 0.5, 1.0],
    "f1": [0.8, 2 / 3, 1.0],
    "support": [2, 2, 1],
    "macro_f1": (0.8 + 2 / 3 + 1.0) / 3,
    "weighted_f1": (2 * 0.8 + 2 * 2 / 3 + 1.0) / 5,
    "accuracy": 0.8,
}


def tiny_dataset(per_class: int = 6) -> Dataset:
    """Two obviously separable classes."""
    recs = []
    for i in range(per_class):
        recs.append(QARecord(f"u://a/{i}", f"болит сердце пульс {i % 3} утром", "Кардиолог"))
        recs.append(QARecord(f"u://b/{i}", f"сыпь на коже зуд {i % 3} вечером", "Дерматолог"))
    return Dataset(recs)


# --- ingestion fixtures -----------------------------------------------------

FIXTURE_PAGES = [
    (f"Вопрос номер {i}: что делать, если {w}?", spec)
    for i, (w, spec) in enumerate(
        [("болит сердце", "Кардиолог"), ("сыпь на руке", "Дерматолог"), ("болит зуб", "Стоматолог"),
         ("болит горло", "ЛОР"), ("мигрень", "Невролог")] * 4
    )
]


def fixture_html(question: str, specialization: str, i: int) -> str:
    # some noise around the target nodes: wrong classes, nested markup, a stray end tag
    return f"""<!DOCTYPE html>
<html><head><title>Вопрос {i}</title></head>
<body>
<div class="nav"><a href="/">Главная</a></div></span>
<div class="question card" id="q{i}">
  <h1 class="title">Консультация</h1>
  <div class="question-text"><p>{question}</p></div>
  <div class="question-text"><p>дубликат, должен игнорироваться</p></div>
  <span class="meta">Специализация: <b class="spec">{specialization}</b></span>
</div>
<div class="answers"><b class="spec">не эта</b></div>
</body></html>
"""


FIXTURE_RULES = {"question_selector": ".question .question-text", "specialization_selector": ".meta b.spec"}


def write_fixture_corpus(directory) -> list[str]:
    """The 20-page corpus as files; returns their file:// URLs."""
    urls = []
    for i, (q, s) in enumerate(FIXTURE_PAGES):
        path = directory / f"page{i:02d}.html"
        path.write_text(fixture_html(q, s, i), encoding="utf-8")
        urls.append(path.as_uri())
    return urls


class StubSite:
    """Threaded HTTP server serving the fixture corpus with a fixed delay.

    Tracks the peak number of concurrently handled requests and each
    request's arrival time.
    """

    def __init__(self, delay: float = 0.05):
        self.delay = delay
        self.lock = threading.Lock()
        self.in_flight = 0
        self.peak = 0
        self.arrivals: list[float] = []
        site = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                with site.lock:
                    site.in_flight += 1
                    site.peak = max(site.peak, site.in_flight)
                    site.arrivals.append(time.monotonic())
                try:
                    time.sleep(site.delay)
                    i = int(self.path.strip("/").split("/")[-1])
                    if i >= len(FIXTURE_PAGES):
                        self.send_error(404)
                        return
                    body = fixture_html(*FIXTURE_PAGES[i], i).encode("utf-8")
                    self.send_response(200)
                    self.send_header("Content-Type", "text/html; charset=utf-8")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                finally:
                    with site.lock:
                        site.in_flight -= 1

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.server.daemon_threads = True
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def urls(self, n: int = len(FIXTURE_PAGES)) -> list[str]:
        return [f"{self.base}/q/{i}" for i in range(n)]

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


# --- serving fixtures -------------------------------------------------------

SERVE_WORDS = ("болит", "горло", "сыпь", "кожа", "сердце", "пульс", "кашель", "ребенок", "зуб", "ночью")


def serving_checkpoint():
    """Small random-weight checkpoint with non-trivial output distributions."""
    from medroute.checkpoint import Checkpoint
    from medroute.dataset import LabelCodec
    from medroute.tokenize import build_vocab

    vocab = build_vocab([" ".join(SERVE_WORDS)])
    codec = LabelCodec.from_labels(["Дерматолог", "Кардиолог", "ЛОР", "Педиатр", "Стоматолог", "Терапевт"])
    cfg = ModelConfig(vocab_size=len(vocab), n_classes=len(codec), max_len=16, d_model=16, n_heads=2,
                      n_layers=2, d_ff=16, seed=11)
    params = perturbed_params(cfg, np.random.default_rng(11), scale=0.5)
    return Checkpoint(cfg, vocab, codec, params)


def random_queries(n: int, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    pool = SERVE_WORDS + ("неизвестное", "слово")
    return [" ".join(rng.choice(pool, rng.integers(1, 12))) for _ in range(n)]
