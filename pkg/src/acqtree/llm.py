"""Language-model clustering over a chat-completion HTTP interface.

The whole pool is labeled once, in batches of molecules rendered into a
task-specific prompt. Replies are parsed leniently: anything that is not a
clean ``counter: label`` pair falls back to the middle cluster and is
reported as a parse failure rather than an error. Labels are cached on
disk so optimization runs replay offline with zero network calls.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import requests

from .clustering import ClusterAssignment
from .pool import CandidatePool

RESPONSE_INSTRUCTION = "Respond strictly with the counter and numerical cluster labels only."
MOLECULES_PLACEHOLDER = "{{MOLECULES}}"
DEFAULT_BATCH_SIZE = 50

BUILTIN_TEMPLATES = (
    "redoxmer",
    "solvation",
    "kinase",
    "photovoltaics",
    "laser",
    "photoswitches",
    "redoxmer_variant0",
    "redoxmer_variant1",
    "redoxmer_variant2",
    "redoxmer_variant3",
)

_PAIR_PATTERN = re.compile(r"(\d+)\s*(?:[:.,]\s*|\s+)(\d+)")


class LlmClusteringError(RuntimeError):
    """Raised when labels cannot be obtained for some batch."""


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt text with a molecule-block placeholder."""

    task: str
    text: str
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self):
        if MOLECULES_PLACEHOLDER not in self.text:
            raise ValueError(f"template must contain the {MOLECULES_PLACEHOLDER} placeholder")
        if RESPONSE_INSTRUCTION not in self.text:
            raise ValueError(
                f"template must contain the response instruction {RESPONSE_INSTRUCTION!r}"
            )
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def load_template(task: str, path: str | Path | None = None, batch_size: int = DEFAULT_BATCH_SIZE) -> PromptTemplate:
    """Load a shipped template by task name, or any template file by path."""
    if path is not None:
        text = Path(path).read_text()
    else:
        if task not in BUILTIN_TEMPLATES:
            raise ValueError(f"unknown task {task!r}; shipped templates: {BUILTIN_TEMPLATES}")
        text = resources.files("acqtree.templates").joinpath(f"{task}.txt").read_text()
    return PromptTemplate(task=task, text=text, batch_size=batch_size)


@dataclass(frozen=True)
class LlmEndpointConfig:
    """Where and how to reach the chat-completion service.

    ``url`` is the full completions endpoint. The API key is read from the
    environment variable named by ``api_key_env`` and sent as a bearer
    token; an unset variable means no authorization header.
    """

    url: str
    model: str
    api_key_env: str = "LLM_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0
    backoff_base: float = 1.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def _batches(n: int, size: int) -> list[range]:
    return [range(start, min(start + size, n)) for start in range(0, n, size)]


def render_prompts(template: PromptTemplate, pool: CandidatePool) -> list[str]:
    """One prompt per consecutive batch; molecules listed as ``<counter>: <text>``
    with counters restarting at 1 in each batch."""
    if pool.text is None or any(t is None for t in pool.text):
        raise ValueError("pool candidates need text strings for prompt rendering")
    prompts = []
    for batch in _batches(len(pool), template.batch_size):
        block = "\n".join(
            f"{counter}: {pool.text[cid]}" for counter, cid in enumerate(batch, start=1)
        )
        prompts.append(template.text.replace(MOLECULES_PLACEHOLDER, block))
    return prompts


def parse_labels(text: str, expected: int, n_clusters: int) -> tuple[list[int], list[int]]:
    """Extract cluster labels from a reply.

    Returns exactly ``expected`` labels plus the 1-based positions that
    could not be parsed (missing counter, out-of-range label); failed
    positions carry the middle cluster as a neutral fallback. Never raises.
    """
    found: dict[int, int] = {}
    for counter_str, label_str in _PAIR_PATTERN.findall(text or ""):
        counter, label = int(counter_str), int(label_str)
        if 1 <= counter <= expected and counter not in found and 0 <= label < n_clusters:
            found[counter] = label
    fallback = n_clusters // 2
    labels, failures = [], []
    for position in range(1, expected + 1):
        if position in found:
            labels.append(found[position])
        else:
            labels.append(fallback)
            failures.append(position)
    return labels, failures


class LabelCache:
    """Persistent id -> label store, keyed to (task, template, model).

    The labels live in a CSV (``id,label``); a JSON sidecar records the
    cache key so edited prompts or a different model invalidate stale
    labels instead of silently reusing them.
    """

    def __init__(self, path: str | Path, task: str, template_sha256: str, model: str):
        self.path = Path(path)
        self.sidecar = self.path.with_suffix(self.path.suffix + ".meta.json")
        self.key = {"task": task, "template_sha256": template_sha256, "model": model}
        self.labels: dict[int, int] = {}
        self._load()

    def _load(self) -> None:
        if not (self.path.exists() and self.sidecar.exists()):
            return
        try:
            meta = json.loads(self.sidecar.read_text())
        except json.JSONDecodeError:
            return
        if meta != self.key:
            return
        with open(self.path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["id", "label"]:
                return
            for row in reader:
                if len(row) == 2:
                    self.labels[int(row[0])] = int(row[1])

    def has(self, ids) -> bool:
        return all(int(i) in self.labels for i in ids)

    def update(self, ids, labels) -> None:
        for cid, label in zip(ids, labels):
            self.labels[int(cid)] = int(label)
        self.flush()

    def flush(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "label"])
            for cid in sorted(self.labels):
                writer.writerow([cid, self.labels[cid]])
        self.sidecar.write_text(json.dumps(self.key, sort_keys=True))


def _sidecar_model(cache_path: str | Path) -> str:
    sidecar = Path(cache_path).with_suffix(Path(cache_path).suffix + ".meta.json")
    if sidecar.exists():
        try:
            return json.loads(sidecar.read_text()).get("model", "offline")
        except json.JSONDecodeError:
            pass
    return "offline"


def _request_completion(
    endpoint: LlmEndpointConfig, prompt: str, session, api_key: str | None
) -> str:
    payload = {
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": endpoint.temperature,
    }
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last_error: Exception | None = None
    for attempt in range(endpoint.max_retries + 1):
        if attempt:
            time.sleep(endpoint.backoff_base * 2 ** (attempt - 1))
        try:
            response = session.post(
                endpoint.url, json=payload, headers=headers, timeout=endpoint.timeout
            )
            response.raise_for_status()
            return response.json()["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
            last_error = exc
    raise LlmClusteringError(f"request failed after {endpoint.max_retries + 1} attempts: {last_error}")


def llm_cluster(
    pool: CandidatePool,
    template: PromptTemplate,
    endpoint: LlmEndpointConfig | None,
    cache_path: str | Path,
    n_clusters: int = 5,
    allow_network: bool = True,
    session=None,
) -> ClusterAssignment:
    """Label the whole pool once via the chat endpoint, replaying from cache.

    Batches already present in the cache are never re-requested; freshly
    parsed batches are written through immediately, so an interrupted run
    keeps its partial progress. With ``allow_network=False`` (or
    ``endpoint=None``) the cache must already cover the pool; the model
    recorded in the cache sidecar is trusted in that case.
    """
    model = endpoint.model if endpoint is not None else _sidecar_model(cache_path)
    cache = LabelCache(cache_path, template.task, template.sha256(), model)
    batches = _batches(len(pool), template.batch_size)
    missing = [b for b in batches if not cache.has(b)]
    if missing and (not allow_network or endpoint is None):
        raise LlmClusteringError(
            f"cache at {cache_path} is incomplete ({len(missing)} of {len(batches)} "
            "batches missing) and network access is disabled"
        )
    if missing:
        prompts = render_prompts(template, pool)
        own_session = session is None
        sess = session if session is not None else requests.Session()
        api_key = os.environ.get(endpoint.api_key_env)
        try:
            for batch in missing:
                index = batch.start // template.batch_size
                try:
                    reply = _request_completion(endpoint, prompts[index], sess, api_key)
                except LlmClusteringError as exc:
                    raise LlmClusteringError(f"batch {index} (ids {batch.start}..{batch.stop - 1}): {exc}") from exc
                labels, _failures = parse_labels(reply, len(batch), n_clusters)
                cache.update(batch, labels)
        finally:
            if own_session:
                sess.close()
    labels = [cache.labels[i] for i in range(len(pool))]
    return ClusterAssignment("llm", labels, n_clusters)


def load_label_file(path: str | Path, pool_size: int, n_clusters: int = 5) -> ClusterAssignment:
    """Read a plain ``id,label`` CSV covering every candidate."""
    path = Path(path)
    labels: dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "label"]:
            raise ValueError(f"label file {path} must have header 'id,label'")
        for row in reader:
            if len(row) != 2:
                raise ValueError(f"label file {path}: malformed row {row!r}")
            labels[int(row[0])] = int(row[1])
    missing = [i for i in range(pool_size) if i not in labels]
    if missing:
        raise ValueError(f"label file {path} misses ids {missing[:5]}...")
    vector = [labels[i] for i in range(pool_size)]
    top = max(vector) + 1 if vector else n_clusters
    return ClusterAssignment("file", vector, max(n_clusters, top))
