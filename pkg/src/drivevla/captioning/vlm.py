"""VLM-backed window captions over a small HTTP/JSON protocol.

POST /v1/attributes  {"frames", "query", "candidates"} -> {"probabilities": {candidate: p}}
POST /v1/caption     {"frames", "prompt"}               -> {"text": str}

A server may answer attribute queries with ``{"logprobs": {...}}`` instead;
the argmax is the same either way.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

import requests
import yaml
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from ..errors import EmptyCompletion, MalformedResponse, VlmUnavailable, WindowMismatch
from .rules import RuleCaption
from .windows import CaptionWindow

log = logging.getLogger(__name__)

SUPPLEMENT_INSTRUCTION = "supplement the captions with any additional information"


@dataclass(frozen=True)
class AttributeQuery:
    name: str
    query: str
    candidates: tuple


def load_queries(path=None) -> list[AttributeQuery]:
    """Attribute queries from YAML; the bundled set when ``path`` is None."""
    if path is None:
        text = resources.files("drivevla").joinpath("data/attributes.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return [AttributeQuery(q["name"], q["query"], tuple(q["candidates"])) for q in yaml.safe_load(text)]


@dataclass
class AttributeSet:
    values: dict = field(default_factory=dict)          # name -> winning candidate
    probabilities: dict = field(default_factory=dict)   # name -> its probability

    def __post_init__(self):
        for name, p in self.probabilities.items():
            if not 0.0 < p <= 1.0:
                raise MalformedResponse(f"probability for {name!r} outside (0, 1]: {p!r}")

    def sentence(self) -> str:
        """One sentence per attribute group, in a fixed order; empty when nothing is known."""
        v = self.values
        parts = []
        road = [v[k] for k in ("road_width", "highway") if k in v]
        if road:
            parts.append("The road is " + ", ".join(road) + ".")
        if "tunnel" in v:
            parts.append("The vehicle is in a tunnel." if v["tunnel"] == "tunnel"
                         else "The vehicle is not in a tunnel.")
        if "weather" in v:
            parts.append(f"The weather is {v['weather']}.")
        if "pedestrian_risk" in v:
            parts.append("Pedestrians may be present." if v["pedestrian_risk"] == "pedestrian"
                         else "No pedestrians are visible.")
        known = {"road_width", "highway", "tunnel", "weather", "pedestrian_risk"}
        for k in sorted(set(v) - known):
            parts.append(f"The {k.replace('_', ' ')} is {v[k]}.")
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {k: {"value": self.values[k], "p": self.probabilities[k]} for k in self.values}


@dataclass
class VlmCaption:
    window_index: int
    free_text: str
    attributes: AttributeSet = field(default_factory=AttributeSet)


class VlmClient:
    """Thin JSON client; connection errors and 5xx answers are retried with backoff."""

    def __init__(self, endpoint: str, timeout: float = 30.0, retries: int = 3,
                 backoff: float = 0.1):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._local = threading.local()

    def _session(self) -> requests.Session:
        s = getattr(self._local, "session", None)
        if s is None:
            retry = Retry(total=self.retries, connect=self.retries, read=self.retries,
                          status=self.retries, backoff_factor=self.backoff,
                          status_forcelist=(500, 502, 503, 504), allowed_methods=None)
            s = requests.Session()
            s.mount("http://", HTTPAdapter(max_retries=retry))
            s.mount("https://", HTTPAdapter(max_retries=retry))
            self._local.session = s
        return s

    def post(self, path: str, body: dict) -> dict:
        url = self.endpoint + path
        try:
            resp = self._session().post(url, json=body, timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise VlmUnavailable(f"{url}: {exc}") from exc
        try:
            data = resp.json()
        except ValueError as exc:
            raise MalformedResponse(f"{url}: response is not JSON") from exc
        if not isinstance(data, dict):
            raise MalformedResponse(f"{url}: expected a JSON object")
        return data

    def attribute_scores(self, frames: Sequence[str], query: str,
                         candidates: Sequence[str]) -> tuple[dict[str, float], bool]:
        """Score per candidate and whether the scores are log-probabilities."""
        data = self.post("/v1/attributes", {"frames": list(frames), "query": query,
                                            "candidates": list(candidates)})
        if isinstance(data.get("probabilities"), dict):
            raw, is_log = data["probabilities"], False
        elif isinstance(data.get("logprobs"), dict):
            raw, is_log = data["logprobs"], True
        else:
            raise MalformedResponse("attribute response has neither probabilities nor logprobs")
        scores = {}
        for c in candidates:
            if c not in raw:
                raise MalformedResponse(f"no score for candidate {c!r}")
            try:
                x = float(raw[c])
            except (TypeError, ValueError) as exc:
                raise MalformedResponse(f"score for {c!r} is not a number") from exc
            if math.isnan(x) or x == math.inf or (not is_log and x < 0):
                raise MalformedResponse(f"invalid score for {c!r}: {raw[c]!r}")
            scores[c] = x
        return scores, is_log

    def caption(self, frames: Sequence[str], prompt: str) -> str:
        data = self.post("/v1/caption", {"frames": list(frames), "prompt": prompt})
        text = data.get("text")
        if not isinstance(text, str):
            raise MalformedResponse("caption response has no text")
        return text


def argmax_candidate(scores: dict[str, float], candidates: Sequence[str]) -> str:
    """Highest score; ties go to the candidate listed first."""
    best = candidates[0]
    for c in candidates[1:]:
        if scores[c] > scores[best]:
            best = c
    return best


def _logprob_to_probability(scores: dict[str, float], best: str) -> float:
    """Probability of the winning candidate from log-probabilities.

    A winner with logprob <= 0 keeps its raw ``exp(score)``. A positive score
    cannot be a log-probability (logits, or logprobs shifted by a constant), so
    the scores are then renormalized over the candidates, keeping the value in
    (0, 1].
    """
    lead = scores[best]
    if lead == -math.inf:
        return 0.0
    if lead <= 0.0:
        return math.exp(lead)
    return 1.0 / sum(math.exp(s - lead) for s in scores.values())


def extract_attributes(window: CaptionWindow, client: VlmClient,
                       queries: Optional[Sequence[AttributeQuery]] = None,
                       frames: Optional[Sequence[str]] = None) -> AttributeSet:
    """Ask each attribute query and keep the most probable candidate token.

    ``frames`` are the image references sent for the window's representative
    frames (defaults to their frame ids as strings). Log-probability answers
    are renormalized over the candidates before the winner's probability is kept.
    """
    queries = load_queries() if queries is None else queries
    refs = list(frames) if frames is not None else [str(f) for f in window.representatives]
    values, probs = {}, {}
    for q in queries:
        scores, is_log = client.attribute_scores(refs, q.query, q.candidates)
        best = argmax_candidate(scores, q.candidates)
        if is_log:
            p = _logprob_to_probability(scores, best)
        else:
            p = scores[best]
        if not 0.0 < p <= 1.0:
            raise MalformedResponse(f"{q.name}: winning probability {p!r} outside (0, 1]")
        values[q.name] = best
        probs[q.name] = p
    return AttributeSet(values, probs)


def rule_digest(rules: Sequence[RuleCaption]) -> str:
    """Rule captions of the representative frames, one per line."""
    return "\n".join(r.text for r in rules)


def build_prompt(digest: str, attrs: Optional[AttributeSet] = None) -> str:
    lines = [
        "You are describing a 3-second clip from a vehicle's front camera.",
        "The following captions were generated from the vehicle's sensors and are factual:",
        digest,
    ]
    facts = attrs.sentence() if attrs else ""
    if facts:
        lines += ["Scene attributes:", facts]
    lines.append(f"Treat these as constraints and {SUPPLEMENT_INSTRUCTION} not already covered, "
                 "focusing on potential risks in the driving environment.")
    return "\n".join(lines)


def augment_caption(window: CaptionWindow, digest: str, attrs: Optional[AttributeSet],
                    client: VlmClient, frames: Optional[Sequence[str]] = None) -> VlmCaption:
    refs = list(frames) if frames is not None else [str(f) for f in window.representatives]
    text = client.caption(refs, build_prompt(digest, attrs)).strip()
    if not text:
        raise EmptyCompletion(f"empty caption for window {window.window_index}")
    return VlmCaption(window.window_index, text, attrs or AttributeSet())


def compose_frame_caption(rule: RuleCaption, window_caption: Optional[VlmCaption],
                          window: Optional[CaptionWindow] = None,
                          frame_id: Optional[int] = None) -> str:
    """Rule text, then the attribute sentence, then the VLM's free text."""
    if window is not None and frame_id is not None:
        if not window.contains(frame_id):
            raise WindowMismatch(f"frame {frame_id} is outside window {window.window_index}")
        if window_caption is not None and window_caption.window_index != window.window_index:
            raise WindowMismatch(f"caption for window {window_caption.window_index} "
                                 f"paired with window {window.window_index}")
    parts = [rule.text]
    if window_caption is not None:
        parts += [window_caption.attributes.sentence(), window_caption.free_text]
    return " ".join(p for p in parts if p)


def caption_windows(windows: Sequence[CaptionWindow], digests: Sequence[str], client: VlmClient,
                    queries: Optional[Sequence[AttributeQuery]] = None,
                    frames: Optional[Sequence[Sequence[str]]] = None,
                    concurrency: int = 4) -> list[VlmCaption]:
    """Attributes and free text for every window, at most ``concurrency`` in flight.

    Results come back in window order whatever the completion order.
    """
    queries = load_queries() if queries is None else queries

    def one(i: int) -> VlmCaption:
        refs = frames[i] if frames is not None else None
        attrs = extract_attributes(windows[i], client, queries, refs)
        return augment_caption(windows[i], digests[i], attrs, client, refs)

    if concurrency <= 1:
        return [one(i) for i in range(len(windows))]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(one, range(len(windows))))
