"""Text generation: TF-IDF keyword profiles, an order-3 n-gram fallback
generator, the remote provider client and the thread-coherence metric."""

from __future__ import annotations

import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
import requests

STOPWORDS = frozenset("""
a about above after again all am an and any are as at be because been
before being below between both but by could did do does doing down
during each few for from further had has have having he her here hers
him his how i if in into is it its just me more most my no nor not of
off on once only or other our out over own re same she so some such
than that the their them then there these they this those through to
too under until up very was we were what when where which while who
whom why will with you your
""".split())

WORD_RE = re.compile(r"[a-z][a-z']+")

DEFAULT_TIMEOUT_SECONDS = 30.0


class ProviderError(Exception):
    """Remote text provider failed or returned an unusable reply."""


@dataclass
class GenRequest:
    kind: str                  # "subject" | "body"
    prompt: str
    context: list | None = None
    max_tokens: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("subject", "body"):
            raise ValueError("kind must be 'subject' or 'body'")
        if self.kind == "subject" and not self.prompt.strip():
            raise ValueError("subject requests need a non-empty prompt")


def tokenize(text):
    return WORD_RE.findall(text.lower())


def content_tokens(text):
    return [t for t in tokenize(text) if t not in STOPWORDS]


def extract_keywords(corpus_by_sender, top_k=10):
    """TF-IDF ranked keywords per sender over their concatenated sent text.

    `corpus_by_sender` maps sender -> list of message strings. Returns
    sender -> list of (word, score), scores descending, ties lexicographic.
    """
    if not corpus_by_sender:
        raise ValueError("empty corpus")
    docs = {}
    for sender, messages in corpus_by_sender.items():
        if not messages:
            raise ValueError("sender %r has no messages" % sender)
        docs[sender] = content_tokens(" ".join(messages))
    n_docs = len(docs)
    df = Counter()
    for tokens in docs.values():
        df.update(set(tokens))
    profiles = {}
    for sender, tokens in docs.items():
        tf = Counter(tokens)
        total = sum(tf.values()) or 1
        scored = [(w, (c / total) * math.log((1 + n_docs) / (1 + df[w]) ) )
                  for w, c in tf.items()]
        # pure-frequency tie break keeps single-document corpora useful
        scored.sort(key=lambda ws: (-ws[1], -tf[ws[0]], ws[0]))
        profiles[sender] = scored[:top_k]
    return profiles


def extract_keywords_by_frequency(corpus_by_sender, top_k=10):
    """Plain most-frequent-content-word profiles (flag alternative)."""
    if not corpus_by_sender:
        raise ValueError("empty corpus")
    profiles = {}
    for sender, messages in corpus_by_sender.items():
        tf = Counter(content_tokens(" ".join(messages)))
        if not tf:
            raise ValueError("sender %r has no usable tokens" % sender)
        ranked = sorted(tf.items(), key=lambda wc: (-wc[1], wc[0]))
        profiles[sender] = [(w, float(c)) for w, c in ranked[:top_k]]
    return profiles


class NgramModel:
    """Order-3 word-level model with add-0.1 smoothing and backoff."""

    ORDER = 3
    SMOOTHING = 0.1
    END = "</s>"

    def __init__(self):
        self.tables = [defaultdict(Counter) for _ in range(self.ORDER)]
        self.vocab = Counter()

    def train(self, sentences):
        for sentence in sentences:
            tokens = tokenize(sentence) + [self.END]
            self.vocab.update(t for t in tokens if t != self.END)
            for i, tok in enumerate(tokens):
                for order in range(self.ORDER):
                    ctx = tuple(tokens[max(0, i - order):i])
                    if len(ctx) == order:
                        self.tables[order][ctx][tok] += 1
        if not self.vocab:
            raise ValueError("n-gram training corpus is empty")

    def _next_distribution(self, history):
        for order in range(self.ORDER - 1, -1, -1):
            ctx = tuple(history[-order:]) if order else ()
            counts = self.tables[order].get(ctx)
            if counts:
                words = sorted(counts)
                probs = np.array([counts[w] + self.SMOOTHING for w in words])
                return words, probs / probs.sum()
        words = sorted(self.vocab)
        probs = np.array([self.vocab[w] for w in words], dtype=float)
        return words, probs / probs.sum()

    def generate(self, prompt_tokens, max_tokens, seed):
        rng = np.random.default_rng(seed)
        known = [t for t in prompt_tokens if t in self.vocab]
        out = list(known)
        history = list(known)
        while len(out) < max_tokens:
            words, probs = self._next_distribution(history)
            tok = words[int(rng.choice(len(words), p=probs))]
            if tok == self.END:
                break
            out.append(tok)
            history.append(tok)
        return " ".join(out[:max_tokens])


class BuiltinProvider:
    """Deterministic statistical text provider trained on a local corpus."""

    def __init__(self, subjects, bodies=None):
        self.subject_model = NgramModel()
        self.subject_model.train(subjects)
        self.body_model = NgramModel()
        self.body_model.train(bodies if bodies else subjects)

    def generate(self, req: GenRequest):
        model = self.subject_model if req.kind == "subject" else self.body_model
        prompt_tokens = tokenize(req.prompt)
        if req.context:
            # fold recent thread text into the seeding history
            prompt_tokens = tokenize(" ".join(req.context[-2:]))[-2:] \
                + prompt_tokens
        text = model.generate(prompt_tokens, req.max_tokens, req.seed)
        if not text:
            text = model.generate([], req.max_tokens, req.seed)
        return text


class RemoteProvider:
    """Client for the provider wire protocol (POST /v1/generate)."""

    def __init__(self, endpoint, timeout=DEFAULT_TIMEOUT_SECONDS,
                 session=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def generate(self, req: GenRequest):
        payload = {"kind": req.kind, "prompt": req.prompt,
                   "context": req.context or [], "max_tokens": req.max_tokens,
                   "seed": req.seed}
        try:
            resp = self.session.post(self.endpoint + "/v1/generate",
                                     json=payload, timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderError("provider %s unreachable: %s"
                                % (self.endpoint, exc)) from exc
        if resp.status_code != 200:
            raise ProviderError("provider %s returned %d: %s"
                                % (self.endpoint, resp.status_code,
                                   resp.text[:200]))
        try:
            text = resp.json()["text"]
        except (ValueError, KeyError) as exc:
            raise ProviderError("provider %s sent a malformed reply"
                                % self.endpoint) from exc
        if not isinstance(text, str) or not text.strip():
            raise ProviderError("provider %s returned empty text"
                                % self.endpoint)
        return text

    def healthcheck(self):
        self.generate(GenRequest(kind="subject", prompt="ping",
                                 max_tokens=3, seed=0))


def coherence_similarity(a, b):
    """Cosine similarity of TF-IDF-weighted bags of content words in [0, 1].

    With a two-document collection both words' IDFs coincide, so this
    reduces to cosine over term frequencies; 0 when either side is empty.
    """
    ta, tb = Counter(content_tokens(a)), Counter(content_tokens(b))
    if not ta or not tb:
        return 0.0
    vocab = set(ta) | set(tb)
    va = np.array([ta[w] for w in vocab], dtype=float)
    vb = np.array([tb[w] for w in vocab], dtype=float)
    denom = np.linalg.norm(va) * np.linalg.norm(vb)
    return float(np.dot(va, vb) / denom) if denom else 0.0
