"""Closed-form event generation: mixture inter-arrival sampling, sender
then sender-conditioned recipient draws, autoregressive state updates and
wall-clock mapping for batch or real-time emission."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import METADATA_NAMES, derive_metadata_class
from .model import BINARY_PER_NODE, MULTI_CLASS

BC_EMPTY_RESAMPLES = 10


@dataclass
class GenConfig:
    seed: int = 0
    start_time: int = 0
    max_events: int | None = None
    end_time: int | None = None
    mode: str = "batch"            # batch | realtime
    tz_offset_minutes: int = 0
    history_prefix: list | None = None   # optional seed events

    def __post_init__(self):
        if (self.max_events is None) == (self.end_time is None):
            raise ValueError("exactly one of max_events / end_time must be set")
        if self.mode not in ("batch", "realtime"):
            raise ValueError("unknown generation mode %r" % self.mode)


@dataclass
class SampledEvent:
    timestamp: int
    tau: float                  # hours
    sender_id: int
    recipient_set_id: int       # -1 for binary-mode out-of-vocabulary sets
    recipients: frozenset
    metadata_class: object

    def to_jsonable(self, senders):
        return {
            "ts": self.timestamp,
            "tau_h": self.tau,
            "sender": senders[self.sender_id],
            "recipients": sorted(self.recipients),
            "meta": METADATA_NAMES[self.metadata_class],
        }


def _phi(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def mixture_median(omega, mu, sigma, norm):
    """Median of the mixture in hours, solved by bisection on the CDF of
    the normalized log variable."""
    lo = float(np.min(mu - 10 * sigma))
    hi = float(np.max(mu + 10 * sigma))

    def cdf(y):
        return float(np.sum(omega * [_phi((y - m) / s)
                                     for m, s in zip(mu, sigma)]))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < 0.5:
            lo = mid
        else:
            hi = mid
    y = 0.5 * (lo + hi)
    return math.exp(norm.std_log_tau * y + norm.mean_log_tau)


def mixture_mean(omega, mu, sigma, norm):
    """Analytic mean in hours of the de-normalized lognormal mixture."""
    s = norm.std_log_tau
    return float(np.sum(omega * np.exp(s * mu + norm.mean_log_tau
                                       + 0.5 * (s * sigma) ** 2)))


def sample_categorical(probs, rng):
    """Inverse-CDF draw from a probability vector."""
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(probs), u), len(probs) - 1))


def sample_tau(params, norm, rng):
    """Draw one inter-arrival time in hours from a lognormal mixture whose
    parameters live in normalized log space."""
    omega, mu, sigma = params if isinstance(params, tuple) else params.numpy()
    k = sample_categorical(omega, rng)
    eps = rng.standard_normal()
    x = sigma[k] * eps + mu[k]
    return math.exp(norm.std_log_tau * x + norm.mean_log_tau)


def sample_sender(logits, rng):
    probs = ad.softmax(ad.Value(np.asarray(logits, dtype=float))).data
    return sample_categorical(probs, rng)


def sample_recipient_set(model, state, sender_id, rng, fallback_sets=None):
    """Draw recipients for a sampled sender.

    Multi-class mode returns a vocabulary set id; binary mode assembles a
    node subset from independent Bernoulli draws (resampled on empty, then
    forced to the sender's fallback set).

    Returns (recipient_set_id_or_-1, recipients, forced_fallback).
    """
    logits = model.recipient_logits(ad.Value(np.asarray(state)), sender_id).data
    if model.cfg.recipient_mode == MULTI_CLASS:
        probs = ad.softmax(ad.Value(logits)).data
        rid = sample_categorical(probs, rng)
        return rid, model.vocab.sets[rid], False
    # binary per-node draws
    p = ad.sigmoid(ad.Value(logits)).data
    sender_name = model.senders[sender_id]
    for _ in range(BC_EMPTY_RESAMPLES):
        draws = rng.random(len(p)) < p
        nodes = frozenset(model.senders[i] for i in np.nonzero(draws)[0]
                          if model.senders[i] != sender_name)
        if nodes:
            rid = model.vocab.index.get(nodes, -1)
            return rid, nodes, False
    fallback = 0
    if fallback_sets is not None and sender_id in fallback_sets:
        fallback = fallback_sets[sender_id]
    return fallback, model.vocab.sets[fallback], True


class StreamGenerator:
    """Autoregressive event stream from a trained model."""

    def __init__(self, model, cfg: GenConfig, fallback_sets=None, rng=None):
        self.model = model
        self.cfg = cfg
        self.fallback_sets = fallback_sets
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.forced_fallback_count = 0

    def events(self):
        from .data import Event, SECONDS_PER_HOUR

        model, cfg = self.model, self.cfg
        state = model.initial_state()
        current = float(cfg.start_time)
        if cfg.history_prefix:
            for ev in cfg.history_prefix:
                state = ad.Value(model.encode_step(state, ev).data)
        count = 0
        prev_ts = None
        while True:
            if cfg.max_events is not None and count >= cfg.max_events:
                return
            # one-step fixed point for generation-time metadata: tentative
            # arrival = previous timestamp + mixture median under the
            # previous timestamp's metadata, then draw tau under the
            # tentative arrival's metadata and keep it
            meta0 = derive_metadata_class(int(current), cfg.tz_offset_minutes)
            mix0 = model.temporal_head(state, meta0)
            med = mixture_median(*mix0.numpy(), model.norm)
            tentative = current + med * SECONDS_PER_HOUR
            meta1 = derive_metadata_class(int(tentative), cfg.tz_offset_minutes)
            mix1 = model.temporal_head(state, meta1) if meta1 != meta0 else mix0
            tau = sample_tau(mix1, model.norm, self.rng)
            arrival = current + tau * SECONDS_PER_HOUR
            if cfg.end_time is not None and arrival > cfg.end_time:
                return
            ts = int(math.ceil(arrival))
            if prev_ts is not None and ts <= prev_ts:
                ts = prev_ts + 1     # timestamps strictly increase
            meta = derive_metadata_class(ts, cfg.tz_offset_minutes)

            sender_id = sample_sender(model.sender_logits(state).data, self.rng)
            rid, recipients, forced = sample_recipient_set(
                model, state.data, sender_id, self.rng, self.fallback_sets)
            if forced:
                self.forced_fallback_count += 1

            sampled = SampledEvent(timestamp=ts, tau=tau, sender_id=sender_id,
                                   recipient_set_id=rid, recipients=recipients,
                                   metadata_class=meta)
            yield sampled
            count += 1
            feed_rid = rid if rid >= 0 else 0
            ev = Event(tau=tau, sender_id=sender_id, recipient_set_id=feed_rid,
                       metadata_class=meta, timestamp=ts)
            state = ad.Value(model.encode_step(state, ev).data)
            prev_ts = ts
            current = arrival


def generate_stream(model, cfg: GenConfig, fallback_sets=None, rng=None):
    """Generate a full event list (batch mode)."""
    gen = StreamGenerator(model, cfg, fallback_sets, rng)
    return list(gen.events())


def generate_trials(model, cfg: GenConfig, n_trials):
    """Independently seeded trials; trial i is reproducible on its own."""
    children = np.random.SeedSequence(cfg.seed).spawn(n_trials)
    out = []
    for seq in children:
        out.append(generate_stream(model, cfg,
                                   rng=np.random.default_rng(seq)))
    return out


def realtime_events(model, cfg: GenConfig, fallback_sets=None,
                    clock=time.monotonic, sleep=time.sleep):
    """Yield events at their scheduled wall-clock offsets.

    The first event's offset is measured from generator start; each event
    is emitted when its (timestamp - start_time) offset elapses.
    """
    gen = StreamGenerator(model, cfg, fallback_sets)
    t0 = clock()
    for ev in gen.events():
        due = t0 + (ev.timestamp - cfg.start_time)
        delay = due - clock()
        if delay > 0:
            sleep(delay)
        yield ev


def write_jsonl(events, senders, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_jsonable(senders), sort_keys=True) + "\n")
