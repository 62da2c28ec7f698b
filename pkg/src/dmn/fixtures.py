"""Synthetic corpora used by the test suite and quickstart configs:
a small executive network with disjoint unicast/multi-cast habits, and a
stream drawn from a known lognormal mixture with Markov sender dynamics."""

from __future__ import annotations

import math

import numpy as np

from .data import RawEvent

ECORP_NODES = ("ceo", "chair", "coo", "cfo", "cmo")

# the CEO alternates unicast to the chair with multi-cast to the C-suite;
# everyone else replies upward only
ECORP_HABITS = {
    "ceo": [frozenset({"chair"}), frozenset({"coo", "cfo", "cmo"})],
    "chair": [frozenset({"ceo"})],
    "coo": [frozenset({"ceo"})],
    "cfo": [frozenset({"ceo"})],
    "cmo": [frozenset({"ceo"})],
}
ECORP_SENDER_WEIGHTS = {"ceo": 0.4, "chair": 0.15, "coo": 0.15,
                        "cfo": 0.15, "cmo": 0.15}


def ecorp_stream(n_events=2000, seed=0, start_time=1_000_000_000,
                 mean_gap_hours=1.5):
    """Events for the executive-network fixture; the CEO's two recipient
    sets appear with equal probability."""
    rng = np.random.default_rng(seed)
    senders = list(ECORP_SENDER_WEIGHTS)
    weights = np.array([ECORP_SENDER_WEIGHTS[s] for s in senders])
    events = []
    ts = start_time
    for _ in range(n_events):
        ts += max(int(rng.exponential(mean_gap_hours * 3600)), 1)
        sender = senders[rng.choice(len(senders), p=weights)]
        options = ECORP_HABITS[sender]
        recipients = options[rng.integers(0, len(options))]
        events.append(RawEvent(ts, sender, recipients))
    return events


def write_event_csv(events, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestamp,sender,recipients\n")
        for ev in events:
            fh.write("%d,%s,%s\n" % (ev.timestamp, ev.sender,
                                     ";".join(sorted(ev.recipients))))


class MixtureMarkovGenerator:
    """Ground-truth generator: inter-arrival times from a fixed lognormal
    mixture (in hours) and senders following a Markov chain, each sender
    favoring one recipient set."""

    def __init__(self, omega=(0.6, 0.4), mu=(-2.0, -0.5), sigma=(0.5, 0.4),
                 n_senders=3, n_sets=4, seed=0):
        self.omega = np.asarray(omega, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.sigma = np.asarray(sigma, dtype=float)
        self.n_senders = n_senders
        self.n_sets = n_sets
        rng = np.random.default_rng(seed)
        self.transition = rng.dirichlet(np.ones(n_senders) * 2.0,
                                        size=n_senders)
        # each sender concentrates on one favourite set
        self.set_probs = np.full((n_senders, n_sets), 0.1 / (n_sets - 1))
        for s in range(n_senders):
            self.set_probs[s, s % n_sets] = 0.9

    def sample_tau(self, rng):
        k = rng.choice(len(self.omega), p=self.omega)
        return float(np.exp(self.sigma[k] * rng.standard_normal() + self.mu[k]))

    def tau_nll(self, tau):
        """-log of the mixture density over tau in hours."""
        comps = self.omega / (tau * self.sigma * math.sqrt(2 * math.pi)) \
            * np.exp(-((math.log(tau) - self.mu) ** 2) / (2 * self.sigma ** 2))
        return -math.log(comps.sum())

    def stream(self, n_events, seed, start_time=1_000_000_000):
        rng = np.random.default_rng(seed)
        sender = int(rng.integers(0, self.n_senders))
        ts = float(start_time)
        events = []
        for _ in range(n_events):
            tau = self.sample_tau(rng)
            ts += tau * 3600.0
            sender = int(rng.choice(self.n_senders, p=self.transition[sender]))
            set_id = int(rng.choice(self.n_sets, p=self.set_probs[sender]))
            events.append((int(math.ceil(ts)), sender, set_id, tau))
        return events

    def raw_events(self, n_events, seed, start_time=1_000_000_000):
        """As RawEvents over named nodes, for the ingestion pipeline."""
        senders = ["s%d" % i for i in range(self.n_senders)]
        sets = [frozenset({"g%d" % i, "g%d_b" % i}) if i % 2 else
                frozenset({"g%d" % i}) for i in range(self.n_sets)]
        out = []
        last_ts = 0
        for ts, sender, set_id, _tau in self.stream(n_events, seed, start_time):
            if ts <= last_ts:
                ts = last_ts + 1
            out.append(RawEvent(ts, senders[sender], sets[set_id]))
            last_ts = ts
        return out
