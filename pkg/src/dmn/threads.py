"""Thread engine: turns sampled events into complete emails.

Each event gets a communication type (new thread, reply, forward) chosen
by a cascade with rolling per-sender proportion caps, a target thread
where applicable, and assembled subject/body/greeting/salutation text.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from email.utils import formatdate
from enum import Enum
from importlib import resources
from typing import Optional

import numpy as np

from .textgen import GenRequest

SECONDS_PER_DAY = 86400

DEFAULT_WINDOW_DAYS = 60
DEFAULT_ACTIVE_DAYS = 7
DEFAULT_CAP = 1.1


class CommType(Enum):
    NEW_THREAD = "new"
    REPLY = "reply"
    FWD = "fwd"


@dataclass
class Thread:
    thread_id: int
    subject: str                 # base subject, without RE:/FW: prefixes
    participants: set = field(default_factory=set)
    emails: list = field(default_factory=list)   # email ids, append order
    last_active: int = 0
    bodies: list = field(default_factory=list)   # recent body text for context

    def to_jsonable(self):
        return {"thread_id": self.thread_id, "subject": self.subject,
                "participants": sorted(self.participants),
                "emails": list(self.emails), "last_active": self.last_active,
                "bodies": list(self.bodies)}

    @classmethod
    def from_jsonable(cls, d):
        return cls(thread_id=d["thread_id"], subject=d["subject"],
                   participants=set(d["participants"]),
                   emails=list(d["emails"]), last_active=d["last_active"],
                   bodies=list(d["bodies"]))


@dataclass
class SenderProfile:
    sender: str
    type_proportions_train: tuple     # (new, reply, fwd), sums to 1
    keywords: list                    # ranked topic words, best first
    window: list = field(default_factory=list)   # (timestamp, CommType)

    def __post_init__(self):
        if abs(sum(self.type_proportions_train) - 1.0) > 1e-9:
            raise ValueError("type proportions must sum to 1")
        if not self.keywords:
            raise ValueError("sender %r has no keywords" % self.sender)

    def prune(self, now, window_days):
        cutoff = now - window_days * SECONDS_PER_DAY
        self.window = [(ts, ct) for ts, ct in self.window if ts >= cutoff]

    def rolling_fraction(self, comm_type):
        if not self.window:
            return 0.0
        hits = sum(1 for _, ct in self.window if ct == comm_type)
        return hits / len(self.window)

    def to_jsonable(self):
        return {"sender": self.sender,
                "type_proportions_train": list(self.type_proportions_train),
                "keywords": list(self.keywords),
                "window": [[ts, ct.value] for ts, ct in self.window]}

    @classmethod
    def from_jsonable(cls, d):
        return cls(sender=d["sender"],
                   type_proportions_train=tuple(d["type_proportions_train"]),
                   keywords=list(d["keywords"]),
                   window=[(ts, CommType(v)) for ts, v in d["window"]])


@dataclass
class GeneratedEmail:
    email_id: int
    thread_id: int
    comm_type: CommType
    timestamp: int
    sender: str
    recipients: frozenset
    subject: str
    body: str
    greeting: str
    salutation: str

    def to_jsonable(self):
        return {"email_id": self.email_id, "thread_id": self.thread_id,
                "comm_type": self.comm_type.value, "ts": self.timestamp,
                "sender": self.sender, "recipients": sorted(self.recipients),
                "subject": self.subject, "body": self.body,
                "greeting": self.greeting, "salutation": self.salutation}


def load_canned(name):
    """Read one of the bundled canned-text lists (one entry per line)."""
    text = resources.files("dmn.resources").joinpath(name).read_text("utf-8")
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("canned list %s is empty" % name)
    return lines


def comm_type_proportions(labels):
    """(new, reply, fwd) fractions from an iterable of CommType labels."""
    labels = list(labels)
    if not labels:
        raise ValueError("no communication-type labels")
    n = len(labels)
    return tuple(sum(1 for ct in labels if ct == want) / n
                 for want in (CommType.NEW_THREAD, CommType.REPLY,
                              CommType.FWD))


def select_comm_type(sender, participants, profile, threads, now,
                     window_days=DEFAULT_WINDOW_DAYS,
                     active_days=DEFAULT_ACTIVE_DAYS, cap=DEFAULT_CAP):
    """Communication-type cascade with rolling-proportion caps.

    Reply needs an active thread whose participants equal this event's
    participants and a rolling reply fraction under cap x the sender's
    training fraction; Fwd the same with a strict-subset thread; anything
    else is a new thread.
    """
    profile.prune(now, window_days)
    cutoff = now - active_days * SECONDS_PER_DAY
    active = [t for t in threads if t.last_active >= cutoff]
    _, train_reply, train_fwd = profile.type_proportions_train
    if (any(t.participants == participants for t in active)
            and profile.rolling_fraction(CommType.REPLY) < cap * train_reply):
        return CommType.REPLY
    if (any(t.participants < participants and sender in t.participants
            for t in active)
            and profile.rolling_fraction(CommType.FWD) < cap * train_fwd):
        return CommType.FWD
    return CommType.NEW_THREAD


def select_target_thread(sender, participants, comm_type, threads, now, rng,
                         active_days=DEFAULT_ACTIVE_DAYS):
    """Uniform pick among active, participant-compatible threads.

    Returns None to signal a fallback to a new thread.
    """
    if comm_type not in (CommType.REPLY, CommType.FWD):
        raise ValueError("target threads only apply to replies and forwards")
    cutoff = now - active_days * SECONDS_PER_DAY
    if comm_type == CommType.REPLY:
        ok = [t for t in threads
              if t.last_active >= cutoff and t.participants == participants]
    else:
        ok = [t for t in threads
              if t.last_active >= cutoff and t.participants < participants
              and sender in t.participants]
    if not ok:
        return None
    return ok[int(rng.integers(len(ok)))]


class ThreadEngine:
    """Single-writer conversion of a sampled event stream into emails.

    Owns the thread store, the monotone email-id counter and the rolling
    per-sender communication-type windows.
    """

    def __init__(self, profiles, provider, seed=0,
                 window_days=DEFAULT_WINDOW_DAYS,
                 active_days=DEFAULT_ACTIVE_DAYS, cap=DEFAULT_CAP,
                 prune_after_days=None, context_bodies=4):
        self.profiles = profiles
        self.provider = provider
        self.rng = np.random.default_rng(seed)
        self.window_days = window_days
        self.active_days = active_days
        self.cap = cap
        # pruning anything still "active" could orphan a future reply
        self.prune_after_days = max(prune_after_days or 4 * active_days,
                                    active_days + 1)
        self.context_bodies = context_bodies
        self.threads = {}
        self.next_email_id = 0
        self.next_thread_id = 0
        self.greetings = load_canned("greetings.txt")
        self.salutations = load_canned("salutations.txt")
        self.forward_bodies = load_canned("forward_bodies.txt")
        self._last_ts = None

    def _pick(self, items):
        return items[int(self.rng.integers(len(items)))]

    def _prune_threads(self, now):
        cutoff = now - self.prune_after_days * SECONDS_PER_DAY
        stale = [tid for tid, t in self.threads.items()
                 if t.last_active < cutoff]
        for tid in stale:
            del self.threads[tid]

    def process(self, event, sender):
        """Emit a GeneratedEmail for one sampled event.

        `sender` is the sender's node name; event.recipients are names.
        """
        now = event.timestamp
        if self._last_ts is not None and now < self._last_ts:
            raise ValueError("events must arrive in timestamp order")
        self._last_ts = now
        profile = self.profiles[sender]
        participants = {sender} | set(event.recipients)
        store = list(self.threads.values())
        comm_type = select_comm_type(
            sender, participants, profile, store, now,
            self.window_days, self.active_days, self.cap)
        thread = None
        if comm_type is not CommType.NEW_THREAD:
            thread = select_target_thread(sender, participants, comm_type,
                                          store, now, self.rng,
                                          self.active_days)
            if thread is None:
                comm_type = CommType.NEW_THREAD
        email = self._assemble(event, sender, comm_type, thread, profile)
        self._record(email, thread, participants)
        self._prune_threads(now)
        return email

    def _assemble(self, event, sender, comm_type, thread, profile):
        email_id = self.next_email_id
        if comm_type is CommType.NEW_THREAD:
            thread_id = self.next_thread_id
            keyword = self._pick(profile.keywords)
            subject = self.provider.generate(GenRequest(
                kind="subject", prompt=keyword, max_tokens=8,
                seed=int(self.rng.integers(2**31))))
            body = self.provider.generate(GenRequest(
                kind="body", prompt=subject, max_tokens=40,
                seed=int(self.rng.integers(2**31))))
        else:
            thread_id = thread.thread_id
            prefix = "RE: " if comm_type is CommType.REPLY else "FW: "
            subject = prefix + thread.subject
            if comm_type is CommType.FWD:
                body = self._pick(self.forward_bodies)
            else:
                body = self.provider.generate(GenRequest(
                    kind="body", prompt=thread.subject,
                    context=thread.bodies[-self.context_bodies:],
                    max_tokens=40, seed=int(self.rng.integers(2**31))))
        greeting = "%s %s" % (self._pick(self.greetings),
                              ", ".join(sorted(event.recipients)))
        salutation = "%s\n%s" % (self._pick(self.salutations), sender)
        return GeneratedEmail(
            email_id=email_id, thread_id=thread_id, comm_type=comm_type,
            timestamp=event.timestamp, sender=sender,
            recipients=frozenset(event.recipients), subject=subject,
            body=body, greeting=greeting, salutation=salutation)

    def _record(self, email, thread, participants):
        self.next_email_id = email.email_id + 1
        if email.comm_type is CommType.NEW_THREAD:
            thread = Thread(thread_id=email.thread_id, subject=email.subject)
            self.threads[thread.thread_id] = thread
            self.next_thread_id = email.thread_id + 1
        thread.participants |= participants
        thread.emails.append(email.email_id)
        thread.last_active = email.timestamp
        thread.bodies.append(email.body)
        del thread.bodies[:-self.context_bodies]
        profile = self.profiles[email.sender]
        profile.window.append((email.timestamp, email.comm_type))

    def run(self, events, senders):
        """Process a whole sampled stream; `senders` maps id -> name."""
        return [self.process(ev, senders[ev.sender_id]) for ev in events]

    def state_dict(self):
        return {"threads": [t.to_jsonable() for t in self.threads.values()],
                "next_email_id": self.next_email_id,
                "next_thread_id": self.next_thread_id,
                "rng_state": self.rng.bit_generator.state,
                "profiles": {s: p.to_jsonable()
                             for s, p in self.profiles.items()},
                "last_ts": self._last_ts}

    def load_state_dict(self, state):
        self.threads = {t["thread_id"]: Thread.from_jsonable(t)
                        for t in state["threads"]}
        self.next_email_id = state["next_email_id"]
        self.next_thread_id = state["next_thread_id"]
        self.rng.bit_generator.state = state["rng_state"]
        self.profiles = {s: SenderProfile.from_jsonable(p)
                         for s, p in state["profiles"].items()}
        self._last_ts = state["last_ts"]


def group_emails_by_thread(emails):
    by_thread = {}
    for em in emails:
        by_thread.setdefault(em.thread_id, []).append(em)
    return by_thread


def format_mbox(emails, domain="example.invalid"):
    """Flat mbox-style rendering with thread-linkage headers."""
    by_thread = group_emails_by_thread(emails)
    msg_id = {em.email_id: "<%d@%s>" % (em.email_id, domain) for em in emails}
    chunks = []
    for em in emails:
        lines = ["From %s@%s %s" % (em.sender, domain,
                                    formatdate(em.timestamp)),
                 "Message-ID: %s" % msg_id[em.email_id],
                 "Date: %s" % formatdate(em.timestamp),
                 "From: %s@%s" % (em.sender, domain),
                 "To: %s" % ", ".join("%s@%s" % (r, domain)
                                      for r in sorted(em.recipients)),
                 "Subject: %s" % em.subject]
        prior = [e.email_id for e in by_thread[em.thread_id]
                 if e.email_id < em.email_id]
        if prior:
            lines.append("In-Reply-To: %s" % msg_id[prior[-1]])
            lines.append("References: %s"
                         % " ".join(msg_id[i] for i in prior))
        body = "%s\n\n%s\n\n%s" % (em.greeting, em.body, em.salutation)
        # classic mbox From-line escaping
        body = "\n".join(">" + ln if ln.startswith("From ") else ln
                         for ln in body.splitlines())
        chunks.append("\n".join(lines) + "\n\n" + body + "\n")
    return "\n".join(chunks)
