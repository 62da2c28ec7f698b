"""Realism evaluation harness: 1-D Earth Mover's Distance across the six
report distributions, Q-Q data, invalid-set rate, prediction accuracy and
multi-trial aggregation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

HOURS_PER_DAY = 24
DAYS_PER_WEEK = 7
MAX_TAU_SAMPLE = 100_000   # cap inter-arrival EMD inputs for tractability

DISTRIBUTION_KEYS = (
    "time_deltas", "hour_of_day", "day_of_week",
    "sender_outdegree", "recipient_indegree", "hyperedge_size",
)


def emd_1d(a, b, a_weights=None, b_weights=None):
    """Wasserstein-1 distance between weighted samples on the real line,
    computed by merging sorted supports and integrating |CDF_a - CDF_b|."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("emd_1d requires non-empty inputs")
    wa = np.ones(a.size) if a_weights is None else np.asarray(a_weights, float)
    wb = np.ones(b.size) if b_weights is None else np.asarray(b_weights, float)
    wa = wa / wa.sum()
    wb = wb / wb.sum()

    ia = np.argsort(a, kind="stable")
    ib = np.argsort(b, kind="stable")
    a, wa = a[ia], wa[ia]
    b, wb = b[ib], wb[ib]
    support = np.concatenate([a, b])
    order = np.argsort(support, kind="stable")
    support = support[order]
    deltas = np.diff(support)
    cdf_a = np.searchsorted(a, support[:-1], side="right")
    cdf_b = np.searchsorted(b, support[:-1], side="right")
    cum_a = np.concatenate([[0.0], np.cumsum(wa)])
    cum_b = np.concatenate([[0.0], np.cumsum(wb)])
    return float(np.sum(np.abs(cum_a[cdf_a] - cum_b[cdf_b]) * deltas))


def qq_points(generated_taus, reference_taus, quantiles=99):
    """Matched empirical quantiles at k/(Q+1) for k = 1..Q."""
    g = np.sort(np.asarray(generated_taus, dtype=float))
    r = np.sort(np.asarray(reference_taus, dtype=float))
    if g.size == 0 or r.size == 0:
        raise ValueError("qq_points requires non-empty inputs")
    qs = np.arange(1, quantiles + 1) / (quantiles + 1)
    return list(zip(np.quantile(r, qs).tolist(), np.quantile(g, qs).tolist()))


def topk_accuracy(ranked_predictions, truths, k):
    """Fraction of cases where the truth appears in the top-k ranking."""
    if len(ranked_predictions) != len(truths):
        raise ValueError("prediction/truth length mismatch")
    hits = sum(1 for ranks, truth in zip(ranked_predictions, truths)
               if truth in list(ranks)[:k])
    return hits / len(truths) if truths else 0.0


def invalid_set_rate(streams, known_sets):
    """Fraction of generated multi-cast emails whose recipient set never
    appears in the training inventory; 0 for an empty stream."""
    known = set(known_sets)
    total = 0
    invalid = 0
    for stream in streams:
        for ev in stream:
            if len(ev.recipients) >= 2:
                total += 1
                if ev.recipients not in known:
                    invalid += 1
    return invalid / total if total else 0.0


def _proportions(ids, n):
    counts = np.bincount(np.asarray(ids, dtype=int), minlength=n).astype(float)
    return counts / counts.sum() if counts.sum() else counts


def _stream_distributions(events, n_senders, n_sets, tz_offset_minutes=0,
                          set_sizes=None):
    taus = np.array([ev.tau for ev in events], dtype=float)[:MAX_TAU_SAMPLE]
    local = np.array([ev.timestamp + tz_offset_minutes * 60 for ev in events])
    hours = (local % 86400) // 3600
    days = ((local // 86400) % 7 + 3) % 7
    sizes = []
    for ev in events:
        if hasattr(ev, "recipients"):
            sizes.append(len(ev.recipients))
        elif set_sizes is not None and ev.recipient_set_id >= 0:
            sizes.append(set_sizes[ev.recipient_set_id])
        else:
            sizes = None
            break
    rids = [ev.recipient_set_id for ev in events]
    rid_prop = _proportions([r for r in rids if r >= 0], n_sets) \
        if any(r >= 0 for r in rids) else np.zeros(n_sets)
    return {
        "time_deltas": taus,
        "hour_of_day": _proportions(hours, HOURS_PER_DAY),
        "day_of_week": _proportions(days, DAYS_PER_WEEK),
        "sender_outdegree": _proportions([ev.sender_id for ev in events],
                                         n_senders),
        "recipient_indegree": rid_prop,
        "hyperedge_size": np.array(sizes, dtype=float) if sizes else None,
    }


def _emd_between(dist_g, dist_r):
    """The six per-trial EMDs. Proportion vectors are compared in
    percentage points over the id index line (ids ordered by descending
    training frequency); time deltas and hyperedge sizes as raw samples."""
    out = {}
    out["time_deltas"] = emd_1d(dist_g["time_deltas"], dist_r["time_deltas"])
    for key in ("hour_of_day", "day_of_week", "sender_outdegree",
                "recipient_indegree"):
        n = len(dist_r[key])
        out[key] = emd_1d(np.arange(n), np.arange(n),
                          a_weights=dist_g[key] + 1e-300,
                          b_weights=dist_r[key] + 1e-300) * 100.0
    if dist_g["hyperedge_size"] is not None and dist_r["hyperedge_size"] is not None:
        out["hyperedge_size"] = emd_1d(dist_g["hyperedge_size"],
                                       dist_r["hyperedge_size"])
    else:
        out["hyperedge_size"] = float("nan")
    return out


@dataclass
class EvalReport:
    per_trial: list = field(default_factory=list)     # list of dicts
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    invalid_set_rate: float = 0.0
    prediction: dict = field(default_factory=dict)
    header: dict = field(default_factory=lambda: {
        "categorical_emd_ground_metric":
            "1-D Wasserstein over ids ordered by descending training "
            "frequency, in percentage points",
        "hour_of_day_emd": "linear (non-circular) over bins 0-23",
    })

    def to_jsonable(self):
        return {
            "header": self.header,
            "per_trial": self.per_trial,
            "mean": self.mean,
            "std": self.std,
            "invalid_set_rate": self.invalid_set_rate,
            "prediction": self.prediction,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_jsonable(), fh, indent=2, sort_keys=True)

    def write_csv(self, path):
        import csv
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "mean", "std"])
            for key in DISTRIBUTION_KEYS:
                writer.writerow([key, self.mean.get(key, ""),
                                 self.std.get(key, "")])
            writer.writerow(["invalid_set_rate", self.invalid_set_rate, ""])


def distribution_report(generated_streams, reference_events, n_senders,
                        n_sets, known_sets=None, tz_offset_minutes=0,
                        set_sizes=None):
    """Compare generated streams against the reference event stream."""
    ref = _stream_distributions(reference_events, n_senders, n_sets,
                                tz_offset_minutes, set_sizes)
    report = EvalReport()
    for stream in generated_streams:
        if not stream:
            continue
        gen = _stream_distributions(stream, n_senders, n_sets,
                                    tz_offset_minutes, set_sizes)
        report.per_trial.append(_emd_between(gen, ref))
    keys = DISTRIBUTION_KEYS
    for key in keys:
        vals = [t[key] for t in report.per_trial
                if not np.isnan(t.get(key, float("nan")))]
        if vals:
            report.mean[key] = float(np.mean(vals))
            if len(vals) >= 2:
                report.std[key] = float(np.std(vals, ddof=1))
    if known_sets is not None:
        report.invalid_set_rate = invalid_set_rate(generated_streams,
                                                   known_sets)
    return report


def coherence_report(threads, similarity):
    """Similarity of each adjacent (email, successor) pair within threads
    holding at least two emails; single-email threads contribute nothing."""
    scores = []
    for emails in threads:
        bodies = [e.body if hasattr(e, "body") else e for e in emails]
        for a, b in zip(bodies, bodies[1:]):
            scores.append(similarity(a, b))
    if not scores:
        return {"count": 0, "mean": None, "min": None}
    return {"count": len(scores), "mean": float(np.mean(scores)),
            "min": float(np.min(scores))}
