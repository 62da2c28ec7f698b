"""The traffic model: GRU history encoder over embedded events, a
lognormal-mixture temporal head conditioned on history + time-of-week
metadata, a sender head, and a sender-conditioned recipient head
(multi-class over recipient-set ids, or per-node Bernoulli for the
binary-classification baseline)."""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .data import MetadataClass, NormStats, RecipientVocabulary

LOG_2PI = math.log(2.0 * math.pi)

MULTI_CLASS = "multiclass"
BINARY_PER_NODE = "binary"


@dataclass
class ModelConfig:
    n_senders: int
    n_recipient_sets: int
    K: int = 16
    d_embed: int = 32
    d_hidden: int = 64
    recipient_mode: str = MULTI_CLASS

    def __post_init__(self):
        if self.K < 1 or self.d_embed < 1 or self.d_hidden < 1:
            raise ValueError("K and layer widths must be >= 1")
        if self.recipient_mode not in (MULTI_CLASS, BINARY_PER_NODE):
            raise ValueError("unknown recipient_mode %r" % self.recipient_mode)


@dataclass
class MixtureParams:
    """Lognormal mixture over normalized log inter-arrival time."""
    log_omega: "ad.Value"   # K log-weights (log-softmax output)
    mu: "ad.Value"          # K means
    sigma: "ad.Value"       # K positive stddevs (softplus output)

    @property
    def omega(self):
        return np.exp(self.log_omega.data)

    def numpy(self):
        return self.omega, self.mu.data.copy(), self.sigma.data.copy()


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Model:
    """All trainable weights plus the vocabularies needed to use them."""

    def __init__(self, cfg: ModelConfig, senders, vocab: RecipientVocabulary,
                 norm: NormStats, seed=0):
        self.cfg = cfg
        self.senders = list(senders)
        self.vocab = vocab
        self.norm = norm
        self.seed = seed
        rng = np.random.default_rng(seed)
        n, R, K = cfg.n_senders, cfg.n_recipient_sets, cfg.K
        de, dh = cfg.d_embed, cfg.d_hidden
        d_in = 1 + 2 * de + de   # log-tau, sender, recipient-set, metadata

        def param(shape, fan_in):
            return ad.Value(_uniform_init(rng, shape, fan_in), requires_grad=True)

        self.sender_embedding = param((n, de), de)
        self.recipient_embedding = param((R, de), de)
        self.metadata_embedding = param((3, de), de)

        self.gru = {}
        for gate in ("z", "r", "h"):
            self.gru["W" + gate] = param((d_in, dh), d_in)
            self.gru["U" + gate] = param((dh, dh), dh)
            self.gru["b" + gate] = param((dh,), dh)

        d_temp_in = dh + de
        self.temporal_W = param((d_temp_in, 3 * K), d_temp_in)
        self.temporal_b = param((3 * K,), d_temp_in)

        self.sender_W1 = param((dh, dh), dh)
        self.sender_b1 = param((dh,), dh)
        self.sender_W2 = param((dh, n), dh)
        self.sender_b2 = param((n,), dh)

        d_rec_in = dh + de
        n_rec_out = R if cfg.recipient_mode == MULTI_CLASS else n
        self.recipient_W = param((d_rec_in, n_rec_out), d_rec_in)
        self.recipient_b = param((n_rec_out,), d_rec_in)

        self.groups = {
            "temporal": ad.ParamGroup("temporal", [
                self.metadata_embedding, self.temporal_W, self.temporal_b]),
            "encoder": ad.ParamGroup("encoder", [
                self.sender_embedding, self.recipient_embedding,
                *self.gru.values()]),
            "sender": ad.ParamGroup("sender", [
                self.sender_W1, self.sender_b1, self.sender_W2, self.sender_b2]),
            "recipient": ad.ParamGroup("recipient", [
                self.recipient_W, self.recipient_b]),
        }

    # -- forward pieces --------------------------------------------------

    def initial_state(self):
        return ad.Value(np.zeros(self.cfg.d_hidden))

    def encode_step(self, state, event):
        """One GRU update folding the just-observed event into the history."""
        cfg = self.cfg
        if not (0 <= event.sender_id < cfg.n_senders):
            raise IndexError("sender id %d out of range" % event.sender_id)
        if not (0 <= event.recipient_set_id < cfg.n_recipient_sets):
            raise IndexError("recipient set id %d out of range"
                             % event.recipient_set_id)
        if not (event.tau > 0 and math.isfinite(event.tau)):
            raise ValueError("tau must be finite and positive")
        x = ad.concat([
            ad.Value(np.array([self.norm.normalize(math.log(event.tau))])),
            ad.embedding(self.sender_embedding, event.sender_id),
            ad.embedding(self.recipient_embedding, event.recipient_set_id),
            ad.embedding(self.metadata_embedding, event.metadata_class.value),
        ])
        g = self.gru
        z = ad.sigmoid(x @ g["Wz"] + state @ g["Uz"] + g["bz"])
        r = ad.sigmoid(x @ g["Wr"] + state @ g["Ur"] + g["br"])
        cand = ad.tanh(x @ g["Wh"] + (r * state) @ g["Uh"] + g["bh"])
        one = ad.Value(np.ones(self.cfg.d_hidden))
        return (one - z) * state + z * cand

    def temporal_head(self, state, metadata_next):
        """Mixture parameters for the next inter-arrival time.

        Depends only on the history state and the (next) metadata class,
        never on the current event's participants.
        """
        inp = ad.concat([state, ad.embedding(self.metadata_embedding,
                                             metadata_next.value)])
        raw = inp @ self.temporal_W + self.temporal_b
        K = self.cfg.K
        log_omega = ad.log_softmax(ad.Value(raw.data[:K], parents=(raw,),
                                            backward=_slice_backward(raw, 0, K)))
        mu = ad.Value(raw.data[K:2 * K], parents=(raw,),
                      backward=_slice_backward(raw, K, 2 * K))
        sigma = ad.softplus(ad.Value(raw.data[2 * K:], parents=(raw,),
                                     backward=_slice_backward(raw, 2 * K, 3 * K)))
        # tiny floor keeps log(sigma) finite for extreme states
        sigma = sigma + ad.Value(np.full(K, 1e-8))
        return MixtureParams(log_omega=log_omega, mu=mu, sigma=sigma)

    def sender_logits(self, state):
        h = ad.tanh(state @ self.sender_W1 + self.sender_b1)
        return h @ self.sender_W2 + self.sender_b2

    def recipient_logits(self, state, sender_id):
        if not (0 <= sender_id < self.cfg.n_senders):
            raise IndexError("sender id %d out of range" % sender_id)
        inp = ad.concat([state, ad.embedding(self.sender_embedding, sender_id)])
        return inp @ self.recipient_W + self.recipient_b

    # -- losses ----------------------------------------------------------

    def lognormal_mixture_nll(self, params: MixtureParams, tau):
        """-log p(tau) with the density taken over tau in hours."""
        if not tau > 0:
            raise ValueError("tau must be positive")
        y = self.norm.normalize(math.log(tau))
        diff = params.mu - ad.Value(np.full(self.cfg.K, y))
        log_sigma = ad.log(params.sigma)
        z = diff * ad.exp(-log_sigma)
        comp = (params.log_omega - log_sigma - z * z * 0.5
                - ad.Value(np.full(self.cfg.K, 0.5 * LOG_2PI)))
        log_p_norm = ad.logsumexp(comp)
        # change of variables: normalized log-space -> tau in hours
        return -(log_p_norm) + (math.log(tau) + math.log(self.norm.std_log_tau))

    def recipient_nll(self, logits, event):
        """Cross-entropy of the true recipient target under either head."""
        if self.cfg.recipient_mode == MULTI_CLASS:
            return -ad.pick(ad.log_softmax(logits), event.recipient_set_id)
        if not hasattr(self, "_node_index"):
            self._node_index = {s: i for i, s in enumerate(self.senders)}
        target = np.zeros(self.cfg.n_senders)
        for node in self.vocab.sets[event.recipient_set_id]:
            target[self._node_index[node]] = 1.0
        # sum of per-node Bernoulli NLLs: softplus(x) - t*x
        t = ad.Value(target)
        return (ad.softplus(logits) - t * logits).sum()

    def batch_nll(self, sequence):
        """Teacher-forced pass over one sequence.

        Returns (loss_tau, loss_sender, loss_recipient, total) as Values;
        the state used for event i encodes only events before i.
        """
        if not sequence:
            raise ValueError("empty sequence")
        state = self.initial_state()
        loss_tau = ad.Value(0.0)
        loss_sender = ad.Value(0.0)
        loss_recipient = ad.Value(0.0)
        for event in sequence:
            mix = self.temporal_head(state, event.metadata_class)
            loss_tau = loss_tau + self.lognormal_mixture_nll(mix, event.tau)
            loss_sender = loss_sender - ad.pick(
                ad.log_softmax(self.sender_logits(state)), event.sender_id)
            rec_logits = self.recipient_logits(state, event.sender_id)
            loss_recipient = loss_recipient + self.recipient_nll(rec_logits, event)
            state = self.encode_step(state, event)
        total = loss_tau + loss_sender + loss_recipient
        return loss_tau, loss_sender, loss_recipient, total

    # -- persistence -----------------------------------------------------

    CHECKPOINT_VERSION = 1

    def _weight_arrays(self):
        arrays = {
            "sender_embedding": self.sender_embedding,
            "recipient_embedding": self.recipient_embedding,
            "metadata_embedding": self.metadata_embedding,
            "temporal_W": self.temporal_W, "temporal_b": self.temporal_b,
            "sender_W1": self.sender_W1, "sender_b1": self.sender_b1,
            "sender_W2": self.sender_W2, "sender_b2": self.sender_b2,
            "recipient_W": self.recipient_W, "recipient_b": self.recipient_b,
        }
        for gate, v in self.gru.items():
            arrays["gru_" + gate] = v
        return arrays

    def save(self, path):
        weights = {}
        for name, value in self._weight_arrays().items():
            arr = np.ascontiguousarray(value.data, dtype="<f8")
            weights[name] = {
                "shape": list(arr.shape),
                "data": base64.b64encode(arr.tobytes()).decode("ascii"),
            }
        doc = {
            "version": self.CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "senders": self.senders,
            "vocab": self.vocab.to_jsonable(),
            "norm": {"mean_log_tau": self.norm.mean_log_tau,
                     "std_log_tau": self.norm.std_log_tau},
            "seed": self.seed,
            "weights": weights,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("version") != cls.CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version %r"
                             % doc.get("version"))
        cfg = ModelConfig(**doc["config"])
        norm = NormStats(**doc["norm"])
        vocab = RecipientVocabulary.from_jsonable(doc["vocab"])
        model = cls(cfg, doc["senders"], vocab, norm, seed=doc.get("seed", 0))
        for name, value in model._weight_arrays().items():
            entry = doc["weights"][name]
            arr = np.frombuffer(base64.b64decode(entry["data"]),
                                dtype="<f8").reshape(entry["shape"])
            value.data[...] = arr
        return model

    def state_dict(self):
        return {name: v.data.copy() for name, v in self._weight_arrays().items()}

    def load_state_dict(self, state):
        for name, v in self._weight_arrays().items():
            v.data[...] = state[name]

    def vocab_fingerprint(self):
        return vocab_fingerprint(self.senders, self.vocab)


def vocab_fingerprint(senders, vocab):
    """Short digest of the sender list and recipient-set inventory, used
    to detect checkpoint/dataset mismatches."""
    import hashlib
    payload = json.dumps([list(senders), vocab.to_jsonable()["sets"]],
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _slice_backward(raw, lo, hi):
    def bwd(g):
        raw.grad[lo:hi] += g
    return bwd
