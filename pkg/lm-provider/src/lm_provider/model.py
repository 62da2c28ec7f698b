"""Word-level GRU language model with seeded top-k decoding.

One model per text kind (subject or body). Artifacts are a vocabulary
JSON, a config JSON and a torch weight file, so a fine-tuned model can
be reloaded and served without the training corpus.
"""

from __future__ import annotations

import json
import os
import re

import torch
from torch import nn

WORD_RE = re.compile(r"[a-z][a-z']+|[0-9]+")

BOS, EOS, UNK = "<bos>", "<eos>", "<unk>"

ARTIFACT_VERSION = 1
CONFIG_NAME = "config.json"
VOCAB_NAME = "vocab.json"
WEIGHTS_NAME = "weights.pt"


def tokenize(text):
    return WORD_RE.findall(text.lower())


class Tokenizer:
    def __init__(self, words):
        self.itos = [BOS, EOS, UNK] + sorted(set(words))
        self.stoi = {w: i for i, w in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens):
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    @classmethod
    def from_lines(cls, lines):
        words = [t for line in lines for t in tokenize(line)]
        if not words:
            raise ValueError("corpus has no usable tokens")
        return cls(words)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.itos, fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            itos = json.load(fh)
        tok = cls.__new__(cls)
        tok.itos = itos
        tok.stoi = {w: i for i, w in enumerate(itos)}
        return tok


class WordLM(nn.Module):
    def __init__(self, vocab_size, d_embed=32, d_hidden=64):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, d_embed)
        self.gru = nn.GRU(d_embed, d_hidden, batch_first=True)
        self.out = nn.Linear(d_hidden, vocab_size)

    def forward(self, ids, state=None):
        h, state = self.gru(self.embed(ids), state)
        return self.out(h), state


class TextModel:
    """Tokenizer + network + decoding defaults for one text kind."""

    def __init__(self, tokenizer, net, kind, temperature=0.9, top_k=40,
                 max_length=60):
        self.tokenizer = tokenizer
        self.net = net
        self.kind = kind
        self.temperature = temperature
        self.top_k = top_k
        self.max_length = max_length

    @torch.no_grad()
    def generate(self, prompt, context=None, max_tokens=30, seed=0):
        """Seeded decoding; the prompt tokens open the returned text so
        keyword-seeded subjects stay on topic."""
        self.net.eval()
        gen = torch.Generator().manual_seed(int(seed))
        prompt_tokens = tokenize(prompt)
        prefix = []
        if context:
            for line in list(context)[-2:]:
                prefix.extend(tokenize(line))
        ids = [self.tokenizer.stoi[BOS]] \
            + self.tokenizer.encode(prefix + prompt_tokens)
        logits, state = self.net(torch.tensor([ids]))
        out = list(prompt_tokens)
        budget = min(int(max_tokens), self.max_length)
        while len(out) < budget:
            step = logits[0, -1] / max(self.temperature, 1e-6)
            if self.top_k:
                kth = torch.topk(step, min(self.top_k, step.numel())).values[-1]
                step = step.masked_fill(step < kth, float("-inf"))
            probs = torch.softmax(step, dim=-1)
            nxt = int(torch.multinomial(probs, 1, generator=gen))
            word = self.tokenizer.itos[nxt]
            if word == EOS:
                break
            if word not in (BOS, UNK):
                out.append(word)
            logits, state = self.net(torch.tensor([[nxt]]), state)
        text = " ".join(out[:budget])
        return text.replace("\n", " ").strip()

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        self.tokenizer.save(os.path.join(out_dir, VOCAB_NAME))
        cfg = {"version": ARTIFACT_VERSION, "kind": self.kind,
               "d_embed": self.net.embed.embedding_dim,
               "d_hidden": self.net.gru.hidden_size,
               "temperature": self.temperature, "top_k": self.top_k,
               "max_length": self.max_length}
        with open(os.path.join(out_dir, CONFIG_NAME), "w",
                  encoding="utf-8") as fh:
            json.dump(cfg, fh, indent=2)
        torch.save(self.net.state_dict(),
                   os.path.join(out_dir, WEIGHTS_NAME))

    @classmethod
    def load(cls, model_dir):
        with open(os.path.join(model_dir, CONFIG_NAME),
                  encoding="utf-8") as fh:
            cfg = json.load(fh)
        if cfg.get("version") != ARTIFACT_VERSION:
            raise ValueError("unsupported artifact version %r"
                             % cfg.get("version"))
        tokenizer = Tokenizer.load(os.path.join(model_dir, VOCAB_NAME))
        net = WordLM(len(tokenizer), cfg["d_embed"], cfg["d_hidden"])
        net.load_state_dict(torch.load(
            os.path.join(model_dir, WEIGHTS_NAME), weights_only=True))
        return cls(tokenizer, net, cfg["kind"],
                   temperature=cfg["temperature"], top_k=cfg["top_k"],
                   max_length=cfg["max_length"])


def train_model(lines, kind, epochs=1, seed=0, d_embed=32, d_hidden=64,
                lr=5e-3, batch_size=16, base: TextModel | None = None):
    """Train (or continue training) a model on one-sample-per-line text.

    When `base` is given its weights and vocabulary are the starting
    point; otherwise training starts from a fresh initialization.
    """
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise ValueError("training corpus is empty")
    torch.manual_seed(seed)
    if base is not None:
        tokenizer, net = base.tokenizer, base.net
    else:
        tokenizer = Tokenizer.from_lines(lines)
        net = WordLM(len(tokenizer), d_embed, d_hidden)
    encoded = [[tokenizer.stoi[BOS]] + tokenizer.encode(tokenize(ln))
               + [tokenizer.stoi[EOS]] for ln in lines]
    encoded = [ids for ids in encoded if len(ids) > 2]
    if not encoded:
        raise ValueError("corpus has no usable tokens")
    pad = tokenizer.stoi[EOS]
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss(ignore_index=-100)
    net.train()
    for _ in range(max(epochs, 1)):
        for start in range(0, len(encoded), batch_size):
            batch = encoded[start:start + batch_size]
            width = max(len(ids) for ids in batch)
            x = torch.full((len(batch), width), pad, dtype=torch.long)
            y = torch.full((len(batch), width), -100, dtype=torch.long)
            for r, ids in enumerate(batch):
                x[r, :len(ids)] = torch.tensor(ids)
                y[r, :len(ids) - 1] = torch.tensor(ids[1:])
            logits, _ = net(x)
            loss = loss_fn(logits.reshape(-1, len(tokenizer)),
                           y.reshape(-1))
            opt.zero_grad()
            loss.backward()
            opt.step()
    return TextModel(tokenizer, net, kind)
