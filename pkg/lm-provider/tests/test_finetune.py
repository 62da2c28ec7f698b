import json
import os

import pytest

from lm_provider.cli import main
from lm_provider.finetune import fine_tune
from lm_provider.model import TextModel, Tokenizer, tokenize, train_model


def write_corpus(path, lines):
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestTokenizer:
    def test_round_trip(self, tmp_path):
        tok = Tokenizer.from_lines(["alpha beta", "beta gamma"])
        path = tmp_path / "vocab.json"
        tok.save(str(path))
        loaded = Tokenizer.load(str(path))
        assert loaded.itos == tok.itos
        assert loaded.encode(tokenize("beta unseen")) \
            == tok.encode(tokenize("beta unseen"))

    def test_unknown_maps_to_unk(self):
        tok = Tokenizer.from_lines(["alpha beta"])
        ids = tok.encode(["zzz"])
        assert tok.itos[ids[0]] == "<unk>"

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            Tokenizer.from_lines(["", "   "])


class TestFineTune:
    def test_thousand_line_smoke(self, tmp_path):
        lines = ["status update number %d for the team" % i
                 for i in range(1000)]
        corpus = write_corpus(tmp_path / "subjects.txt", lines)
        out = tmp_path / "model"
        fine_tune(corpus, "subject", str(out), epochs=1, seed=0,
                  d_embed=8, d_hidden=16)
        for name in ("config.json", "vocab.json", "weights.pt"):
            assert (out / name).exists()
        model = TextModel.load(str(out))
        assert model.kind == "subject"
        assert model.generate("status", max_tokens=6, seed=0)

    def test_body_with_context_prefix(self, tmp_path):
        lines = ["earlier thread text here | thanks will send it over",
                 "previous reply context | sounds good see you then"] * 10
        corpus = write_corpus(tmp_path / "bodies.txt", lines)
        fine_tune(corpus, "body", str(tmp_path / "model"), epochs=1,
                  d_embed=8, d_hidden=16)
        assert TextModel.load(str(tmp_path / "model")).kind == "body"

    def test_continue_from_base(self, tmp_path):
        corpus = write_corpus(tmp_path / "c.txt",
                              ["one two three four"] * 20)
        base = tmp_path / "base"
        fine_tune(corpus, "subject", str(base), epochs=1,
                  d_embed=8, d_hidden=16)
        cont = tmp_path / "cont"
        fine_tune(corpus, "subject", str(cont), base_dir=str(base),
                  epochs=1)
        with open(cont / "config.json") as fh:
            assert json.load(fh)["d_hidden"] == 16

    def test_empty_corpus_error(self, tmp_path):
        corpus = write_corpus(tmp_path / "empty.txt", [""])
        with pytest.raises(ValueError):
            fine_tune(corpus, "subject", str(tmp_path / "model"))

    def test_bad_kind(self, tmp_path):
        corpus = write_corpus(tmp_path / "c.txt", ["hello world"])
        with pytest.raises(ValueError):
            fine_tune(corpus, "memo", str(tmp_path / "model"))

    def test_missing_corpus_cli_exit(self, tmp_path):
        rc = main(["finetune", "--corpus", str(tmp_path / "nope.txt"),
                   "--kind", "subject", "--out", str(tmp_path / "model")])
        assert rc != 0

    def test_cli_finetune_writes_artifacts(self, tmp_path):
        corpus = write_corpus(tmp_path / "c.txt",
                              ["weekly report ready for review"] * 30)
        out = tmp_path / "model"
        rc = main(["finetune", "--corpus", corpus, "--kind", "subject",
                   "--out", str(out), "--epochs", "1"])
        assert rc == 0
        assert os.path.exists(out / "weights.pt")


class TestGenerate:
    def test_seeded_determinism(self):
        model = train_model(["red green blue yellow"] * 10, "subject",
                            epochs=2, d_embed=8, d_hidden=16)
        a = model.generate("red", max_tokens=6, seed=4)
        b = model.generate("red", max_tokens=6, seed=4)
        assert a == b

    def test_token_budget(self):
        model = train_model(["a long sentence with many words here"] * 10,
                            "body", epochs=1, d_embed=8, d_hidden=16)
        for seed in range(5):
            text = model.generate("long", max_tokens=3, seed=seed)
            assert len(text.split()) <= 3
