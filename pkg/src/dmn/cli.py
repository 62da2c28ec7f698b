"""Command-line entry points: train, generate, evaluate and serve,
driven by an INI config file plus flags."""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, DatasetConfig, ingest
from .evaluation import distribution_report
from .model import Model, ModelConfig, vocab_fingerprint
from .sampling import GenConfig, StreamGenerator, realtime_events, write_jsonl
from .textgen import (BuiltinProvider, ProviderError, RemoteProvider,
                      extract_keywords_by_frequency)
from .threads import (DEFAULT_ACTIVE_DAYS, DEFAULT_CAP, DEFAULT_WINDOW_DAYS,
                      SenderProfile, ThreadEngine, format_mbox)
from .training import TrainConfig, staged_train

EXIT_OK = 0
EXIT_USAGE = 2      # bad flags, unreadable/invalid config, missing inputs
EXIT_DATA = 3       # malformed dataset or vocabulary mismatch
EXIT_RUNTIME = 4    # everything else

CHECKPOINT_NAME = "checkpoint.json"
TRAIN_LOG_NAME = "train_log.csv"
RESUME_NAME = "resume.json"

# fallback corpus when no subjects/bodies files are configured; keeps the
# builtin provider and keyword profiles usable out of the box
DEFAULT_SUBJECTS = [
    "weekly status update for the team",
    "meeting schedule for next week",
    "quarterly report draft attached",
    "budget review notes and numbers",
    "project update and open questions",
    "schedule change for the review meeting",
    "notes from the planning meeting",
    "report numbers need another review",
]


class UsageError(Exception):
    """Configuration or invocation problem; maps to exit code 2."""


@dataclass
class ThreadsConfig:
    proportions: tuple = (0.5, 0.3, 0.2)     # (new, reply, fwd)
    window_days: int = DEFAULT_WINDOW_DAYS
    active_days: int = DEFAULT_ACTIVE_DAYS
    cap: float = DEFAULT_CAP


@dataclass
class RunConfig:
    dataset: DatasetConfig
    model: dict = field(default_factory=dict)     # ModelConfig overrides
    train: TrainConfig = field(default_factory=TrainConfig)
    generate: GenConfig | None = None
    threads: ThreadsConfig = field(default_factory=ThreadsConfig)
    provider: str = "builtin"                     # "builtin" or a base URL
    subjects_corpus: str = ""
    bodies_corpus: str = ""
    output_dir: str = "out"
    seed: int = 0


_RUN_KEYS = {"output_dir", "seed", "provider", "subjects_corpus",
             "bodies_corpus"}
_MODEL_KEYS = {"k", "d_embed", "d_hidden", "recipient_mode"}
_TRAIN_KEYS = {"lr", "batch", "max_epochs", "patience", "stage3_enabled",
               "point_prediction"}
_GENERATE_KEYS = {"start_time", "events", "tz_offset_minutes"}
_THREADS_KEYS = {"proportions", "window_days", "active_days", "cap"}
_SECTIONS = {"run": _RUN_KEYS, "dataset": None, "model": _MODEL_KEYS,
             "train": _TRAIN_KEYS, "generate": _GENERATE_KEYS,
             "threads": _THREADS_KEYS}


def _check_keys(section, keys, allowed):
    unknown = set(keys) - allowed
    if unknown:
        raise UsageError("unknown [%s] config keys: %s"
                         % (section, sorted(unknown)))


def load_run_config(path):
    """Parse and validate the run config; unknown sections/keys are
    rejected before any work starts."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise UsageError("cannot read config %s: %s" % (path, exc)) from exc
    except configparser.Error as exc:
        raise UsageError("invalid config %s: %s" % (path, exc)) from exc
    unknown = set(parser.sections()) - set(_SECTIONS)
    if unknown:
        raise UsageError("unknown config sections: %s" % sorted(unknown))
    for name, allowed in _SECTIONS.items():
        if allowed is not None and parser.has_section(name):
            _check_keys(name, parser[name], allowed)

    base = os.path.dirname(os.path.abspath(path))

    def _path(p):
        return p if not p or os.path.isabs(p) else os.path.join(base, p)

    run = parser["run"] if parser.has_section("run") else {}
    try:
        ds_keys = dict(parser["dataset"]) if parser.has_section("dataset") \
            else {}
        known = set(DatasetConfig.__dataclass_fields__)
        _check_keys("dataset", ds_keys, known)
        for k in ("tz_offset_minutes", "min_count", "seq_len_days",
                  "split_seed", "min_events_per_window"):
            if k in ds_keys:
                ds_keys[k] = int(ds_keys[k])
        if "path" in ds_keys:
            ds_keys["path"] = _path(ds_keys["path"])
        dataset = DatasetConfig(**ds_keys)

        model = {}
        if parser.has_section("model"):
            sec = parser["model"]
            if "k" in sec:
                model["K"] = sec.getint("k")
            for k in ("d_embed", "d_hidden"):
                if k in sec:
                    model[k] = sec.getint(k)
            if "recipient_mode" in sec:
                model["recipient_mode"] = sec["recipient_mode"]

        tkw = {}
        if parser.has_section("train"):
            sec = parser["train"]
            for k, cast in (("lr", sec.getfloat), ("batch", sec.getint),
                            ("max_epochs", sec.getint),
                            ("patience", sec.getint),
                            ("stage3_enabled", sec.getboolean)):
                if k in sec:
                    tkw[k] = cast(k)
            if "point_prediction" in sec:
                tkw["point_prediction"] = sec["point_prediction"]

        gkw = {"start_time": 0, "events": 1000, "tz_offset_minutes":
               dataset.tz_offset_minutes}
        if parser.has_section("generate"):
            sec = parser["generate"]
            for k in gkw:
                if k in sec:
                    gkw[k] = sec.getint(k)

        thr = ThreadsConfig()
        if parser.has_section("threads"):
            sec = parser["threads"]
            if "proportions" in sec:
                parts = tuple(float(x) for x in sec["proportions"].split(","))
                if len(parts) != 3:
                    raise UsageError("threads proportions needs 3 values")
                thr.proportions = parts
            for k in ("window_days", "active_days"):
                if k in sec:
                    setattr(thr, k, sec.getint(k))
            if "cap" in sec:
                thr.cap = sec.getfloat("cap")
    except (ValueError, DataError) as exc:
        raise UsageError("invalid config %s: %s" % (path, exc)) from exc

    seed = int(run.get("seed", 0))
    if os.environ.get("DMN_SEED"):
        seed = int(os.environ["DMN_SEED"])
    cfg = RunConfig(
        dataset=dataset, model=model,
        train=TrainConfig(seed=seed, **tkw),
        threads=thr,
        provider=run.get("provider", "builtin"),
        subjects_corpus=_path(run.get("subjects_corpus", "")),
        bodies_corpus=_path(run.get("bodies_corpus", "")),
        output_dir=_path(run.get("output_dir", "out")),
        seed=seed)
    cfg.generate = gkw
    return cfg


def _read_lines(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise UsageError("cannot read %s %s: %s" % (what, path, exc)) from exc
    if not lines:
        raise UsageError("%s %s is empty" % (what, path))
    return lines


def build_provider(cfg: RunConfig, check=False):
    if cfg.provider == "builtin":
        subjects = _read_lines(cfg.subjects_corpus, "subjects corpus") \
            if cfg.subjects_corpus else DEFAULT_SUBJECTS
        bodies = _read_lines(cfg.bodies_corpus, "bodies corpus") \
            if cfg.bodies_corpus else None
        return BuiltinProvider(subjects, bodies)
    provider = RemoteProvider(cfg.provider)
    if check:
        provider.healthcheck()
    return provider


def build_profiles(cfg: RunConfig, senders):
    """One profile per sender: shared training-type proportions from the
    config and keyword lists from the subjects corpus (all senders share
    the corpus-wide ranking when the corpus is not split by sender)."""
    subjects = _read_lines(cfg.subjects_corpus, "subjects corpus") \
        if cfg.subjects_corpus else DEFAULT_SUBJECTS
    ranked = extract_keywords_by_frequency({"all": subjects})["all"]
    keywords = [w for w, _ in ranked]
    return {s: SenderProfile(sender=s,
                             type_proportions_train=cfg.threads.proportions,
                             keywords=list(keywords))
            for s in senders}


def _load_checkpoint(cfg: RunConfig, path=None):
    ckpt = path or os.path.join(cfg.output_dir, CHECKPOINT_NAME)
    if not os.path.exists(ckpt):
        raise UsageError("checkpoint %s not found; run `dmn train` first"
                         % ckpt)
    return Model.load(ckpt)


def _check_vocab(model, dataset):
    want = vocab_fingerprint(dataset.senders, dataset.vocab)
    got = model.vocab_fingerprint()
    if want != got:
        raise DataError("checkpoint vocabulary %s does not match dataset "
                        "vocabulary %s" % (got, want))


def cmd_train(cfg: RunConfig, args):
    dataset = ingest(cfg.dataset)
    mcfg = ModelConfig(n_senders=len(dataset.senders),
                       n_recipient_sets=len(dataset.vocab.sets),
                       **cfg.model)
    model = Model(mcfg, dataset.senders, dataset.vocab, dataset.norm,
                  seed=cfg.seed)
    model, log = staged_train(model, dataset.splits, cfg.train)
    os.makedirs(cfg.output_dir, exist_ok=True)
    model.save(os.path.join(cfg.output_dir, CHECKPOINT_NAME))
    log.write_csv(os.path.join(cfg.output_dir, TRAIN_LOG_NAME))
    print("checkpoint written to %s"
          % os.path.join(cfg.output_dir, CHECKPOINT_NAME))
    return EXIT_OK


def _gen_config(cfg: RunConfig, args, seed):
    return GenConfig(seed=seed, start_time=cfg.generate["start_time"],
                     max_events=args.events if args.events is not None
                     else cfg.generate["events"],
                     tz_offset_minutes=cfg.generate["tz_offset_minutes"])


def _engine_for(cfg, model, seed, provider):
    return ThreadEngine(build_profiles(cfg, model.senders), provider,
                        seed=seed, window_days=cfg.threads.window_days,
                        active_days=cfg.threads.active_days,
                        cap=cfg.threads.cap)


def cmd_generate(cfg: RunConfig, args):
    model = _load_checkpoint(cfg, args.checkpoint)
    if cfg.dataset.path:
        _check_vocab(model, ingest(cfg.dataset))
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    provider = None
    if args.emails:
        provider = build_provider(cfg, check=True)

    if args.realtime:
        gcfg = _gen_config(cfg, args, cfg.seed)
        for ev in realtime_events(model, gcfg):
            print(json.dumps(ev.to_jsonable(model.senders), sort_keys=True),
                  flush=True)
        return EXIT_OK

    children = np.random.SeedSequence(cfg.seed).spawn(args.trials)

    def run_trial(i):
        gcfg = _gen_config(cfg, args, cfg.seed)
        rng = np.random.default_rng(children[i])
        events = list(StreamGenerator(model, gcfg, rng=rng).events())
        write_jsonl(events, model.senders,
                    os.path.join(out_dir, "trial_%03d.jsonl" % i))
        if args.emails:
            engine = _engine_for(cfg, model, cfg.seed + i, provider)
            emails = engine.run(events, model.senders)
            with open(os.path.join(out_dir, "emails_%03d.jsonl" % i), "w",
                      encoding="utf-8") as fh:
                for em in emails:
                    fh.write(json.dumps(em.to_jsonable(), sort_keys=True)
                             + "\n")
            with open(os.path.join(out_dir, "emails_%03d.mbox" % i), "w",
                      encoding="utf-8") as fh:
                fh.write(format_mbox(emails))
        return len(events)

    with ThreadPoolExecutor(max_workers=min(args.workers, args.trials) or 1) \
            as pool:
        counts = list(pool.map(run_trial, range(args.trials)))
    print("wrote %d trial(s), %d events total to %s"
          % (args.trials, sum(counts), out_dir))
    return EXIT_OK


def _read_generated(path, sender_index, vocab):
    """Load one generated-events JSONL file back into evaluable records."""
    from types import SimpleNamespace
    events = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                sender_id = sender_index[doc["sender"]]
                recipients = frozenset(doc["recipients"])
                events.append(SimpleNamespace(
                    timestamp=int(doc["ts"]), tau=float(doc["tau_h"]),
                    sender_id=sender_id,
                    recipient_set_id=vocab.index.get(recipients, -1),
                    recipients=recipients))
            except (ValueError, KeyError) as exc:
                raise DataError("%s line %d: %s" % (path, i, exc)) from exc
    return events


def cmd_evaluate(cfg: RunConfig, args):
    import glob as globmod
    dataset = ingest(cfg.dataset)
    paths = sorted(globmod.glob(os.path.join(args.generated,
                                             "trial_*.jsonl")))
    if not paths:
        raise UsageError("no trial_*.jsonl files in %s" % args.generated)
    streams = [_read_generated(p, dataset.sender_index, dataset.vocab)
               for p in paths]
    reference = [ev for name in ("train", "dev", "test")
                 for seq in dataset.splits[name] for ev in seq]
    report = distribution_report(
        streams, reference, n_senders=len(dataset.senders),
        n_sets=len(dataset.vocab.sets), known_sets=dataset.vocab.sets,
        tz_offset_minutes=dataset.tz_offset_minutes,
        set_sizes=[len(s) for s in dataset.vocab.sets])
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    report.write_json(os.path.join(out_dir, "report.json"))
    report.write_csv(os.path.join(out_dir, "report.csv"))
    print("report written to %s" % os.path.join(out_dir, "report.json"))
    for key, val in sorted(report.mean.items()):
        print("  %s: %.4f" % (key, val))
    print("  invalid_set_rate: %.4f" % report.invalid_set_rate)
    return EXIT_OK


def cmd_serve(cfg: RunConfig, args):
    model = _load_checkpoint(cfg, args.checkpoint)
    provider = build_provider(cfg, check=True)
    engine = _engine_for(cfg, model, cfg.seed, provider)
    resume_path = args.resume or os.path.join(cfg.output_dir, RESUME_NAME)
    start_time = cfg.generate["start_time"]
    stream_rng = np.random.default_rng(cfg.seed)
    if os.path.exists(resume_path):
        with open(resume_path, encoding="utf-8") as fh:
            state = json.load(fh)
        engine.load_state_dict(state["engine"])
        stream_rng.bit_generator.state = state["stream_rng_state"]
        start_time = state["next_start_time"]

    gcfg = GenConfig(seed=cfg.seed, start_time=start_time,
                     end_time=2 ** 62, mode="realtime",
                     tz_offset_minutes=cfg.generate["tz_offset_minutes"])
    gen = StreamGenerator(model, gcfg, rng=stream_rng)
    speedup = max(args.speedup, 1e-9)
    import time as timemod
    t0 = timemod.monotonic()
    last_ts = start_time
    try:
        for ev in gen.events():
            due = t0 + (ev.timestamp - start_time) / speedup
            delay = due - timemod.monotonic()
            if delay > 0:
                timemod.sleep(delay)
            email = engine.process(ev, model.senders[ev.sender_id])
            print(json.dumps(email.to_jsonable(), sort_keys=True), flush=True)
            last_ts = ev.timestamp
            if args.max_seconds and timemod.monotonic() - t0 >= \
                    args.max_seconds:
                break
    except KeyboardInterrupt:
        pass
    os.makedirs(os.path.dirname(os.path.abspath(resume_path)), exist_ok=True)
    state = {"engine": engine.state_dict(),
             "stream_rng_state": gen.rng.bit_generator.state,
             "next_start_time": last_ts + 1}
    with open(resume_path, "w", encoding="utf-8") as fh:
        json.dump(state, fh)
    print("resume state written to %s" % resume_path, file=sys.stderr)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dmn",
        description="Train and run the messaging-traffic generator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="ingest data and train a model")
    p_train.add_argument("--config", required=True)

    p_gen = sub.add_parser("generate", help="sample event streams")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--checkpoint")
    p_gen.add_argument("--trials", type=int, default=1)
    p_gen.add_argument("--events", type=int)
    p_gen.add_argument("--emails", action="store_true",
                       help="also emit assembled emails")
    p_gen.add_argument("--realtime", action="store_true",
                       help="stream one trial live to stdout")
    p_gen.add_argument("--workers", type=int, default=4)
    p_gen.add_argument("--out")

    p_eval = sub.add_parser("evaluate", help="score generated streams")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--generated", required=True,
                        help="directory of trial_*.jsonl files")
    p_eval.add_argument("--out")

    p_serve = sub.add_parser("serve", help="emit emails live")
    p_serve.add_argument("--config", required=True)
    p_serve.add_argument("--checkpoint")
    p_serve.add_argument("--resume", help="resume-state file path")
    p_serve.add_argument("--speedup", type=float, default=1.0,
                         help="simulated seconds per wall-clock second")
    p_serve.add_argument("--max-seconds", type=float, default=0.0,
                         help="stop after this much wall-clock time")
    return parser


COMMANDS = {"train": cmd_train, "generate": cmd_generate,
            "evaluate": cmd_evaluate, "serve": cmd_serve}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print("error: missing file: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError,) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except ProviderError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
