"""Command-line entry point: synth, prepare, train, tune, classify, evaluate.

Options may also come from a flat ``key=value`` file given with ``--config``;
command-line flags win over the file, the file wins over built-in defaults.
Logs go to stderr; data goes to files or stdout.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasetgen, decision, model
from .errors import ConfigInvalid, EnfGridError, RecordingTooShort, UnknownRecType
from .spectral import Nominal, detect_nominal
from .waveform import FRAME_LEN, GRIDS, WORKING_RATE, RecType, decode_wav, load_frames, save_frames

log = logging.getLogger("enfgrid")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# 60 Hz grids first so that `--grids 3` yields a single-nominal corpus
GRID_ORDER = ("A", "C", "I", "B", "D", "E", "F", "G", "H")
ARCHIVE_SUFFIX = ".frames"
INDEX_SUFFIX = ".index.csv"
PREPARE_INFO = "prepare.cfg"
SUMMARY_NAME = "frame_summary.csv"


@dataclass
class RunConfig:
    """Fully resolved settings of one invocation."""

    command: str
    seed: int = 0
    working_rate: int = WORKING_RATE
    frame_len: int = FRAME_LEN
    alpha1: float = decision.ALPHA1
    alpha2: float = decision.ALPHA2
    model_configs: dict = field(default_factory=dict)  # group name -> RawNetConfig file
    paths: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def check_paths(self, inputs) -> None:
        for key in inputs:
            p = self.paths.get(key)
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"--{key.replace('_', '-')}: {p} does not exist")

    def to_text(self) -> str:
        lines = [f"command={self.command}", f"seed={self.seed}", f"working_rate={self.working_rate}",
                 f"frame_len={self.frame_len}", f"alpha1={self.alpha1!r}", f"alpha2={self.alpha2!r}"]
        lines += [f"model_config.{k}={v}" for k, v in sorted(self.model_configs.items())]
        lines += [f"{k}={v}" for k, v in sorted(self.paths.items())]
        lines += [f"{k}={_fmt_opt(v)}" for k, v in sorted(self.options.items())]
        return "\n".join(lines) + "\n"


def _fmt_opt(v):
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return "" if v is None else str(v)


PATH_KEYS = ("out", "corpus", "frames", "models", "verdicts", "model_config")
INPUT_PATHS = ("corpus", "frames", "models", "verdicts", "model_config")


def resolve(args) -> RunConfig:
    opts = {k: v for k, v in vars(args).items()
            if k not in ("command", "func", "seed", "alpha1", "alpha2", "print_config", "config", "verbose")}
    paths = {k: opts.pop(k) for k in PATH_KEYS if k in opts and opts[k] is not None}
    opts = {k: v for k, v in opts.items() if k not in PATH_KEYS}
    cfg = RunConfig(args.command, seed=args.seed, paths=paths, options=opts)
    if getattr(args, "alpha1", None) is not None:
        cfg.alpha1, cfg.alpha2 = args.alpha1, args.alpha2
    if "model_config" in paths:
        for g in _groups_arg(args):
            cfg.model_configs[g.name] = paths["model_config"]
    return cfg


# ---------------------------------------------------------------------------
# config file handling
# ---------------------------------------------------------------------------

def read_config_file(path) -> dict:
    values = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{n}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


def _apply_file_defaults(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, values: dict) -> None:
    known = {a.dest: a for a in sub._actions} | {a.dest: a for a in parser._actions}
    for key, value in values.items():
        action = known.get(key)
        if action is None or key in ("help", "command", "config", "print_config"):
            raise ConfigInvalid(f"config key {key!r} is not an option of this command")
        if isinstance(action, argparse._StoreTrueAction):
            low = value.lower()
            if low not in _TRUE | _FALSE:
                raise ConfigInvalid(f"config key {key!r}: expected a boolean, got {value!r}")
            value = low in _TRUE
        elif action.type is not None:
            try:
                value = action.type(value)
            except (TypeError, ValueError) as exc:
                raise ConfigInvalid(f"config key {key!r}: {exc}") from exc
        # argparse lets subparser defaults shadow the parent's, so both go on the subparser
        sub.set_defaults(**{key: value})
        action.required = False


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _grid_list(text: str) -> tuple:
    text = text.strip()
    if text.isdigit():
        k = int(text)
        if not 1 <= k <= len(GRID_ORDER):
            raise argparse.ArgumentTypeError(f"grid count must lie in [1, {len(GRID_ORDER)}]")
        return GRID_ORDER[:k]
    grids = tuple(g.strip().upper() for g in text.split(",") if g.strip())
    bad = [g for g in grids if g not in GRIDS]
    if bad or not grids:
        raise argparse.ArgumentTypeError(f"unknown grids {bad or text!r}")
    return grids


def _rec_types(text: str) -> tuple:
    try:
        out = tuple(RecType.parse(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not out or RecType.UNKNOWN in out:
        raise argparse.ArgumentTypeError("recording types must be audio and/or power")
    return out


def _group_list(text: str) -> tuple:
    try:
        return tuple(model.DataGroupId.parse(g) for g in text.split(",") if g.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _groups_arg(args) -> tuple:
    g = getattr(args, "group", None)
    return tuple(g) if g else model.ALL_GROUPS


def _alpha(text: str) -> float:
    return float(text)


def _load_manifest(corpus) -> datasetgen.CorpusManifest:
    corpus = Path(corpus)
    if (corpus / "manifest.csv").is_file():
        return datasetgen.CorpusManifest.from_csv(corpus / "manifest.csv")
    return datasetgen.load_layout(corpus)


def archive_paths(root, split: str, group) -> tuple[Path, Path]:
    base = Path(root) / split / group.name
    return base.with_suffix(ARCHIVE_SUFFIX), Path(str(base) + INDEX_SUFFIX)


def load_archive(root, split: str, group):
    """Frames, label strings and source ids for one prepared data group."""
    arc, idx = archive_paths(root, split, group)
    frames = load_frames(arc)
    with open(idx, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != frames.shape[0]:
        raise ValueError(f"{idx}: {len(rows)} index rows for {frames.shape[0]} frames")
    return frames, [r["label"] for r in rows], [r["source_id"] for r in rows]


def _labels_to_index(labels, group) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(group.classes)}
    missing = sorted({lab for lab in labels if lab not in lookup})
    if missing:
        raise ConfigInvalid(f"{group}: labels {missing} are not classes of this group")
    return np.array([lookup[lab] for lab in labels], dtype=np.int64)


def _group_seed(seed: int, group) -> int:
    key = model.ALL_GROUPS.index(group)
    return int(np.random.SeedSequence([seed, key]).generate_state(1)[0])


def _model_config(args, group) -> model.RawNetConfig:
    if getattr(args, "model_config", None):
        cfg = model.RawNetConfig.load(args.model_config)
        return dataclasses.replace(cfg, num_classes=group.num_classes)
    if getattr(args, "toy", False):
        return model.toy_config(group)
    return model.default_config(group)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    profiles = {g: datasetgen.DEFAULT_PROFILES[g] for g in args.grids}
    manifest = datasetgen.make_corpus(
        args.out, profiles, per_grid=args.per_grid, test_fraction=args.test_fraction,
        practice_fraction=args.practice_fraction, rec_types=args.rec_types, duration=args.duration,
        seed=cfg.seed, none_per_type=args.none_per_type)
    log.info("synth: wrote %d recordings to %s (seed %d); the same arguments reproduce identical files",
             len(manifest), args.out, cfg.seed)
    return EXIT_OK


def cmd_prepare(args, cfg: RunConfig) -> int:
    manifest = _load_manifest(args.corpus)
    out = Path(args.out)
    filtered = not args.no_filter
    store = {}  # (split, group) -> list of (frames, labels, sources)
    counts = Counter()  # (split, group, grid) -> (recordings, frames)
    rec_counts = Counter()
    skipped = 0
    for entry in manifest.entries:
        if entry.split not in args.splits:
            continue
        rt = entry.rec_type if entry.rec_type != RecType.UNKNOWN else args.rec_type
        if rt is None or RecType.parse(rt) == RecType.UNKNOWN:
            raise UnknownRecType(f"{entry.path}: recording type unknown; pass --rec-type")
        rec = decode_wav(manifest.root / entry.path, rt, entry.grid, entry.source_id)
        try:
            if entry.split == "train" and entry.nominal is not None:
                nominal = Nominal.parse(entry.nominal)
            else:
                nominal = detect_nominal(rec).nominal
            batch = decision.prepare_frames(rec, nominal, apply_filter=filtered)
        except RecordingTooShort as exc:
            log.warning("skipping %s: %s", entry.path, exc)
            skipped += 1
            continue
        group = model.DataGroupId(rt, nominal)
        store.setdefault((entry.split, group), []).append(
            (batch.frames, [entry.grid] * batch.num_frames, [entry.source_id] * batch.num_frames))
        counts[(entry.split, group.name, entry.grid)] += batch.num_frames
        rec_counts[(entry.split, group.name, entry.grid)] += 1

    rows = []
    for split in args.splits:
        for group in model.ALL_GROUPS:
            parts = store.get((split, group), [])
            frames = np.concatenate([p[0] for p in parts]) if parts else np.zeros((0, cfg.frame_len), np.float32)
            arc, idx = archive_paths(out, split, group)
            arc.parent.mkdir(parents=True, exist_ok=True)
            save_frames(arc, frames)
            with open(idx, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["source_id", "label"])
                for _, labels, sources in parts:
                    w.writerows(zip(sources, labels))
            if not parts:
                log.info("prepare: %s/%s is empty", split, group.name)
                rows.append([split, group.name, "", 0, 0, "empty"])
            grids = sorted({k[2] for k in counts if k[0] == split and k[1] == group.name})
            for grid in grids:
                key = (split, group.name, grid)
                rows.append([split, group.name, grid, rec_counts[key], counts[key], ""])

    with open(out / SUMMARY_NAME, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "group", "grid", "recordings", "frames", "note"])
        w.writerows(rows)
    (out / PREPARE_INFO).write_text(
        f"filtered={str(filtered).lower()}\nframe_len={cfg.frame_len}\nworking_rate={cfg.working_rate}\n"
        f"splits={','.join(args.splits)}\nskipped={skipped}\n")
    log.info("prepare: %d frames (%s) written to %s", sum(counts.values()),
             "bandpassed" if filtered else "unfiltered", out)
    return EXIT_OK


def _trainable_groups(args):
    groups = _groups_arg(args)
    out = []
    for g in groups:
        arc, _ = archive_paths(args.frames, "train", g)
        if not arc.is_file():
            if getattr(args, "group", None):
                raise FileNotFoundError(f"{arc}: no prepared frames for {g}")
            continue
        frames, labels, sources = load_archive(args.frames, "train", g)
        if frames.shape[0] == 0:
            if getattr(args, "group", None):
                raise ConfigInvalid(f"{g}: prepared training archive is empty")
            log.info("%s: no training frames, skipped", g)
            continue
        out.append((g, frames, labels, sources))
    if not out:
        raise ConfigInvalid("no data group has training frames")
    return out


def _prepared_filtered(frames_dir) -> bool:
    """Whether prepare bandpassed the archives; outlier frames must match."""
    info = Path(frames_dir) / PREPARE_INFO
    if not info.is_file():
        return True
    return "filtered=false" not in info.read_text().split()


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for group, frames, labels, sources in _trainable_groups(args):
        mcfg = _model_config(args, group)
        report, _ = model.train(group, frames, _labels_to_index(labels, group), mcfg,
                                seed=_group_seed(cfg.seed, group), epochs=args.epochs,
                                batch_size=args.batch_size, sources=sources, val_fraction=args.val_fraction,
                                patience=args.patience or None, checkpoint=out / f"{group.name}.ckpt",
                                outlier_weight=args.outlier_weight, filtered=_prepared_filtered(args.frames))
        report.to_csv(out / f"{group.name}.train.csv")
        log.info("%s: best epoch %d of %d, %.1fs", group, report.best_epoch, report.epochs_run, report.wall_time)
    return EXIT_OK


def cmd_tune(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    space = model.SearchSpace().scaled(args.width_scale) if args.width_scale != 1.0 else model.SearchSpace()
    for group, frames, labels, sources in _trainable_groups(args):
        best, trials = model.nas_search(group, frames, _labels_to_index(labels, group), sources, space,
                                        budget=args.budget, seed=_group_seed(cfg.seed, group),
                                        epochs=args.epochs, batch_size=args.batch_size,
                                        base=_model_config(args, group), outlier_weight=args.outlier_weight,
                                        filtered=_prepared_filtered(args.frames))
        model.write_trial_log(trials, out / f"{group.name}.trials.csv")
        best.save(out / f"{group.name}.best.cfg")
    return EXIT_OK


def _classify_inputs(args):
    """(path, rec_type, grid, source_id) for every recording to classify."""
    if args.corpus:
        manifest = _load_manifest(args.corpus)
        for e in manifest.entries:
            if e.split in args.splits:
                yield manifest.root / e.path, e.rec_type, e.grid, e.source_id
    for p in args.inputs:
        p = Path(p)
        files = sorted(p.rglob("*.wav")) if p.is_dir() else [p]
        for f in files:
            yield f, RecType.UNKNOWN, None, str(f)


def cmd_classify(args, cfg: RunConfig) -> int:
    if not args.corpus and not args.inputs:
        raise ConfigInvalid("nothing to classify: give --corpus or WAV paths")
    models = {}
    for g in model.ALL_GROUPS:
        path = Path(args.models) / f"{g.name}.ckpt"
        if path.is_file():
            models[g.name] = model.load_model(path)
    if not models:
        raise FileNotFoundError(f"{args.models}: no group checkpoints found")
    verdicts = []
    for path, rt, grid, source_id in _classify_inputs(args):
        rec = decode_wav(path, rt, grid, source_id)
        override = args.rec_type if (args.rec_type is not None and (args.force_rec_type or rt == RecType.UNKNOWN)) else None
        try:
            v = decision.classify_recording(rec, models, cfg.alpha1, cfg.alpha2, rec_type=override,
                                            apply_filter=not args.no_filter)
        except UnknownRecType as exc:
            raise UnknownRecType(f"{path}: recording type unknown; pass --rec-type") from exc
        except KeyError as exc:
            # routed to a group nobody trained: none of the modelled grids can claim it
            log.warning("%s: %s; verdict N", path, exc.args[0])
            v = decision.RecordingVerdict(datasetgen.NONE_LABEL, {}, 0, 0.0, cfg.alpha1, cfg.alpha2,
                                          source_id=rec.source_id,
                                          rec_type=RecType.parse(override) if override is not None else rec.rec_type,
                                          nominal=int(detect_nominal(rec).nominal))
        verdicts.append(v)
    header = f"# alpha1={cfg.alpha1!r} alpha2={cfg.alpha2!r} filter={'off' if args.no_filter else 'bandpass'}"
    if args.out:
        decision.write_verdicts(verdicts, args.out, header)
    else:
        buf = io.StringIO()
        decision.write_verdicts(verdicts, buf, header)
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    verdicts, meta = decision.read_verdicts(args.verdicts, with_meta=True)
    manifest = _load_manifest(args.corpus)
    report = datasetgen.evaluate(verdicts, manifest)
    text = (f"alpha1={meta.get('alpha1', 'unknown')} alpha2={meta.get('alpha2', 'unknown')} "
            f"filter={meta.get('filter', 'unknown')}\n") + report.to_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root random seed (default: 0)")
    p.add_argument("--config", help="flat key=value file supplying option defaults")
    p.add_argument("--print-config", action="store_true", help="print the resolved run configuration and exit")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enfgrid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="write a synthetic corpus")
    _common(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--grids", type=_grid_list, default=GRID_ORDER,
                   help="grid count (60 Hz grids first) or comma list such as A,C,I (default: all)")
    p.add_argument("--per-grid", type=int, default=20, help="recordings per grid and type (default: 20)")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--practice-fraction", type=float, default=0.0)
    p.add_argument("--rec-types", type=_rec_types, default=(RecType.AUDIO,), help="audio,power (default: audio)")
    p.add_argument("--duration", type=float, default=60.0, help="seconds per recording (default: 60)")
    p.add_argument("--none-per-type", type=int, default=0, help="noise-only test recordings per type")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="route, filter and frame a corpus into per-group archives")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", type=lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
                   default=("train",), help="comma list of splits to prepare (default: train)")
    p.add_argument("--no-filter", action="store_true", help="skip the nominal-frequency bandpass")
    p.add_argument("--rec-type", type=RecType.parse, default=None, help="type for recordings lacking one")
    p.set_defaults(func=cmd_prepare)

    for name, helptext in (("train", "train one model per data group"),
                           ("tune", "random search over model and optimizer settings")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--frames", required=True, help="directory written by prepare")
        p.add_argument("--out", required=True)
        p.add_argument("--group", type=_group_list, default=None,
                       help="comma list of data groups, e.g. audio60 (default: every non-empty group)")
        p.add_argument("--model-config", default=None, help="RawNetConfig file overriding the defaults")
        p.add_argument("--toy", action="store_true", help="use the reduced-width model")
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--outlier-weight", type=float, default=model.OUTLIER_WEIGHT,
                       help="weight of the uniform-target loss on noise frames, 0 disables (default: 0.5)")
        if name == "train":
            p.add_argument("--epochs", type=int, default=100)
            p.add_argument("--patience", type=int, default=10, help="early-stop patience, 0 disables")
            p.add_argument("--val-fraction", type=float, default=0.15)
            p.set_defaults(func=cmd_train)
        else:
            p.add_argument("--budget", type=int, default=8, help="number of trials")
            p.add_argument("--epochs", type=int, default=5, help="epochs per trial")
            p.add_argument("--width-scale", type=float, default=1.0,
                           help="shrink filter/GRU/dense ranges by this factor")
            p.set_defaults(func=cmd_tune)

    p = sub.add_parser("classify", help="label recordings with trained group models")
    _common(p)
    p.add_argument("inputs", nargs="*", help="WAV files or directories outside a corpus layout")
    p.add_argument("--corpus", default=None)
    p.add_argument("--splits", type=lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
                   default=("test",))
    p.add_argument("--models", required=True, help="directory of <group>.ckpt files")
    p.add_argument("--alpha1", type=_alpha, default=decision.ALPHA1, help="entropy threshold (default: 0.8)")
    p.add_argument("--alpha2", type=_alpha, default=decision.ALPHA2, help="vote threshold (default: 0.75)")
    p.add_argument("--rec-type", type=RecType.parse, default=None, help="type for recordings lacking one")
    p.add_argument("--force-rec-type", action="store_true", help="apply --rec-type to every recording")
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--out", default=None, help="verdict CSV (default: stdout)")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="confusion matrix and accuracy from a verdict CSV")
    _common(p)
    p.add_argument("--verdicts", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None, help="report file (default: stdout)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _parse(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        values = read_config_file(known.config)
        sub_name = next((a for a in argv if a in parser._subparsers._group_actions[0].choices), None)
        if sub_name is not None:
            sub = parser._subparsers._group_actions[0].choices[sub_name]
            _apply_file_defaults(parser, sub, values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
    except ConfigInvalid as exc:
        print(f"enfgrid: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"enfgrid: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)

    level = logging.WARNING if args.verbose < 0 else (logging.INFO if args.verbose == 0 else logging.DEBUG)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s", force=True)

    cfg = resolve(args)
    if args.print_config:
        sys.stdout.write(cfg.to_text())
        return EXIT_OK
    if getattr(args, "alpha1", None) is not None:
        if not 0 < cfg.alpha1 <= 1 or not 0.5 < cfg.alpha2 <= 1:
            print("enfgrid: --alpha1 must lie in (0, 1] and --alpha2 in (0.5, 1]", file=sys.stderr)
            return EXIT_USAGE
    try:
        cfg.check_paths(INPUT_PATHS)
        return args.func(args, cfg)
    except (EnfGridError, OSError, ValueError) as exc:
        print(f"enfgrid {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
