"""Command-line front end.

All commands share one workspace directory (--out). The pipeline is:

    bsp gen-source --out run/            # dataset under run/dataset/
    bsp pretrain vanilla --out run/      # checkpoints + reports
    bsp pretrain bsp-cls --out run/
    bsp distill --out run/
    bsp eval --out run/ --extractors random,vanilla,bsp,two-stream
    bsp report --out run/                # figures next to the CSV output

Every command accepts --config PATH (JSON, flat dotted keys), repeatable
--set key=value overrides, and --seed.
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import report as report_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .downstream import evaluate_extractor, gen_untrimmed, pair_is_boundary, track_scores
from .encoder import init_params
from .integration import (
    EXTRACTOR_ROLES,
    FeatureExtractor,
    TwoStreamExtractor,
    distill,
    train_two_head,
)
from .pretext import (
    train_boundary_classifier,
    train_boundary_regressor,
    train_vanilla_classifier,
)
from .synthesis import dump_samples, sample_batch
from .toyclips import generate_source, load_dataset, save_dataset

TASKS = {
    "vanilla": "vanilla_cls",
    "bsp-cls": "boundary_cls",
    "bsp-reg": "boundary_reg",
    "two-head": "two_head",
}

TASK_ROLE = {"vanilla": "vanilla", "bsp-cls": "bsp", "bsp-reg": "bsp-reg", "two-head": "two-head"}


class CliError(RuntimeError):
    pass


def _workspace(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_dir(out):
    return out / "dataset"


def _require_dataset(out):
    path = _dataset_dir(out)
    if not (path / "manifest.json").exists():
        raise CliError("no dataset at %s; run gen-source first" % path)
    return load_dataset(path)


def _checkpoint_path(out, role):
    return out / "checkpoints" / ("%s.bspw" % role)


def _require_checkpoint(out, role):
    path = _checkpoint_path(out, role)
    if not path.exists():
        raise CliError("no %r checkpoint at %s" % (role, path))
    return load_checkpoint(path)


def _encoder_part(tensors):
    return {k: v for k, v in tensors.items() if "." not in k}


def build_extractor(name, out, cfg):
    if name not in EXTRACTOR_ROLES:
        raise CliError("unknown extractor %r (choose from %s)" % (name, ", ".join(EXTRACTOR_ROLES)))
    if name == "random":
        return FeatureExtractor("random", init_params(cfg["seed"], cfg.encoder_config()))
    if name == "two-stream":
        fv = build_extractor("vanilla", out, cfg)
        fb = build_extractor("bsp", out, cfg)
        return TwoStreamExtractor(fv, fb)
    tensors, meta = _require_checkpoint(out, name)
    if meta.get("role") != name:
        raise CliError("checkpoint at %s has role %r, expected %r"
                       % (_checkpoint_path(out, name), meta.get("role"), name))
    return FeatureExtractor(name, _encoder_part(tensors))


def _benchmark_videos(ds, cfg):
    return gen_untrimmed(ds, np.random.default_rng((cfg["seed"], 11)), cfg.benchmark_config())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_source(args, cfg):
    out = _workspace(args)
    ds = generate_source(cfg["seed"], cfg.clip_config())
    save_dataset(ds, _dataset_dir(out))
    cfg.dump(out / "config.json")
    print("gen-source: %d clips, %d classes -> %s" % (len(ds.clips), ds.K, _dataset_dir(out)))
    return 0


def cmd_synth(args, cfg):
    out = _workspace(args)
    ds = _require_dataset(out)
    rng = np.random.default_rng((cfg["seed"], 5))
    count = cfg["synth.dump_count"]
    if count % 4 != 0:
        raise CliError("synth.dump_count must be divisible by 4, got %d" % count)
    samples = sample_batch(ds, cfg.synth_config(), rng, count, split=cfg["synth.dump_split"])
    dump_samples(samples, out / "synth")
    print("synth: wrote %d samples -> %s" % (len(samples), out / "synth"))
    return 0


def cmd_pretrain(args, cfg):
    out = _workspace(args)
    ds = _require_dataset(out)
    task = args.task
    tcfg = cfg.train_config(TASKS[task])
    enc0 = init_params(cfg["seed"], cfg.encoder_config())
    scfg = cfg.synth_config()

    if task == "vanilla":
        enc, head, rep = train_vanilla_classifier(ds, enc0, tcfg)
        tensors = dict(enc, **{"cls.w": head["w"], "cls.b": head["b"]})
    elif task == "bsp-cls":
        enc, head, rep = train_boundary_classifier(ds, scfg, enc0, tcfg)
        tensors = dict(enc, **{"cls.w": head["w"], "cls.b": head["b"]})
    elif task == "bsp-reg":
        enc, head, rep = train_boundary_regressor(ds, scfg, enc0, tcfg)
        tensors = dict(enc, **{"reg.w": head["w"], "reg.b": head["b"]})
    else:
        enc, ahead, bhead, rep = train_two_head(ds, scfg, enc0, tcfg)
        tensors = dict(enc, **{"cls.w": ahead["w"], "cls.b": ahead["b"],
                               "bnd.w": bhead["w"], "bnd.b": bhead["b"]})

    role = TASK_ROLE[task]
    save_checkpoint(_checkpoint_path(out, role), tensors, role,
                    config_hash=cfg.hash(), step=tcfg.steps)
    reports = out / "reports"
    reports.mkdir(exist_ok=True)
    rep.save_csv(reports / ("%s.csv" % role))
    last = rep.rows[-1]
    print("pretrain %s: %d steps, val loss %.4f, metric %.4f -> %s"
          % (task, last[0], last[2], last[3], _checkpoint_path(out, role)))
    return 0


def cmd_distill(args, cfg):
    out = _workspace(args)
    ds = _require_dataset(out)
    fv = build_extractor("vanilla", out, cfg)
    fb = build_extractor("bsp", out, cfg)
    tcfg = cfg.train_config("distill")
    student0 = init_params((cfg["seed"], 21), cfg.encoder_config())
    student, proj, rep = distill(fv, fb, student0, ds, cfg.synth_config(), tcfg)
    tensors = dict(student)
    for pname, head in proj.items():
        tensors["%s.w" % pname] = head["w"]
        tensors["%s.b" % pname] = head["b"]
    save_checkpoint(_checkpoint_path(out, "student"), tensors, "student",
                    config_hash=cfg.hash(), step=tcfg.steps)
    reports = out / "reports"
    reports.mkdir(exist_ok=True)
    rep.save_csv(reports / "student.csv")
    print("distill: matching loss %.4f -> %.4f (x%.3f) -> %s"
          % (rep.extra["match_start"], rep.extra["match_final"],
             rep.extra["match_final"] / max(rep.extra["match_start"], 1e-12),
             _checkpoint_path(out, "student")))
    return 0


def _parse_extractors(raw):
    names = [n.strip() for n in raw.split(",") if n.strip()]
    if not names:
        raise CliError("--extractors must name at least one extractor")
    return names


def cmd_extract(args, cfg):
    out = _workspace(args)
    ds = _require_dataset(out)
    videos = _benchmark_videos(ds, cfg)
    bcfg = cfg.benchmark_config()
    names = _parse_extractors(args.extractors)
    import json
    for name in names:
        extractor = build_extractor(name, out, cfg)
        feat_dir = out / "features" / name
        feat_dir.mkdir(parents=True, exist_ok=True)
        index = []
        from .downstream import extract_tracks
        tracks = extract_tracks(videos, extractor, bcfg.snippet_len, bcfg.snippet_stride)
        for track in tracks:
            fname = "video_%04d.npy" % track.video_id
            np.save(feat_dir / fname, track.features.astype(np.float32))
            index.append({"video": track.video_id, "file": fname,
                          "snippets": int(track.features.shape[0]),
                          "dim": int(track.features.shape[1])})
        with open(feat_dir / "index.json", "w", encoding="utf-8") as f:
            json.dump(index, f, indent=1)
        print("extract %s: %d videos x %d-dim -> %s"
              % (name, len(index), extractor.out_dim, feat_dir))
    return 0


def cmd_eval(args, cfg):
    out = _workspace(args)
    ds = _require_dataset(out)
    videos = _benchmark_videos(ds, cfg)
    bcfg = cfg.benchmark_config()
    names = _parse_extractors(args.extractors)

    records = []
    all_tracks = {}
    for name in names:
        extractor = build_extractor(name, out, cfg)
        record, tracks = evaluate_extractor(name, extractor, videos, bcfg)
        records.append(record)
        all_tracks[name] = tracks
        print("eval %s: ap %.4f recall %.4f ratio %.4f"
              % (name, record.ap, record.recall, record.ratio))

    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["extractor", "ap", "recall", "ratio"])
        for r in records:
            w.writerow([r.extractor, "%.6f" % r.ap, "%.6f" % r.recall, "%.6f" % r.ratio])

    scores_dir = out / "scores"
    scores_dir.mkdir(exist_ok=True)
    for vid in range(len(videos)):
        ref = all_tracks[names[0]][vid]
        positions = [(ref.snippet_centers[j] + ref.snippet_centers[j + 1]) // 2
                     for j in range(len(ref.snippet_centers) - 1)]
        gt = pair_is_boundary(ref).astype(int)
        with open(scores_dir / ("video_%04d.csv" % vid), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["position", "gt_boundary"] + names)
            cols = [track_scores(all_tracks[n][vid], bcfg.znorm_scores) for n in names]
            for i, pos in enumerate(positions):
                w.writerow([int(pos), int(gt[i])] + ["%.6f" % c[i] for c in cols])
    print("eval: wrote %s and %d score traces" % (out / "eval.csv", len(videos)))
    return 0


def cmd_report(args, cfg):
    out = _workspace(args)
    made = report_mod.render_all(out)
    if not made:
        raise CliError("nothing to report under %s; run pretrain/eval first" % out)
    print("report: wrote %d figure(s) -> %s" % (len(made), out / "figures"))
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", default=None, help="JSON config with flat dotted keys")
    p.add_argument("--out", default="bsp-run", help="workspace directory")
    p.add_argument("--set", action="append", default=[], metavar="K=V",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="bsp",
                                     description="boundary-sensitive pretext pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-source", help="render the source clip dataset")
    _add_common(p)
    p.set_defaults(fn=cmd_gen_source)

    p = sub.add_parser("synth", help="dump synthesized boundary samples")
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("pretrain", help="train an encoder")
    p.add_argument("task", nargs="?", default="bsp-cls", choices=sorted(TASKS),
                   help="training task (default: bsp-cls)")
    _add_common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("distill", help="distill the two teachers into one student")
    _add_common(p)
    p.set_defaults(fn=cmd_distill)

    p = sub.add_parser("extract", help="dump benchmark snippet features")
    p.add_argument("--extractors", default="vanilla,bsp", help="comma-separated roles")
    _add_common(p)
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("eval", help="run the localization benchmark")
    p.add_argument("--extractors", default="random,vanilla,bsp,two-stream",
                   help="comma-separated roles")
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render figures from workspace CSV output")
    _add_common(p)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set, args.seed)
        return args.fn(args, cfg)
    except (CliError, ConfigError, ValueError, OSError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
