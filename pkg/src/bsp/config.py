"""Flat dotted-key run configuration with a strict schema.

A config is a JSON object of `section.key` entries; unknown keys are
rejected, values are type-checked, and `--set key=value` overrides parse the
value as JSON (falling back to a bare string). The same validated mapping
feeds every module's own config object.
"""

import hashlib
import json

from .downstream import BenchmarkConfig
from .encoder import EncoderConfig
from .pretext import TrainConfig
from .synthesis import SynthesisConfig
from .toyclips import ClipConfig


class ConfigError(ValueError):
    pass


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _float_list(x):
    return isinstance(x, list) and len(x) > 0 and all(_num(v) for v in x)


def _opt_num(x):
    return x is None or _num(x)


# key -> (default, predicate, description)
SCHEMA = {
    "seed": (0, _is_int, "master seed"),
    "data.K": (8, _is_int, "number of action classes"),
    "data.clips_per_class": (40, _is_int, "clips rendered per class"),
    "data.len": (64, _is_int, "frames per clip"),
    "data.H": (24, _is_int, "frame height"),
    "data.W": (24, _is_int, "frame width"),
    "data.C": (1, _is_int, "channels"),
    "data.noise_sigma": (0.05, _num, "additive pixel noise std"),
    "data.fps": (12.0, _num, "nominal frame rate"),
    "synth.tau": (8, _is_int, "half-length of synthesized samples"),
    "synth.epsilon": (3, _is_int, "transition half-window"),
    "synth.gamma_set": ([1 / 3, 0.5, 2.0, 3.0], _float_list, "speed factors"),
    "synth.t_min": (4, _is_int, "smallest speed change point"),
    "synth.t_max": (12, _is_int, "largest speed change point"),
    "synth.dump_count": (64, _is_int, "samples written by the synth command"),
    "synth.dump_split": ("train", lambda x: x in ("train", "val"), "source split for synth"),
    "encoder.E": (32, _is_int, "per-frame channels"),
    "encoder.D": (64, _is_int, "pooled feature dim"),
    "train.lr": (0.05, _num, "learning rate"),
    "train.momentum": (0.9, _num, "SGD momentum"),
    "train.batch_size": (32, _is_int, "samples per step"),
    "train.steps": (2000, _is_int, "SGD steps"),
    "train.eval_every": (200, _is_int, "steps between evaluations"),
    "train.val_size": (512, _is_int, "validation set size"),
    "train.snippet_len": (16, _is_int, "frames per action snippet"),
    "train.lambda_boundary": (1.0, _num, "two-head boundary weight"),
    "train.reg_reduction": ("sum", lambda x: x in ("sum", "mean"), "smooth-L1 reduction"),
    "train.reg_include_nonboundary": (True, lambda x: isinstance(x, bool),
                                      "regress the zero heatmap on no-boundary samples"),
    "train.heatmap_variance": (None, _opt_num, "heatmap spread override (default tau)"),
    "train.distill_ce_labels": ("boundary", lambda x: x in ("boundary", "action"),
                                "labels for the distillation CE term"),
    "eval.num_videos": (64, _is_int, "benchmark videos"),
    "eval.video_len": (256, _is_int, "frames per benchmark video"),
    "eval.instances_per_video": (2, _is_int, "action instances per video"),
    "eval.instance_len_min": (24, _is_int, "shortest instance"),
    "eval.instance_len_max": (48, _is_int, "longest instance"),
    "eval.min_gap": (8, _is_int, "minimum background gap"),
    "eval.background": ("noise", lambda x: x in ("noise", "freeze", "gray"), "background kind"),
    "eval.compound_fraction": (0.0, _num, "share of instances made of touching same-class pairs"),
    "eval.compound_gamma": (2.0, _num, "rate factor for speed-switch pairs"),
    "eval.appearance_drift": (0.0, _num, "brightness wave amplitude inside instances"),
    "eval.snippet_len": (8, _is_int, "sliding window length"),
    "eval.snippet_stride": (4, _is_int, "sliding window stride"),
    "eval.tol_frames": (4, _is_int, "boundary recall tolerance"),
    "eval.peak_min_separation": (4, _is_int, "peak suppression distance"),
    "eval.peak_threshold_std": (1.0, _num, "peak threshold in per-track stds"),
    "eval.znorm_scores": (False, lambda x: isinstance(x, bool), "z-normalize features per track"),
    "eval.train_fraction": (0.75, _num, "probe train share of videos"),
    "eval.probe_lr": (1.0, _num, "probe learning rate"),
    "eval.probe_steps": (400, _is_int, "probe GD steps"),
    "eval.probe_l2": (1e-3, _num, "probe L2 penalty"),
}


class RunConfig:
    def __init__(self, values):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]

    def clip_config(self):
        v = self.values
        return ClipConfig(K=v["data.K"], clips_per_class=v["data.clips_per_class"],
                          len=v["data.len"], H=v["data.H"], W=v["data.W"], C=v["data.C"],
                          noise_sigma=v["data.noise_sigma"], fps=v["data.fps"])

    def synth_config(self):
        v = self.values
        return SynthesisConfig(tau=v["synth.tau"], epsilon=v["synth.epsilon"],
                               gamma_set=tuple(v["synth.gamma_set"]),
                               t_min=v["synth.t_min"], t_max=v["synth.t_max"],
                               seed=v["seed"])

    def encoder_config(self):
        v = self.values
        return EncoderConfig(H=v["data.H"], W=v["data.W"], C=v["data.C"],
                             E=v["encoder.E"], D=v["encoder.D"])

    def train_config(self, loss_kind):
        v = self.values
        return TrainConfig(lr=v["train.lr"], momentum=v["train.momentum"],
                           batch_size=v["train.batch_size"], steps=v["train.steps"],
                           eval_every=v["train.eval_every"], seed=v["seed"],
                           loss_kind=loss_kind, val_size=v["train.val_size"],
                           snippet_len=v["train.snippet_len"],
                           lambda_boundary=v["train.lambda_boundary"],
                           reg_reduction=v["train.reg_reduction"],
                           reg_include_nonboundary=v["train.reg_include_nonboundary"],
                           heatmap_variance=v["train.heatmap_variance"],
                           distill_ce_labels=v["train.distill_ce_labels"])

    def benchmark_config(self):
        v = self.values
        return BenchmarkConfig(num_videos=v["eval.num_videos"], video_len=v["eval.video_len"],
                               instances_per_video=v["eval.instances_per_video"],
                               instance_len_min=v["eval.instance_len_min"],
                               instance_len_max=v["eval.instance_len_max"],
                               min_gap=v["eval.min_gap"], background=v["eval.background"],
                               compound_fraction=v["eval.compound_fraction"],
                               compound_gamma=v["eval.compound_gamma"],
                               appearance_drift=v["eval.appearance_drift"],
                               snippet_len=v["eval.snippet_len"],
                               snippet_stride=v["eval.snippet_stride"],
                               tol_frames=v["eval.tol_frames"],
                               peak_min_separation=v["eval.peak_min_separation"],
                               peak_threshold_std=v["eval.peak_threshold_std"],
                               znorm_scores=v["eval.znorm_scores"],
                               train_fraction=v["eval.train_fraction"],
                               probe_lr=v["eval.probe_lr"], probe_steps=v["eval.probe_steps"],
                               probe_l2=v["eval.probe_l2"])

    def hash(self):
        blob = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.values, f, indent=1, sort_keys=True)


def _check(values):
    bad_keys = sorted(k for k in values if k not in SCHEMA)
    if bad_keys:
        raise ConfigError("unknown config key(s): %s" % ", ".join(bad_keys))
    bad_vals = sorted(k for k, v in values.items() if not SCHEMA[k][1](v))
    if bad_vals:
        raise ConfigError("invalid value(s) for: %s"
                          % ", ".join("%s=%r" % (k, values[k]) for k in bad_vals))


def parse_set_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path=None, sets=(), seed=None):
    """Defaults, then the JSON file, then --set overrides, then --seed."""
    values = {k: v[0] for k, v in SCHEMA.items()}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                file_values = json.load(f)
        except FileNotFoundError:
            raise ConfigError("config file not found: %s" % path)
        except json.JSONDecodeError as e:
            raise ConfigError("config file %s is not valid JSON: %s" % (path, e))
        if not isinstance(file_values, dict):
            raise ConfigError("config file %s must hold a JSON object" % path)
        _check(file_values)
        values.update(file_values)
    overrides = {}
    for item in sets:
        if "=" not in item:
            raise ConfigError("--set expects key=value, got %r" % item)
        key, raw = item.split("=", 1)
        overrides[key.strip()] = parse_set_value(raw)
    _check(overrides)
    values.update(overrides)
    if seed is not None:
        values["seed"] = int(seed)
    _check(values)
    # cross-field checks that individual predicates cannot express
    if values["synth.t_max"] < values["synth.t_min"]:
        raise ConfigError("synth.t_max < synth.t_min")
    return RunConfig(values)
