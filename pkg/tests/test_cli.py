import json

import numpy as np
import pytest

from bsp.checkpoint import (
    BadMagicError,
    CheckpointError,
    TruncatedError,
    VersionError,
    load_checkpoint,
    save_checkpoint,
)
from bsp.cli import main
from bsp.config import ConfigError, load_config

TINY = ["--set", "data.clips_per_class=8", "--set", "data.len=48",
        "--set", "data.H=12", "--set", "data.W=12",
        "--set", "train.steps=20", "--set", "train.eval_every=10",
        "--set", "train.val_size=16", "--set", "eval.num_videos=6",
        "--set", "eval.probe_steps=60", "--set", "synth.dump_count=8"]


def run(workdir, *argv):
    return main(list(argv) + ["--out", str(workdir)] + TINY + ["--seed", "3"])


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_defaults_load():
    cfg = load_config()
    assert cfg["data.K"] == 8
    assert cfg["synth.tau"] == 8
    assert cfg["synth.epsilon"] == 3
    assert cfg["train.lr"] == 0.05


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data.K": 8, "nope.key": 1, "other.bad": 2}))
    with pytest.raises(ConfigError) as e:
        load_config(p)
    assert "nope.key" in str(e.value) and "other.bad" in str(e.value)


def test_invalid_value_rejected():
    with pytest.raises(ConfigError) as e:
        load_config(sets=["data.K=eight"])
    assert "data.K" in str(e.value)


def test_set_parses_json_types():
    cfg = load_config(sets=["train.lr=0.25", "eval.znorm_scores=true",
                            "synth.gamma_set=[0.5,2.0]", "eval.background=freeze"])
    assert cfg["train.lr"] == 0.25
    assert cfg["eval.znorm_scores"] is True
    assert cfg["synth.gamma_set"] == [0.5, 2.0]
    assert cfg["eval.background"] == "freeze"


def test_seed_override_changes_hash():
    a = load_config(seed=1)
    b = load_config(seed=2)
    assert a.hash() != b.hash()


def test_cross_field_check():
    with pytest.raises(ConfigError):
        load_config(sets=["synth.t_min=10", "synth.t_max=5"])


def test_config_file_missing():
    with pytest.raises(ConfigError):
        load_config("/definitely/not/here.json")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"embed_w": rng.normal(size=(9, 4)).astype(np.float32).astype(np.float64),
               "cls.b": rng.normal(size=4).astype(np.float32).astype(np.float64)}
    path = tmp_path / "m.bspw"
    save_checkpoint(path, tensors, role="vanilla", config_hash="abc", step=77)
    back, meta = load_checkpoint(path)
    assert meta["role"] == "vanilla"
    assert meta["config_hash"] == "abc"
    assert meta["step"] == 77
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.bspw"
    save_checkpoint(path, {"w": np.zeros(3)}, role="bsp")
    raw = bytearray(path.read_bytes())
    raw[1] ^= 0x55
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "m.bspw"
    save_checkpoint(path, {"w": np.zeros(3)}, role="bsp")
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.bspw"
    save_checkpoint(path, {"w": np.arange(10.0)}, role="bsp")
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(TruncatedError):
        load_checkpoint(path)


def test_checkpoint_missing(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "none.bspw")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny trained workspace shared by the command tests."""
    out = tmp_path_factory.mktemp("ws")
    assert run(out, "gen-source") == 0
    assert run(out, "pretrain", "vanilla") == 0
    assert run(out, "pretrain", "bsp-cls") == 0
    return out


def test_gen_source_writes_dataset(workspace):
    assert (workspace / "dataset" / "manifest.json").exists()
    manifest = json.loads((workspace / "dataset" / "manifest.json").read_text())
    assert manifest["K"] == 8
    assert len(manifest["clips"]) == 64
    assert (workspace / "config.json").exists()


def test_synth_dump(workspace):
    assert run(workspace, "synth") == 0
    labels = json.loads((workspace / "synth" / "labels.json").read_text())
    assert len(labels) == 8
    assert (workspace / "synth" / labels[0]["file"]).exists()


def test_pretrain_writes_checkpoint_and_report(workspace):
    assert (workspace / "checkpoints" / "vanilla.bspw").exists()
    assert (workspace / "reports" / "vanilla.csv").exists()
    tensors, meta = load_checkpoint(workspace / "checkpoints" / "vanilla.bspw")
    assert meta["role"] == "vanilla"
    assert "embed_w" in tensors and "cls.w" in tensors


def test_pretrain_deterministic(tmp_path):
    for sub in ("a", "b"):
        out = tmp_path / sub
        assert run(out, "gen-source") == 0
        assert run(out, "pretrain", "bsp-cls") == 0
    a = (tmp_path / "a" / "checkpoints" / "bsp.bspw").read_bytes()
    b = (tmp_path / "b" / "checkpoints" / "bsp.bspw").read_bytes()
    assert a == b


def test_default_pretrain_task_is_boundary_classification(tmp_path, capsys):
    out = tmp_path / "w"
    assert run(out, "gen-source") == 0
    assert run(out, "pretrain") == 0
    assert (out / "checkpoints" / "bsp.bspw").exists()
    _, meta = load_checkpoint(out / "checkpoints" / "bsp.bspw")
    assert meta["role"] == "bsp"


def test_eval_rows_match_extractors(workspace, capsys):
    rc = main(["eval", "--extractors", "random,vanilla,two-stream",
               "--out", str(workspace)] + TINY + ["--seed", "3"])
    assert rc == 0
    lines = (workspace / "eval.csv").read_text().strip().splitlines()
    assert lines[0] == "extractor,ap,recall,ratio"
    assert len(lines) == 4
    assert [ln.split(",")[0] for ln in lines[1:]] == ["random", "vanilla", "two-stream"]
    traces = list((workspace / "scores").glob("video_*.csv"))
    assert len(traces) == 6


def test_eval_deterministic(workspace):
    first = (workspace / "eval.csv").read_text()
    rc = main(["eval", "--extractors", "random,vanilla,two-stream",
               "--out", str(workspace)] + TINY + ["--seed", "3"])
    assert rc == 0
    assert (workspace / "eval.csv").read_text() == first


def test_extract_writes_features(workspace):
    rc = main(["extract", "--extractors", "vanilla", "--out", str(workspace)]
              + TINY + ["--seed", "3"])
    assert rc == 0
    index = json.loads((workspace / "features" / "vanilla" / "index.json").read_text())
    assert len(index) == 6
    feats = np.load(workspace / "features" / "vanilla" / index[0]["file"])
    assert feats.shape[1] == 64


def test_report_renders_figures(workspace):
    assert run(workspace, "report") == 0
    figs = list((workspace / "figures").glob("*.png"))
    assert any(f.name.startswith("training_") for f in figs)
    assert (workspace / "figures" / "eval_summary.png").exists()
    assert any(f.name.startswith("scores_") for f in figs)


def test_missing_dataset_error_names_path(tmp_path, capsys):
    rc = run(tmp_path / "empty", "pretrain", "vanilla")
    assert rc == 1
    err = capsys.readouterr().err
    assert "dataset" in err and "gen-source" in err


def test_missing_checkpoint_error(tmp_path, capsys):
    out = tmp_path / "w"
    assert run(out, "gen-source") == 0
    rc = run(out, "distill")
    assert rc == 1
    assert "vanilla" in capsys.readouterr().err


def test_unknown_extractor_error(workspace, capsys):
    rc = main(["eval", "--extractors", "nonsense", "--out", str(workspace)] + TINY)
    assert rc == 1
    assert "nonsense" in capsys.readouterr().err


def test_invalid_config_exits_nonzero(tmp_path, capsys):
    rc = main(["gen-source", "--out", str(tmp_path), "--set", "bogus.key=1"])
    assert rc == 1
    assert "bogus.key" in capsys.readouterr().err
