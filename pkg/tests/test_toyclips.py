import numpy as np
import pytest

from bsp.toyclips import (
    BadMagicError,
    Clip,
    ClipConfig,
    ClipDataset,
    DatasetError,
    ShapeMismatchError,
    TruncatedFileError,
    generate_source,
    load_dataset,
    min_source_len,
    save_dataset,
    write_tensor_file,
)

SMALL = ClipConfig(K=4, clips_per_class=4, len=40, H=12, W=12, C=1, noise_sigma=0.05)


def datasets_equal(a, b):
    if a.K != b.K or a.split != b.split or len(a.clips) != len(b.clips):
        return False
    for ca, cb in zip(a.clips, b.clips):
        if ca.clip_id != cb.clip_id or ca.class_id != cb.class_id or ca.fps != cb.fps:
            return False
        if not np.array_equal(ca.frames, cb.frames):
            return False
    return True


def test_generation_deterministic():
    a = generate_source(7, SMALL)
    b = generate_source(7, SMALL)
    assert datasets_equal(a, b)
    c = generate_source(8, SMALL)
    assert not datasets_equal(a, c)


def test_values_in_unit_interval_without_noise():
    cfg = ClipConfig(K=4, clips_per_class=2, len=16, H=12, W=12, noise_sigma=0.0)
    ds = generate_source(3, cfg)
    for clip in ds.clips:
        assert clip.frames.min() >= 0.0
        assert clip.frames.max() <= 1.0


def test_values_clamped_with_noise():
    ds = generate_source(3, SMALL)
    for clip in ds.clips:
        assert clip.frames.min() >= 0.0
        assert clip.frames.max() <= 1.0


def test_split_is_3_to_1_per_class_and_disjoint():
    ds = generate_source(1, SMALL)
    for k in range(ds.K):
        ids = [c.clip_id for c in ds.clips if c.class_id == k]
        train = [i for i in ids if ds.split[i] == "train"]
        val = [i for i in ids if ds.split[i] == "val"]
        assert len(train) == 3 * len(val)
        assert not set(train) & set(val)
        assert len(train) >= 2  # same-class synthesis needs pairs


def test_config_validation():
    with pytest.raises(ValueError):
        generate_source(0, ClipConfig(K=3))
    with pytest.raises(ValueError):
        generate_source(0, ClipConfig(H=4))
    with pytest.raises(ValueError):
        generate_source(0, ClipConfig(clips_per_class=1))


def test_min_source_len_accounts_for_speed_resampling():
    # worst case draw: smallest t with the largest gamma
    assert min_source_len(tau=8, epsilon=3, t_max=4, gamma_max=3.0) == 40
    assert min_source_len(tau=8, epsilon=3, t_max=12, gamma_max=1.0) >= 22


def test_linear_probe_separability_oracle():
    """Mean-pooled raw pixels of each clip must be linearly separable well
    above chance; trained with an independent library classifier."""
    sklearn = pytest.importorskip("sklearn")
    from sklearn.linear_model import LogisticRegression

    ds = generate_source(11, ClipConfig())
    def pooled(cs):
        return np.stack([c.frames.mean(axis=0).ravel() for c in cs])

    train, val = ds.by_split("train"), ds.by_split("val")
    clf = LogisticRegression(max_iter=2000)
    clf.fit(pooled(train), [c.class_id for c in train])
    acc = clf.score(pooled(val), [c.class_id for c in val])
    assert acc > 1.0 / ds.K + 0.2, "probe accuracy %.3f barely above chance" % acc


# ---------------------------------------------------------------------------
# store round-trips and error kinds
# ---------------------------------------------------------------------------

def test_roundtrip_bit_exact(tmp_path):
    ds = generate_source(5, SMALL)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert datasets_equal(ds, back)


def test_empty_dataset_roundtrip(tmp_path):
    ds = ClipDataset(clips=[], K=0, split={})
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.clips == []


def test_bad_magic(tmp_path):
    ds = generate_source(5, SMALL)
    save_dataset(ds, tmp_path / "d")
    target = tmp_path / "d" / "clip_00000.bspc"
    raw = bytearray(target.read_bytes())
    raw[0] ^= 0xFF
    target.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_dataset(tmp_path / "d")


def test_truncated_file(tmp_path):
    ds = generate_source(5, SMALL)
    save_dataset(ds, tmp_path / "d")
    target = tmp_path / "d" / "clip_00001.bspc"
    target.write_bytes(target.read_bytes()[:-7])
    with pytest.raises(TruncatedFileError):
        load_dataset(tmp_path / "d")


def test_shape_mismatch_vs_manifest(tmp_path):
    ds = generate_source(5, SMALL)
    save_dataset(ds, tmp_path / "d")
    # rewrite one clip file with a different T than the manifest records
    write_tensor_file(tmp_path / "d" / "clip_00002.bspc",
                      np.zeros((3, SMALL.H, SMALL.W, 1), dtype=np.float32))
    with pytest.raises(ShapeMismatchError):
        load_dataset(tmp_path / "d")


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "nothing")
