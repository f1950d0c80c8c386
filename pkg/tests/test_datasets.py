import hashlib
import zipfile

import numpy as np
import pytest

from seqdisent.datasets import (NUM_FEATURES, Sequence, direction_bin, generate_shapes, generate_tones,
                                load_dataset, save_dataset, speaker_profile)
from seqdisent.errors import ConfigError, FormatError


def _digest(ds):
    h = hashlib.sha256()
    for arr in (ds.data, ds.static_labels, ds.dynamic_labels, ds.seeds):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def test_two_frame_sequence_differs_only_by_translation():
    ds = generate_shapes(1, 2, 16, 2, seed=0)
    f0, f1 = ds.data[0, :, 0]
    ys0, xs0 = np.nonzero(f0)
    ys1, xs1 = np.nonzero(f1)
    dy, dx = ys1.min() - ys0.min(), xs1.min() - xs0.min()
    assert (dx, dy) != (0, 0)
    shifted = np.zeros_like(f0)
    shifted[ys0 + dy, xs0 + dx] = f0[ys0, xs0]
    np.testing.assert_array_equal(shifted, f1)


def test_shapes_deterministic_per_seed():
    a = generate_shapes(20, 6, 32, 4, seed=7)
    b = generate_shapes(20, 6, 32, 4, seed=7)
    assert _digest(a) == _digest(b)
    assert _digest(a) != _digest(generate_shapes(20, 6, 32, 4, seed=8))


def test_shapes_dims_and_label_ranges():
    ds = generate_shapes(100, 15, 64, 4, seed=1)
    assert ds.data.shape == (100, 15, 1, 64, 64)
    assert len(ds) == 100
    for seq in (ds[i] for i in range(len(ds))):
        assert seq.data.shape == (15, 1, 64, 64)
        assert 0 <= seq.static_label < 4
        assert seq.dynamic_labels.shape == (15,)
        assert np.all((seq.dynamic_labels >= 0) & (seq.dynamic_labels < 8))
    assert set(np.unique(ds.static_labels)) <= {0, 1, 2, 3}
    assert ds.data.min() >= 0.0 and ds.data.max() <= 1.0


def test_shapes_fully_inside_bounds():
    ds = generate_shapes(50, 12, 32, 4, seed=2)
    pixel_mass = ds.data.sum(axis=(2, 3, 4))
    # a clipped shape would lose mass in some frame
    np.testing.assert_allclose(pixel_mass, pixel_mass[:, :1].repeat(12, axis=1), rtol=1e-6)


@pytest.mark.parametrize("size,seed", [(32, 3), (64, 4), (16, 5)])
def test_dynamic_labels_match_centroid_displacement(size, seed):
    """Brute-force oracle: recompute the motion direction from pixel centroids."""
    ds = generate_shapes(40, 10, size, 4, seed=seed)
    yy, xx = np.mgrid[0:size, 0:size]
    for n in range(len(ds)):
        frames = ds.data[n, :, 0].astype(np.float64)
        mass = frames.sum(axis=(1, 2))
        cy = (frames * yy).sum(axis=(1, 2)) / mass
        cx = (frames * xx).sum(axis=(1, 2)) / mass
        dirs = []
        for t in range(1, 10):
            dx, dy = cx[t] - cx[t - 1], cy[t] - cy[t - 1]
            angle = np.degrees(np.arctan2(-dy, dx)) % 360
            dirs.append(int(((angle + 22.5) // 45) % 8))
        expected = [dirs[0]] + dirs
        assert list(ds.dynamic_labels[n]) == expected


def test_direction_bins():
    assert direction_bin(1, 0) == 0
    assert direction_bin(0, -1) == 2  # up
    assert direction_bin(-1, 0) == 4
    assert direction_bin(1, 1) == 7


@pytest.mark.parametrize("kw", [dict(size=8), dict(T=1), dict(num_identities=1), dict(count=0)])
def test_shapes_invalid_config(kw):
    args = dict(count=2, T=4, size=32, num_identities=4, seed=0)
    args.update(kw)
    with pytest.raises(ConfigError):
        generate_shapes(**args)


def test_two_object_mode():
    ds = generate_shapes(5, 4, 32, 4, seed=0, two_objects=True)
    assert ds.params["two_objects"] is True
    assert ds.data.shape == (5, 4, 1, 32, 32)


def test_tones_shapes_and_labels():
    ds = generate_tones(50, 20, 5, seed=3)
    assert ds.data.shape == (50, 20, NUM_FEATURES)
    assert np.all((ds.static_labels >= 0) & (ds.static_labels < 5))
    assert set(np.unique(ds.dynamic_labels)) <= {0, 1}
    assert np.isfinite(ds.data).all()


def test_tones_all_silent_is_noise_floor():
    ds = generate_tones(3, 10, 2, seed=0, silence_prob=1.0)
    assert np.all(ds.dynamic_labels == 0)
    assert ds.data.max() < 0.1


def test_tones_same_speaker_shares_profile():
    ds = generate_tones(40, 10, 2, seed=4, silence_prob=0.0)
    idx = np.nonzero(ds.static_labels == 0)[0][:2]
    assert len(idx) == 2
    a, b = ds.data[idx[0]], ds.data[idx[1]]
    assert not np.allclose(a, b)  # different trajectories
    np.testing.assert_array_equal(speaker_profile(0), speaker_profile(0))
    assert not np.allclose(speaker_profile(0), speaker_profile(1))


def test_tones_deterministic_and_invalid():
    assert _digest(generate_tones(5, 8, 3, seed=9)) == _digest(generate_tones(5, 8, 3, seed=9))
    with pytest.raises(ConfigError):
        generate_tones(5, 1, 3, seed=0)
    with pytest.raises(ConfigError):
        generate_tones(5, 8, 1, seed=0)


def test_round_trip_single_sequence(tmp_path):
    ds = generate_shapes(1, 3, 16, 2, seed=0)
    save_dataset(ds, tmp_path / "one.ds")
    back = load_dataset(tmp_path / "one.ds")
    np.testing.assert_array_equal(back.data, ds.data)
    np.testing.assert_array_equal(back.static_labels, ds.static_labels)
    np.testing.assert_array_equal(back.dynamic_labels, ds.dynamic_labels)
    assert back.manifest() == ds.manifest()
    assert isinstance(back[0], Sequence)


def test_round_trip_checksums(tmp_path):
    ds = generate_shapes(100, 8, 32, 4, seed=5)
    save_dataset(ds, tmp_path / "s.ds")
    assert _digest(load_dataset(tmp_path / "s.ds")) == _digest(ds)
    tones = generate_tones(10, 12, 3, seed=1)
    save_dataset(tones, tmp_path / "t.ds")
    assert _digest(load_dataset(tmp_path / "t.ds")) == _digest(tones)


def test_truncated_file_is_format_error(tmp_path):
    ds = generate_shapes(4, 3, 16, 2, seed=0)
    path = tmp_path / "d.ds"
    save_dataset(ds, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError):
        load_dataset(path)


def test_missing_entry_is_named(tmp_path):
    ds = generate_shapes(2, 3, 16, 2, seed=0)
    src = tmp_path / "d.ds"
    save_dataset(ds, src)
    dst = tmp_path / "broken.ds"
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for item in zin.infolist():
            if item.filename != "arrays/seeds.bin":
                zout.writestr(item, zin.read(item.filename))
    with pytest.raises(FormatError, match="seeds"):
        load_dataset(dst)
