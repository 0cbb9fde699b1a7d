import numpy as np
import pytest

from tlfuture.config import SynthConfig
from tlfuture.dataio import (DatasetError, decode_pnm, encode_pnm, load_real_archive, read_collection, read_dataset,
                             write_collection, write_dataset)
from tlfuture.synth import VideoSequence, synth_collection, synth_sequence


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_p6_header_bytes():
    blob = encode_pnm(np.zeros((64, 64, 3), np.uint8))
    assert blob.startswith(b"P6\n64 64\n255\n")
    assert len(blob) == len(b"P6\n64 64\n255\n") + 64 * 64 * 3


def test_p5_non_square_header_is_width_first():
    assert encode_pnm(np.zeros((3, 5), np.uint8)).startswith(b"P5\n5 3\n255\n")


def test_pnm_round_trip_and_comments():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (7, 5, 3), dtype=np.uint8)
    np.testing.assert_array_equal(decode_pnm(encode_pnm(img)), img)
    raw = rng.integers(0, 4, (3, 4), dtype=np.uint8)
    commented = b"P5\n# made by hand\n4 3\n255\n" + raw.tobytes()
    np.testing.assert_array_equal(decode_pnm(commented), raw)


@pytest.mark.parametrize("blob", [b"P3\n1 1\n255\n\x00\x00\x00", b"P5\n2 2\n65535\n" + bytes(8),
                                  b"P5\n2 2\n255\n\x00", b"P5\n2"])
def test_pnm_rejects_malformed(blob):
    with pytest.raises(DatasetError):
        decode_pnm(blob)


def test_sequence_round_trip_is_bit_exact(tmp_path):
    seq = synth_sequence(SynthConfig(seed=1, steps=5))
    write_dataset(seq, tmp_path / "a")
    back = read_dataset(tmp_path / "a")
    np.testing.assert_array_equal(back.frames, seq.frames)
    np.testing.assert_array_equal(back.masks, seq.masks)
    np.testing.assert_array_equal(back.irradiance, seq.irradiance)
    np.testing.assert_array_equal(back.timestamps, seq.timestamps)
    write_dataset(back, tmp_path / "b")
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    meta = (tmp_path / "a" / "meta.csv").read_text().splitlines()
    assert meta[0] == "index,timestamp_min,irradiance" and len(meta) == 6


def test_collection_round_trip(tmp_path):
    seqs = synth_collection(SynthConfig(seed=2, steps=3, frame_size=16, radius=3.0, sun_radius=2.0,
                                        sun_arc_radius=5.0), 3)
    write_collection(seqs, tmp_path)
    back = read_collection(tmp_path)
    assert len(back) == 3
    for a, b in zip(seqs, back):
        np.testing.assert_array_equal(a.masks, b.masks)


def test_mask_value_out_of_range(tmp_path):
    seq = synth_sequence(SynthConfig(seed=3, steps=2))
    write_dataset(seq, tmp_path)
    bad = seq.masks[1].copy()
    bad[0, 0] = 9
    (tmp_path / "mask_00001.pgm").write_bytes(encode_pnm(bad))
    with pytest.raises(DatasetError, match="outside"):
        read_dataset(tmp_path)


def test_meta_row_count_mismatch(tmp_path):
    write_dataset(synth_sequence(SynthConfig(seed=4, steps=3)), tmp_path)
    meta = tmp_path / "meta.csv"
    meta.write_text("\n".join(meta.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(DatasetError, match="rows"):
        read_dataset(tmp_path)


def test_wrong_magic_for_frame(tmp_path):
    seq = synth_sequence(SynthConfig(seed=5, steps=2))
    write_dataset(seq, tmp_path)
    (tmp_path / "frame_00000.ppm").write_bytes(encode_pnm(seq.masks[0]))
    with pytest.raises(DatasetError, match="magic"):
        read_dataset(tmp_path)


def _day(root, name, minutes, seed=0):
    n = len(minutes)
    base = synth_sequence(SynthConfig(seed=seed, steps=n, frame_size=16, radius=3.0, sun_radius=2.0,
                                      sun_arc_radius=5.0))
    seq = VideoSequence(base.frames, base.masks, base.irradiance * 1000.0, np.arange(n) * 10)
    write_dataset(seq, root / name)
    meta = root / name / "meta.csv"
    rows = meta.read_text().splitlines()
    out = [rows[0]] + [f"{i},{m},{r.split(',')[2]}" for i, (m, r) in enumerate(zip(minutes, rows[1:]))]
    meta.write_text("\n".join(out) + "\n")
    return seq


def test_archive_empty_or_missing_directory(tmp_path):
    assert list(load_real_archive(tmp_path)) == []
    assert list(load_real_archive(tmp_path / "nowhere")) == []


def test_archive_13_frames_gives_two_windows(tmp_path):
    seq = _day(tmp_path, "2011-07-04", list(range(600, 730, 10)))
    wins = list(load_real_archive(tmp_path, look_back=6))
    assert [w.start for w in wins] == [0, 1]
    assert all(len(w.sequence) == 12 and w.split == "train" for w in wins)
    np.testing.assert_array_equal(wins[1].sequence.masks, seq.masks[1:13])
    np.testing.assert_allclose(wins[0].sequence.irradiance, seq.irradiance[:12] / 1000.0, rtol=0, atol=1e-15)


def test_archive_windows_never_straddle_a_gap(tmp_path):
    minutes = list(range(600, 720, 10)) + list(range(725, 845, 10))  # one 15-minute gap
    _day(tmp_path, "2013-01-02", minutes)
    wins = list(load_real_archive(tmp_path, look_back=6))
    assert [w.start for w in wins] == [0, 12]
    for w in wins:
        assert np.all(np.diff(w.sequence.timestamps) == 10)
        assert w.split == "test"


def test_archive_daylight_filter(tmp_path):
    _day(tmp_path, "2012-03-03", list(range(600, 730, 10)))
    meta = tmp_path / "2012-03-03" / "meta.csv"
    rows = meta.read_text().splitlines()
    rows[1] = "0,600,0.0"  # night-time reading in the first frame only
    meta.write_text("\n".join(rows) + "\n")
    assert [w.start for w in load_real_archive(tmp_path, daylight_filter=True)] == [1]
    assert len(list(load_real_archive(tmp_path))) == 2


def test_archive_errors(tmp_path):
    _day(tmp_path / "a", "2011-01-01", list(range(600, 730, 10)))
    (tmp_path / "a" / "2011-01-01" / "mask_00004.pgm").unlink()
    with pytest.raises(DatasetError, match="missing mask"):
        list(load_real_archive(tmp_path / "a"))
    _day(tmp_path / "b", "2011-01-02", [600, 610, 605, 620])
    with pytest.raises(DatasetError, match="increasing"):
        list(load_real_archive(tmp_path / "b"))
