import numpy as np
import pytest

from cidc.data import (
    ClipRecord,
    FILE_MAGIC,
    gen_synthetic_clip,
    make_dataset,
    read_clip_file,
    square_centers,
    write_clip_file,
)
from cidc.errors import ArgumentError

RNG = np.random.default_rng


class TestGenerator:
    def test_shape_label_and_range(self):
        for cls in range(4):
            rec = gen_synthetic_clip(cls, RNG(cls))
            assert rec.clip.shape == (1, 8, 36, 36)
            assert rec.label == cls
            assert rec.clip.min() >= 0.0 and rec.clip.max() <= 1.0

    def test_square_is_bright_and_noise_is_faint(self):
        rec = gen_synthetic_clip(0, RNG(1))
        frame = rec.clip[0, 0]
        centers = square_centers(0)
        r, c = centers[0]
        # 4x4 block around the center is saturated (noise pushed it to 1.0).
        block = frame[int(r - 1.5) : int(r + 2.5), int(c - 1.5) : int(c + 2.5)]
        assert np.all(block == 1.0)
        off = frame[:, 10:]  # far from the square at t=0
        assert np.all(off <= 0.05)

    def test_class1_is_reversed_motion(self):
        # The trajectory of class 1 runs right-to-left: compare column means
        # of first and last frame.
        rec = gen_synthetic_clip(1, RNG(2))
        first_cols = rec.clip[0, 0].sum(axis=0)
        last_cols = rec.clip[0, -1].sum(axis=0)
        assert first_cols[-4:].sum() > first_cols[:4].sum()
        assert last_cols[:4].sum() > last_cols[-4:].sum()

    def test_flip_of_class0_has_class1_trajectory(self):
        rng = RNG(3)
        rec0 = gen_synthetic_clip(0, rng)
        flipped = rec0.clip[:, ::-1]
        centers1 = square_centers(1)
        # Brightest 4x4 block of each flipped frame sits at class 1's center.
        for t in range(8):
            frame = flipped[0, t]
            r, c = centers1[t]
            block = frame[int(r - 1.5) : int(r + 2.5), int(c - 1.5) : int(c + 2.5)]
            assert np.all(block == 1.0)

    def test_vertical_classes_move_along_rows(self):
        rec = gen_synthetic_clip(2, RNG(4))
        first_rows = rec.clip[0, 0].sum(axis=1)
        last_rows = rec.clip[0, -1].sum(axis=1)
        assert first_rows[:4].sum() > first_rows[-4:].sum()
        assert last_rows[-4:].sum() > last_rows[:4].sum()

    def test_reversal_class_is_exact_temporal_flip(self):
        # With identical random draws, a class-1 clip is the frame-reversed
        # class-0 clip, bit for bit (same for 3 vs 2).
        for fwd, rev in [(0, 1), (2, 3)]:
            a = gen_synthetic_clip(fwd, RNG(42)).clip
            b = gen_synthetic_clip(rev, RNG(42)).clip
            assert np.array_equal(b, a[:, ::-1])

    def test_reversal_pair_frame_multisets_match(self):
        a = gen_synthetic_clip(0, RNG(9)).clip[0]
        b = gen_synthetic_clip(1, RNG(9)).clip[0]
        key = lambda fr: fr.tobytes()
        assert sorted(map(key, a)) == sorted(map(key, b))

    @pytest.mark.parametrize("cls,t,size", [(4, 8, 36), (-1, 8, 36), (0, 1, 36), (0, 8, 4)])
    def test_argument_validation(self, cls, t, size):
        with pytest.raises(ArgumentError):
            gen_synthetic_clip(cls, RNG(0), t, size)


class TestSquareCenters:
    def test_traversal_endpoints(self):
        centers = square_centers(0)
        assert centers.shape == (8, 2)
        assert centers[0][1] == pytest.approx(1.5)    # leading edge at col 0
        assert centers[-1][1] == pytest.approx(33.5)  # leading edge at col 32
        assert np.all(centers[:, 0] == 17.5)          # fixed row band

    def test_reversal_classes_flip_order(self):
        assert np.array_equal(square_centers(1), square_centers(0)[::-1])
        assert np.array_equal(square_centers(3), square_centers(2)[::-1])

    def test_vertical_swaps_axes(self):
        c0, c2 = square_centers(0), square_centers(2)
        assert np.array_equal(c2, c0[:, ::-1])


class TestMakeDataset:
    def test_balanced_cycling_labels(self):
        clips, labels = make_dataset(8, RNG(5))
        assert clips.shape == (8, 1, 8, 36, 36)
        assert np.array_equal(labels, [0, 1, 2, 3, 0, 1, 2, 3])

    def test_deterministic_given_seed(self):
        a, _ = make_dataset(4, RNG(6))
        b, _ = make_dataset(4, RNG(6))
        assert np.array_equal(a, b)

    @pytest.mark.parametrize("n", [0, 3, 6, -4])
    def test_size_must_be_multiple_of_classes(self, n):
        with pytest.raises(ArgumentError):
            make_dataset(n, RNG(0))


class TestClipFile:
    def test_roundtrip(self, tmp_path):
        rng = RNG(7)
        records = [gen_synthetic_clip(i % 4, rng) for i in range(5)]
        path = tmp_path / "clips.bin"
        write_clip_file(path, records)
        back = read_clip_file(path)
        assert len(back) == 5
        for orig, got in zip(records, back):
            assert got.label == orig.label
            assert got.clip.shape == orig.clip.shape
            # float32 on disk: exact to single precision
            assert np.allclose(got.clip, orig.clip, atol=1e-7)

    def test_header_layout(self, tmp_path):
        rec = ClipRecord(np.zeros((1, 2, 3, 3)), 2)
        path = tmp_path / "one.bin"
        write_clip_file(path, [rec])
        blob = path.read_bytes()
        assert blob[:4] == FILE_MAGIC
        assert blob[4] == 1  # version
        assert blob[5:21] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little") + (3).to_bytes(4, "little") * 2
        assert blob[21] == 2  # label byte
        assert len(blob) == 22 + 4 * 18

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"JUNKxxxx")
        with pytest.raises(ArgumentError):
            read_clip_file(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "cut.bin"
        write_clip_file(path, [ClipRecord(np.zeros((1, 2, 3, 3)), 0)])
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])
        with pytest.raises(ArgumentError):
            read_clip_file(path)

    def test_empty_file_list_roundtrip(self, tmp_path):
        path = tmp_path / "empty.bin"
        write_clip_file(path, [])
        assert read_clip_file(path) == []
