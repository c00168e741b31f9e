import numpy as np
import pytest

from asnpp.codec import (
    FramePlane,
    PartitionMap,
    QpConfig,
    RateEstimate,
    encode_decode,
    partition_frame,
)
from asnpp.dataset import toy_frames
from asnpp.frameio import read_partition, read_pgm, write_partition, write_pgm
from asnpp.metrics import psnr


def quadrant_frame() -> FramePlane:
    f = np.zeros((64, 64), np.uint8)
    f[:32, 32:] = 85
    f[32:, :32] = 170
    f[32:, 32:] = 255
    return FramePlane.from_array(f)


class TestTypes:
    def test_frame_plane_validation(self):
        with pytest.raises(ValueError):
            FramePlane(4, 4, np.zeros((4, 4), np.uint8))
        with pytest.raises(ValueError):
            FramePlane(16, 8, np.zeros((16, 16), np.uint8))

    def test_qp_step_mapping(self):
        assert QpConfig(4).quant_step == pytest.approx(1.0)
        assert QpConfig(10).quant_step == pytest.approx(2.0)
        assert QpConfig(37).quant_step == pytest.approx(2 ** (33 / 6))
        with pytest.raises(ValueError):
            QpConfig(52)

    def test_rate_total(self):
        r = RateEstimate(payload_bits=10.5, signaling_bits=3)
        assert r.total_bits == 13.5


class TestPartition:
    def test_constant_frame_single_block(self):
        f = FramePlane.from_array(np.full((64, 64), 7, np.uint8))
        pm = partition_frame(f, 10.0)
        assert pm.blocks == [(0, 0, 64)]

    def test_quadrants_split_once(self):
        pm = partition_frame(quadrant_frame(), 10.0)
        assert sorted(pm.blocks) == [(0, 0, 32), (0, 32, 32), (32, 0, 32), (32, 32, 32)]
        # oracle: per-quadrant variance is zero, top-level variance is huge
        top_var = quadrant_frame().samples.astype(np.float64).var()
        assert top_var > 10.0

    def test_infinite_threshold_never_splits(self):
        f = FramePlane.from_array(
            np.random.default_rng(0).integers(0, 256, (128, 192), np.uint8)
        )
        pm = partition_frame(f, np.inf)
        assert all(size == 64 for _, _, size in pm.blocks)
        assert len(pm.blocks) == (128 // 64) * (192 // 64)

    def test_rejects_non_multiple_dims(self):
        with pytest.raises(ValueError, match="multiples of 64"):
            partition_frame(FramePlane.from_array(np.zeros((96, 64), np.uint8)))

    def test_tiling_invariant(self):
        for i, frame in enumerate(toy_frames(4, 128, 192, seed=11)):
            pm = partition_frame(frame, 100.0)
            pm.validate()
            area = sum(s * s for _, _, s in pm.blocks)
            assert area == frame.width * frame.height

    def test_validate_catches_bad_maps(self):
        with pytest.raises(ValueError):
            PartitionMap(64, 64, [(0, 0, 32)]).validate()
        with pytest.raises(ValueError):
            PartitionMap(64, 64, [(0, 0, 64), (0, 0, 64)]).validate()
        with pytest.raises(ValueError):
            PartitionMap(64, 64, [(0, 0, 48), (48, 0, 16)]).validate()


class TestEncodeDecode:
    def test_near_lossless_at_step_one(self):
        # quant_step == 1 at qp 4: only rounding error survives
        for seed in range(5):
            f = FramePlane.from_array(
                np.random.default_rng(seed).integers(0, 256, (64, 64), np.uint8)
            )
            decoded, _, _ = encode_decode(f, QpConfig(4))
            assert psnr(decoded, f) >= 48.0

    def test_constant_frames_exact(self):
        for qp in (22, 27, 32, 37):
            for value in (0, 1, 64, 128, 200, 255):
                f = FramePlane.from_array(np.full((64, 64), value, np.uint8))
                decoded, _, _ = encode_decode(f, QpConfig(qp))
                assert np.array_equal(decoded.samples, f.samples), (qp, value)

    def test_rate_monotone_in_qp(self):
        frames = toy_frames(4, 128, 128, seed=3)
        total22 = sum(encode_decode(f, QpConfig(22))[2].total_bits for f in frames)
        total37 = sum(encode_decode(f, QpConfig(37))[2].total_bits for f in frames)
        assert total22 > total37

    def test_distortion_monotone_in_qp(self):
        frames = toy_frames(4, 128, 128, seed=4)
        mse = {}
        for qp in (22, 37):
            errs = []
            for f in frames:
                decoded, _, _ = encode_decode(f, QpConfig(qp))
                errs.append(
                    np.mean(
                        (decoded.samples.astype(np.float64) - f.samples.astype(np.float64))
                        ** 2
                    )
                )
            mse[qp] = np.mean(errs)
        assert mse[22] <= mse[37]

    def test_deterministic(self):
        f = toy_frames(1, 128, 128, seed=5)[0]
        a = encode_decode(f, QpConfig(32))
        b = encode_decode(f, QpConfig(32))
        assert np.array_equal(a[0].samples, b[0].samples)
        assert a[1].blocks == b[1].blocks
        assert a[2].total_bits == b[2].total_bits

    def test_output_range_and_partition(self):
        f = toy_frames(1, 128, 128, seed=6)[0]
        decoded, pm, rate = encode_decode(f, QpConfig(45))
        pm.validate()
        assert decoded.samples.dtype == np.uint8
        assert rate.payload_bits >= 0 and rate.signaling_bits >= 1

    def test_signaling_bits_counts_decisions(self):
        const = FramePlane.from_array(np.full((64, 64), 9, np.uint8))
        assert encode_decode(const, QpConfig(37))[2].signaling_bits == 1
        # one split into four 32x32 leaves: root bit + 4 leaf bits
        _, _, rate = encode_decode(quadrant_frame(), QpConfig(37), split_threshold=10.0)
        assert rate.signaling_bits == 5


class TestFrameIo:
    def test_pgm_roundtrip(self, tmp_path):
        f = toy_frames(1, 128, 64, seed=8)[0]
        path = tmp_path / "f.pgm"
        write_pgm(path, f)
        g = read_pgm(path)
        assert (g.width, g.height) == (f.width, f.height)
        assert np.array_equal(g.samples, f.samples)

    def test_partition_roundtrip(self, tmp_path):
        pm = partition_frame(quadrant_frame(), 10.0)
        path = tmp_path / "p.txt"
        write_partition(path, pm)
        back = read_partition(path)
        assert back.blocks == pm.blocks
        assert (back.frame_width, back.frame_height) == (64, 64)

    def test_read_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6 2 2 255 junk")
        with pytest.raises(ValueError):
            read_pgm(path)
