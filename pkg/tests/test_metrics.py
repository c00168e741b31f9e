import numpy as np
import pytest

from asnpp.metrics import RdCurve, RdPoint, bd_rate, delta_psnr_report, psnr


def curve(rates, psnrs) -> RdCurve:
    return RdCurve([RdPoint(r, p) for r, p in zip(rates, psnrs)])


class TestPsnr:
    def test_identical_capped(self):
        a = np.full((32, 32), 7, np.uint8)
        assert psnr(a, a) == 100.0

    def test_off_by_one_everywhere(self):
        a = np.zeros((64, 64), np.uint8)
        b = a + 1
        assert psnr(a, b) == pytest.approx(10 * np.log10(255**2), abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = rng.integers(0, 256, (16, 16), np.uint8)
        b = rng.integers(0, 256, (16, 16), np.uint8)
        assert psnr(a, b) == psnr(b, a)

    def test_strictly_decreasing_in_mse(self):
        base = np.zeros((64, 64), np.uint8)
        values = [psnr(base, np.full_like(base, k)) for k in (1, 2, 4, 9)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestDeltaReport:
    def test_processed_equals_baseline(self):
        frames = [np.full((8, 8), v, np.uint8) for v in (10, 200)]
        deltas, mean = delta_psnr_report(frames, frames, frames)
        assert deltas == [0.0, 0.0] and mean == 0.0

    def test_processed_equals_original(self):
        orig = [np.zeros((8, 8), np.uint8)]
        base = [np.full((8, 8), 3, np.uint8)]
        deltas, _ = delta_psnr_report(base, orig, orig)
        assert deltas[0] == pytest.approx(100.0 - psnr(base[0], orig[0]))

    def test_matches_recomputation(self):
        rng = np.random.default_rng(1)
        orig = [rng.integers(0, 256, (16, 16), np.uint8) for _ in range(3)]
        base = [np.clip(o + rng.integers(-9, 10, o.shape), 0, 255).astype(np.uint8) for o in orig]
        proc = [np.clip(o + rng.integers(-4, 5, o.shape), 0, 255).astype(np.uint8) for o in orig]
        deltas, mean = delta_psnr_report(base, proc, orig)
        expect = [psnr(p, o) - psnr(b, o) for b, p, o in zip(base, proc, orig)]
        assert deltas == pytest.approx(expect)
        assert mean == pytest.approx(np.mean(expect))


class TestBdRate:
    RATES = (1e5, 2e5, 4e5, 8e5)
    PSNRS = (30.0, 33.0, 36.5, 40.0)

    def test_identical_curves_zero(self):
        a = curve(self.RATES, self.PSNRS)
        b = curve(self.RATES, self.PSNRS)
        assert abs(bd_rate(a, b)) <= 1e-9

    def test_ten_percent_rate_saving(self):
        a = curve(self.RATES, self.PSNRS)
        b = curve([r * 0.9 for r in self.RATES], self.PSNRS)
        assert bd_rate(a, b) == pytest.approx(-10.0, abs=0.01)

    def test_matches_trapezoid_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            p_a = np.sort(rng.uniform(28, 42, 4))
            p_a[1:] += 0.2  # keep nodes separated
            p_b = p_a + rng.uniform(-0.5, 0.5, 4)
            r_a = np.sort(rng.uniform(1e4, 1e6, 4))
            r_b = r_a * rng.uniform(0.7, 1.3, 4)
            r_b.sort()
            a, b = curve(r_a, p_a), curve(r_b, p_b)
            got = bd_rate(a, b)

            # independent route: fine trapezoid integration of the two fits
            fa = np.polyfit(p_a, np.log10(r_a), 3)
            fb = np.polyfit(p_b, np.log10(r_b), 3)
            lo = max(p_a.min(), p_b.min())
            hi = min(p_a.max(), p_b.max())
            xs = np.linspace(lo, hi, 1 << 20)
            avg = np.trapezoid(np.polyval(fb, xs) - np.polyval(fa, xs), xs) / (hi - lo)
            oracle = (10.0**avg - 1.0) * 100.0
            assert got == pytest.approx(oracle, rel=1e-6, abs=1e-6)

    def test_antisymmetry_relation(self):
        a = curve(self.RATES, self.PSNRS)
        b = curve([r * 1.17 for r in self.RATES], [p + 0.3 for p in self.PSNRS])
        ab, ba = bd_rate(a, b), bd_rate(b, a)
        assert ab == pytest.approx(-ba / (1 + ba / 100.0), abs=1e-9)

    def test_common_rate_scale_invariance(self):
        a = curve(self.RATES, self.PSNRS)
        b = curve([r * 0.85 for r in self.RATES], [p + 0.2 for p in self.PSNRS])
        ref = bd_rate(a, b)
        a2 = curve([r * 37.5 for r in self.RATES], self.PSNRS)
        b2 = curve([r * 37.5 * 0.85 for r in self.RATES], [p + 0.2 for p in self.PSNRS])
        assert bd_rate(a2, b2) == pytest.approx(ref, abs=1e-9)

    def test_requires_four_points(self):
        with pytest.raises(ValueError):
            bd_rate(curve(self.RATES[:3], self.PSNRS[:3]), curve(self.RATES, self.PSNRS))

    def test_rejects_disjoint_psnr_ranges(self):
        a = curve(self.RATES, (20.0, 21.0, 22.0, 23.0))
        b = curve(self.RATES, (30.0, 31.0, 32.0, 33.0))
        with pytest.raises(ValueError):
            bd_rate(a, b)

    def test_rejects_non_monotone_rates(self):
        with pytest.raises(ValueError):
            curve((2e5, 1e5, 4e5, 8e5), self.PSNRS)
