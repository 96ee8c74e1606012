import numpy as np
import pytest
import torch

from stmae.frequency import (
    FrequencyFilterSpec,
    apply_frequency_augmentation,
    highpass_window,
    lowpass_window,
    select_filtered_windows,
)
from stmae.masking import build_patch_grid


def _dft_lowpass_oracle(x: np.ndarray, cutoff: float) -> np.ndarray:
    """Direct O(n^4) DFT sum with an ideal radial mask."""
    h, w = x.shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.sqrt(fy**2 + fx**2)
    keep = radius <= cutoff * radius.max() + 1e-9 * radius.max()
    spectrum = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            for m in range(h):
                for n in range(w):
                    spectrum[u, v] += x[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
    spectrum *= keep
    out = np.zeros((h, w), dtype=complex)
    for m in range(h):
        for n in range(w):
            for u in range(h):
                for v in range(w):
                    out[m, n] += spectrum[u, v] * np.exp(2j * np.pi * (u * m / h + v * n / w))
    return (out / (h * w)).real


class TestLowpass:
    def test_constant_slice_unchanged(self):
        x = torch.full((8, 8), 0.37)
        assert torch.allclose(lowpass_window(x, 0.25), x, atol=1e-6)

    def test_nyquist_checkerboard_collapses_to_mean(self):
        x = torch.zeros(8, 8)
        x[::2, ::2] = 1.0
        x[1::2, 1::2] = 1.0
        out = lowpass_window(x, 0.25)
        assert (out - x.mean()).abs().max() < 1e-5

    def test_matches_direct_dft_sum_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.random((6, 6))
        expected = _dft_lowpass_oracle(x, 0.4)
        got = lowpass_window(torch.from_numpy(x), 0.4).numpy()
        assert np.abs(got - expected).max() < 1e-10

    def test_cutoff_bounds(self):
        for bad in (0.0, 1.0, -0.5, 2.0):
            with pytest.raises(ValueError, match="cutoff"):
                lowpass_window(torch.rand(4, 4), bad)


class TestHighpass:
    def test_constant_slice_goes_to_zero(self):
        x = torch.full((8, 8), 0.9)
        assert highpass_window(x, 0.25).abs().max() < 1e-6

    def test_output_mean_is_zero(self):
        for seed in range(5):
            x = torch.rand(16, 16, generator=torch.Generator().manual_seed(seed))
            assert abs(float(highpass_window(x, 0.3).mean())) < 1e-5


class TestIdentities:
    def test_low_plus_high_is_identity(self):
        for seed in range(10):
            x = torch.rand(3, 2, 16, 16, generator=torch.Generator().manual_seed(seed))
            recon = lowpass_window(x, 0.25) + highpass_window(x, 0.25)
            assert (recon - x).abs().max() < 1e-5

    def test_parseval_energy_split(self):
        # Sum-of-squares oracle: complementary masks have disjoint spectral
        # support, so the energies add exactly.
        for seed in range(10):
            x = torch.rand(12, 12, generator=torch.Generator().manual_seed(seed)).double()
            low = lowpass_window(x, 0.4)
            high = highpass_window(x, 0.4)
            total = float((x**2).sum())
            split = float((low**2).sum() + (high**2).sum())
            assert abs(split - total) / total < 1e-4

    def test_linearity(self):
        gen = torch.Generator().manual_seed(3)
        x = torch.rand(8, 8, generator=gen)
        y = torch.rand(8, 8, generator=gen)
        for filt in (lowpass_window, highpass_window):
            combined = filt(2.5 * x - 1.25 * y, 0.3)
            separate = 2.5 * filt(x, 0.3) - 1.25 * filt(y, 0.3)
            assert (combined - separate).abs().max() < 1e-5

    def test_idempotence(self):
        x = torch.rand(10, 10, generator=torch.Generator().manual_seed(5))
        for filt in (lowpass_window, highpass_window):
            once = filt(x, 0.35)
            twice = filt(once, 0.35)
            assert (twice - once).abs().max() < 1e-5


class TestAugmentation:
    def _grid(self):
        return build_patch_grid((2, 2, 32, 32), 4, 2, (2, 4, 4))

    def test_selection_prob_zero_is_identity(self):
        grid = self._grid()
        x = torch.rand(2, 2, 32, 32)
        out = apply_frequency_augmentation(x, grid, FrequencyFilterSpec(selection_prob=0.0, seed=1))
        assert torch.equal(out, x)

    def test_full_selection_full_band_near_identity(self):
        grid = self._grid()
        x = torch.rand(2, 2, 32, 32)
        spec = FrequencyFilterSpec(cutoff_fraction=1 - 1e-12, selection_prob=1.0, seed=1)
        out = apply_frequency_augmentation(x, grid, spec)
        # Only windows drawn as low-pass keep everything; high-pass windows
        # lose DC, so compare on the low-pass selection.
        for row, col, mode in select_filtered_windows(grid, spec):
            ys, xs = row * 16, col * 16
            window_diff = (out - x)[:, :, ys : ys + 16, xs : xs + 16].abs().max()
            if mode == "low":
                assert window_diff < 1e-5

    def test_modified_windows_match_seed_selection(self):
        # Diff-localization oracle: windows where output != input are
        # exactly the seed-derived selection.
        grid = self._grid()
        x = torch.rand(2, 2, 32, 32)
        spec = FrequencyFilterSpec(selection_prob=0.5, seed=9)
        out = apply_frequency_augmentation(x, grid, spec)
        selected = {(r, c) for r, c, _ in select_filtered_windows(grid, spec)}
        assert len(selected) == 2  # floor(0.5 * 4)
        for row in range(grid.windows_h):
            for col in range(grid.windows_w):
                ys, xs = row * 16, col * 16
                diff = (out - x)[:, :, ys : ys + 16, xs : xs + 16].abs().max()
                if (row, col) in selected:
                    assert diff > 1e-6
                else:
                    assert diff == 0

    def test_exact_window_count_filtered(self):
        grid = build_patch_grid((2, 2, 64, 64), 4, 2, (2, 4, 4))
        spec = FrequencyFilterSpec(selection_prob=0.5, seed=3)
        assert len(select_filtered_windows(grid, spec)) == int(0.5 * grid.num_windows)

    def test_one_mode_per_window_all_frames_and_bands(self):
        grid = self._grid()
        x = torch.rand(2, 2, 32, 32)
        spec = FrequencyFilterSpec(selection_prob=1.0, seed=4)
        out = apply_frequency_augmentation(x, grid, spec)
        for row, col, mode in select_filtered_windows(grid, spec):
            ys, xs = row * 16, col * 16
            slab = x[:, :, ys : ys + 16, xs : xs + 16]
            filt = lowpass_window if mode == "low" else highpass_window
            expected = filt(slab, spec.cutoff_fraction)
            assert torch.allclose(out[:, :, ys : ys + 16, xs : xs + 16], expected, atol=1e-6)

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="selection_prob"):
            FrequencyFilterSpec(selection_prob=1.5).validate()
        with pytest.raises(ValueError, match="cutoff"):
            FrequencyFilterSpec(cutoff_fraction=0.0).validate()
