"""Window-level Fourier filtering used as a pretraining augmentation.

Half of the spatial patch windows (seed-selected) are replaced by ideal
low-pass or high-pass filtered versions of themselves during pretraining;
reconstruction targets are never filtered. Filters are brick-wall radial
masks in the centered 2D spectrum: low keeps radius <= cutoff * R (including
DC) where R is the spectrum's maximum radial frequency (the corner,
sqrt(2) * Nyquist for even square slices), high keeps the complement. The
two masks partition the plane, so low(x) + high(x) == x up to float error,
the energy split is exact, and cutoff -> 1 makes the low-pass an identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from stmae.masking import PatchGrid


@dataclass(frozen=True)
class FrequencyFilterSpec:
    cutoff_fraction: float = 0.25   # of the maximum radial frequency
    selection_prob: float = 0.5     # fraction of windows filtered
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.cutoff_fraction < 1.0:
            raise ValueError(f"cutoff_fraction must be in (0, 1), got {self.cutoff_fraction}")
        if not 0.0 <= self.selection_prob <= 1.0:
            raise ValueError(f"selection_prob must be in [0, 1], got {self.selection_prob}")


def _radial_keep_mask(h: int, w: int, cutoff_fraction: float, low: bool) -> torch.Tensor:
    fy = torch.fft.fftfreq(h).view(h, 1)
    fx = torch.fft.fftfreq(w).view(1, w)
    radius = torch.sqrt(fy * fy + fx * fx)
    r_max = radius.max()
    # Relative slack keeps exact-boundary bins stable under float roundoff
    # and lets cutoff -> 1 converge onto the identity filter.
    keep_low = radius <= cutoff_fraction * r_max + 1e-9 * r_max
    return keep_low if low else ~keep_low


def _filter_slices(window: torch.Tensor, cutoff_fraction: float, low: bool) -> torch.Tensor:
    if not 0.0 < cutoff_fraction < 1.0:
        raise ValueError(f"cutoff must be in (0, 1), got {cutoff_fraction}")
    if window.ndim < 2:
        raise ValueError("window must have at least 2 dims")
    h, w = window.shape[-2], window.shape[-1]
    keep = _radial_keep_mask(h, w, cutoff_fraction, low)
    spectrum = torch.fft.fft2(window.to(torch.promote_types(window.dtype, torch.float32)))
    spectrum = spectrum * keep
    return torch.fft.ifft2(spectrum).real.to(window.dtype)


def lowpass_window(window: torch.Tensor, cutoff_fraction: float) -> torch.Tensor:
    """Zero all coefficients beyond cutoff * Nyquist per trailing 2D slice.

    DC is preserved, so a constant slice passes through unchanged.
    """
    return _filter_slices(window, cutoff_fraction, low=True)


def highpass_window(window: torch.Tensor, cutoff_fraction: float) -> torch.Tensor:
    """Complement of :func:`lowpass_window`; removes DC, keeps high radii."""
    return _filter_slices(window, cutoff_fraction, low=False)


def select_filtered_windows(grid: PatchGrid, spec: FrequencyFilterSpec) -> list[tuple[int, int, str]]:
    """The seed-determined (row, col, mode) selection over spatial windows."""
    spec.validate()
    n = grid.num_windows
    k = int(np.floor(spec.selection_prob * n))
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(n, size=k, replace=False)
    modes = rng.integers(0, 2, size=k)
    out = []
    for idx, mode in zip(chosen.tolist(), modes.tolist()):
        out.append((idx // grid.windows_w, idx % grid.windows_w, "low" if mode == 0 else "high"))
    return out


def apply_frequency_augmentation(
    values: torch.Tensor, grid: PatchGrid, spec: FrequencyFilterSpec
) -> torch.Tensor:
    """Filter floor(selection_prob * num_windows) windows of a [T, C, H, W] tensor.

    Each selected window footprint (w_h*p by w_w*p pixels) is filtered with
    one mode across all frames and bands; unselected windows are returned
    bit-identically. Callers must keep the unfiltered tensor around as the
    reconstruction target.
    """
    if values.shape != (grid.frames, grid.channels, grid.height, grid.width):
        raise ValueError(
            f"values shape {tuple(values.shape)} does not match grid "
            f"[{grid.frames}, {grid.channels}, {grid.height}, {grid.width}]"
        )
    selection = select_filtered_windows(grid, spec)
    if not selection:
        return values
    out = values.clone()
    ph = grid.window[1] * grid.patch_size
    pw = grid.window[2] * grid.patch_size
    for row, col, mode in selection:
        ys, xs = row * ph, col * pw
        slab = values[:, :, ys : ys + ph, xs : xs + pw]
        filt = lowpass_window if mode == "low" else highpass_window
        out[:, :, ys : ys + ph, xs : xs + pw] = filt(slab, spec.cutoff_fraction)
    return out
