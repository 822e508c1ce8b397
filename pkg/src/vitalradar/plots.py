"""Figure rendering for the report path; PNGs land next to the CSV outputs."""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .scene import BR_BAND_HZ, HR_BAND_HZ

_DPI = 110


def save_range_azimuth_map(path, grid, derived, ra_map, estimates=()):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    v = ra_map.di_variance
    ranges = np.arange(v.shape[1]) * derived.range_bin_m
    mesh = ax.pcolormesh(ranges, grid.angles_deg, v, shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="DI variance (rad$^2$)")
    for e in estimates:
        ax.plot(e.range_m, e.azimuth_deg, "rx", markersize=9, markeredgewidth=2)
        ax.annotate(f"S{e.subject_id}", (e.range_m, e.azimuth_deg),
                    textcoords="offset points", xytext=(6, 4), color="w", fontsize=9)
    ax.set_xlabel("range (m)")
    ax.set_ylabel("azimuth (deg)")
    ax.set_title("Range-azimuth DI variance")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_phase(path, estimate, fs):
    phase = estimate.phase
    t = np.arange(len(phase.unwrapped)) / fs
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t, phase.unwrapped, lw=0.8)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("phase (rad)")
    ax.set_title(f"Subject {estimate.subject_id}: unwrapped phase "
                 f"(bin r={estimate.range_bin}, az={estimate.azimuth_deg:.0f}$^\\circ$)")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_modes(path, estimate, fs):
    result = estimate.vmd
    k = result.modes.shape[0]
    t = np.arange(result.modes.shape[1]) / fs
    fig, axes = plt.subplots(k, 1, figsize=(7, 1.7 * k), sharex=True)
    for i, ax in enumerate(np.atleast_1d(axes)):
        ax.plot(t, result.modes[i], lw=0.7)
        ax.set_ylabel(f"u{i + 1}")
        ax.annotate(f"{result.center_freqs_hz[i]:.2f} Hz", xy=(0.99, 0.85),
                    xycoords="axes fraction", ha="right", fontsize=8)
        ax.grid(alpha=0.3)
    np.atleast_1d(axes)[-1].set_xlabel("time (s)")
    fig.suptitle(f"Subject {estimate.subject_id}: VMD modes")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_spectra(path, estimate, fs):
    asg = estimate.assignment
    fig, axes = plt.subplots(1, 2, figsize=(9, 3))
    for ax, sig, band, title, est in (
            (axes[0], asg.x_br, BR_BAND_HZ, "breathing mode",
             estimate.br_brpm / 60.0),
            (axes[1], asg.x_hr, HR_BAND_HZ, "heartbeat mode",
             estimate.hr_bpm / 60.0)):
        freqs = np.fft.rfftfreq(len(sig), 1.0 / fs)
        spec = np.abs(np.fft.rfft(sig - sig.mean()))
        ax.plot(freqs, spec, lw=0.8)
        ax.axvspan(band[0], band[1], color="g", alpha=0.12)
        ax.axvline(est, color="r", ls="--", lw=1, label=f"estimate {est * 60:.1f}/min")
        ax.set_xlim(0, min(fs / 2, 3.0))
        ax.set_xlabel("frequency (Hz)")
        ax.set_title(title)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    axes[0].set_ylabel("|FFT|")
    fig.suptitle(f"Subject {estimate.subject_id}: mode spectra")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_run(out_dir, grid, derived, ra_map, estimates, fs):
    """All report figures for one pipeline run."""
    save_range_azimuth_map(os.path.join(out_dir, "range_azimuth_map.png"),
                           grid, derived, ra_map, estimates)
    for e in estimates:
        save_phase(os.path.join(out_dir, f"phase_{e.subject_id}.png"), e, fs)
        save_modes(os.path.join(out_dir, f"modes_{e.subject_id}.png"), e, fs)
        save_spectra(os.path.join(out_dir, f"spectra_{e.subject_id}.png"), e, fs)
