"""Filter inspection exports: per-filter responses, cumulative response, band tables
and convergence comparisons."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import filterbank as fb
from .checkpoint import load_checkpoint
from .nn import Conv1d, SincConv

log = logging.getLogger(__name__)

DB_FLOOR = -120.0
_MAG_FLOOR = 10.0 ** (DB_FLOOR / 20.0)

# FER after convergence on the full-size benchmark, kept for reference only
REFERENCE_FER = {"sinc": 33.0, "cnn": 37.7}


def to_db(magnitude):
    return 20.0 * np.log10(np.maximum(magnitude, _MAG_FLOOR))


def _fmt(x):
    return repr(float(x))


@dataclass
class BandSummary:
    index: int
    f1_hz: float
    f2_hz: float

    @property
    def center_hz(self):
        return 0.5 * (self.f1_hz + self.f2_hz)

    @property
    def bandwidth_hz(self):
        return self.f2_hz - self.f1_hz


def _network(source):
    if isinstance(source, (str, Path)):
        return load_checkpoint(source)[0]
    return source


def first_layer_taps(network):
    """``(taps (F, L), sample_rate, layer)`` of the first convolution."""
    layer = network.first_layer()
    if isinstance(layer, SincConv):
        return np.array(layer.bank().taps), layer.sample_rate, layer
    if isinstance(layer, Conv1d):
        return layer.params["weight"][:, 0, :].astype(np.float64), float(network.config.sample_rate), layer
    raise TypeError(f"unsupported first layer {layer!r}")


def band_summaries(network):
    """Band table of a sinc first layer sorted by center frequency; warns above Nyquist."""
    layer = network.first_layer()
    if not isinstance(layer, SincConv):
        return []
    f1, f2 = layer.cutoffs().absolute()
    bands = [BandSummary(k, f1[k] * layer.sample_rate, f2[k] * layer.sample_rate) for k in range(len(f1))]
    for b, hi in zip(bands, f2):
        if hi > 0.5:
            log.warning("filter %d has f2 = %.1f Hz above the Nyquist frequency", b.index, b.f2_hz)
    return sorted(bands, key=lambda b: (b.center_hz, b.index))


def write_bands(path, bands, sample_rate):
    with open(path, "w") as fh:
        fh.write("filter,f1_hz,f2_hz,center_hz,bandwidth_hz,above_nyquist\n")
        for b in bands:
            above = int(b.f2_hz > sample_rate / 2.0)
            fh.write(f"{b.index},{_fmt(b.f1_hz)},{_fmt(b.f2_hz)},{_fmt(b.center_hz)},"
                     f"{_fmt(b.bandwidth_hz)},{above}\n")


def export_filters(source, out_dir, n_fft=4096):
    """Write ``filterNNN_taps.csv`` and ``filterNNN_response.csv`` per filter plus
    ``cumulative_response.csv`` and ``bands.csv``; returns the list of files."""
    network = _network(source)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    taps, fs, _ = first_layer_taps(network)
    mags = fb.frequency_response(taps, n_fft)
    freqs = fb.response_freqs_hz(n_fft, fs)
    written = []
    for k in range(taps.shape[0]):
        path = out_dir / f"filter{k:03d}_taps.csv"
        with open(path, "w") as fh:
            fh.write("tap_index,value\n")
            fh.writelines(f"{i},{_fmt(v)}\n" for i, v in enumerate(taps[k]))
        written.append(path)
        path = out_dir / f"filter{k:03d}_response.csv"
        with open(path, "w") as fh:
            fh.write("freq_hz,magnitude_db\n")
            fh.writelines(f"{_fmt(f)},{_fmt(d)}\n" for f, d in zip(freqs, to_db(mags[k])))
        written.append(path)
    written.extend(cumulative_report(network, out_dir, n_fft)[3])
    return written


def cumulative_report(source, out_dir=None, n_fft=4096):
    """Cumulative first-layer response and band table.

    Returns ``(freqs_hz, cumulative, bands, files)``. Per-filter magnitudes are
    floored at the -120 dB export clamp before summing so the cumulative file
    is the exact sum of the exported per-filter responses.
    """
    network = _network(source)
    taps, fs, _ = first_layer_taps(network)
    mags = np.maximum(fb.frequency_response(taps, n_fft), _MAG_FLOOR)
    cumulative = mags.sum(axis=0)
    freqs = fb.response_freqs_hz(n_fft, fs)
    bands = band_summaries(network)
    files = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "cumulative_response.csv"
        peak = cumulative.max()
        with open(path, "w") as fh:
            fh.write("freq_hz,magnitude,magnitude_norm,magnitude_db\n")
            fh.writelines(f"{_fmt(f)},{_fmt(m)},{_fmt(m / peak)},{_fmt(d)}\n"
                          for f, m, d in zip(freqs, cumulative, to_db(cumulative)))
        files.append(path)
        if bands:
            path = out_dir / "bands.csv"
            write_bands(path, bands, fs)
            files.append(path)
    return freqs, cumulative, bands, files


def band_masses(freqs, cumulative, width_hz=500.0):
    """Summed cumulative magnitude in consecutive ``[lo, lo + width)`` bands below Nyquist."""
    freqs = np.asarray(freqs)
    top = freqs[-1]
    out = []
    lo = 0.0
    while lo + width_hz <= top + 1e-9:
        sel = (freqs >= lo) & (freqs < lo + width_hz)
        out.append((lo, lo + width_hz, float(np.sum(cumulative[sel]))))
        lo += width_hz
    return out


def low_band_dominates(freqs, cumulative, width_hz=500.0):
    """True when the first band carries more mass than every higher band."""
    masses = [m for _, _, m in band_masses(freqs, cumulative, width_hz)]
    return all(masses[0] > m for m in masses[1:])


def _fer_column(logs):
    return [e.eval_fer if e.eval_fer is not None else e.train_fer for e in logs]


def compare_convergence(log_sinc, log_cnn, out_path=None):
    """Align two training logs by epoch; returns ``(rows, summary)``.

    FER is the held-out FER when the log has it, else the training FER.
    """
    if not log_sinc or not log_cnn:
        raise ValueError("both logs must be non-empty")
    sinc = dict(zip((e.epoch for e in log_sinc), _fer_column(log_sinc)))
    cnn = dict(zip((e.epoch for e in log_cnn), _fer_column(log_cnn)))
    epochs = sorted(set(sinc) & set(cnn))
    rows = [(e, sinc[e], cnn[e]) for e in epochs]
    final = epochs[-1]
    summary = {
        "epochs": len(epochs),
        "final_epoch": final,
        "final_fer_sinc": sinc[final],
        "final_fer_cnn": cnn[final],
        "final_difference": sinc[final] - cnn[final],
        "reference_fer_sinc": REFERENCE_FER["sinc"],
        "reference_fer_cnn": REFERENCE_FER["cnn"],
    }
    if out_path is not None:
        with open(out_path, "w") as fh:
            fh.write("epoch,fer_sinc,fer_cnn\n")
            fh.writelines(f"{e},{s:.4f},{c:.4f}\n" for e, s, c in rows)
    return rows, summary
