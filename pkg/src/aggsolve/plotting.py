"""Log-scale decay plots from trace files."""
from __future__ import annotations

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import ConfigurationError  # noqa: E402
from .metrics import RunTrace  # noqa: E402


def _label(path):
    p = Path(path)
    return f"{p.parent.name}/{p.stem}" if p.parent.name else p.stem


def plot_traces(paths, out_dir, metrics=None, fmt="png", labels=None):
    """One figure per metric with a curve per trace; returns the written files.

    All traces must share the same columns. Metrics with no finite values are
    skipped with a notice on stderr.
    """
    if fmt not in ("png", "svg", "pdf"):
        raise ConfigurationError(f"unsupported image format {fmt!r}")
    traces = [RunTrace.from_csv(p) for p in paths]
    if not traces:
        raise ConfigurationError("no trace files given")
    cols0 = set(traces[0].columns)
    for p, t in zip(paths[1:], traces[1:]):
        cols = set(t.columns)
        if cols != cols0:
            raise ConfigurationError(
                f"{p}: column mismatch; missing {sorted(cols0 - cols)}, extra {sorted(cols - cols0)}")
    names = list(traces[0].columns) if metrics is None else list(metrics)
    unknown = [n for n in names if n not in cols0]
    if unknown:
        raise ConfigurationError(f"metrics {unknown} not in traces (available: {sorted(cols0)})")
    labels = labels or [_label(p) for p in paths]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.rc_context({"svg.hashsalt": "aggsolve", "figure.dpi": 100}):
        for name in names:
            series = [(np.asarray(t.ks, float), t.column(name)) for t in traces]
            if not any(np.any(np.isfinite(v) & (v > 0)) for _, v in series):
                print(f"skipping {name}: no positive finite values", file=sys.stderr)
                continue
            fig, ax = plt.subplots(figsize=(6, 4))
            for (k, v), lab in zip(series, labels):
                keep = np.isfinite(v) & (v > 0)
                ax.plot(k[keep], v[keep], label=lab)
            ax.set_yscale("log")
            if all(np.all(k > 0) for k, _ in series):
                ax.set_xscale("log")
            ax.set_xlabel("iteration k")
            ax.set_ylabel(name)
            ax.grid(True, which="both", alpha=0.3)
            if len(series) > 1:
                ax.legend()
            fig.tight_layout()
            target = out_dir / f"{name}.{fmt}"
            meta = {"Date": None} if fmt == "svg" else ({"Software": None} if fmt == "png" else {})
            fig.savefig(target, metadata=meta)
            plt.close(fig)
            written.append(target)
    return written
