"""SVG renderings of result tables and grayscale spectrogram images."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import InvalidConfig, IoFailure  # noqa: E402
from .io import write_table  # noqa: E402

PLOT_KINDS = ("roc", "froc", "hist", "ccdf", "spectrogram-image")


def grayscale_window(dbm, lo: float = -90.0, hi: float = -50.0) -> np.ndarray:
    """Clamp to [lo, hi] dBm then map linearly to [0, 1] (black to white)."""
    if not hi > lo:
        raise InvalidConfig("window needs hi > lo")
    v = np.asarray(dbm, dtype=np.float64)
    return (np.clip(v, lo, hi) - lo) / (hi - lo)


def to_gray8(intensity: np.ndarray) -> np.ndarray:
    return np.floor(np.asarray(intensity) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, gray8: np.ndarray) -> None:
    g = np.asarray(gray8, dtype=np.uint8)
    head = f"P5\n{g.shape[1]} {g.shape[0]}\n255\n".encode()
    try:
        Path(path).write_bytes(head + g.tobytes())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


@dataclass
class PlotOutput:
    image: Path
    table: Path | None
    series: dict[str, tuple[np.ndarray, np.ndarray]]
    xlim: tuple[float, float]
    ylim: tuple[float, float]


def _save(fig, path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        # fixed metadata keeps the SVG bytes reproducible
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def emit_plot(kind: str, columns: dict, out_stem, meta: dict | None = None) -> PlotOutput:
    """Render ``columns`` (as written by the eval/stats exporters) to ``<out_stem>.svg`` plus its table.

    roc/froc expect threshold, x, y; hist expects minutes, occupied, vacant;
    ccdf expects x, ccdf, lower, upper; spectrogram-image expects ``values``
    (a 2-D dBm array) with optional ``lo``/``hi`` window in ``meta``.
    """
    if kind not in PLOT_KINDS:
        raise InvalidConfig(f"plot kind must be one of {PLOT_KINDS}")
    meta = dict(meta or {})
    stem = Path(out_stem)
    svg = stem.with_suffix(".svg")
    plt.rcParams["svg.hashsalt"] = "cbrs-sense"
    fig, ax = plt.subplots(figsize=(5, 4))
    series: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    table = stem.with_suffix(".tsv")

    if kind in ("roc", "froc"):
        x = np.asarray(columns["x"], dtype=float)
        y = np.asarray(columns["y"], dtype=float)
        ax.plot(x, y, marker="o", ms=3, lw=1.2, color="k", gid="curve")
        series["curve"] = (x, y)
        for name in ("lower", "upper"):
            if name in columns:
                yy = np.asarray(columns[name], dtype=float)
                ax.plot(x, yy, lw=0.8, ls="--", color="0.5", gid=name)
                series[name] = (x, yy)
        if kind == "roc":
            ax.set_xlim(0, 1)
            ax.set_xlabel("false-positive rate")
        else:
            ax.set_xlim(0, max(float(x.max()), 1e-9))
            ax.set_xlabel("mean false positives per spectrogram")
        ax.set_ylim(0, 1)
        ax.set_ylabel("true-positive rate" if kind == "roc" else "detection fraction")
        write_table(table, kind, columns, meta)
    elif kind == "hist":
        m = np.asarray(columns["minutes"], dtype=float)
        occ = np.asarray(columns["occupied"], dtype=float)
        vac = np.asarray(columns["vacant"], dtype=float)
        ax.bar(m - 2, occ, width=4, color="k", label="occupied")
        ax.bar(m + 2, vac, width=4, color="0.6", label="vacant")
        ax.set_xlabel("interval (minutes)")
        ax.set_ylabel("count")
        ax.legend()
        series["occupied"] = (m, occ)
        series["vacant"] = (m, vac)
        write_table(table, kind, columns, meta)
    elif kind == "ccdf":
        x = np.asarray(columns["x"], dtype=float)
        for name, style in (("ccdf", "-"), ("lower", "--"), ("upper", "--")):
            y = np.asarray(columns[name], dtype=float)
            ax.step(x, y, where="post", ls=style, color="k" if name == "ccdf" else "0.5", gid=name)
            series[name] = (x, y)
        ax.set_yscale("log")
        ax.set_xlabel("power density (dBm/MHz)")
        ax.set_ylabel("CCDF")
        write_table(table, kind, columns, meta)
    else:
        values = np.asarray(columns["values"], dtype=float)
        lo, hi = float(meta.get("lo", -90.0)), float(meta.get("hi", -50.0))
        inten = grayscale_window(values, lo, hi)
        ax.imshow(inten, cmap="gray", vmin=0, vmax=1, aspect="auto", interpolation="nearest", origin="upper")
        ax.set_xlabel("frequency bin")
        ax.set_ylabel("time bin")
        series["intensity"] = (np.arange(values.shape[1]), inten)
        table = stem.with_suffix(".pgm")
        write_pgm(table, to_gray8(inten))
    xlim, ylim = ax.get_xlim(), ax.get_ylim()
    _save(fig, svg)
    return PlotOutput(svg, table, series, xlim, ylim)
