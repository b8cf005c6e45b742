"""Report files, CSV helpers and figures for the command line tools.

Everything written here is deterministic for fixed inputs: numbers are
formatted with a fixed precision and figures carry no timestamps.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from .grid import PolarGrid  # noqa: E402

_PNG_META = {"Software": None}


def manifest(config_hash: str, seed: int) -> str:
    return f"rtinverse {__version__} config_sha256={config_hash} seed={seed}"


def fmt(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class Report:
    """Structured text report: ``[section]`` blocks of ``key = value`` and CSV tables."""

    def __init__(self, title: str, manifest_line: str):
        self.title = title
        self.manifest_line = manifest_line
        self.blocks: list[tuple[str, object]] = []

    def section(self, name: str, items: dict):
        self.blocks.append((name, dict(items)))

    def table(self, name: str, header: list, rows: list):
        self.blocks.append((f"table: {name}", (list(header), [list(r) for r in rows])))

    def render(self) -> str:
        lines = [f"# {self.manifest_line}", f"# {self.title}", ""]
        for name, body in self.blocks:
            lines.append(f"[{name}]")
            if isinstance(body, dict):
                for k, v in body.items():
                    lines.append(f"{k} = {fmt(v)}")
            else:
                header, rows = body
                lines.append(",".join(header))
                for r in rows:
                    lines.append(",".join(fmt(v) for v in r))
            lines.append("")
        return "\n".join(lines)

    def write(self, path: str):
        with open(path, "w") as fh:
            fh.write(self.render())


def write_vector_csv(path: str, grid: PolarGrid, F: np.ndarray, header_lines=()):
    """Vector field rows ``r,beta,F1,F2`` in (i, j) order."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["r", "beta", "F1", "F2"])
        for i, r in enumerate(grid.radii):
            for j, b in enumerate(grid.betas):
                w.writerow([repr(float(r)), repr(float(b)),
                            repr(float(F[0, i, j])), repr(float(F[1, i, j]))])


def read_vector_csv(path: str) -> tuple[PolarGrid, np.ndarray]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if rows[0] != ["r", "beta", "F1", "F2"]:
        raise ValueError(f"{path}: unexpected vector CSV header {rows[0]}")
    data = np.array([[float(x) for x in r] for r in rows[1:] if r])
    nr = len(np.unique(data[:, 0]))
    nbeta = len(np.unique(data[:, 1]))
    grid = PolarGrid(nr, nbeta)
    return grid, np.stack([data[:, 2].reshape(grid.shape), data[:, 3].reshape(grid.shape)])


def write_modes_csv(path: str, grid: PolarGrid, modes: np.ndarray, header_lines=()):
    """Mode stack rows ``mode,r,beta,re,im``; ``mode`` is the (non-positive) index."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["mode", "r", "beta", "re", "im"])
        for n in range(modes.shape[0]):
            for i, r in enumerate(grid.radii):
                for j, b in enumerate(grid.betas):
                    v = modes[n, i, j]
                    w.writerow([-n, repr(float(r)), repr(float(b)),
                                repr(float(v.real)), repr(float(v.imag))])


# ---------------------------------------------------------------------------
# figures


def _mesh(grid: PolarGrid):
    re = np.linspace(0.0, 1.0, grid.nr + 1)
    be = (np.arange(grid.nbeta + 1) - 0.5) * grid.dbeta
    R, B = np.meshgrid(re, be, indexing="ij")
    return R * np.cos(B), R * np.sin(B)


def _disk_panel(ax, grid, field, title, cmap="viridis", vlim=None):
    X, Y = _mesh(grid)
    kw = {}
    if vlim is not None:
        kw = {"vmin": vlim[0], "vmax": vlim[1]}
    pc = ax.pcolormesh(X, Y, field, shading="flat", cmap=cmap, **kw)
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])
    plt.colorbar(pc, ax=ax, shrink=0.8)


def _save(fig, path, note=None):
    # the manifest goes into a PNG text chunk
    meta = dict(_PNG_META)
    if note:
        meta["Description"] = note
    fig.tight_layout()
    fig.savefig(path, dpi=90, metadata=meta)
    plt.close(fig)


def plot_fields(path: str, grid: PolarGrid, panels: list[tuple[str, np.ndarray]], cmap="viridis",
                note: str | None = None):
    """Row of scalar fields on the disk."""
    fig, axes = plt.subplots(1, len(panels), figsize=(3.6 * len(panels), 3.2))
    axes = np.atleast_1d(axes)
    for ax, (title, f) in zip(axes, panels):
        _disk_panel(ax, grid, np.real(f), title, cmap)
    _save(fig, path, note)


def plot_vector(path: str, grid: PolarGrid, panels: list[tuple[str, np.ndarray]], stride: int = 4,
                note: str | None = None):
    """Magnitude plus arrows for each vector field."""
    fig, axes = plt.subplots(1, len(panels), figsize=(3.6 * len(panels), 3.2))
    axes = np.atleast_1d(axes)
    si = max(1, grid.nr // 16)
    sj = max(1, grid.nbeta // 32)
    z = grid.z[::si, ::sj]
    for ax, (title, F) in zip(axes, panels):
        _disk_panel(ax, grid, np.hypot(F[0], F[1]), title, "magma")
        ax.quiver(z.real, z.imag, F[0][::si, ::sj], F[1][::si, ::sj], color="w",
                  scale=None, width=0.004)
    _save(fig, path, note)


def plot_boundary_data(path: str, values: np.ndarray, title: str = "exiting radiation",
                       note: str | None = None):
    """Heat map of ``g(beta, theta)``."""
    ntheta, nbeta = values.shape
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    im = ax.imshow(values, origin="lower", aspect="auto", cmap="viridis",
                   extent=[0, 2 * np.pi, 0, 2 * np.pi])
    ax.set_xlabel("beta (boundary point)")
    ax.set_ylabel("theta (direction)")
    ax.set_title(title, fontsize=9)
    plt.colorbar(im, ax=ax)
    _save(fig, path, note)


def plot_convergence(path: str, h: np.ndarray, series: dict, title: str, note: str | None = None):
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    for name, err in series.items():
        err = np.asarray(err, dtype=float)
        ok = np.isfinite(err) & (err > 0)
        if ok.any():
            ax.loglog(np.asarray(h)[ok], err[ok], "o-", label=name)
    ax.set_xlabel("radial cell size")
    ax.set_ylabel("relative error")
    ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    _save(fig, path, note)


def ensure_dir(path: str):
    os.makedirs(path, exist_ok=True)
