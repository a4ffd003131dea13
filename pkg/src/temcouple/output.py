"""CSV, SVG and plot-script emission for the experiment runner.

Every CSV starts with ``# key = value`` metadata lines (first of them a
timestamp unless suppressed), then a header row, then data rows.  Floats
are written with ``repr`` so files are byte-identical across reruns of the
same configuration and round-trip exactly.
"""

from __future__ import annotations

import os
from datetime import datetime, timezone
from typing import Iterable, Sequence

from .errors import ConfigError


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


class OutputWriter:
    """Writes experiment artifacts into one directory."""

    def __init__(self, out_dir: str, timestamp: bool = True):
        self.out_dir = out_dir
        self.timestamp = timestamp
        try:
            os.makedirs(out_dir, exist_ok=True)
            probe = os.path.join(out_dir, ".write_probe")
            with open(probe, "w") as fp:
                fp.write("")
            os.remove(probe)
        except OSError as exc:
            raise ConfigError(f"output directory {out_dir!r} is not writable: {exc}") from exc

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _meta_lines(self, meta: dict | None):
        lines = []
        if self.timestamp:
            lines.append(f"# generated = {datetime.now(timezone.utc).isoformat()}\n")
        for key, value in (meta or {}).items():
            lines.append(f"# {key} = {_fmt(value)}\n")
        return lines

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence], meta: dict | None = None) -> str:
        path = self.path(name)
        with open(path, "w") as fp:
            fp.writelines(self._meta_lines(meta))
            fp.write(",".join(header) + "\n")
            for row in rows:
                fp.write(",".join(_fmt(v) for v in row) + "\n")
        return path

    def write_text(self, name: str, content: str) -> str:
        path = self.path(name)
        with open(path, "w") as fp:
            fp.write(content)
        return path

    def svg_line_plot(self, name: str, series, title: str, xlabel: str, ylabel: str,
                      width: int = 640, height: int = 420) -> str:
        """Self-contained SVG polyline plot; ``series`` is [(label, x, y), ...]."""
        pad = 56
        xs = [float(v) for _, x, _ in series for v in x]
        ys = [float(v) for _, _, y in series for v in y]
        if not xs or not ys:
            raise ConfigError("svg plot needs at least one non-empty series")
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0

        def sx(v):
            return pad + (float(v) - x0) / (x1 - x0) * (width - 2 * pad)

        def sy(v):
            return height - pad - (float(v) - y0) / (y1 - y0) * (height - 2 * pad)

        colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width/2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
            f'<text x="{width/2:.0f}" y="{height-8}" text-anchor="middle" font-size="12">{xlabel}</text>',
            f'<text x="14" y="{height/2:.0f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 14 {height/2:.0f})">{ylabel}</text>',
            f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
            f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>',
            f'<text x="{pad}" y="{height-pad+16}" font-size="10" text-anchor="middle">{x0:.3g}</text>',
            f'<text x="{width-pad}" y="{height-pad+16}" font-size="10" text-anchor="middle">{x1:.3g}</text>',
            f'<text x="{pad-6}" y="{height-pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
            f'<text x="{pad-6}" y="{pad+4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
        ]
        for i, (label, x, y) in enumerate(series):
            color = colors[i % len(colors)]
            points = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
            parts.append(
                f'<text x="{width-pad+4}" y="{pad + 14*i}" font-size="11" fill="{color}">{label}</text>'
            )
        parts.append("</svg>")
        return self.write_text(name, "\n".join(parts) + "\n")

    def write_plot_script(self, name: str, csv_specs) -> str:
        """Emit a standalone matplotlib script plotting the listed CSVs.

        ``csv_specs`` is [(csv_name, xcol, [ycols], title, logx, logy), ...].
        The script is the only place plotting libraries are referenced; the
        package itself never imports them.
        """
        lines = [
            "#!/usr/bin/env python3",
            '"""Plot the CSV artifacts in this directory (requires matplotlib)."""',
            "import csv",
            "import os",
            "",
            "import matplotlib.pyplot as plt",
            "",
            "HERE = os.path.dirname(os.path.abspath(__file__))",
            "",
            "",
            "def load(name):",
            "    with open(os.path.join(HERE, name)) as fp:",
            "        rows = [r for r in fp if not r.startswith('#')]",
            "    reader = csv.DictReader(rows)",
            "    cols = {k: [] for k in reader.fieldnames}",
            "    for row in reader:",
            "        for k, v in row.items():",
            "            cols[k].append(float(v))",
            "    return cols",
            "",
        ]
        for i, (csv_name, xcol, ycols, title, logx, logy) in enumerate(csv_specs):
            lines += [
                f"cols = load({csv_name!r})",
                "plt.figure()",
            ]
            for ycol in ycols:
                lines.append(f"plt.plot(cols[{xcol!r}], cols[{ycol!r}], label={ycol!r})")
            if logx:
                lines.append("plt.xscale('log')")
            if logy:
                lines.append("plt.yscale('log')")
            lines += [
                f"plt.xlabel({xcol!r})",
                f"plt.title({title!r})",
                "plt.legend()",
                f"plt.savefig(os.path.join(HERE, {csv_name!r}.replace('.csv', '.png')), dpi=150)",
                "",
            ]
        lines.append("print('plots written next to their CSVs')")
        return self.write_text(name, "\n".join(lines) + "\n")
