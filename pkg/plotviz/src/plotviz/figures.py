"""Figure builders over the simulator CLI's file contract.

Each builder reads the documented CSV/JSON artifacts, validates the
columns it needs, renders one PNG, and returns the plotted arrays so
callers (and tests) can verify rendering is a pure function of the
input files.  No physics is recomputed here; the fit overlay evaluates
the fitted parameters exactly as reported.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.family": "DejaVu Sans",
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "legend.framealpha": 0.9,
    "figure.constrained_layout.use": True,
}

TRAJECTORY_COLUMNS = ("time_us", "n_a", "n_b", "p_qa", "p_qb",
                      "ta_fg", "tb_fg")


class ColumnError(ValueError):
    """A referenced CSV column is missing or unreadable."""


@dataclass(frozen=True)
class FigureSpec:
    """What a figure reads and how it is laid out.

    column_requirements maps each input CSV path to the columns the
    figure references; validate() enforces the invariant that every
    referenced column exists before any rendering happens.
    """

    input_paths: tuple
    column_requirements: tuple  # of (path, (column, ...))
    layout: tuple  # of panel titles, row-major
    axis_labels: tuple  # of (xlabel, ylabel) per panel
    out_path: str

    def validate(self):
        for path, columns in self.column_requirements:
            have = _csv_header(path)
            for col in columns:
                if col not in have:
                    raise ColumnError(
                        f"{path}: missing column {col!r} (has {have})"
                    )


@dataclass
class RenderResult:
    """Output path plus the exact arrays that were drawn."""

    path: str
    arrays: dict = field(default_factory=dict)


def _csv_header(path):
    try:
        with open(path, newline="") as fh:
            row = next(csv.reader(fh), None)
    except OSError as exc:
        raise ColumnError(f"{path}: {exc}") from exc
    if not row:
        raise ColumnError(f"{path}: empty CSV, no header row")
    return [c.strip() for c in row]


def read_columns(path, required, optional=()):
    """Load named CSV columns as float arrays, erroring on absent names."""
    header = _csv_header(path)
    for col in required:
        if col not in header:
            raise ColumnError(f"{path}: missing column {col!r} (has {header})")
    wanted = [c for c in (*required, *optional) if c in header]
    idx = {c: header.index(c) for c in wanted}
    values = {c: [] for c in wanted}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            for c in wanted:
                try:
                    values[c].append(float(row[idx[c]]))
                except (IndexError, ValueError) as exc:
                    raise ColumnError(
                        f"{path}:{ln}: column {c!r} is not numeric"
                    ) from exc
    return {c: np.array(v) for c, v in values.items()}


def _pulse_markers(csv_path):
    manifest = os.path.join(os.path.dirname(os.path.abspath(csv_path)),
                            "manifest.json")
    if not os.path.exists(manifest):
        return []
    with open(manifest) as fh:
        config = json.load(fh).get("config", {})
    events = config.get("schedule") or []
    return [(float(ev["time_us"]), str(ev["kind"])) for ev in events]


def plot_trajectory(csv_path, out_path):
    """Three stacked panels: photon numbers, qubit populations, <f-g>."""
    spec = FigureSpec(
        input_paths=(csv_path,),
        column_requirements=((csv_path, TRAJECTORY_COLUMNS),),
        layout=("photon numbers", "qubit populations", "transistors"),
        axis_labels=(("", "photon number"),
                     ("", "qubit excitation"),
                     ("time (us)", "<f-g>")),
        out_path=out_path,
    )
    spec.validate()
    cols = read_columns(csv_path, TRAJECTORY_COLUMNS)
    markers = _pulse_markers(csv_path)
    t = cols["time_us"]

    panels = (
        (("n_a", "tab:blue", "-"), ("n_b", "tab:orange", "--")),
        (("p_qa", "tab:blue", "-"), ("p_qb", "tab:orange", "--")),
        (("ta_fg", "tab:blue", "-"), ("tb_fg", "tab:orange", "--")),
    )
    result = RenderResult(out_path, {"time_us": t})
    with matplotlib.rc_context(STYLE):
        fig, axes = plt.subplots(3, 1, sharex=True, figsize=(6.4, 6.0))
        for ax, series, (xlabel, ylabel) in zip(axes, panels, spec.axis_labels):
            for name, color, style in series:
                ax.plot(t, cols[name], style, color=color, label=name)
                result.arrays[name] = cols[name]
            ax.set_ylabel(ylabel)
            if xlabel:
                ax.set_xlabel(xlabel)
            ax.legend(loc="center right", fontsize=8)
            for t_pulse, kind in markers:
                ax.axvline(t_pulse, color="0.35", lw=0.9, ls=":")
        for t_pulse, kind in markers:
            axes[0].annotate(kind.capitalize(), (t_pulse, 1.0),
                             xycoords=("data", "axes fraction"),
                             xytext=(2, -2), textcoords="offset points",
                             fontsize=8, va="top")
        fig.savefig(out_path)
        plt.close(fig)
    result.arrays["pulse_times_us"] = np.array([tp for tp, _ in markers])
    return result


def plot_memory(csv_path, fit_json_path, out_path):
    """Ensemble-mean decay with the reported exponential fit overlaid.

    A fit flagged unreliable is not drawn; the flag and its reasons are
    annotated on the figure instead.
    """
    spec = FigureSpec(
        input_paths=(csv_path, fit_json_path),
        column_requirements=((csv_path, ("time_us", "n_a")),),
        layout=("ensemble decay",),
        axis_labels=(("time (us)", "mean photon number"),),
        out_path=out_path,
    )
    spec.validate()
    cols = read_columns(csv_path, ("time_us", "n_a"), optional=("n_a_err",))
    with open(fit_json_path) as fh:
        fit = json.load(fh)

    t = cols["time_us"]
    y = cols["n_a"]
    result = RenderResult(out_path, {"time_us": t, "n_a": y})
    with matplotlib.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        ax.plot(t, y, color="tab:blue", lw=1.0, label="ensemble mean")
        if "n_a_err" in cols:
            err = cols["n_a_err"]
            ax.fill_between(t, y - err, y + err, color="tab:blue",
                            alpha=0.25, linewidth=0)
            result.arrays["n_a_err"] = err
        if fit.get("unreliable") or fit.get("memory_time_us") is None:
            reasons = "; ".join(fit.get("unreliable_reasons") or ["no fit"])
            ax.annotate(f"fit unreliable: {reasons}", (0.03, 0.05),
                        xycoords="axes fraction", fontsize=8,
                        color="tab:red", wrap=True)
        else:
            t_mem = float(fit["memory_time_us"])
            amp = float(fit["amplitude"])
            floor = float(fit.get("floor") or 0.0)
            t0 = t[0] + float(fit.get("window_start_us") or 0.0)
            t_fit = t[t >= t0]
            curve = amp * np.exp(-(t_fit - t0) / t_mem) + floor
            label = f"fit: T = {t_mem:.0f} us"
            unc = fit.get("uncertainty_us")
            if unc:
                label = f"fit: T = {t_mem:.0f} +/- {unc:.0f} us"
            ax.plot(t_fit, curve, color="darkred", lw=2.2, label=label)
            result.arrays["fit_time_us"] = t_fit
            result.arrays["fit_curve"] = curve
        ax.set_xlabel(spec.axis_labels[0][0])
        ax.set_ylabel(spec.axis_labels[0][1])
        ax.legend(loc="upper right", fontsize=8)
        fig.savefig(out_path)
        plt.close(fig)
    return result


SWEEP_KINDS = (
    # (x column, distinguishing columns); point and photon-number files
    # carry extra columns the plain sweeps also use, so they match first
    ("n_target_a", ("n_target_a", "t_mem_us", "t_total_us")),
    ("n_target", ("ratio", "n_target", "t_mem_us", "t_total_us")),
    ("kappa_mhz", ("kappa_mhz", "t_mem_us", "t_total_us")),
    ("qubit_t1_us", ("qubit_t1_us", "t_mem_us", "t_total_us")),
)
LOG_X = {"kappa_mhz", "qubit_t1_us"}
X_LABELS = {
    "n_target": "target photon number",
    "n_target_a": "target photon number",
    "kappa_mhz": "kappa / 2pi (MHz)",
    "qubit_t1_us": "qubit T1 (us)",
}


def _classify_sweep(path):
    header = _csv_header(path)
    for x_col, needed in SWEEP_KINDS:
        if all(c in header for c in needed):
            return x_col
    raise ColumnError(
        f"{path}: header {header} does not match any estimate layout"
    )


def _finite(x, *ys):
    mask = np.isfinite(x)
    for y in ys:
        mask &= np.isfinite(y)
    return mask


def plot_sweeps(csv_paths, out_path):
    """Estimate-sweep panels; files named simulated*.csv become markers.

    A marker file needs the x column of exactly one panel plus t_sim_us
    and is drawn as black squares on that panel.
    """
    paths = [os.fspath(p) for p in csv_paths]
    curve_paths = [p for p in paths
                   if not os.path.basename(p).startswith("simulated")]
    marker_paths = [p for p in paths
                    if os.path.basename(p).startswith("simulated")]
    if not curve_paths:
        raise ColumnError("no estimate CSVs given")

    panels = []  # (x_col, path)
    requirements = []
    for path in sorted(curve_paths):
        x_col = _classify_sweep(path)
        panels.append((x_col, path))
        requirements.append((path, (x_col, "t_mem_us", "t_total_us")))
    for path in marker_paths:
        requirements.append((path, ("t_sim_us",)))

    n = len(panels)
    ncols = 2 if n > 1 else 1
    nrows = math.ceil(n / ncols)
    spec = FigureSpec(
        input_paths=tuple(paths),
        column_requirements=tuple(requirements),
        layout=tuple(x_col for x_col, _ in panels),
        axis_labels=tuple((X_LABELS[x_col], "memory time (us)")
                          for x_col, _ in panels),
        out_path=out_path,
    )
    spec.validate()

    result = RenderResult(out_path)
    with matplotlib.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, ncols, squeeze=False,
                                 figsize=(4.0 * ncols, 3.2 * nrows))
        flat = axes.ravel()
        for ax in flat[n:]:
            ax.set_visible(False)
        for ax, (x_col, path) in zip(flat, panels):
            tag = os.path.splitext(os.path.basename(path))[0]
            if x_col == "n_target":
                cols = read_columns(path, ("ratio", "n_target",
                                           "t_mem_us", "t_total_us"))
                for ratio in sorted(set(cols["ratio"])):
                    sel = cols["ratio"] == ratio
                    x = cols["n_target"][sel]
                    for y_col, style in (("t_total_us", "-"),
                                         ("t_mem_us", ":")):
                        y = cols[y_col][sel]
                        keep = _finite(x, y)
                        label = (f"ratio {ratio:g}" if y_col == "t_total_us"
                                 else None)
                        ax.plot(x[keep], y[keep], style, label=label)
                        result.arrays[f"{tag}/ratio={ratio:g}/{y_col}"] = y[keep]
            else:
                cols = read_columns(path, (x_col, "t_mem_us", "t_total_us"))
                x = cols[x_col]
                for y_col, style in (("t_mem_us", "-"), ("t_total_us", "--")):
                    y = cols[y_col]
                    keep = _finite(x, y)
                    if x_col == "n_target_a":
                        ax.plot(x[keep], y[keep], "s" if y_col == "t_mem_us"
                                else "^", label=y_col)
                    else:
                        ax.plot(x[keep], y[keep], style, label=y_col)
                    result.arrays[f"{tag}/{y_col}"] = y[keep]
            if x_col in LOG_X:
                ax.set_xscale("log")
            ax.set_yscale("log")
            ax.set_xlabel(X_LABELS[x_col])
            ax.set_ylabel("memory time (us)")
            ax.legend(fontsize=7)
        for path in marker_paths:
            header = _csv_header(path)
            targets = [(x_col, ax) for ax, (x_col, _) in zip(flat, panels)
                       if x_col in header]
            if len(targets) != 1:
                raise ColumnError(
                    f"{path}: needs the x column of exactly one panel, "
                    f"matches {len(targets)}"
                )
            x_col, ax = targets[0]
            cols = read_columns(path, (x_col, "t_sim_us"))
            keep = _finite(cols[x_col], cols["t_sim_us"])
            ax.plot(cols[x_col][keep], cols["t_sim_us"][keep], "ks",
                    markersize=6, fillstyle="none", label="simulated")
            ax.legend(fontsize=7)
            tag = os.path.splitext(os.path.basename(path))[0]
            result.arrays[f"{tag}/t_sim_us"] = cols["t_sim_us"][keep]
        fig.savefig(out_path)
        plt.close(fig)
    return result
