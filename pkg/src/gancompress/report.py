"""Metrics logging and static report emission.

The metrics log is JSON-lines, one record per step, append-only.  Reports
(CSV tables, SVG charts) are a pure function of the logs and manifests they
are generated from: regenerating from the same inputs produces identical
bytes, so plots carry no timestamps and a fixed hash salt.
"""

import csv
import io
import json
import logging
from pathlib import Path

from .errors import StorageError

log = logging.getLogger(__name__)

_SVG_SALT = "gancompress"


class MetricsLog:
    """Append-only JSONL writer; steps must be strictly increasing."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        self._last_step = -1
        self._fh = None
        self._append = append
        if append and self.path.exists():
            records = read_metrics(self.path)
            if records:
                self._last_step = records[-1]["step"]

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a" if self._append else "w")
        return self

    def __exit__(self, *exc):
        self._fh.close()
        self._fh = None
        return False

    def write(self, record: dict) -> None:
        step = record.get("step")
        if step is None or step <= self._last_step:
            raise StorageError(
                f"metrics log {self.path}: step {step} not greater than {self._last_step}"
            )
        self._last_step = step
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()


def read_metrics(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"metrics log not found: {path}")
    records = []
    last = -1
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise StorageError(f"metrics log {path} line {i + 1}: bad JSON: {e}") from e
        if rec.get("step") is None or rec["step"] <= last:
            raise StorageError(f"metrics log {path} line {i + 1}: steps not increasing")
        last = rec["step"]
        records.append(rec)
    return records


# ---------------------------------------------------------------------------
# tables

def write_csv(path, header: list, rows: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def losses_table(records: list, out_path) -> None:
    """One CSV row per step with every scalar the log carries."""
    keys = sorted({k for r in records for k in r if k != "wall_time"})
    keys.remove("step")
    header = ["step"] + keys
    rows = [[r["step"]] + [_fmt(r.get(k, "")) for k in keys] for r in records]
    write_csv(out_path, header, rows)


def fid_table(eval_records: list, out_path) -> None:
    """Flat table: one row per evaluation record."""
    header = ["task", "recipe", "granularity", "sparsity", "seed", "fid",
              "samples_generated", "samples_real", "extractor"]
    rows = []
    for r in sorted(eval_records, key=lambda r: (r["task"], r["recipe"],
                                                 r["granularity"], r["sparsity"], r["seed"])):
        rows.append([r["task"], r["recipe"], r["granularity"], _fmt(r["sparsity"]),
                     r["seed"], _fmt(r["fid"]), r["samples_generated"],
                     r["samples_real"], r["extractor"]])
    write_csv(out_path, header, rows)


def fid_by_sparsity_table(eval_records: list, out_path) -> None:
    """Pivot: rows (task, recipe, granularity), one column per sparsity level."""
    levels = sorted({round(r["sparsity"], 6) for r in eval_records})
    groups = {}
    for r in eval_records:
        key = (r["task"], r["recipe"], r["granularity"])
        groups.setdefault(key, {})[round(r["sparsity"], 6)] = r["fid"]
    header = ["task", "recipe", "granularity"] + [f"fid@{lvl:.0%}" for lvl in levels]
    rows = []
    for key in sorted(groups):
        cells = [groups[key].get(lvl) for lvl in levels]
        rows.append(list(key) + [_fmt(c) if c is not None else "" for c in cells])
    write_csv(out_path, header, rows)


# ---------------------------------------------------------------------------
# plots (matplotlib imported lazily so training runs never pay for it)

_CURVE_KEYS = ("gen_objective", "disc_objective", "l_gc", "l_dc", "l_overall",
               "sparsity_target", "sparsity_realized")


def _deterministic_figure():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = _SVG_SALT
    return plt


def loss_curves_plot(records: list, out_path, title: str = "training curves") -> None:
    plt = _deterministic_figure()
    fig, (ax_loss, ax_sparsity) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    steps = [r["step"] for r in records]
    for key in _CURVE_KEYS[:5]:
        series = [r.get(key) for r in records]
        if any(v is not None for v in series):
            ax_loss.plot(steps, [v if v is not None else float("nan") for v in series],
                         label=key, linewidth=1.0)
    ax_loss.set_ylabel("loss")
    ax_loss.legend(loc="upper right", fontsize=8)
    ax_loss.set_title(title)
    for key in _CURVE_KEYS[5:]:
        series = [r.get(key, 0.0) for r in records]
        ax_sparsity.plot(steps, series, label=key, linewidth=1.0)
    ax_sparsity.set_xlabel("step")
    ax_sparsity.set_ylabel("sparsity")
    ax_sparsity.set_ylim(-0.02, 1.0)
    ax_sparsity.legend(loc="lower right", fontsize=8)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def fid_vs_sparsity_plot(eval_records: list, out_path) -> None:
    plt = _deterministic_figure()
    fig, ax = plt.subplots(figsize=(7, 5))
    groups = {}
    for r in eval_records:
        key = (r["task"], r["recipe"], r["granularity"])
        groups.setdefault(key, []).append((r["sparsity"], r["fid"]))
    for key in sorted(groups):
        pts = sorted(groups[key])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label="{}/{}/{}".format(*key), linewidth=1.0)
    ax.set_xlabel("sparsity")
    ax.set_ylabel("FID (desk extractor)")
    ax.legend(fontsize=8)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# whole-run report

def collect_eval_records(run_dirs: list) -> list:
    records = []
    for d in run_dirs:
        for p in sorted(Path(d).glob("eval*.json")):
            records.append(json.loads(p.read_text()))
    return records


def generate_report(run_dirs: list, out_dir) -> dict:
    """Emit tables and charts for one or more finished runs.

    Returns a summary dict (also written as summary.json).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"runs": [], "evaluations": 0}
    eval_records = collect_eval_records(run_dirs)
    for d in run_dirs:
        d = Path(d)
        manifest_path = d / "manifest.json"
        metrics_path = d / "metrics.jsonl"
        if not manifest_path.exists() or not metrics_path.exists():
            raise StorageError(f"run directory {d} lacks manifest.json or metrics.jsonl")
        manifest = json.loads(manifest_path.read_text())
        records = read_metrics(metrics_path)
        name = d.name
        losses_table(records, out_dir / f"losses-{name}.csv")
        loss_curves_plot(records, out_dir / f"loss_curves-{name}.svg",
                         title=f"{manifest['task']} recipe {manifest['recipe']}")
        final = records[-1] if records else {}
        summary["runs"].append({
            "run": name,
            "task": manifest["task"],
            "recipe": manifest["recipe"],
            "steps": len(records),
            "final_sparsity": final.get("sparsity_realized", 0.0),
            "final_gen_objective": final.get("gen_objective"),
        })
    if eval_records:
        fid_table(eval_records, out_dir / "fid_table.csv")
        fid_by_sparsity_table(eval_records, out_dir / "fid_by_sparsity.csv")
        fid_vs_sparsity_plot(eval_records, out_dir / "fid_vs_sparsity.svg")
        summary["evaluations"] = len(eval_records)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return summary


def compare_summary(rows: list, out_path) -> None:
    """One row per recipe: the comparison matrix as numbers."""
    header = ["recipe", "label", "sparsity", "fid"]
    table = [[r["recipe"], r["label"], _fmt(r["sparsity"]), _fmt(r["fid"])]
             for r in sorted(rows, key=lambda r: r["recipe"])]
    write_csv(out_path, header, table)
