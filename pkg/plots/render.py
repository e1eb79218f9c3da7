#!/usr/bin/env python3
"""Render result figures from an experiment aggregate JSON.

Reads only the documented aggregate schema
(``{experiment, n_seeds, series: [{phase, epoch, task, metric, mean,
stddev}]}``) and draws one figure per experiment id:

  e1   per-task AUC curves; solid = unfrozen, dashed = frozen
  e2   per-task AUC curves, one panel per transfer strategy
  e3   signed bar chart of forced-copy minus random-init AUC deltas
  e4   grouped bars of confusion through the reduction stages
  e5   task AUC around the graceful-forgetting boundary
  e6   old-task AUC during backward-transfer tuning, one line per arm

Usage: render.py --experiment e1 --in aggregate.json --out fig_e1.svg
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

matplotlib.rcParams["svg.hashsalt"] = "llnn-figures"

KNOWN_EXPERIMENTS = ("e1", "e2", "e3", "e4", "e5", "e6")
FORMATS = ("svg", "png")


@dataclass(frozen=True)
class FigureSpec:
    experiment: str
    input_path: Path
    output_path: Path
    format: str = "svg"

    def __post_init__(self):
        if self.experiment not in KNOWN_EXPERIMENTS:
            raise SchemaError("experiment", f"unknown layout {self.experiment!r}")
        if self.format not in FORMATS:
            raise SchemaError("format", f"must be one of {FORMATS}")


class SchemaError(ValueError):
    """Aggregate data did not match the documented schema."""

    def __init__(self, field: str, problem: str):
        self.field = field
        super().__init__(f"aggregate field {field!r}: {problem}")


def load_aggregate(path: Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"not valid JSON ({exc})")
    return validate_aggregate(data)


def validate_aggregate(data) -> dict:
    if not isinstance(data, dict):
        raise SchemaError("<root>", "must be an object")
    for key, kind in (("experiment", str), ("n_seeds", int), ("series", list)):
        if key not in data:
            raise SchemaError(key, "missing")
        if not isinstance(data[key], kind):
            raise SchemaError(key, f"must be {kind.__name__}")
    if not data["series"]:
        raise SchemaError("series", "must be nonempty")
    for i, entry in enumerate(data["series"]):
        if not isinstance(entry, dict):
            raise SchemaError(f"series[{i}]", "must be an object")
        for key, kinds in (("phase", (str,)), ("epoch", (int,)), ("task", (int,)),
                           ("metric", (str,)), ("mean", (int, float)),
                           ("stddev", (int, float))):
            if key not in entry:
                raise SchemaError(f"series[{i}].{key}", "missing")
            if not isinstance(entry[key], kinds) or isinstance(entry[key], bool):
                raise SchemaError(f"series[{i}].{key}",
                                  f"must be {' or '.join(k.__name__ for k in kinds)}")
    return data


def _series(data, metric="auc", phase_pred=lambda p: True):
    out = {}
    for e in data["series"]:
        if e["metric"] == metric and phase_pred(e["phase"]):
            out.setdefault((e["phase"], e["task"]), []).append(
                (e["epoch"], e["mean"], e["stddev"]))
    for v in out.values():
        v.sort()
    return out


def _band(ax, xs, means, stds, **kwargs):
    line, = ax.plot(xs, means, **kwargs)
    lo = [m - s for m, s in zip(means, stds)]
    hi = [m + s for m, s in zip(means, stds)]
    ax.fill_between(xs, lo, hi, color=line.get_color(), alpha=0.15, linewidth=0)
    return line


def _learning_curves(ax, data, variant_styles, colors):
    """Phases like '<variant>:learn:T<k>' laid out on a global epoch axis."""
    for (phase, task), pts in sorted(_series(data).items()):
        parts = phase.split(":")
        if len(parts) != 3 or parts[1] != "learn":
            continue
        variant, _, tlabel = parts
        if variant not in variant_styles:
            continue
        k = int(tlabel[1:])
        offset = k * max(e for e, _, _ in pts)  # phases are equal-length
        xs = [offset + e for e, _, _ in pts]
        _band(ax, xs, [m for _, m, _ in pts], [s for _, _, s in pts],
              linestyle=variant_styles[variant],
              color=colors[task % len(colors)],
              label=f"T{task} ({variant})" if task == k else None)
    ax.set_xlabel("training epoch (cumulative)")
    ax.set_ylabel("test AUC")
    ax.set_ylim(0.0, 1.05)


COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def render_e1(data, ax):
    _learning_curves(ax, data, {"unfrozen": "-", "frozen": "--"}, COLORS)
    ax.set_title("Continual learning: frozen (dashed) vs unfrozen (solid)")
    ax.legend(fontsize=7, ncol=2)


def render_e2(data, fig):
    strategies = sorted({p.split(":")[0] for (p, _) in _series(data)
                         if ":learn:" in p})
    axes = fig.subplots(1, max(len(strategies), 1), sharey=True)
    if len(strategies) == 1:
        axes = [axes]
    for ax, strat in zip(axes, strategies):
        _learning_curves(ax, data, {strat: "-"}, COLORS)
        ax.set_title(strat, fontsize=9)
    fig.suptitle("Forward transfer strategies (last two tasks are 10-shot)")


def render_e3(data, ax):
    deltas = {}
    for e in data["series"]:
        parts = e["phase"].split(":")
        if len(parts) == 3 and parts[0] == "sweep" and parts[2] == "delta":
            deltas[parts[1]] = e["mean"]
    if not deltas:
        raise SchemaError("series", "no sweep:<char>:delta entries for e3")
    chars = sorted(deltas)
    vals = [deltas[c] for c in chars]
    ax.bar(chars, vals, color=["tab:green" if v > 0 else "tab:red" for v in vals])
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("fifth task character")
    ax.set_ylabel("AUC delta (forced copy - random init)")
    ax.set_title("Transfer benefit of always copying the most similar head")


def render_e4(data, ax):
    groups = {}
    for e in data["series"]:
        if e["metric"] != "confusion":
            continue
        parts = e["phase"].split(":")  # exp<A>:confusion:<char>:<stage>
        if len(parts) != 4:
            continue
        amount, char, stage = parts[0], parts[2], parts[3]
        groups.setdefault((char, amount), {})[stage] = e["mean"]
    if not groups:
        raise SchemaError("series", "no confusion stage entries for e4")
    stages = ("initial", "post_stage1", "post_stage2")
    keys = sorted(groups)
    width = 0.8 / len(stages)
    for si, stage in enumerate(stages):
        xs = [i + si * width for i in range(len(keys))]
        ax.bar(xs, [groups[k].get(stage, 0.0) for k in keys], width,
               label=stage.replace("_", " "))
    ax.set_xticks([i + width for i in range(len(keys))])
    ax.set_xticklabels([f"{c} ({a})" for c, a in keys])
    ax.set_ylabel("confusion")
    ax.set_title("Two-stage confusion reduction")
    ax.legend(fontsize=8)


def render_e5(data, ax):
    phases = {"pre-forget", "post-forget"}
    merged = {}
    for (phase, task), pts in _series(data, phase_pred=lambda p: p in phases).items():
        merged.setdefault(task, []).extend(pts)
    if not merged:
        raise SchemaError("series", "no pre-forget/post-forget entries for e5")
    boundary = max(e for e, _, _ in next(iter(merged.values())) if e <= 10)
    for task, pts in sorted(merged.items()):
        pts.sort()
        _band(ax, [e for e, _, _ in pts], [m for _, m, _ in pts],
              [s for _, _, s in pts], color=COLORS[task % len(COLORS)],
              label=f"T{task}")
    ax.axvline(boundary, color="gray", linestyle=":", label="forgetting begins")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test AUC")
    ax.set_title("Graceful forgetting rescues the capacity-starved task")
    ax.legend(fontsize=8)


def render_e6(data, ax):
    tuned = _series(data, phase_pred=lambda p: p.endswith(":tune"))
    if not tuned:
        raise SchemaError("series", "no tuning entries for e6")
    for (phase, task), pts in sorted(tuned.items()):
        if task != 0:
            continue
        arm = phase.split(":")[0]
        _band(ax, [e for e, _, _ in pts], [m for _, m, _ in pts],
              [s for _, _, s in pts], label=f"links: {arm}")
    ax.set_xlabel("fine-tuning epoch (0 = links just added)")
    ax.set_ylabel("first-task test AUC")
    ax.set_title("Backward transfer into the few-shot first task")
    ax.legend(fontsize=8)


def render(spec: FigureSpec) -> Path:
    data = load_aggregate(spec.input_path)
    fig = plt.figure(figsize=(9, 4.5), dpi=120)
    if spec.experiment == "e2":
        render_e2(data, fig)
    else:
        ax = fig.add_subplot(111)
        {"e1": render_e1, "e3": render_e3, "e4": render_e4,
         "e5": render_e5, "e6": render_e6}[spec.experiment](data, ax)
    out = Path(spec.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format=spec.format, metadata=_no_date(spec.format))
    plt.close(fig)
    return out


def _no_date(fmt: str):
    # strip volatile metadata so identical inputs give identical bytes
    if fmt == "svg":
        return {"Date": None}
    return {"Software": None}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--experiment", required=True, choices=KNOWN_EXPERIMENTS)
    parser.add_argument("--in", dest="input_path", required=True, type=Path)
    parser.add_argument("--out", dest="output_path", required=True, type=Path)
    parser.add_argument("--format", choices=FORMATS)
    args = parser.parse_args(argv)
    fmt = args.format or (args.output_path.suffix.lstrip(".") or "svg")
    if fmt not in FORMATS:
        print(f"error: cannot infer format from {args.output_path}", file=sys.stderr)
        return 2
    try:
        out = render(FigureSpec(args.experiment, args.input_path, args.output_path, fmt))
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
