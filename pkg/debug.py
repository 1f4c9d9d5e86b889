#!/usr/bin/env python3
"""Run and snapshot analyzer"""

import json
import os
import sys
from typing import Dict, List, Optional

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import DEBUG_DIR, HEADLINE_MODEL, METRIC_NAMES, TITLE
from dtsl.settings import read_key_values
from dtsl.ui.report import parse_cell, read_csv


def load_snapshot(filepath: str) -> Dict:
    """Load a snapshot JSON file"""
    with open(filepath, 'r') as f:
        return json.load(f)


def load_run(run_dir: str) -> Dict:
    """Manifest and CSV tables of one run directory; missing files stay empty"""
    run = {"dir": run_dir, "manifest": {}, "losses": [], "probe": [], "metrics": []}
    manifest = os.path.join(run_dir, "manifest.txt")
    if os.path.exists(manifest):
        run["manifest"] = dict(read_key_values(manifest))
    for name in ("losses", "probe", "metrics"):
        path = os.path.join(run_dir, f"{name}.csv")
        if os.path.exists(path):
            run[name] = read_csv(path)
    return run


def _column(rows: List[Dict], name: str) -> List[float]:
    values = [parse_cell(row.get(name, "")) for row in rows]
    return [v for v in values if v is not None]


def _window_mean(values: List[float], head: bool) -> Optional[float]:
    if not values:
        return None
    n = max(1, len(values) // 10)
    part = values[:n] if head else values[-n:]
    return sum(part) / len(part)


def analyze_config(config: Dict):
    print("\n" + "=" * 60)
    print("CONFIGURATION")
    print("=" * 60)

    if not config:
        print("  No manifest found")
        return
    for key in ("version", "mode", "strategy", "kappa", "omega", "alpha", "beta", "eta0",
                "max_iter", "seed", "labeled_fraction", "image_size", "num_classes"):
        if key in config:
            print(f"{key}: {config[key]}")


def analyze_losses(losses: List[Dict]):
    print("\n" + "-" * 60)
    print("LOSS TREND")
    print("-" * 60)

    if not losses:
        print("  No loss rows")
        return

    print(f"Iterations logged: {len(losses)}")
    for name in ("sup", "semi", "url", "pace", "total_l", "total_u"):
        values = _column(losses, name)
        first, last = _window_mean(values, True), _window_mean(values, False)
        if first is None:
            continue
        print(f"  {name:8s} first 10%: {first:.4f}   last 10%: {last:.4f}")


def analyze_consistency(probe: List[Dict]):
    print("\n" + "-" * 60)
    print("CONSISTENCY AND TEACHER AGREEMENT (probe batch)")
    print("-" * 60)

    if not probe:
        print("  No probe rows")
        return

    for row in probe[:3] + (["..."] if len(probe) > 6 else []) + probe[max(3, len(probe) - 3):]:
        if row == "...":
            print("  ...")
            continue
        cells = [f"{k}={row[k]}" for k in ("agreement_t0", "agreement_t1", "cons_fraction") if row.get(k)]
        print(f"  [{row['iter']}] " + ", ".join(cells))

    cons = _column(probe, "cons_fraction")
    if len(cons) >= 2:
        change = cons[-1] - cons[0]
        direction = "expanded" if change > 0 else "shrank" if change < 0 else "unchanged"
        print(f"\nConsistent region {direction}: {cons[0]:.3f} -> {cons[-1]:.3f}")


def analyze_metrics(metrics: List[Dict]):
    print("\n" + "-" * 60)
    print("TEST METRICS (foreground mean)")
    print("-" * 60)

    rows = [row for row in metrics if row.get("class") == "mean"]
    if not rows:
        print("  No metrics (run unfinished or diverged)")
        return
    for row in rows:
        marker = " *" if row["model"] == HEADLINE_MODEL else ""
        cells = "  ".join(f"{name}={row[name]}" for name in METRIC_NAMES)
        print(f"  {row['model']:10s} {cells}{marker}")


def analyze_snapshot(snapshot: Dict):
    print("\n" + "-" * 60)
    print("DEBUG SNAPSHOT")
    print("-" * 60)

    print(f"Iteration: {snapshot.get('iteration', 'N/A')}")
    print(f"Phase: {snapshot.get('phase', 'N/A')}")
    for group in snapshot.get("groups", []):
        print(f"  group {group['index']}: {group['architecture']}, {group['parameters']} params, "
              f"teacher-student L2 {group['teacher_student_l2']:.4f}, {group['optimizer_steps']} steps")

    breakdown = snapshot.get("last_breakdown")
    if breakdown:
        print("Last breakdown:")
        for key in ("sup0", "sup1", "semi0", "semi1", "url0", "url1", "pace", "cons_fraction"):
            print(f"  {key}: {breakdown.get(key)}")

    events = snapshot.get("recent_events", [])
    print(f"\nLast {min(len(events), 20)} events:")
    for event in events[-20:]:
        print(f"  [{event.get('iteration', 0)}] {event.get('type', 'unknown')}: {event.get('data', {})}")


def give_recommendations(run: Dict):
    print("\n" + "=" * 60)
    print("RECOMMENDATIONS")
    print("=" * 60)

    recommendations = []
    cons = _column(run.get("probe", []), "cons_fraction")
    totals = _column(run.get("losses", []), "total_l")
    config = run.get("manifest", {})

    if cons and max(cons) < 0.05:
        recommendations.append(f"Consistent region never exceeds 5% - kappa={config.get('kappa', '?')} "
                               f"may be too strict; try the kappa sweep.")
    if cons and min(cons) > 0.98:
        recommendations.append("Almost every pixel is consistent from the start - kappa may be too loose "
                               "to separate easy from hard regions.")
    if len(totals) >= 20 and _window_mean(totals, False) >= _window_mean(totals, True):
        recommendations.append("Labeled loss is not decreasing - lower eta0 or check the labeled split.")

    means = {row["model"]: row for row in run.get("metrics", []) if row.get("class") == "mean"}
    per_class = [row for row in run.get("metrics", []) if row.get("class") not in ("mean", "0")]
    if any(row.get("hd95") == "undefined" for row in per_class):
        recommendations.append("Some class has no defined HD95 - a structure is never predicted "
                               "by at least one model.")
    d0 = parse_cell(means.get("student0", {}).get("dsc", ""))
    d1 = parse_cell(means.get("student1", {}).get("dsc", ""))
    if d0 is not None and d1 is not None and abs(d0 - d1) > 10:
        recommendations.append(f"Students disagree strongly (DSC {d0:.1f} vs {d1:.1f}) - "
                               f"the weaker group may be dragging the pseudo-labels.")

    if recommendations:
        for i, rec in enumerate(recommendations, 1):
            print(f"{i}. {rec}")
    else:
        print("Run looks healthy.")


def main(argv: List[str] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        print(f"Usage: python debug.py <run-dir>")
        print(f"   or: python debug.py <run-dir>/{DEBUG_DIR}/snapshots/<snapshot>.json")
        return 0

    path = argv[0]
    if not os.path.exists(path):
        print(f"Not found: {path}")
        return 1

    try:
        print("=" * 60)
        print(f"{TITLE} - Run Analysis")
        print(f"Source: {path}")
        print("=" * 60)

        if os.path.isdir(path):
            run = load_run(path)
            analyze_config(run["manifest"])
            analyze_losses(run["losses"])
            analyze_consistency(run["probe"])
            analyze_metrics(run["metrics"])

            snapshot_dir = os.path.join(path, DEBUG_DIR, "snapshots")
            if os.path.isdir(snapshot_dir):
                snapshots = sorted(f for f in os.listdir(snapshot_dir) if f.endswith(".json"))
                if snapshots:
                    analyze_snapshot(load_snapshot(os.path.join(snapshot_dir, snapshots[-1])))
            give_recommendations(run)
        else:
            snapshot = load_snapshot(path)
            analyze_config(snapshot.get("config", {}))
            analyze_snapshot(snapshot)
            give_recommendations({"manifest": snapshot.get("config", {}),
                                  "losses": [{k: str(v) for k, v in row.items()}
                                             for row in snapshot.get("loss_trend", [])],
                                  "probe": [{k: str(v) for k, v in row.items()}
                                            for row in snapshot.get("probe_history", [])]})

        print("\n" + "=" * 60)
        print("Analysis complete!")
        print("=" * 60)

    except Exception as e:
        print(f"Error analyzing {path}: {e}")
        import traceback
        traceback.print_exc()
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
