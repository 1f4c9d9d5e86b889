"""
Training Debug System for DTSL
Captures trainer state for offline analysis
"""
import json
import os
import numpy as np
from datetime import datetime
from typing import Dict, List, Optional

from config import DEBUG_DIR, MAX_LOG_ENTRIES
from dtsl.ui.snapshots import agreement_palette, field_to_gray, save_png, write_pgm


class TrainingDebugger:
    """
    Debug system attached to one Trainer.

    Features:
    - Event logging with iteration stamps
    - Full state export to JSON
    - PNG capture of agreement maps with metadata
    - Divergence-field dumps when a loss turns non-finite
    """

    def __init__(self, trainer, enabled: bool = True):
        self.trainer = trainer
        self.enabled = enabled
        self.debug_dir = os.path.join(trainer.out_dir, DEBUG_DIR)
        self.ensure_debug_dir()

        # Event log
        self.event_log: List[Dict] = []
        self.max_log_entries = MAX_LOG_ENTRIES

        self.last_snapshot = None

    def ensure_debug_dir(self):
        for sub in ("screenshots", "snapshots", "divergence"):
            os.makedirs(os.path.join(self.debug_dir, sub), exist_ok=True)

    def log_event(self, event_type: str, data: Dict = None):
        entry = {
            "timestamp": datetime.now().isoformat(),
            "iteration": self.trainer.state.iteration,
            "type": event_type,
            "data": data or {}
        }
        self.event_log.append(entry)

        if len(self.event_log) > self.max_log_entries:
            self.event_log = self.event_log[-self.max_log_entries:]

    def capture_screenshot(self, gray: np.ndarray, filename: str = None, meta: Dict = None) -> Optional[str]:
        """Save an agreement map as PNG with a _meta.json sidecar"""
        if not self.enabled:
            return None
        if filename is None:
            filename = f"agreement_{self.trainer.state.iteration:06d}.png"

        filepath = os.path.join(self.debug_dir, "screenshots", filename)
        save_png(filepath, gray, palette=agreement_palette())

        metadata = {
            "timestamp": datetime.now().isoformat(),
            "iteration": self.trainer.state.iteration,
            "phase": self.trainer.phase.name,
            "mode": self.trainer.cfg.mode.value,
            "agreement_fraction": float(np.mean(gray > 127)),
        }
        metadata.update(meta or {})
        with open(filepath.replace(".png", "_meta.json"), "w") as f:
            json.dump(metadata, f, indent=2)

        self.log_event("screenshot_captured", {"file": filename})
        return filepath

    def export_full_snapshot(self) -> Optional[str]:
        """Export trainer state to JSON"""
        if not self.enabled:
            return None

        filename = f"snapshot_{self.trainer.state.iteration:06d}.json"
        filepath = os.path.join(self.debug_dir, "snapshots", filename)

        snapshot = {
            "timestamp": datetime.now().isoformat(),
            "iteration": self.trainer.state.iteration,
            "phase": self.trainer.phase.name,
            "config": self.trainer.config_summary(),
            "groups": self._get_group_states(),
            "last_breakdown": self._get_breakdown(),
            "loss_trend": self.trainer.loss_rows[-50:],
            "probe_history": self.trainer.probe_rows,
            "recent_events": self.event_log[-50:]
        }

        with open(filepath, "w") as f:
            json.dump(snapshot, f, indent=2, default=_jsonable)

        self.last_snapshot = snapshot
        self.log_event("snapshot_exported", {"file": filename})
        return filepath

    def dump_divergence(self, fields: Dict[str, np.ndarray], reason: str = "", breakdown=None) -> str:
        """JSON stats plus one PGM per field; written even when disabled"""
        iteration = self.trainer.state.iteration
        folder = os.path.join(self.debug_dir, "divergence")
        os.makedirs(folder, exist_ok=True)

        stats = {}
        for name, field in fields.items():
            field = np.asarray(field, dtype=np.float64)
            finite = field[np.isfinite(field)]
            stats[name] = {
                "shape": list(field.shape),
                "nan_count": int(np.isnan(field).sum()),
                "inf_count": int(np.isinf(field).sum()),
                "min": float(finite.min()) if finite.size else None,
                "max": float(finite.max()) if finite.size else None,
                "mean": float(finite.mean()) if finite.size else None,
                "cons_fraction": float(np.mean(field < self.trainer.cfg.kappa)) if field.size else None,
            }
            flat = field.reshape(-1, field.shape[-1]) if field.ndim >= 2 else field.reshape(1, -1)
            write_pgm(os.path.join(folder, f"{name}_{iteration:06d}.pgm"), field_to_gray(flat))

        filepath = os.path.join(folder, f"divergence_{iteration:06d}.json")
        with open(filepath, "w") as f:
            json.dump({"iteration": iteration, "reason": reason, "fields": stats,
                       "breakdown": self._get_breakdown(breakdown)}, f, indent=2, default=_jsonable)

        self.log_event("divergence_dumped", {"file": os.path.basename(filepath), "reason": reason})
        return filepath

    def _get_group_states(self) -> List[Dict]:
        groups = []
        for group in self.trainer.state.groups:
            gap = sum(float(np.sum((t.data - s.data) ** 2))
                      for (_, t), (_, s) in zip(group.teacher, group.student))
            groups.append({
                "index": group.index,
                "architecture": group.student.architecture.value,
                "parameters": group.student.count(),
                "teacher_student_l2": float(np.sqrt(gap)),
                "optimizer_steps": group.optimizer.t,
            })
        return groups

    def _get_breakdown(self, breakdown=None) -> Optional[Dict]:
        breakdown = breakdown or self.trainer.last_breakdown
        return breakdown.to_dict() if breakdown is not None else None


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return str(value)
