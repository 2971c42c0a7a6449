"""Static figures for study results, rendered with the Agg backend."""

from __future__ import annotations

import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# strip the version stamp so identical data gives identical bytes
_PNG_META = {"Software": None}

_LABELS = {
    "gamma_sweep": "risk level",
    "switch_sweep": "tie switches available",
    "scenario_count_sweep": "scenarios per solve",
    "method_compare": "method",
}


def _median(vals: Sequence[float]) -> float:
    vals = sorted(v for v in vals if v is not None and math.isfinite(v))
    if not vals:
        return math.nan
    k = len(vals) // 2
    return vals[k] if len(vals) % 2 else 0.5 * (vals[k - 1] + vals[k])


def study_figure(rows: Sequence[dict], kind: str, path: str | Path) -> Path:
    """Served load and violation estimates per grid point (median over repeats)."""
    groups: dict[str, list[dict]] = defaultdict(list)
    order: list[str] = []
    for r in rows:
        key = str(r["param"])
        if key not in groups:
            order.append(key)
        groups[key].append(r)

    def fnum(v):
        try:
            return float(v)
        except (TypeError, ValueError):
            return math.nan

    served = [-_median([fnum(r["objective"]) for r in groups[k]]) for k in order]
    qhat = [_median([fnum(r.get("q_hat")) for r in groups[k]]) for k in order]
    upper = [_median([fnum(r.get("U")) for r in groups[k]]) for k in order]
    pos = list(range(len(order)))

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.plot(pos, served, "o-", color="#1f77b4")
    for p, k in zip(pos, order):
        pts = [-fnum(r["objective"]) for r in groups[k]]
        ax1.scatter([p] * len(pts), pts, s=10, color="#1f77b4", alpha=0.35)
    ax1.set_ylabel("expected load served (p.u.)")
    ax2.plot(pos, qhat, "s-", color="#d62728", label="estimated violation")
    ax2.plot(pos, upper, "^--", color="#ff7f0e", label="upper bound")
    ax2.set_ylabel("violation probability")
    ax2.legend(frameon=False, fontsize=8)
    for ax in (ax1, ax2):
        ax.set_xticks(pos)
        ax.set_xticklabels(order)
        ax.set_xlabel(_LABELS.get(kind, "parameter"))
        ax.grid(alpha=0.3)
    fig.suptitle(kind.replace("_", " "))
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path
