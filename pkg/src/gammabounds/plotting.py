"""Optional figure for a Gamma sweep (matplotlib, file output only)."""

from __future__ import annotations

from pathlib import Path

from .bounds import SensitivityReport


def plot_sweep(report: SensitivityReport, path) -> Path:
    """Bounds and confidence band against Gamma on a log axis, saved to ``path``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    g = [r.gamma for r in report.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(g, [r.ci_low for r in report.rows], [r.ci_high for r in report.rows],
                    color="tab:blue", alpha=0.2, label="confidence interval")
    ax.plot(g, [r.tau_lower.value for r in report.rows], "o-", color="tab:blue", label="bounds")
    ax.plot(g, [r.tau_upper.value for r in report.rows], "o-", color="tab:blue")
    ax.axhline(0.0, color="0.5", lw=0.8)
    ax.set_xscale("log")
    ax.set_xlabel("Gamma")
    ax.set_ylabel("average treatment effect")
    ax.legend(frameon=False)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, metadata={"Software": None, "CreationDate": None} if path.suffix == ".pdf"
                else {"Software": None})
    plt.close(fig)
    return path
