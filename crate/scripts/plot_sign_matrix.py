"""Render sign_matrix.csv (rows = coordinates, columns = steps) as an image.

usage: python scripts/plot_sign_matrix.py RUN_DIR [OUT.png]
"""
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def main():
    run = Path(sys.argv[1])
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else run / "sign_matrix.png"
    m = np.loadtxt(run / "sign_matrix.csv", delimiter=",", ndmin=2)
    fig, ax = plt.subplots(figsize=(8, 0.3 * m.shape[0] + 1))
    ax.imshow(m, cmap="bwr", vmin=-1, vmax=1, aspect="auto", interpolation="nearest")
    ax.set_xlabel("step (tail)")
    ax.set_ylabel("coordinate")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(out)


if __name__ == "__main__":
    main()
