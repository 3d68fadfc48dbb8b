#!/usr/bin/env python3
"""
Download California Housing and write it as a dataset directory (CA) with a
seeded 64/16/20 train/val/test split.
"""
import argparse
import os
import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import fetch_california_housing

# Add the parent directory to the Python path so the packages import
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config.settings import TABR_DATA_DIR  # noqa: E402
from models.enums import Task  # noqa: E402
from services.data_pipeline import DataService  # noqa: E402


def split_rows(n: int, seed: int) -> dict[str, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(0.2 * n))
    n_val = int(round(0.16 * n))
    return {
        "test": np.sort(order[:n_test]),
        "val": np.sort(order[n_test:n_test + n_val]),
        "train": np.sort(order[n_test + n_val:]),
    }


def main():
    parser = argparse.ArgumentParser(description="Fetch California Housing into the dataset layout")
    parser.add_argument("--out", default=str(Path(TABR_DATA_DIR) / "CA"), help="Target directory")
    parser.add_argument("--seed", type=int, default=0, help="Split seed")
    args = parser.parse_args()

    print("🔄 Fetching California Housing...")
    try:
        bunch = fetch_california_housing()
    except OSError as e:
        print(f"❌ Download failed: {e}")
        sys.exit(1)

    splits = split_rows(len(bunch.target), args.seed)
    DataService.write_dataset(args.out, bunch.data, bunch.target, Task.REGRESSION, splits)
    sizes = ", ".join(f"{name} {len(idx)}" for name, idx in splits.items())
    print(f"✅ Wrote {len(bunch.target)} rows ({sizes})")
    print(f"📁 {args.out}")


if __name__ == "__main__":
    main()
