#!/usr/bin/env python3
"""Convert SVHN cropped-digit .mat files to the RNSV container.

Usage: svhn_convert.py train_32x32.mat train.rnsv

Label 10 (digit zero) becomes 0. Pixels are written as planar RGB, each plane
row-major.
"""

import struct
import sys

import numpy as np
from scipy.io import loadmat


def convert(src, dst):
    mat = loadmat(src)
    x = mat["X"]  # [32, 32, 3, N], indexed [row, col, channel, sample]
    y = mat["y"].reshape(-1).astype(np.int64)
    y[y == 10] = 0
    if x.shape[:3] != (32, 32, 3) or x.shape[3] != len(y):
        sys.exit(f"{src}: unexpected shapes {x.shape} / {y.shape}")
    if y.min() < 0 or y.max() > 9:
        sys.exit(f"{src}: labels outside 0..9")
    planar = np.ascontiguousarray(x.transpose(3, 2, 0, 1)).astype(np.uint8)
    n = len(y)
    with open(dst, "wb") as f:
        f.write(b"RNSV")
        f.write(struct.pack("<IIIII", 1, n, 32, 32, 3))
        for k in range(n):
            f.write(bytes([y[k]]))
            f.write(planar[k].tobytes())
    print(f"{dst}: {n} images")


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    convert(sys.argv[1], sys.argv[2])
