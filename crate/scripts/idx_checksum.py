#!/usr/bin/env python3
"""Position-weighted checksum of one image in an IDX3 file.

Prints sum((k + 1) * pixel[k]) over the image's bytes in file order, the same
value the Rust loader reports for that image.
"""

import argparse
import gzip
import struct
import sys


def read_image(path, index):
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", f.read(16))
        if magic != 0x00000803:
            sys.exit(f"{path}: bad magic {magic:#010x}")
        if not 0 <= index < count:
            sys.exit(f"{path}: index {index} out of range for {count} images")
        size = rows * cols
        f.seek(16 + index * size)
        return f.read(size)


def checksum(pixels):
    return sum((k + 1) * p for k, p in enumerate(pixels))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("path")
    parser.add_argument("index", type=int, nargs="+")
    args = parser.parse_args()
    for i in args.index:
        print(checksum(read_image(args.path, i)))


if __name__ == "__main__":
    main()
