#!/usr/bin/env python3
"""Builds the 10k-digit IDX files under data/mnist.

Two sources are supported:

  --from-npm-json DIR   directory of 0.json..9.json from the `mnist` npm
                        package (https://www.npmjs.com/package/mnist, MIT,
                        data (c) LeCun/Cortes/Burges), each {"data": [...]}
                        with 784 floats per image, pixel/255 rounded to 3
                        decimals (losslessly reversible to bytes)
  --from-idx DIR        directory with canonical train/t10k IDX files; a
                        10k subset is drawn deterministically

  --download            fetch the npm package first via `npm pack mnist@1.1.0`

The 10k pool is shuffled with a fixed self-contained PRNG (splitmix64-keyed
Fisher-Yates, seed below) and split 8000 train / 2000 test, so reruns emit
byte-identical files.
"""

import argparse
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile

SEED = 0x1DE57A7E
TRAIN_N = 8000
TEST_N = 2000


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return state, z ^ (z >> 31)


def shuffle(items, seed):
    state = seed
    for i in range(len(items) - 1, 0, -1):
        state, r = splitmix64(state)
        j = r % (i + 1)
        items[i], items[j] = items[j], items[i]


def write_idx(path, images, labels):
    with open(path[0], "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(path[1], "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def pool_from_npm_json(d):
    pool = []
    for digit in range(10):
        with open(os.path.join(d, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        assert len(flat) % 784 == 0, f"{digit}.json not 784-aligned"
        for off in range(0, len(flat), 784):
            img = [round(v * 255) for v in flat[off : off + 784]]
            assert all(0 <= p <= 255 for p in img)
            pool.append((img, digit))
    return pool


def read_idx_pair(img_path, lbl_path):
    with open(img_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", f.read(16))
        assert magic == 0x803 and rows == 28 and cols == 28
        raw = f.read(n * 784)
    with open(lbl_path, "rb") as f:
        magic, m = struct.unpack(">II", f.read(8))
        assert magic == 0x801 and m == n
        labels = f.read(n)
    return [(list(raw[i * 784 : (i + 1) * 784]), labels[i]) for i in range(n)]


def pool_from_idx(d):
    pool = []
    for stems in (("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                  ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
                  ("test-images-idx3-ubyte", "test-labels-idx1-ubyte")):
        ip, lp = os.path.join(d, stems[0]), os.path.join(d, stems[1])
        if os.path.exists(ip) and os.path.exists(lp):
            pool.extend(read_idx_pair(ip, lp))
    assert len(pool) >= TRAIN_N + TEST_N, f"only {len(pool)} images found"
    shuffle(pool, SEED ^ 0xA5A5)
    return pool[: TRAIN_N + TEST_N]


def download_npm(tmp):
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--pack-destination", tmp], check=True)
    tarball = next(p for p in os.listdir(tmp) if p.endswith(".tgz"))
    with tarfile.open(os.path.join(tmp, tarball)) as t:
        t.extractall(tmp)
    return os.path.join(tmp, "package", "src", "digits")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--from-npm-json")
    ap.add_argument("--from-idx")
    ap.add_argument("--download", action="store_true")
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    args = ap.parse_args()

    if args.download:
        tmp = tempfile.mkdtemp(prefix="mnist-npm-")
        args.from_npm_json = download_npm(tmp)
    if args.from_npm_json:
        pool = pool_from_npm_json(args.from_npm_json)
    elif args.from_idx:
        pool = pool_from_idx(args.from_idx)
    else:
        ap.error("need --from-npm-json, --from-idx, or --download")

    assert len(pool) == TRAIN_N + TEST_N, f"pool has {len(pool)} images"
    shuffle(pool, SEED)
    train, test = pool[:TRAIN_N], pool[TRAIN_N:]

    os.makedirs(args.out, exist_ok=True)
    write_idx(
        (os.path.join(args.out, "train-images-idx3-ubyte"),
         os.path.join(args.out, "train-labels-idx1-ubyte")),
        [img for img, _ in train],
        [y for _, y in train],
    )
    write_idx(
        (os.path.join(args.out, "test-images-idx3-ubyte"),
         os.path.join(args.out, "test-labels-idx1-ubyte")),
        [img for img, _ in test],
        [y for _, y in test],
    )
    from collections import Counter
    print(f"train: {len(train)}  test: {len(test)}")
    print("train label counts:", dict(sorted(Counter(y for _, y in train).items())))
    print("test label counts: ", dict(sorted(Counter(y for _, y in test).items())))


if __name__ == "__main__":
    sys.exit(main())
