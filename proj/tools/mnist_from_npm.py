#!/usr/bin/env python3
# Copyright 2026 The EmbraceNet Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Converts the digit set shipped in the `mnist` npm package into IDX files.

The npm package stores 10000 MNIST digits as per-class JSON files holding
784 floats in [0, 1] per image. This script rescales them to bytes and
writes a seed-shuffled train/test split in the standard IDX layout:

    train-images-idx3-ubyte  train-labels-idx1-ubyte
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 tools/mnist_from_npm.py package/src/digits data/mnist --train 8000
"""

import argparse
import json
import os
import random
import struct


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir")
    parser.add_argument("out_dir")
    parser.add_argument("--train", type=int, default=8000)
    parser.add_argument("--seed", type=int, default=20190101)
    args = parser.parse_args()

    samples = []
    for digit in range(10):
        with open(os.path.join(args.digits_dir, f"{digit}.json")) as f:
            flat = json.load(f)["data"]
        for start in range(0, len(flat), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in flat[start:start + 784]]
            samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    train, test = samples[:args.train], samples[args.train:]
    os.makedirs(args.out_dir, exist_ok=True)
    write_images(os.path.join(args.out_dir, "train-images-idx3-ubyte"), [s[0] for s in train])
    write_labels(os.path.join(args.out_dir, "train-labels-idx1-ubyte"), [s[1] for s in train])
    write_images(os.path.join(args.out_dir, "t10k-images-idx3-ubyte"), [s[0] for s in test])
    write_labels(os.path.join(args.out_dir, "t10k-labels-idx1-ubyte"), [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {args.out_dir}")


if __name__ == "__main__":
    main()
