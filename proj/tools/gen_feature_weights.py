#!/usr/bin/env python3
# Copyright 2026 The OrientLab Authors
# SPDX-License-Identifier: Apache-2.0
"""Regenerates src/feature_weights.inc (random conv extractor, seed 0)."""
import math
import random
import sys

LAYERS = [(3, 8), (8, 16), (16, 16)]  # (in, out) channels, 3x3 kernels


def main(path):
    rng = random.Random(0)
    out = ["// Copyright 2026 The OrientLab Authors",
           "// SPDX-License-Identifier: Apache-2.0",
           "// Generated by tools/gen_feature_weights.py; do not edit."]
    for li, (cin, cout) in enumerate(LAYERS):
        std = math.sqrt(2.0 / (cin * 9))
        vals = [rng.gauss(0.0, std) for _ in range(cout * cin * 9)]
        out.append(f"constexpr double kConv{li}[{len(vals)}] = {{")
        for i in range(0, len(vals), 4):
            out.append("    " + ", ".join(repr(v) for v in vals[i:i + 4]) + ",")
        out.append("};")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "src/feature_weights.inc")
