#!/usr/bin/env python3
# Copyright 2026 The FedSim Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Generates the bundled federation recipes under recipes/.

Each recipe starts from a structured set of client families (spuriously
correlated clients, class-imbalanced clients, attribute-imbalanced clients)
and is then refined by a seeded integer local search so that its six
federation metrics land on the target heterogeneity profile.
"""

import argparse
import json
import math
import pathlib

import numpy as np

METRICS = ("gci", "cci", "gai", "cai", "gsc", "csc")


def entropy(c):
    c = np.asarray(c, float).ravel()
    n = c.sum()
    p = c[c > 0] / n
    return float(-(p * np.log(p)).sum())


def triplet(m):
    m = np.asarray(m, float)
    hy, ha, hya = entropy(m.sum(1)), entropy(m.sum(0)), entropy(m)
    ci = 1.0 if m.shape[0] == 1 else 1 - hy / math.log(m.shape[0])
    ai = 1.0 if m.shape[1] == 1 else 1 - ha / math.log(m.shape[1])
    sc = 0.0 if hy + ha <= 0 else 2 * max(0.0, hy + ha - hya) / (hy + ha)
    return ci, ai, sc


def metrics(clients):
    g = triplet(sum(np.asarray(c) for c in clients))
    loc = np.mean([triplet(c) for c in clients], axis=0)
    return dict(gci=g[0], cci=loc[0], gai=g[1], cai=loc[1], gsc=g[2], csc=loc[2])


def loss(clients, target):
    m = metrics(clients)
    return sum((m[k] - target[k]) ** 2 for k in METRICS)


def refine(clients, target, rng, iters=20000, lo=100, hi=400, frozen=()):
    clients = [np.array(c, dtype=int) for c in clients]
    best = loss(clients, target)
    for _ in range(iters):
        k = int(rng.integers(len(clients)))
        if k in frozen:
            continue
        c = clients[k]
        y = int(rng.integers(c.shape[0]))
        a = int(rng.integers(c.shape[1]))
        step = int(rng.choice([-8, -3, -1, 1, 3, 8]))
        if c[y, a] + step < 0 or not lo <= c.sum() + step <= hi:
            continue
        c[y, a] += step
        cand = loss(clients, target)
        if cand <= best:
            best = cand
        else:
            c[y, a] -= step
    return clients


def mirror(m):
    """Swap both classes and attributes (2x2)."""
    return [[m[1][1], m[1][0]], [m[0][1], m[0][0]]]


def gsc24():
    # Spuriously correlated majority clients with mild, mirrored skews, plus
    # eight anti-correlated clients that hold the minority groups and carry
    # more of the class or attribute imbalance. Only the majority clients are
    # refined so the minority holders keep their shape.
    out = []
    for i in range(16):
        m = [[110, 14], [14, 60]]
        out.append(m if i % 2 else mirror(m))
    for i in range(4):  # class-skewed
        out.append([[20, 110], [40, 10]] if i % 2 else [[10, 40], [110, 20]])
    for i in range(4):  # attribute-skewed
        out.append([[10, 110], [60, 30]] if i % 2 else [[30, 60], [110, 10]])
    return out, set(range(16, 24))


def gci24():
    ci = []
    for i in range(12):
        major, minor = (170, 30) if i % 2 == 0 else (30, 170)
        ci.append([[major // 2, major // 2], [minor // 2, minor // 2]])
    bal = [[[60, 60], [60, 60]]] * 8
    ai = [[[20, 100], [20, 100]], [[100, 20], [100, 20]]] * 2
    return ci + bal + ai


def gai25():
    ai = [[[40, 110], [40, 110]]] * 17
    ci = [[[150, 150], [30, 30]], [[30, 30], [150, 150]]] * 2
    sc = [[[90, 30], [20, 100]]] * 4
    return ai + ci + sc


def waterbirds30():
    sc = [[[140, 8], [8, 60]]] * 25
    ci = [[[200, 60], [10, 10]]] * 3
    ai = [[[40, 110], [30, 100]], [[30, 120], [40, 110]]]
    return sc + ci + ai


def spur4_25():
    def sc_client(shift):
        m = np.full((4, 2), 4)
        for y in range(4):
            m[y, (y + shift) % 2] = 45
        return m.tolist()

    return [sc_client(0)] * 21 + [sc_client(1)] * 4


def gci100():
    ci = []
    for i in range(50):
        major, minor = (180, 40) if i % 2 == 0 else (40, 180)
        ci.append([[major // 2, major // 2], [minor // 2, minor // 2]])
    bal = [[[60, 60], [60, 60]]] * 42
    ai = [[[25, 100], [25, 100]], [[100, 25], [100, 25]]] * 4
    return ci + bal + ai


RECIPES = {
    # name: (builder, target profile, generator overrides, seed)
    "gsc24": (gsc24, dict(gci=0.0, cci=0.09, gai=0.0, cai=0.09, gsc=0.16, csc=0.35), {}, 101),
    "gci24": (gci24, dict(gci=0.16, cci=0.35, gai=0.0, cai=0.09, gsc=0.0, csc=0.09), {}, 102),
    "gai25": (gai25, dict(gci=0.01, cci=0.2, gai=0.44, cai=0.5, gsc=0.05, csc=0.12), {}, 103),
    "waterbirds30": (waterbirds30, dict(gci=0.22, cci=0.26, gai=0.18, cai=0.26, gsc=0.67, csc=0.76), {}, 104),
    "spur4_25": (spur4_25, dict(gci=0.0, cci=0.02, gai=0.0, cai=0.04, gsc=0.37, csc=0.33), {}, 105),
    "cmnist_gsc24": (gsc24, dict(gci=0.0, cci=0.09, gai=0.0, cai=0.09, gsc=0.16, csc=0.35),
                     {"noise_std": 1.3}, 106),
    "gci100": (gci100, dict(gci=0.15, cci=0.3, gai=0.0, cai=0.07, gsc=0.0, csc=0.07), {}, 107),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "recipes"))
    ap.add_argument("--only", nargs="*")
    ap.add_argument("--iters", type=int, default=20000)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, (builder, target, gen, seed) in RECIPES.items():
        if args.only and name not in args.only:
            continue
        rng = np.random.default_rng(seed)
        built = builder()
        clients, frozen = built if isinstance(built, tuple) else (built, ())
        clients = refine(clients, target, rng, iters=args.iters, frozen=frozen)
        m = metrics(clients)
        worst = max(abs(m[k] - target[k]) for k in METRICS)
        print(f"{name:14s} " + " ".join(f"{k}={m[k]:.3f}" for k in METRICS) + f"  max|err|={worst:.3f}")
        generator = {"d_y": 5, "d_a": 5, "class_scale": 1.5, "attribute_scale": 2.5,
                     "noise_std": 1.0, "attribute_noise_std": 0.5}
        generator.update(gen)
        doc = {
            "name": name,
            "seed": seed,
            "test_per_group": 250,
            "generator": generator,
            "clients": [{"id": k, "counts": np.asarray(c).tolist()} for k, c in enumerate(clients)],
        }
        (out / f"{name}.json").write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
