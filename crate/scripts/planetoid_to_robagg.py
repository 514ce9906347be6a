#!/usr/bin/env python3
"""Convert a raw Planetoid citation dataset (Cora, CiteSeer, PubMed) to the
robagg text format.

Expects the usual `ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}` files
in one directory. Uses the standard split: the labelled prefix of `allx` is
train, the next 500 nodes are validation, `test.index` is test.

    python3 scripts/planetoid_to_robagg.py data/cora cora cora.txt
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load(dir_: Path, name: str, part: str):
    with open(dir_ / f"ind.{name}.{part}", "rb") as f:
        return pickle.load(f, encoding="latin1")


def convert(dir_: Path, name: str):
    x, y, tx, ty, allx, ally, graph = (load(dir_, name, p) for p in ["x", "y", "tx", "ty", "allx", "ally", "graph"])
    test_idx = [int(l) for l in (dir_ / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_idx)

    if name == "citeseer":
        # isolated test nodes are missing from tx/ty; pad with zero rows
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        tx = tx_ext
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        ty = ty_ext

    feats = sp.vstack((allx, tx)).tolil()
    feats[test_idx, :] = feats[test_sorted, :]
    labels = np.vstack((ally, ty))
    labels[test_idx, :] = labels[test_sorted, :]

    n = feats.shape[0]
    train = np.zeros(n, dtype=int)
    val = np.zeros(n, dtype=int)
    test = np.zeros(n, dtype=int)
    train[: y.shape[0]] = 1
    val[y.shape[0] : y.shape[0] + 500] = 1
    test[test_idx] = 1

    edges = set()
    for u, nbrs in graph.items():
        for v in nbrs:
            if u != v and u < n and v < n:
                edges.add((min(u, v), max(u, v)))
    return feats.toarray(), labels.argmax(1), sorted(edges), (train, val, test)


def write(out, feats, labels, edges, masks, classes):
    n, f = feats.shape
    out.write(f"nodes={n} feats={f} classes={classes} directed=0 task=node\n")
    for row in feats:
        out.write(" ".join(f"{v:g}" for v in row) + "\n")
    for c in labels:
        out.write(f"{c}\n")
    for u, v in edges:
        out.write(f"{u} {v}\n")
    for m in masks:
        out.write(" ".join(str(b) for b in m) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dir", type=Path)
    ap.add_argument("name", choices=["cora", "citeseer", "pubmed"])
    ap.add_argument("out", type=Path)
    a = ap.parse_args()
    feats, labels, edges, masks = convert(a.dir, a.name)
    classes = int(labels.max()) + 1
    with open(a.out, "w") as out:
        write(out, feats, labels, edges, masks, classes)
    print(f"{a.out}: {feats.shape[0]} nodes, {len(edges)} edges, {classes} classes", file=sys.stderr)


if __name__ == "__main__":
    main()
