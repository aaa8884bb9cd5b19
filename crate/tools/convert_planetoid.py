#!/usr/bin/env python3
"""Convert published graph datasets into gcniii bundle directories.

Planetoid (cora, citeseer, pubmed):
    convert_planetoid.py planetoid RAW_DIR NAME OUT_DIR
    RAW_DIR holds ind.NAME.{x,y,tx,ty,allx,ally,graph,test.index}.

Geom-GCN (chameleon, cornell, texas, wisconsin):
    convert_planetoid.py geom RAW_DIR NAME OUT_DIR [--splits SPLIT_DIR]
    RAW_DIR holds out1_node_feature_label.txt and out1_graph_edges.txt;
    SPLIT_DIR holds NAME_split_0.6_0.2_K.npz for K = 0..9.
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def load_pickle(path):
    with open(path, "rb") as f:
        return pickle.load(f, encoding="latin1")


def write_bundle(out, name, features, labels, edges, splits):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    features = sp.csr_matrix(features, dtype=np.float64)
    n, d = features.shape
    classes = int(labels.max()) + 1
    (out / "meta").write_text(
        f"name {name}\nnodes {n}\nfeatures {d}\nclasses {classes}\n"
        "feature_format sparse\nnormalize_features true\n"
    )
    coo = features.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(out / "features", "w") as f:
        for i, j, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            if v != 0:
                f.write(f"{i} {j} {float(v)!r}\n")
    with open(out / "edges", "w") as f:
        for u, v in edges:
            f.write(f"{u} {v}\n")
    (out / "labels").write_text("".join(f"{int(c)}\n" for c in labels))
    for split_name, parts in splits.items():
        lines = [key + "".join(f" {int(i)}" for i in idx) for key, idx in zip(("train", "val", "test"), parts)]
        (out / f"split.{split_name}").write_text("\n".join(lines) + "\n")
    print(f"wrote {out}: {n} nodes, {len(edges)} edges, {d} features, {classes} classes")


def undirected(pairs):
    seen = set()
    edges = []
    for u, v in pairs:
        key = (min(u, v), max(u, v))
        if key not in seen:
            seen.add(key)
            edges.append(key)
    return edges


def planetoid(raw, name):
    raw = Path(raw)
    part = {k: load_pickle(raw / f"ind.{name}.{k}") for k in ("x", "y", "tx", "ty", "allx", "ally", "graph")}
    test_index = [int(l) for l in (raw / f"ind.{name}.test.index").read_text().split()]
    test_sorted = np.sort(test_index)

    tx, ty = part["tx"], part["ty"]
    if name == "citeseer":
        # Isolated test nodes are missing from tx/ty; pad them with zero rows.
        full = range(test_sorted.min(), test_sorted.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[test_sorted - test_sorted.min(), :] = tx
        ty_ext = np.zeros((len(full), ty.shape[1]))
        ty_ext[test_sorted - test_sorted.min(), :] = ty
        tx, ty = tx_ext, ty_ext

    features = sp.vstack((part["allx"], tx)).tolil()
    features[test_index, :] = features[test_sorted, :]
    onehot = np.vstack((part["ally"], ty))
    onehot[test_index, :] = onehot[test_sorted, :]
    # Padded citeseer rows have no label; assign class 0 and keep them out of every split.
    labels = onehot.argmax(axis=1)

    graph = part["graph"]
    edges = undirected((u, v) for u, nbrs in graph.items() for v in nbrs if u != v)
    n_train = part["y"].shape[0]
    semi = (range(n_train), range(n_train, n_train + 500), test_sorted)
    return features, labels, edges, {"semi": semi}


def geom(raw, name, split_dir):
    raw = Path(raw)
    rows = (raw / "out1_node_feature_label.txt").read_text().splitlines()[1:]
    ids, feats, labels = [], [], []
    for line in rows:
        node, f, c = line.split("\t")
        ids.append(int(node))
        feats.append([float(x) for x in f.split(",")])
        labels.append(int(c))
    order = np.argsort(ids)
    features = np.asarray(feats)[order]
    labels = np.asarray(labels)[order]
    pairs = []
    for line in (raw / "out1_graph_edges.txt").read_text().splitlines()[1:]:
        u, v = map(int, line.split())
        if u != v:
            pairs.append((u, v))
    splits = {}
    if split_dir is not None:
        for k in range(10):
            path = Path(split_dir) / f"{name}_split_0.6_0.2_{k}.npz"
            if not path.exists():
                print(f"missing {path}; skipping split {k}", file=sys.stderr)
                continue
            m = np.load(path)
            splits[f"full.{k}"] = tuple(np.flatnonzero(m[key]) for key in ("train_mask", "val_mask", "test_mask"))
    return features, labels, undirected(pairs), splits


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("kind", choices=("planetoid", "geom"))
    p.add_argument("raw")
    p.add_argument("name")
    p.add_argument("out")
    p.add_argument("--splits", help="directory of Geom-GCN split .npz files")
    a = p.parse_args()
    if a.kind == "planetoid":
        data = planetoid(a.raw, a.name)
    else:
        data = geom(a.raw, a.name, a.splits)
    write_bundle(a.out, a.name, *data)


if __name__ == "__main__":
    main()
