"""Convert the public citation-graph text distributions to the dataset TSVs.

The classic distributions of the Citeseer/Cora/Pubmed citation graphs ship
as two files: `<name>.content` (one row per paper: id, feature values,
label string) and `<name>.cites` (one row per directed citation). This tool
cleans them (drops dangling citations, self-citations and duplicate edges),
maps ids and label strings to dense indices, and draws deterministic
per-class train / valid / test splits.

Usage: python -m p2pgnn.convert cora.content cora.cites --out-dir data/cora
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np


def convert_citation_dataset(
    content_path,
    cites_path,
    nodes_path,
    edges_path,
    splits_path,
    train_per_class: int = 20,
    n_valid: int = 500,
    n_test: int = 1000,
    seed: int = 0,
):
    """Write nodes/edges/splits TSVs; returns (n_nodes, n_edges, n_classes)."""
    ids = []
    feats = []
    label_names = []
    with open(content_path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ValueError(f"{content_path}: row with fewer than 2 columns")
            ids.append(parts[0])
            feats.append(parts[1:-1])
            label_names.append(parts[-1])
    if len(set(ids)) != len(ids):
        raise ValueError(f"{content_path}: duplicate paper ids")
    index = {pid: i for i, pid in enumerate(ids)}
    classes = sorted(set(label_names))
    class_index = {c: i for i, c in enumerate(classes)}

    edges = set()
    dropped = 0
    with open(cites_path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ValueError(f"{cites_path}: citation row needs exactly 2 columns")
            src, dst = parts
            if src not in index or dst not in index or src == dst:
                dropped += 1
                continue
            u, v = index[src], index[dst]
            edges.add((u, v) if u < v else (v, u))

    n = len(ids)
    labels = np.array([class_index[name] for name in label_names])
    rng = np.random.default_rng(seed)
    train = []
    for c in range(len(classes)):
        members = np.flatnonzero(labels == c)
        if len(members) < train_per_class:
            raise ValueError(f"class {classes[c]!r} has only {len(members)} nodes")
        train.extend(rng.choice(members, size=train_per_class, replace=False))
    train = set(int(u) for u in train)
    rest = np.array([u for u in range(n) if u not in train])
    rng.shuffle(rest)
    if len(rest) < n_valid + n_test:
        raise ValueError(f"not enough nodes for {n_valid} valid + {n_test} test")
    valid = set(int(u) for u in rest[:n_valid])
    test = set(int(u) for u in rest[n_valid:n_valid + n_test])

    with open(nodes_path, "w", encoding="utf-8") as fh:
        for i in range(n):
            fh.write(f"{i}\t{','.join(feats[i])}\t{labels[i]}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for u, v in sorted(edges):
            fh.write(f"{u}\t{v}\n")
    with open(splits_path, "w", encoding="utf-8") as fh:
        for name, members in (("train", train), ("valid", valid), ("test", test)):
            for u in sorted(members):
                fh.write(f"{u}\t{name}\n")
    if dropped:
        print(f"note: dropped {dropped} dangling/self citations", file=sys.stderr)
    return n, len(edges), len(classes)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("content", help="<name>.content file")
    parser.add_argument("cites", help="<name>.cites file")
    parser.add_argument("--out-dir", default=".", help="directory for the three TSVs")
    parser.add_argument("--train-per-class", type=int, default=20)
    parser.add_argument("--valid", type=int, default=500)
    parser.add_argument("--test", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, m, c = convert_citation_dataset(
        args.content,
        args.cites,
        out / "nodes.tsv",
        out / "edges.tsv",
        out / "splits.tsv",
        train_per_class=args.train_per_class,
        n_valid=args.valid,
        n_test=args.test,
        seed=args.seed,
    )
    print(f"wrote {out}/nodes.tsv ({n} nodes, {c} classes) and {out}/edges.tsv ({m} edges)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
