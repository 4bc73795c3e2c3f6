#!/usr/bin/env python3
"""Regenerate the committed reference assets.

Writes the deepfish-tiny manifest + weight blob and the fixture search
space under assets/, and (with --dataset) a synthetic two-class PPM set
for the evaluate/preprocess demos. Everything is seeded; reruns are
byte-identical, which the test suite asserts.
"""

import argparse
from pathlib import Path

from tinybat import search
from tinybat.fixture import deepfish_tiny_model, write_synthetic_dataset
from tinybat.manifest import save_model

REPO = Path(__file__).resolve().parents[1]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", action="store_true",
                        help="also write the synthetic demo dataset")
    args = parser.parse_args()

    assets = REPO / "assets" / "deepfish-tiny"
    assets.mkdir(parents=True, exist_ok=True)
    save_model(deepfish_tiny_model(), assets / "deepfish_tiny.json")
    search.save_space(search.fixture_space(), assets / "space.json")
    print(f"wrote {assets}/deepfish_tiny.json, .weights.bin, space.json")

    if args.dataset:
        dataset = REPO / "assets" / "demo-dataset"
        write_synthetic_dataset(dataset, per_class=20)
        print(f"wrote {dataset}/class_a, class_b (20 images each)")


if __name__ == "__main__":
    main()
