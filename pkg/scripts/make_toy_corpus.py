#!/usr/bin/env python3
"""Render the synthetic tone-sequence corpus used by the overfit experiment.

Usage: python scripts/make_toy_corpus.py OUT_DIR
"""

import argparse

from prefixasr.toydata import write_toy_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir")
    args = parser.parse_args()
    manifest = write_toy_corpus(args.out_dir)
    print(manifest)


if __name__ == "__main__":
    main()
