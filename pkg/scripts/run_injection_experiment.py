"""End-to-end node-injection experiment on the synthetic retweet trees."""

import os
import sys

from gtattack.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIG = os.path.join(HERE, "tree_config.json")

if __name__ == "__main__":
    args = sys.argv[1:]
    for stage in ("generate", "train", "attack", "ablate", "report"):
        code = main([stage, "--config", CONFIG, *args])
        if code != 0:
            sys.exit(code)
