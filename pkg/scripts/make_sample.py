"""Regenerate the bundled sample and its golden outputs.

    python3 scripts/make_sample.py

Run only when the sample scene or the model defaults change on purpose; the
golden files are checked by the test suite.
"""
import json
import os
import sys

from slanted_stixels.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "src", "slanted_stixels", "data", "sample")

SCENE = {
    "width": 64,
    "height": 48,
    "ground_d0": 24.0,
    "ground_segments": [[12, -0.75], [36, -0.4]],
    "sky_from": 36,
    "objects": [
        {"col_start": 8, "col_end": 24, "base_row": 8, "height": 16, "label": "car"},
        {"col_start": 40, "col_end": 48, "base_row": 4, "height": 24, "disparity": 26.0, "label": "person"},
    ],
    "noise_sigma": 0.5,
    "outlier_rate": 0.02,
    "invalid_rate": 0.05,
    "semantic_blend": 0.3,
    "seed": 7,
}


def run(*argv):
    code = main(list(argv))
    if code:
        sys.exit(code)


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    with open(os.path.join(OUT, "scene.json"), "w") as fh:
        json.dump(SCENE, fh, indent=2)
        fh.write("\n")
    run("synth", "--spec", os.path.join(OUT, "scene.json"), "--out-dir", OUT)
    common = ["--disparity", os.path.join(OUT, "disparity.pfm"),
              "--semantics", os.path.join(OUT, "semantics.semf"),
              "--width", "8", "--vstep", "4", "--threads", "1"]
    run("infer", *common, "--mode", "exact", "--out", os.path.join(OUT, "world.json"),
        "--viz", os.path.join(OUT, "world_semantic.ppm"))
    run("infer", *common, "--mode", "exact", "--out", os.path.join(OUT, "world.json"),
        "--viz", os.path.join(OUT, "world_depth.ppm"), "--viz-mode", "depth")
