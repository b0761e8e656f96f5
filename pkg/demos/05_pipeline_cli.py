"""The batch CLI, end to end in a temporary directory.

degrade -> train -> fuse -> eval -> sr -> summary, all through the same
entry point the installed ``dcfmn`` script uses.
"""

import tempfile
from pathlib import Path

import numpy as np

from dcfmn import data
from dcfmn.cli import main

rng = np.random.default_rng(5)
root = Path(tempfile.mkdtemp(prefix="dcfmn-demo-"))
print(f"working under {root}")

src = root / "hr_images"
src.mkdir()
for i in range(4):
    smooth = data.bicubic_resize(rng.random((48, 48)), 48, 48)
    data.write_png(src / f"img{i}.png",
                   data.to_image8(np.stack([smooth] * 3, axis=2)))

steps = [
    ["degrade", "--in", str(src), "--out", str(root / "ds"), "--scale", "2"],
    ["train", "--manifest", str(root / "ds" / "manifest.tsv"),
     "--out", str(root / "run"), "--model", "tiny", "--iters", "30",
     "--batch", "4", "--patch", "16", "--seed", "0", "--trace-every", "10"],
    ["fuse", "--in", str(root / "run" / "model_ema.ckpt"),
     "--out", str(root / "run" / "model_fused.ckpt")],
    ["eval", "--manifest", str(root / "ds" / "manifest.tsv"),
     "--out", str(root / "eval_model"),
     "--checkpoint", str(root / "run" / "model_fused.ckpt"),
     "--dataset-name", "toy"],
    ["eval", "--manifest", str(root / "ds" / "manifest.tsv"),
     "--out", str(root / "eval_bicubic"), "--model", "bicubic",
     "--dataset-name", "toy"],
    ["sr", "--checkpoint", str(root / "run" / "model_fused.ckpt"),
     "--in", str(root / "ds" / "lr" / "img0.png"),
     "--out", str(root / "img0_x2.png")],
    ["summary", "--checkpoint", str(root / "run" / "model_fused.ckpt")],
]
for argv in steps:
    print(f"\n$ dcfmn {' '.join(argv)}")
    code = main(argv)
    assert code == 0, f"command failed: {argv}"

print("\nreports:")
print((root / "eval_model" / "report.md").read_text())
print((root / "eval_bicubic" / "report.md").read_text())
