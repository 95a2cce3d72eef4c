"""
Checkpoints in and out
======================

Write a small base/post pair, quantize it with the same entry point the
command line uses, then score the result again from disk.
"""

import tempfile
from pathlib import Path

import numpy as np

from deltaquant import MetricKind, load_checkpoint, save_checkpoint
from deltaquant.cli import cmd_evaluate, cmd_quantize

rng = np.random.default_rng(4)
work = Path(tempfile.mkdtemp())

base, post = {}, {}
for i in range(3):
    w = rng.standard_normal((192, 160)).astype(np.float32)
    base[f"model.layers.{i}.mlp.weight"] = w
    post[f"model.layers.{i}.mlp.weight"] = w + 0.01 * rng.standard_normal(w.shape).astype(np.float32)
# norms are too small to quantize and pass through untouched
base["model.norm.weight"] = np.ones(160, np.float32)
post["model.norm.weight"] = np.full(160, 1.01, np.float32)

save_checkpoint(base, work / "base.safetensors")
save_checkpoint(post, work / "post.safetensors")

report = cmd_quantize(work / "base.safetensors", work / "post.safetensors", work / "fp8.safetensors",
                      metric=MetricKind.SIGN_RATE, workers=1)
print(report.to_text())

ckpt = load_checkpoint(work / "fp8.safetensors")
for name in ckpt:
    info = ckpt.info(name)
    print(f"{name:40s} {info.dtype:8s} {list(info.shape)}")

# Scoring the file on disk reproduces the numbers from the quantize run.
again = cmd_evaluate(work / "base.safetensors", work / "post.safetensors", work / "fp8.safetensors",
                     work / "eval.json")
print("same metrics:", [r.sign_rate for r in again.per_layer] == [r.sign_rate for r in report.per_layer])
