from __future__ import annotations

import math

import numpy as np
import pytest

from deltaquant.checkpoint import RawTensor, save_checkpoint


def e4m3_table_oracle() -> np.ndarray:
    """Values of all 256 E4M3 codes, built from the bit layout with ldexp.

    Kept separate from the library's own table so the codec tests have an
    independent reference.
    """
    out = np.empty(256)
    for code in range(256):
        s, e, m = code >> 7, (code >> 3) & 0b1111, code & 0b111
        if e == 0b1111 and m == 0b111:
            out[code] = math.nan
        elif e == 0:
            out[code] = (-1) ** s * math.ldexp(m, -6 - 3)
        else:
            out[code] = (-1) ** s * math.ldexp(8 + m, e - 7 - 3)
    return out


def brute_force_encode(x: np.ndarray, chunk: int = 65536) -> np.ndarray:
    """Nearest E4M3 code by exhaustive distance over the value table.

    Saturates at 448; exact ties pick the code with even mantissa; the sign
    bit follows ``signbit(x)``.
    """
    table = e4m3_table_oracle()
    positive = table[:127]  # 0x00..0x7E
    x = np.asarray(x, dtype=np.float64).ravel()
    out = np.empty(x.size, dtype=np.uint8)
    for start in range(0, x.size, chunk):
        mag = np.minimum(np.abs(x[start : start + chunk]), 448.0)
        dist = np.abs(mag[:, None] - positive[None, :])
        best = dist.min(axis=1, keepdims=True)
        is_best = dist == best
        # two nearest neighbours at most; prefer even mantissa (= even code)
        even = is_best & (np.arange(127)[None, :] % 2 == 0)
        code = np.where(even.any(axis=1), even.argmax(axis=1), is_best.argmax(axis=1))
        sign = np.signbit(x[start : start + chunk])
        out[start : start + chunk] = code | (sign.astype(np.uint8) << 7)
    return out


def random_pair(rng, shape, delta_sigma=0.01):
    base = rng.standard_normal(shape).astype(np.float32)
    post = (base + delta_sigma * rng.standard_normal(shape)).astype(np.float32)
    return base, post


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def checkpoint_pair(tmp_path):
    """Small base/post checkpoints: two quantizable layers, a norm, an embedding, a bf16 tensor."""
    rng = np.random.default_rng(7)
    base, post = {}, {}
    for name, shape in [("model.layers.0.mlp.weight", (96, 64)), ("model.layers.1.attn.weight", (130, 70))]:
        b, p = random_pair(rng, shape)
        base[name], post[name] = b, p
    norm = rng.standard_normal(64).astype(np.float32)
    base["model.norm.weight"] = norm
    post["model.norm.weight"] = norm + 0.01
    emb_b, emb_p = random_pair(rng, (100, 64))
    base["model.embed_tokens.weight"], post["model.embed_tokens.weight"] = emb_b, emb_p
    bf_b, bf_p = random_pair(rng, (64, 80))
    base["model.layers.2.bf16.weight"] = RawTensor.from_array(bf_b, "BF16")
    post["model.layers.2.bf16.weight"] = RawTensor.from_array(bf_p, "BF16")
    base_path = save_checkpoint(base, tmp_path / "base.safetensors")
    post_path = save_checkpoint(post, tmp_path / "post.safetensors")
    return base_path, post_path


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
