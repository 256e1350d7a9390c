"""Shared test inputs."""
import numpy as np

from ttsr.autograd import Tensor
from ttsr.data import to_tensor, upsample4


def shifted_case(seed, n=24, shift=8):
    """LR, its x4 up-sampled version, and a Ref holding the same up-sampled content
    moved by ``shift`` pixels (cut from a larger canvas, so no wrap seam)."""
    r = np.random.default_rng(seed)
    canvas = r.integers(0, 256, (n + 4, n + 4, 3), dtype=np.uint8)
    lr = to_tensor(canvas[:n, :n], np.float64)
    big = upsample4(to_tensor(canvas, np.float64)).data
    return lr, upsample4(lr).data, Tensor(big[:, :, shift:shift + 4 * n, shift:shift + 4 * n])
