"""Naive nested-loop convolutions used as oracles for the fast paths."""
import numpy as np


def conv2d_naive(x, w, b=None, stride=1):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(k):
                            for kj in range(k):
                                y = i * stride + ki - p
                                xx = j * stride + kj - p
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[ni, ci, y, xx] * w[oi, ci, ki, kj]
                    out[ni, oi, i, j] = acc + (0.0 if b is None else b[oi])
    return out


def depthwise_naive(x, w, stride=1):
    n, c, h, wd = x.shape
    ho, wo = -(-h // stride), -(-wd // stride)
    out = np.zeros((n, c, ho, wo), dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ki in range(3):
                        for kj in range(3):
                            y = i * stride + ki - 1
                            xx = j * stride + kj - 1
                            if 0 <= y < h and 0 <= xx < wd:
                                acc += x[ni, ci, y, xx] * w[ci, 0, ki, kj]
                    out[ni, ci, i, j] = acc
    return out
