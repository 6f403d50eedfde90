"""Shared helpers for the test suite: finite differences and small models."""

import numpy as np

import foldgraph.network as net


def central_difference(f, x, eps=1e-6):
    """Elementwise central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(1.0, np.linalg.norm(numeric))


def tiny_model_config(filter_kind="none", **overrides):
    base = dict(
        code_len=8,
        lattice_side=4,
        knn_k=3,
        sigma=0.15,
        mu=0.5,
        filter_kind=filter_kind,
        encoder_point_widths=(8, 16),
        encoder_code_widths=(8,),
        fold_hidden=12,
        topo_hidden=8,
    )
    base.update(overrides)
    return net.ModelConfig(**base)
