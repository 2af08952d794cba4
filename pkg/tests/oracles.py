"""Independent reference computations used by the test-suite.

Nothing in here imports the code paths it is used to check.
"""
import numpy as np


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def naive_mlp(weights, biases, acts, x):
    """Loop-based MLP evaluation (no matrix products)."""
    a = list(np.asarray(x, dtype=np.float64))
    zs = []
    for w, b, act in zip(weights, biases, acts):
        z = []
        for i in range(w.shape[0]):
            s = b[i]
            for j in range(w.shape[1]):
                s += w[i, j] * a[j]
            z.append(s)
        zs.append(z)
        if act == "relu":
            a = [max(v, 0.0) for v in z]
        elif act == "tanh":
            a = [float(np.tanh(v)) for v in z]
        else:
            a = z
    return np.array(a), zs


def rel_close(analytic, numeric, rtol=1e-4, atol=1e-6):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return bool(np.all((diff <= atol) | (diff <= rtol * scale)))


def kde_direct(samples, grid, bandwidth):
    out = np.zeros_like(grid, dtype=np.float64)
    for s in samples:
        out += np.exp(-0.5 * ((grid - s) / bandwidth) ** 2)
    return out / (len(samples) * bandwidth * np.sqrt(2 * np.pi))
