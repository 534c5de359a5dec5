"""Shared test fixtures and independent oracles.

The oracles here deliberately avoid the library's own algorithms: the
warping-distance oracle enumerates every monotone alignment, and gradients
are checked against central finite differences of the loss.
"""

from __future__ import annotations

import numpy as np

from tstransfer import Dataset, LabeledSeries, z_normalize
from tstransfer.fcn import clone_model


def dtw_brute_force(a, b) -> float:
    """Minimum over all monotone warping paths of the path-ordered cost sum.

    Exhaustive depth-first enumeration; costs are accumulated from the start
    of each path so the float result is comparable bit-for-bit with a
    dynamic program that adds the local cost after the predecessor minimum.
    Only usable for short series.
    """
    x = [float(v) for v in np.asarray(a, dtype=np.float64).ravel()]
    y = [float(v) for v in np.asarray(b, dtype=np.float64).ravel()]
    n, m = len(x), len(y)
    d = x[0] - y[0]
    stack = [(0, 0, d * d)]
    best = None
    while stack:
        i, j, acc = stack.pop()
        if i == n - 1 and j == m - 1:
            if best is None or acc < best:
                best = acc
            continue
        if i + 1 < n and j + 1 < m:
            d = x[i + 1] - y[j + 1]
            stack.append((i + 1, j + 1, acc + d * d))
        if i + 1 < n:
            d = x[i + 1] - y[j]
            stack.append((i + 1, j, acc + d * d))
        if j + 1 < m:
            d = x[i] - y[j + 1]
            stack.append((i, j + 1, acc + d * d))
    return best


def is_valid_warping_path(path, len_a: int, len_b: int) -> bool:
    """Starts at (1,1), ends at the corner, steps +1 in i, j, or both."""
    if path[0] != (1, 1) or path[-1] != (len_a, len_b):
        return False
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        di, dj = i1 - i0, j1 - j0
        if (di, dj) not in ((1, 0), (0, 1), (1, 1)):
            return False
    return True


def finite_difference_gradients(model, batch, step: float = 1e-4,
                                fallback_steps=(1e-5, 1e-6)):
    """Central-difference gradients of the training-mode loss, per parameter.

    A central difference is a valid derivative estimate only when the loss
    is smooth across the probe bracket; rectifier units make it piecewise
    smooth, so a probe whose two endpoints land in different activation
    patterns straddles a kink and measures a blend of two slopes. Such
    coordinates are re-probed with smaller steps; if every step keeps
    crossing the kink the coordinate is reported as unusable instead of
    producing a bogus estimate.

    Returns (fd, usable, skipped_count): per-tensor derivative arrays, a
    matching boolean validity mask, and the number of skipped coordinates.
    Running statistics do not influence the training-mode loss, so their
    drift during probing is harmless.
    """
    from tstransfer.fcn import (
        _forward_impl,
        _log_softmax,
        _split_pairs,
        _stack_batch,
    )

    work = clone_model(model)
    series, labels = _split_pairs(batch)
    x = _stack_batch(series)
    labels = np.asarray(labels)
    rows = np.arange(len(labels))

    def probe():
        logits, (caches, _, _) = _forward_impl(work, x, training=True)
        logp = _log_softmax(logits)
        loss = float(-logp[rows, labels].mean())
        pattern = b"".join(cache[4].tobytes() for cache in caches)
        return loss, pattern

    fd: dict[str, np.ndarray] = {}
    usable: dict[str, np.ndarray] = {}
    skipped = 0
    for name, param in work.trainable():
        flat = param.reshape(-1)
        out = np.zeros(flat.size)
        ok = np.zeros(flat.size, dtype=bool)
        for k in range(flat.size):
            orig = float(flat[k])
            for h in (step, *fallback_steps):
                flat[k] = orig + h
                plus, pattern_plus = probe()
                flat[k] = orig - h
                minus, pattern_minus = probe()
                flat[k] = orig
                if pattern_plus == pattern_minus:
                    out[k] = (plus - minus) / (2.0 * h)
                    ok[k] = True
                    break
            else:
                skipped += 1
        fd[name] = out.reshape(param.shape)
        usable[name] = ok.reshape(param.shape)
    return fd, usable, skipped


def gradient_relative_errors(analytic, numeric, usable=None, floor: float = 1e-4):
    """Elementwise |a-n| / max(|a|, |n|, floor) per tensor name.

    The floor makes the criterion an absolute one for components smaller
    than `floor`, where finite differences carry only round-off information.
    Coordinates marked unusable (kink-straddling probes) score zero.
    """
    out = {}
    for name in numeric:
        err = np.abs(analytic[name] - numeric[name]) / np.maximum.reduce(
            [np.abs(analytic[name]), np.abs(numeric[name]),
             np.full_like(numeric[name], floor)]
        )
        if usable is not None:
            err = np.where(usable[name], err, 0.0)
        out[name] = err
    return out


def make_sine_dataset(
    name: str,
    freqs,
    n_train: int = 20,
    n_test: int = 20,
    length: int = 64,
    noise: float = 0.6,
    seed: int = 0,
    phase_jitter: float = 1.0,
) -> Dataset:
    """Synthetic dataset whose classes are sinusoids of distinct frequencies.

    Each series is a phase-jittered sine plus Gaussian noise, z-normalized.
    Counts that do not divide evenly give the extra series to the lowest
    classes so the split size is exact.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length)

    def split(n):
        per, extra = divmod(n, len(freqs))
        items = []
        for label, freq in enumerate(freqs):
            for _ in range(per + (1 if label < extra else 0)):
                phase = rng.uniform(-phase_jitter, phase_jitter)
                sig = np.sin(2 * np.pi * freq * t / length + phase)
                sig = sig + noise * rng.standard_normal(length)
                items.append(LabeledSeries(z_normalize(sig), label))
        return tuple(items)

    return Dataset(
        name=name, train=split(n_train), test=split(n_test), class_count=len(freqs)
    )


def make_constant_dataset(
    name: str, n_per_class: int = 10, length: int = 32, seed: int = 0
) -> Dataset:
    """Linearly separable two-class set: +1 series vs -1 series plus noise."""
    rng = np.random.default_rng(seed)
    items = []
    for label, level in enumerate((1.0, -1.0)):
        for _ in range(n_per_class):
            sig = np.full(length, level) + 0.05 * rng.standard_normal(length)
            items.append(LabeledSeries(sig, label))
    return Dataset(name=name, train=tuple(items), test=(), class_count=2)


def random_labeled_split(rng, n: int, length: int, classes: int = 2):
    return tuple(
        LabeledSeries(rng.standard_normal(length), label=int(k % classes))
        for k in range(n)
    )


def make_random_dataset(
    name: str, rng, n_train: int = 6, n_test: int = 4, length: int = 10,
    classes: int = 2,
) -> Dataset:
    return Dataset(
        name=name,
        train=random_labeled_split(rng, n_train, length, classes),
        test=random_labeled_split(rng, n_test, length, classes),
        class_count=classes,
    )
