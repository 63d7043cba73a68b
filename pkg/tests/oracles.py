"""Independent oracles used across the test suite.

Everything here is deliberately written as straight-line, loop-heavy
code sharing nothing with the library implementations it checks:
a duplicate MLP evaluator, central finite differences over parameters
and inputs, and an exhaustive-permutation DER scorer.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from deskdiar.autodiff import Layer, MlpGrads, MlpParams


# ---------------------------------------------------------------- MLP oracle

def straightline_mlp(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network with explicit per-row, per-unit loops."""
    out_rows = []
    for row in np.asarray(x, dtype=np.float64):
        h = list(row)
        for layer in params.layers:
            w, b = layer.weight, layer.bias
            a = []
            for j in range(w.shape[1]):
                s = b[j]
                for i in range(w.shape[0]):
                    s += h[i] * w[i, j]
                a.append(s)
            if layer.activation == "relu":
                h = [v if v > 0.0 else 0.0 for v in a]
            elif layer.activation == "linear":
                h = a
            else:  # softmax tail
                split = len(a) - layer.tail
                tail = a[split:]
                mx = max(tail)
                exps = [math.exp(v - mx) for v in tail]
                z = sum(exps)
                h = a[:split] + [e / z for e in exps]
        out_rows.append(h)
    return np.array(out_rows, dtype=np.float64)


# ------------------------------------------------------- finite differences

def fd_param_grads(
    f: Callable[[MlpParams], float], params: MlpParams, h: float = 1e-5
) -> MlpGrads:
    """Central finite differences of a scalar objective over every entry."""
    d_w: List[np.ndarray] = []
    d_b: List[np.ndarray] = []
    for li, layer in enumerate(params.layers):
        gw = np.zeros_like(layer.weight)
        for idx in np.ndindex(layer.weight.shape):
            gw[idx] = (_f_pert(f, params, li, "weight", idx, +h)
                       - _f_pert(f, params, li, "weight", idx, -h)) / (2 * h)
        gb = np.zeros_like(layer.bias)
        for idx in np.ndindex(layer.bias.shape):
            gb[idx] = (_f_pert(f, params, li, "bias", idx, +h)
                       - _f_pert(f, params, li, "bias", idx, -h)) / (2 * h)
        d_w.append(gw)
        d_b.append(gb)
    return MlpGrads(weights=d_w, biases=d_b)


def _f_pert(f, params: MlpParams, li: int, which: str, idx, delta: float
            ) -> float:
    layers = []
    for i, layer in enumerate(params.layers):
        w = layer.weight.copy()
        b = layer.bias.copy()
        if i == li:
            if which == "weight":
                w[idx] += delta
            else:
                b[idx] += delta
        layers.append(Layer(weight=w, bias=b, activation=layer.activation,
                            tail=layer.tail))
    return float(f(MlpParams(layers=tuple(layers))))


def fd_input_grads(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        xp = np.array(x, dtype=np.float64)
        xm = np.array(x, dtype=np.float64)
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def assert_grads_close(analytic: MlpGrads, reference: MlpGrads,
                       rtol: float = 1e-4, atol: float = 1e-7) -> None:
    """Entrywise |a - r| <= atol + rtol * |r| over all layers."""
    for li, (aw, rw) in enumerate(zip(analytic.weights, reference.weights)):
        ok = np.abs(aw - rw) <= atol + rtol * np.abs(rw)
        assert ok.all(), f"weight gradient mismatch in layer {li}: " \
            f"max err {np.abs(aw - rw).max():.3e}"
    for li, (ab, rb) in enumerate(zip(analytic.biases, reference.biases)):
        ok = np.abs(ab - rb) <= atol + rtol * np.abs(rb)
        assert ok.all(), f"bias gradient mismatch in layer {li}: " \
            f"max err {np.abs(ab - rb).max():.3e}"


# ------------------------------------------------------------- random nets

def random_params(rng: np.random.Generator, dims: Sequence[int],
                  final: str = "linear", tail: int = 0,
                  scale: float = 0.8) -> MlpParams:
    """Small random network: ReLU hidden layers, configurable final layer."""
    layers = []
    for i in range(len(dims) - 1):
        w = scale * rng.standard_normal((dims[i], dims[i + 1]))
        b = 0.1 * rng.standard_normal(dims[i + 1])
        last = i == len(dims) - 2
        layers.append(Layer(
            weight=w, bias=b,
            activation=(final if last else "relu"),
            tail=(tail if last else 0),
        ))
    return MlpParams(layers=tuple(layers))


# --------------------------------------------------------- brute-force DER

def brute_force_der(
    reference: Sequence[Tuple[float, float, str]],
    hypothesis: Sequence[Tuple[float, float, str]],
    collar: float,
) -> Dict[str, float]:
    """Exhaustive-permutation DER on millisecond ticks.

    Turns are (onset s, duration s, label).  Reference and hypothesis
    must each have at most one active speaker per instant.  Returns the
    same accounting fields as score.der, computed with independent
    interval slicing and a mapping found by trying every injective
    assignment of reference speakers to hypothesis speakers.
    """
    ref = [(round(o * 1000), round((o + d) * 1000), lab)
           for o, d, lab in reference]
    hyp = [(round(o * 1000), round((o + d) * 1000), lab)
           for o, d, lab in hypothesis]
    collar_t = round(collar * 1000)

    points = set()
    for a, b, _ in ref:
        points.update((a, b, a - collar_t, a + collar_t,
                       b - collar_t, b + collar_t))
    for a, b, _ in hyp:
        points.update((a, b))
    cut = sorted(points)

    def active(turns, lo, hi):
        labs = [lab for a, b, lab in turns if a <= lo and hi <= b]
        assert len(labs) <= 1, "oracle requires single-speaker timelines"
        return labs[0] if labs else None

    def scored(lo, hi):
        for a, b, _ in ref:
            for edge in (a, b):
                if edge - collar_t <= lo and hi <= edge + collar_t:
                    return False
        return True

    cells = []  # (duration, ref label or None, hyp label or None)
    for lo, hi in zip(cut, cut[1:]):
        if hi <= lo or not scored(lo, hi):
            continue
        cells.append((hi - lo, active(ref, lo, hi), active(hyp, lo, hi)))
    ref_labels = sorted({lab for _, _, lab in ref})
    hyp_labels = sorted({lab for _, _, lab in hyp})

    scored_ref = sum(d for d, r, _ in cells if r is not None)
    missed = sum(d for d, r, hh in cells if r is not None and hh is None)
    fa = sum(d for d, r, hh in cells if r is None and hh is not None)

    # every injective ref->hyp mapping: permute the larger side over the
    # smaller (a maximal matching never scores worse than a partial one)
    best_correct = 0
    best_map: Dict[str, str] = {}
    if ref_labels and hyp_labels:
        best_correct = -1
        if len(ref_labels) <= len(hyp_labels):
            candidates = (dict(zip(ref_labels, images)) for images in
                          itertools.permutations(hyp_labels, len(ref_labels)))
        else:
            candidates = (dict(zip(domain, hyp_labels)) for domain in
                          itertools.permutations(ref_labels, len(hyp_labels)))
        for mapping in candidates:
            correct = sum(d for d, r, hh in cells
                          if r is not None and hh is not None
                          and mapping.get(r) == hh)
            if correct > best_correct:
                best_correct = correct
                best_map = mapping
    both = sum(d for d, r, hh in cells if r is not None and hh is not None)
    confusion = both - best_correct
    if scored_ref == 0:
        raise ZeroDivisionError("no scored reference speech")
    der = (missed + fa + confusion) / scored_ref * 100.0
    return {
        "scored": scored_ref / 1000.0,
        "missed": missed / 1000.0,
        "false_alarm": fa / 1000.0,
        "confusion": confusion / 1000.0,
        "der": der,
        "mapping": best_map,
    }


def jacobi_eigh(mat: np.ndarray, sweeps: int = 100,
                tol: float = 1e-12) -> Tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Independent slow-path reference for eig_sym: sweeps Givens rotations over
    every off-diagonal pair until the off-diagonal Frobenius norm drops below
    tol. Only sensible for small n.
    """
    a = np.array(mat, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(sweeps):
        strict = a - np.diag(np.diag(a))
        if np.sqrt((strict ** 2).sum()) < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                # hypot keeps theta**2 from overflowing for tiny pivots
                t = np.sign(theta) / (abs(theta) + np.hypot(theta, 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t ** 2 + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    order = np.argsort(np.diag(a), kind="stable")
    return np.diag(a)[order], v[:, order]
