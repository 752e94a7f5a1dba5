"""Seeded random states, unitaries, channels, and instruments for testing
and for the randomized certificate sweeps in the pipelines."""

from __future__ import annotations

import numpy as np

from .registers import RegisterLayout
from .states import Instrument, KrausChannel


def rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_pure_vector(dim: int, gen: np.random.Generator) -> np.ndarray:
    v = gen.normal(size=dim) + 1j * gen.normal(size=dim)
    return v / np.linalg.norm(v)


def random_density_matrix(dim: int, gen: np.random.Generator, rank: int | None = None) -> np.ndarray:
    r = rank or dim
    g = gen.normal(size=(dim, r)) + 1j * gen.normal(size=(dim, r))
    m = g @ g.conj().T
    return m / np.trace(m)


def random_unitary(dim: int, gen: np.random.Generator) -> np.ndarray:
    g = gen.normal(size=(dim, dim)) + 1j * gen.normal(size=(dim, dim))
    q, r = np.linalg.qr(g)
    # fix the phase ambiguity of QR so the distribution is Haar
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_isometry(rows: int, cols: int, gen: np.random.Generator) -> np.ndarray:
    if rows < cols:
        raise ValueError(f"isometry needs rows >= cols, got {rows} x {cols}")
    g = gen.normal(size=(rows, cols)) + 1j * gen.normal(size=(rows, cols))
    q, r = np.linalg.qr(g)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_channel(
    layout_in: RegisterLayout,
    layout_out: RegisterLayout,
    gen: np.random.Generator,
    kraus_count: int = 2,
) -> KrausChannel:
    """Random CPTP map via a Stinespring isometry split into blocks."""
    din = layout_in.total_dim
    dout = layout_out.total_dim
    v = random_isometry(dout * kraus_count, din, gen)
    kraus = [v[e * dout : (e + 1) * dout, :] for e in range(kraus_count)]
    return KrausChannel(kraus, layout_in, layout_out)


def random_instrument(
    layout: RegisterLayout, gen: np.random.Generator, outcomes: int = 2
) -> Instrument:
    """Random instrument with a single Kraus operator per outcome (keeps pure
    inputs pure along every branch)."""
    d = layout.total_dim
    raw = [gen.normal(size=(d, d)) + 1j * gen.normal(size=(d, d)) for _ in range(outcomes)]
    gram = sum(m.conj().T @ m for m in raw)
    vals, vecs = np.linalg.eigh(gram)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.conj().T
    branches = [(str(i), [m @ inv_sqrt]) for i, m in enumerate(raw)]
    return Instrument(branches, layout, layout)
