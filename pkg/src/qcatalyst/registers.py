"""Register-labelled dense linear algebra.

Operators carry an ordered list of named registers on each side; the leftmost
register is the most significant index of the row-major matrix. Everything in
here is dense numpy and is meant for desk-scale dimensions (a global matrix is
never allowed to grow beyond ``DENSE_CAP`` per side).
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LayoutError, ValidationError

ALICE = "Alice"
BOB = "Bob"
REFEREE = "Referee"
PARTIES = (ALICE, BOB, REFEREE)

# Numerical contract knobs, shared by the rest of the package.
HERMITICITY_ATOL = 1e-10
RECONSTRUCTION_ATOL = 1e-9
DENSE_CAP = 2000


@dataclasses.dataclass(frozen=True)
class Register:
    """A named subsystem with a dimension and an owning party."""

    label: str
    dim: int
    party: str

    def __post_init__(self):
        if not isinstance(self.label, str) or not self.label:
            raise LayoutError("register label must be a non-empty string")
        if int(self.dim) != self.dim or self.dim < 1:
            raise LayoutError(f"register {self.label!r} has invalid dim {self.dim!r}")
        if self.party not in PARTIES:
            raise LayoutError(
                f"register {self.label!r} has unknown party {self.party!r}; "
                f"expected one of {PARTIES}"
            )


@dataclasses.dataclass(frozen=True)
class RegisterLayout:
    """Ordered collection of registers; order fixes the index convention."""

    registers: tuple[Register, ...]

    def __post_init__(self):
        labels = [r.label for r in self.registers]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate register labels in layout: {labels}")

    @classmethod
    def build(cls, specs: Iterable[tuple[str, int, str]]) -> "RegisterLayout":
        return cls(tuple(Register(label, dim, party) for label, dim, party in specs))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.registers)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(r.dim for r in self.registers)

    @property
    def total_dim(self) -> int:
        out = 1
        for r in self.registers:
            out *= r.dim
        return out

    def __len__(self) -> int:
        return len(self.registers)

    def __getitem__(self, label: str) -> Register:
        for r in self.registers:
            if r.label == label:
                return r
        raise LayoutError(f"no register labelled {label!r} in layout {self.labels}")

    def __contains__(self, label: str) -> bool:
        return any(r.label == label for r in self.registers)

    def index_of(self, label: str) -> int:
        for i, r in enumerate(self.registers):
            if r.label == label:
                return i
        raise LayoutError(f"no register labelled {label!r} in layout {self.labels}")

    def party_of(self, label: str) -> str:
        return self[label].party

    def party_labels(self, party: str) -> tuple[str, ...]:
        if party not in PARTIES:
            raise LayoutError(f"unknown party {party!r}")
        return tuple(r.label for r in self.registers if r.party == party)

    def subset(self, labels: Sequence[str]) -> "RegisterLayout":
        """Sub-layout of the given labels, keeping this layout's order."""
        wanted = set(labels)
        missing = wanted - set(self.labels)
        if missing:
            raise LayoutError(f"labels {sorted(missing)} not in layout {self.labels}")
        return RegisterLayout(tuple(r for r in self.registers if r.label in wanted))

    def concat(self, other: "RegisterLayout") -> "RegisterLayout":
        return RegisterLayout(self.registers + other.registers)

    def permuted(self, new_order: Sequence[str]) -> "RegisterLayout":
        if sorted(new_order) != sorted(self.labels):
            raise LayoutError(
                f"permutation {list(new_order)} is not a rearrangement of {self.labels}"
            )
        return RegisterLayout(tuple(self[label] for label in new_order))

    def with_party(self, label: str, party: str) -> "RegisterLayout":
        if party not in PARTIES:
            raise LayoutError(f"unknown party {party!r}")
        regs = tuple(
            Register(r.label, r.dim, party) if r.label == label else r
            for r in self.registers
        )
        if label not in self:
            raise LayoutError(f"no register labelled {label!r}")
        return RegisterLayout(regs)

    def to_json(self) -> list[dict]:
        return [
            {"label": r.label, "dim": r.dim, "party": r.party} for r in self.registers
        ]

    @classmethod
    def from_json(cls, data: list) -> "RegisterLayout":
        try:
            return cls.build((d["label"], int(d["dim"]), d["party"]) for d in data)
        except (KeyError, TypeError) as exc:
            raise LayoutError(f"malformed layout JSON: {exc}") from exc


EMPTY_LAYOUT = RegisterLayout(())


class MultipartiteOperator:
    """Dense complex matrix between two register layouts.

    Rectangular shapes are first class: a channel's Kraus operator may consume
    and emit different registers. A ket is an operator whose input layout is
    empty (a D x 1 column).
    """

    def __init__(self, entries, layout_out: RegisterLayout, layout_in: RegisterLayout):
        arr = np.array(entries, dtype=np.complex128)
        if arr.ndim != 2:
            raise ValidationError(f"operator entries must be 2-D, got shape {arr.shape}")
        expected = (layout_out.total_dim, layout_in.total_dim)
        if arr.shape != expected:
            raise ValidationError(
                f"entries shape {arr.shape} does not match layouts {expected}"
            )
        arr.setflags(write=False)
        self.entries = arr
        self.layout_out = layout_out
        self.layout_in = layout_in

    # -- constructors ------------------------------------------------------

    @classmethod
    def identity(cls, layout: RegisterLayout) -> "MultipartiteOperator":
        return cls(np.eye(layout.total_dim), layout, layout)

    @classmethod
    def square(cls, entries, layout: RegisterLayout) -> "MultipartiteOperator":
        return cls(entries, layout, layout)

    @classmethod
    def ket(cls, vector, layout: RegisterLayout) -> "MultipartiteOperator":
        col = np.asarray(vector, dtype=np.complex128).reshape(-1, 1)
        return cls(col, layout, EMPTY_LAYOUT)

    # -- basic structure ---------------------------------------------------

    @property
    def is_square(self) -> bool:
        return self.layout_in == self.layout_out

    @property
    def is_ket(self) -> bool:
        return len(self.layout_in) == 0 and len(self.layout_out) > 0

    def dagger(self) -> "MultipartiteOperator":
        return MultipartiteOperator(self.entries.conj().T, self.layout_in, self.layout_out)

    def trace(self) -> complex:
        if not self.is_square:
            raise ValidationError("trace requires matching input/output layouts")
        return complex(np.trace(self.entries))

    def vector(self) -> np.ndarray:
        if len(self.layout_in) != 0:
            raise ValidationError("vector() requires an empty input layout")
        return self.entries[:, 0].copy()

    def max_hermiticity_defect(self) -> float:
        if not self.is_square:
            raise ValidationError("hermiticity defect requires a square operator")
        return float(np.max(np.abs(self.entries - self.entries.conj().T), initial=0.0))

    def __matmul__(self, other: "MultipartiteOperator") -> "MultipartiteOperator":
        if self.layout_in != other.layout_out:
            raise LayoutError("operator composition: inner layouts do not match")
        return MultipartiteOperator(
            self.entries @ other.entries, self.layout_out, other.layout_in
        )


def tensor_product(x: MultipartiteOperator, y: MultipartiteOperator) -> MultipartiteOperator:
    """Kronecker product; labels of the two operands must be disjoint."""
    shared = set(x.layout_out.labels + x.layout_in.labels) & set(
        y.layout_out.labels + y.layout_in.labels
    )
    if shared:
        raise LayoutError(f"tensor product with shared labels {sorted(shared)}")
    return MultipartiteOperator(
        np.kron(x.entries, y.entries),
        x.layout_out.concat(y.layout_out),
        x.layout_in.concat(y.layout_in),
    )


def _as_axes(op: MultipartiteOperator) -> np.ndarray:
    """Reshape entries to one axis per register: out axes first, then in axes."""
    dims = op.layout_out.dims + op.layout_in.dims
    if not dims:
        dims = ()
    return op.entries.reshape(dims or (1, 1))


def partial_trace(x: MultipartiteOperator, discard: Sequence[str]) -> MultipartiteOperator:
    """Trace out the named registers of a square operator."""
    if not x.is_square:
        raise ValidationError("partial trace requires a square operator")
    layout = x.layout_out
    discard = list(discard)
    for label in discard:
        if label not in layout:
            raise LayoutError(f"cannot trace out unknown register {label!r}")
    if len(set(discard)) != len(discard):
        raise LayoutError(f"repeated labels in discard list: {discard}")
    keep = [lab for lab in layout.labels if lab not in set(discard)]
    n = len(layout)
    arr = x.entries.reshape(layout.dims + layout.dims)
    # einsum with integer axis ids: traced registers share an id on both sides.
    out_ids = []
    in_ids = []
    keep_out_ids = []
    keep_in_ids = []
    next_id = 0
    ids_out = {}
    for i, lab in enumerate(layout.labels):
        ids_out[lab] = next_id
        out_ids.append(next_id)
        next_id += 1
    for i, lab in enumerate(layout.labels):
        if lab in set(discard):
            in_ids.append(ids_out[lab])
        else:
            in_ids.append(next_id)
            keep_out_ids.append(ids_out[lab])
            keep_in_ids.append(next_id)
            next_id += 1
    reduced = np.einsum(arr, out_ids + in_ids, keep_out_ids + keep_in_ids)
    new_layout = layout.subset(keep)
    d = new_layout.total_dim
    return MultipartiteOperator(reduced.reshape(d, d), new_layout, new_layout)


def permute_registers(x: MultipartiteOperator, new_order: Sequence[str]) -> MultipartiteOperator:
    """Reorder registers of a square operator or a ket.

    Pure index bookkeeping (reshape/transpose/reshape); applying the inverse
    permutation recovers the original operator bit-exactly.
    """
    if not (x.is_square or len(x.layout_in) == 0):
        raise ValidationError("permute_registers handles square operators and kets")
    layout = x.layout_out
    new_layout = layout.permuted(new_order)
    perm = [layout.index_of(lab) for lab in new_order]
    n = len(layout)
    if n == 0:
        return x
    if len(x.layout_in) == 0:
        vec = x.entries[:, 0].reshape(layout.dims)
        vec = vec.transpose(perm).reshape(-1, 1)
        return MultipartiteOperator(vec, new_layout, EMPTY_LAYOUT)
    arr = x.entries.reshape(layout.dims + layout.dims)
    arr = arr.transpose(perm + [n + p for p in perm])
    d = new_layout.total_dim
    return MultipartiteOperator(arr.reshape(d, d), new_layout, new_layout)


@dataclasses.dataclass(frozen=True)
class SpectralResult:
    """Eigendecomposition of a Hermitian operator, eigenvalues descending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, matching eigenvalue order

    def reconstruction(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.conj().T


def _canonical_phases(columns: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive."""
    out = np.array(columns, dtype=np.complex128)
    for j in range(out.shape[1]):
        col = out[:, j]
        k = int(np.argmax(np.abs(col)))
        a = col[k]
        if np.abs(a) > 0:
            out[:, j] = col * (np.abs(a) / a)
    return out


def eig_hermitian(x: MultipartiteOperator) -> SpectralResult:
    """Descending eigendecomposition with a reconstruction guarantee."""
    if not x.is_square:
        raise ValidationError("eig_hermitian requires a square operator")
    defect = x.max_hermiticity_defect()
    if defect > HERMITICITY_ATOL:
        raise ValidationError(f"operator is not Hermitian (defect {defect:.2e})")
    sym = (x.entries + x.entries.conj().T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = _canonical_phases(vecs[:, order])
    recon = (vecs * vals) @ vecs.conj().T
    err = float(np.max(np.abs(recon - sym), initial=0.0))
    if err > RECONSTRUCTION_ATOL:
        raise ValidationError(f"eigendecomposition reconstruction error {err:.2e}")
    return SpectralResult(vals, vecs)


@dataclasses.dataclass(frozen=True)
class CutDecomposition:
    """SVD of a ket across a left/right register bipartition."""

    singular_values: np.ndarray
    left_basis: np.ndarray  # columns in the left-side product space
    right_basis: np.ndarray  # columns in the right-side product space
    left_labels: tuple[str, ...]
    right_labels: tuple[str, ...]


def resolve_cut(
    layout: RegisterLayout, cut: Mapping[str, str] | None
) -> tuple[list[str], list[str]]:
    """Split the layout's labels into (left, right) halves.

    Default cut: Alice left, Bob right. Referee registers must be assigned
    explicitly via ``cut={label: "left"|"right"}``.
    """
    left, right = [], []
    cut = dict(cut or {})
    for r in layout.registers:
        side = cut.get(r.label)
        if side is None:
            if r.party == ALICE:
                side = "left"
            elif r.party == BOB:
                side = "right"
            else:
                raise LayoutError(
                    f"register {r.label!r} belongs to {REFEREE}; assign it a side"
                )
        if side not in ("left", "right"):
            raise LayoutError(f"cut side for {r.label!r} must be 'left' or 'right'")
        (left if side == "left" else right).append(r.label)
    unknown = set(cut) - set(layout.labels)
    if unknown:
        raise LayoutError(f"cut mentions unknown registers {sorted(unknown)}")
    if not left or not right:
        raise LayoutError("cut must put at least one register on each side")
    return left, right


def svd_across_cut(
    v: MultipartiteOperator, cut: Mapping[str, str] | None = None
) -> CutDecomposition:
    """Schmidt data of a normalized ket across a register bipartition."""
    if len(v.layout_in) != 0:
        raise ValidationError("svd_across_cut expects a ket")
    norm = float(np.linalg.norm(v.entries))
    if abs(norm - 1.0) > HERMITICITY_ATOL:
        raise ValidationError(f"ket is not normalized (norm {norm!r})")
    layout = v.layout_out
    left, right = resolve_cut(layout, cut)
    ordered = permute_registers(v, left + right)
    d_left = layout.subset(left).total_dim
    d_right = layout.subset(right).total_dim
    mat = ordered.entries[:, 0].reshape(d_left, d_right)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    # Fix phases on the left factors, compensate on the right so the
    # reconstruction sum_k s_k |l_k>|r_k> is untouched.
    for j in range(u.shape[1]):
        col = u[:, j]
        k = int(np.argmax(np.abs(col)))
        a = col[k]
        if np.abs(a) > 0:
            ph = np.abs(a) / a
            u[:, j] = col * ph
            vh[j, :] = vh[j, :] / ph
    recon = (u * s) @ vh
    err = float(np.max(np.abs(recon - mat), initial=0.0))
    if err > RECONSTRUCTION_ATOL:
        raise ValidationError(f"SVD reconstruction error {err:.2e}")
    # Right Schmidt vectors are the rows of vh taken as kets (no conjugate):
    # v = sum_k s_k u[:,k] (x) vh[k,:].
    return CutDecomposition(
        singular_values=s,
        left_basis=u,
        right_basis=vh.T.copy(),
        left_labels=tuple(left),
        right_labels=tuple(right),
    )
