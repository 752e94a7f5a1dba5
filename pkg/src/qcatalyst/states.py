"""Quantum states, channels, and instruments over register layouts.

Two state representations coexist:

* Dense: a density matrix over the full layout. Capped at ``DENSE_CAP`` per
  matrix side.
* Ensemble: a list of branches, each a probability together with a product of
  pure factors over register groups. This is the carrier for protocol
  simulations whose joint dimension is far beyond the dense cap; channels act
  branch by branch (a Kraus operator maps a pure product branch to another
  pure branch on the merged register group).
"""

from __future__ import annotations

import dataclasses
import json
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import LayoutError, ValidationError
from .registers import (
    ALICE,
    BOB,
    DENSE_CAP,
    EMPTY_LAYOUT,
    HERMITICITY_ATOL,
    MultipartiteOperator,
    Register,
    RegisterLayout,
    eig_hermitian,
    partial_trace,
    permute_registers,
)

TRACE_PRESERVATION_ATOL = 1e-9
NORM_ATOL = 1e-10
PROB_SUM_ATOL = 1e-12
BRANCH_PROB_FLOOR = 1e-12
OUTCOME_SUM_ATOL = 1e-9


@dataclasses.dataclass(frozen=True)
class Factor:
    """Pure vector over an ordered group of register labels."""

    labels: tuple[str, ...]
    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.complex128).reshape(-1)
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclasses.dataclass(frozen=True)
class EnsembleBranch:
    probability: float
    factors: tuple[Factor, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))


class QuantumState:
    """A state over a register layout, dense or ensemble-represented."""

    def __init__(self, layout, dense=None, branches=None):
        # Use the classmethod constructors; this initializer trusts its input.
        if (dense is None) == (branches is None):
            raise ValidationError("state needs exactly one of dense/branches")
        self.layout = layout
        self.dense = dense
        self.branches = tuple(branches) if branches is not None else None

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_dense(cls, op: MultipartiteOperator) -> "QuantumState":
        if not op.is_square:
            raise ValidationError("a dense state must be a square operator")
        defect = op.max_hermiticity_defect()
        if defect > HERMITICITY_ATOL:
            raise ValidationError(f"density matrix not Hermitian (defect {defect:.2e})")
        tr = op.trace()
        if abs(tr - 1.0) > HERMITICITY_ATOL:
            raise ValidationError(f"density matrix trace {tr!r} is not 1")
        lo = float(np.min(np.linalg.eigvalsh((op.entries + op.entries.conj().T) / 2)))
        if lo < -HERMITICITY_ATOL:
            raise ValidationError(f"density matrix has negative eigenvalue {lo:.2e}")
        return cls(op.layout_out, dense=op)

    @classmethod
    def from_dense_matrix(cls, entries, layout: RegisterLayout) -> "QuantumState":
        return cls.from_dense(MultipartiteOperator.square(entries, layout))

    @classmethod
    def from_branches(
        cls, layout: RegisterLayout, branches: Iterable[EnsembleBranch]
    ) -> "QuantumState":
        branches = tuple(branches)
        if not branches:
            raise ValidationError("ensemble needs at least one branch")
        total = 0.0
        for br in branches:
            if br.probability <= 0:
                raise ValidationError(f"branch probability {br.probability} <= 0")
            total += br.probability
            seen: list[str] = []
            for f in br.factors:
                seen.extend(f.labels)
                dims = []
                for lab in f.labels:
                    dims.append(layout[lab].dim)
                want = int(np.prod(dims)) if dims else 1
                if f.vector.size != want:
                    raise ValidationError(
                        f"factor on {f.labels} has {f.vector.size} amplitudes, "
                        f"expected {want}"
                    )
                nrm = float(np.linalg.norm(f.vector))
                if abs(nrm - 1.0) > NORM_ATOL:
                    raise ValidationError(
                        f"factor on {f.labels} is not normalized (norm {nrm!r})"
                    )
            if sorted(seen) != sorted(layout.labels):
                raise ValidationError(
                    f"branch factors cover {sorted(seen)}, layout has "
                    f"{sorted(layout.labels)}"
                )
        if abs(total - 1.0) > PROB_SUM_ATOL:
            raise ValidationError(f"branch probabilities sum to {total!r}")
        return cls(layout, branches=branches)

    @classmethod
    def pure(cls, layout: RegisterLayout, vector) -> "QuantumState":
        vec = np.asarray(vector, dtype=np.complex128).reshape(-1)
        if len(layout) == 0:
            if vec.size != 1:
                raise ValidationError("empty layout takes a single amplitude")
            return cls(layout, branches=(EnsembleBranch(1.0, ()),))
        return cls.from_branches(
            layout, (EnsembleBranch(1.0, (Factor(layout.labels, vec),)),)
        )

    @classmethod
    def pure_product(
        cls, layout: RegisterLayout, factors: Iterable[tuple[Sequence[str], np.ndarray]]
    ) -> "QuantumState":
        fs = tuple(Factor(tuple(labels), vec) for labels, vec in factors)
        return cls.from_branches(layout, (EnsembleBranch(1.0, fs),))

    @classmethod
    def empty(cls) -> "QuantumState":
        return cls(EMPTY_LAYOUT, branches=(EnsembleBranch(1.0, ()),))

    # -- representation ----------------------------------------------------

    @property
    def is_dense(self) -> bool:
        return self.dense is not None

    def branch_vector(self, branch: EnsembleBranch) -> np.ndarray:
        """Full ket of a branch, indexed in layout order."""
        if not branch.factors:
            return np.ones(1, dtype=np.complex128)
        vec = branch.factors[0].vector
        labels = list(branch.factors[0].labels)
        for f in branch.factors[1:]:
            vec = np.kron(vec, f.vector)
            labels.extend(f.labels)
        dims = [self.layout[lab].dim for lab in labels]
        order = [labels.index(lab) for lab in self.layout.labels if lab in labels]
        return vec.reshape(dims).transpose(order).reshape(-1)

    def densify(self) -> MultipartiteOperator:
        if self.is_dense:
            return self.dense
        if self.layout.total_dim > DENSE_CAP:
            raise ValidationError(
                f"refusing to densify dimension {self.layout.total_dim} "
                f"(cap {DENSE_CAP})"
            )
        d = self.layout.total_dim
        acc = np.zeros((d, d), dtype=np.complex128)
        for br in self.branches:
            v = self.branch_vector(br)
            acc += br.probability * np.outer(v, v.conj())
        return MultipartiteOperator.square(acc, self.layout)

    def as_dense_state(self) -> "QuantumState":
        return QuantumState(self.layout, dense=self.densify())

    def as_ensemble(self) -> "QuantumState":
        """Branch representation; dense states are eigendecomposed."""
        if not self.is_dense:
            return self
        spec = eig_hermitian(self.dense)
        labels = self.layout.labels
        branches = tuple(
            EnsembleBranch(float(p), (Factor(labels, spec.eigenvectors[:, k]),))
            for k, p in enumerate(spec.eigenvalues)
            if p > BRANCH_PROB_FLOOR
        )
        return QuantumState(self.layout, branches=branches)

    def to_vector(self) -> np.ndarray:
        """Ket of a pure state; raises if the state is not (numerically) pure."""
        if not self.is_dense:
            if len(self.branches) == 1:
                return self.branch_vector(self.branches[0])
            return self.as_dense_state().to_vector()
        spec = eig_hermitian(self.dense)
        if spec.eigenvalues[0] < 1.0 - 1e-9:
            raise ValidationError(
                f"state is not pure (top eigenvalue {spec.eigenvalues[0]!r})"
            )
        return spec.eigenvectors[:, 0].copy()

    def is_approx_pure(self, tol: float = 1e-9) -> bool:
        if not self.is_dense:
            if len(self.branches) == 1:
                return True
            if self.layout.total_dim > DENSE_CAP:
                return False
        op = self.densify()
        purity = float(np.real(np.trace(op.entries @ op.entries)))
        return purity >= 1.0 - tol

    # -- reshaping ---------------------------------------------------------

    def permuted(self, new_order: Sequence[str]) -> "QuantumState":
        layout = self.layout.permuted(new_order)
        if self.is_dense:
            return QuantumState(layout, dense=permute_registers(self.dense, new_order))
        return QuantumState(layout, branches=self.branches)

    def with_party(self, label: str, party: str) -> "QuantumState":
        layout = self.layout.with_party(label, party)
        if self.is_dense:
            op = MultipartiteOperator.square(self.dense.entries, layout)
            return QuantumState(layout, dense=op)
        return QuantumState(layout, branches=self.branches)

    def marginal(self, keep: Sequence[str]) -> "QuantumState":
        """Partial trace onto the named registers (layout order preserved)."""
        keep_set = set(keep)
        unknown = keep_set - set(self.layout.labels)
        if unknown:
            raise LayoutError(f"marginal onto unknown registers {sorted(unknown)}")
        keep_ordered = [lab for lab in self.layout.labels if lab in keep_set]
        discard = [lab for lab in self.layout.labels if lab not in keep_set]
        if not discard:
            return self
        if self.is_dense:
            return QuantumState(
                self.layout.subset(keep_ordered),
                dense=partial_trace(self.dense, discard),
            )
        new_layout = self.layout.subset(keep_ordered)
        out: list[EnsembleBranch] = []
        for br in self.branches:
            kept_whole: list[Factor] = []
            splits: list[list[tuple[float, Factor]]] = []
            for f in br.factors:
                f_keep = [lab for lab in f.labels if lab in keep_set]
                f_drop = [lab for lab in f.labels if lab not in keep_set]
                if not f_drop:
                    kept_whole.append(f)
                elif not f_keep:
                    continue  # traced out entirely; factor is normalized
                else:
                    splits.append(self._split_factor(f, f_keep, f_drop))
            combos: list[tuple[float, tuple[Factor, ...]]] = [(1.0, ())]
            for options in splits:
                combos = [
                    (w * wo, fs + (fo,)) for (w, fs) in combos for (wo, fo) in options
                ]
            for w, fs in combos:
                p = br.probability * w
                if p < BRANCH_PROB_FLOOR:
                    continue
                out.append(EnsembleBranch(p, tuple(kept_whole) + fs))
        if not out:
            raise ValidationError("marginal lost all probability mass")
        return QuantumState(new_layout, branches=tuple(out))

    def _split_factor(self, f: Factor, keep: list[str], drop: list[str]):
        """Marginal of one pure factor: returns weighted pure sub-factors."""
        dims = [self.layout[lab].dim for lab in f.labels]
        perm = [f.labels.index(lab) for lab in keep + drop]
        d_keep = int(np.prod([self.layout[lab].dim for lab in keep]))
        mat = f.vector.reshape(dims).transpose(perm).reshape(d_keep, -1)
        u, s, _ = np.linalg.svd(mat, full_matrices=False)
        options = []
        for j in range(s.size):
            w = float(s[j] ** 2)
            if w < BRANCH_PROB_FLOOR:
                continue
            options.append((w, Factor(tuple(keep), u[:, j])))
        return options

    def embed(self, new_dims: Mapping[str, int]) -> "QuantumState":
        """Pad register dimensions, keeping amplitudes on the original levels."""
        for lab, nd in new_dims.items():
            if lab not in self.layout:
                raise LayoutError(f"embed mentions unknown register {lab!r}")
            if nd < self.layout[lab].dim:
                raise ValidationError(
                    f"cannot shrink register {lab!r} from {self.layout[lab].dim} to {nd}"
                )
        regs = tuple(
            Register(r.label, int(new_dims.get(r.label, r.dim)), r.party)
            for r in self.layout.registers
        )
        new_layout = RegisterLayout(regs)
        if self.is_dense:
            embed_ops = []
            for r in self.layout.registers:
                nd = int(new_dims.get(r.label, r.dim))
                e = np.zeros((nd, r.dim), dtype=np.complex128)
                e[: r.dim, :] = np.eye(r.dim)
                embed_ops.append(e)
            full = embed_ops[0] if embed_ops else np.ones((1, 1))
            for e in embed_ops[1:]:
                full = np.kron(full, e)
            op = MultipartiteOperator(
                full @ self.dense.entries @ full.conj().T, new_layout, new_layout
            )
            return QuantumState(new_layout, dense=op)
        new_branches = []
        for br in self.branches:
            fs = []
            for f in br.factors:
                old = [self.layout[lab].dim for lab in f.labels]
                new = [int(new_dims.get(lab, self.layout[lab].dim)) for lab in f.labels]
                arr = f.vector.reshape(old)
                pad = [(0, n - o) for o, n in zip(old, new)]
                fs.append(Factor(f.labels, np.pad(arr, pad).reshape(-1)))
            new_branches.append(EnsembleBranch(br.probability, tuple(fs)))
        return QuantumState(new_layout, branches=tuple(new_branches))

    # -- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        doc: dict = {"layout": self.layout.to_json()}
        if self.is_dense:
            flat = self.dense.entries.reshape(-1)
            doc["dense"] = [[float(z.real), float(z.imag)] for z in flat]
        else:
            doc["ensemble"] = [
                {
                    "p": float(br.probability),
                    "factors": [
                        {
                            "labels": list(f.labels),
                            "vector": [[float(z.real), float(z.imag)] for z in f.vector],
                        }
                        for f in br.factors
                    ],
                }
                for br in self.branches
            ]
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "QuantumState":
        if not isinstance(doc, dict) or "layout" not in doc:
            raise ValidationError("state JSON needs a 'layout' field")
        layout = RegisterLayout.from_json(doc["layout"])
        if ("dense" in doc) == ("ensemble" in doc):
            raise ValidationError("state JSON needs exactly one of 'dense'/'ensemble'")
        if "dense" in doc:
            d = layout.total_dim
            flat = np.array(
                [complex(re, im) for re, im in doc["dense"]], dtype=np.complex128
            )
            if flat.size != d * d:
                raise ValidationError(
                    f"dense payload has {flat.size} entries, expected {d * d}"
                )
            return cls.from_dense_matrix(flat.reshape(d, d), layout)
        branches = []
        for item in doc["ensemble"]:
            factors = tuple(
                Factor(
                    tuple(f["labels"]),
                    np.array([complex(re, im) for re, im in f["vector"]]),
                )
                for f in item["factors"]
            )
            branches.append(EnsembleBranch(float(item["p"]), factors))
        return cls.from_branches(layout, branches)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "QuantumState":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"state file is not valid JSON: {exc}") from exc
        return cls.from_json(doc)


# -- canonical constructors ------------------------------------------------


def max_entangled(
    d: int,
    labels: tuple[str, str] = ("A", "B"),
    parties: tuple[str, str] = (ALICE, BOB),
) -> QuantumState:
    """Rank-d maximally entangled pure state on two d-dimensional registers."""
    if d < 1:
        raise ValidationError(f"max_entangled needs d >= 1, got {d}")
    layout = RegisterLayout.build(
        [(labels[0], d, parties[0]), (labels[1], d, parties[1])]
    )
    vec = np.zeros(d * d, dtype=np.complex128)
    for k in range(d):
        vec[k * d + k] = 1.0 / np.sqrt(d)
    return QuantumState.from_branches(
        layout, (EnsembleBranch(1.0, (Factor(layout.labels, vec),)),)
    )


def basis_product(layout: RegisterLayout, indices: Sequence[int]) -> QuantumState:
    """Computational basis product state |i1 i2 ...> over the layout."""
    if len(indices) != len(layout):
        raise ValidationError(
            f"{len(indices)} indices for {len(layout)} registers"
        )
    factors = []
    for r, idx in zip(layout.registers, indices):
        if not 0 <= idx < r.dim:
            raise ValidationError(
                f"basis index {idx} out of range for register {r.label!r} (dim {r.dim})"
            )
        v = np.zeros(r.dim, dtype=np.complex128)
        v[idx] = 1.0
        factors.append(Factor((r.label,), v))
    return QuantumState.from_branches(layout, (EnsembleBranch(1.0, tuple(factors)),))


def embed_local_dims(state: QuantumState, new_dims: Mapping[str, int]) -> QuantumState:
    return state.embed(new_dims)


def tensor_states(a: QuantumState, b: QuantumState) -> QuantumState:
    """Product of two states on disjoint registers."""
    shared = set(a.layout.labels) & set(b.layout.labels)
    if shared:
        raise LayoutError(f"tensor of states sharing registers {sorted(shared)}")
    layout = a.layout.concat(b.layout)
    if a.is_dense or b.is_dense:
        da = a.densify().entries
        db = b.densify().entries
        return QuantumState(
            layout, dense=MultipartiteOperator.square(np.kron(da, db), layout)
        )
    branches = []
    for ba in a.branches:
        for bb in b.branches:
            p = ba.probability * bb.probability
            if p < BRANCH_PROB_FLOOR:
                continue
            branches.append(EnsembleBranch(p, ba.factors + bb.factors))
    return QuantumState(layout, branches=tuple(branches))


# -- channels and instruments ----------------------------------------------


def _matrix_to_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _matrix_from_json(rows: list) -> np.ndarray:
    return np.array(
        [[complex(re, im) for re, im in row] for row in rows], dtype=np.complex128
    )


class KrausChannel:
    """Completely positive trace-preserving map given by Kraus operators."""

    def __init__(self, kraus: Iterable, layout_in: RegisterLayout, layout_out: RegisterLayout):
        ops = []
        shape = (layout_out.total_dim, layout_in.total_dim)
        for k in kraus:
            arr = np.array(k, dtype=np.complex128)
            if arr.shape != shape:
                raise ValidationError(
                    f"Kraus operator shape {arr.shape}, expected {shape}"
                )
            arr.setflags(write=False)
            ops.append(arr)
        if not ops:
            raise ValidationError("channel needs at least one Kraus operator")
        self.kraus = tuple(ops)
        self.layout_in = layout_in
        self.layout_out = layout_out
        defect = self.trace_preservation_defect()
        if defect > TRACE_PRESERVATION_ATOL:
            raise ValidationError(
                f"channel is not trace preserving (defect {defect:.2e})"
            )

    def trace_preservation_defect(self) -> float:
        acc = sum(k.conj().T @ k for k in self.kraus)
        return float(np.max(np.abs(acc - np.eye(self.layout_in.total_dim))))

    @classmethod
    def from_unitary(cls, u, layout: RegisterLayout) -> "KrausChannel":
        return cls([u], layout, layout)

    @classmethod
    def from_isometry(
        cls, v, layout_in: RegisterLayout, layout_out: RegisterLayout
    ) -> "KrausChannel":
        return cls([v], layout_in, layout_out)

    @classmethod
    def preparation(cls, vector, layout_out: RegisterLayout) -> "KrausChannel":
        col = np.asarray(vector, dtype=np.complex128).reshape(-1, 1)
        return cls([col], EMPTY_LAYOUT, layout_out)

    def to_json(self) -> dict:
        return {
            "layout_in": self.layout_in.to_json(),
            "layout_out": self.layout_out.to_json(),
            "kraus": [_matrix_to_json(k) for k in self.kraus],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "KrausChannel":
        return cls(
            [_matrix_from_json(k) for k in doc["kraus"]],
            RegisterLayout.from_json(doc["layout_in"]),
            RegisterLayout.from_json(doc["layout_out"]),
        )


class Instrument:
    """A finite list of labelled CP branches that together preserve trace."""

    def __init__(
        self,
        branches: Iterable[tuple[str, Iterable]],
        layout_in: RegisterLayout,
        layout_out: RegisterLayout,
    ):
        shape = (layout_out.total_dim, layout_in.total_dim)
        parsed = []
        for label, kraus in branches:
            ops = []
            for k in kraus:
                arr = np.array(k, dtype=np.complex128)
                if arr.shape != shape:
                    raise ValidationError(
                        f"instrument branch {label!r}: Kraus shape {arr.shape}, "
                        f"expected {shape}"
                    )
                arr.setflags(write=False)
                ops.append(arr)
            if not ops:
                raise ValidationError(f"instrument branch {label!r} has no Kraus")
            parsed.append((str(label), tuple(ops)))
        labels = [lab for lab, _ in parsed]
        if len(set(labels)) != len(labels):
            raise ValidationError(f"duplicate instrument outcome labels: {labels}")
        if not parsed:
            raise ValidationError("instrument needs at least one branch")
        self.branches = tuple(parsed)
        self.layout_in = layout_in
        self.layout_out = layout_out
        acc = sum(
            k.conj().T @ k for _, kraus in self.branches for k in kraus
        )
        defect = float(np.max(np.abs(acc - np.eye(layout_in.total_dim))))
        if defect > TRACE_PRESERVATION_ATOL:
            raise ValidationError(
                f"instrument branches do not sum to a TP map (defect {defect:.2e})"
            )

    @property
    def outcome_labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.branches)

    @classmethod
    def from_channel(cls, channel: KrausChannel, outcome: str = "ok") -> "Instrument":
        return cls([(outcome, channel.kraus)], channel.layout_in, channel.layout_out)

    def to_json(self) -> dict:
        return {
            "layout_in": self.layout_in.to_json(),
            "layout_out": self.layout_out.to_json(),
            "branches": [
                {"outcome": label, "kraus": [_matrix_to_json(k) for k in kraus]}
                for label, kraus in self.branches
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Instrument":
        return cls(
            [
                (b["outcome"], [_matrix_from_json(k) for k in b["kraus"]])
                for b in doc["branches"]
            ],
            RegisterLayout.from_json(doc["layout_in"]),
            RegisterLayout.from_json(doc["layout_out"]),
        )


# -- applying maps ---------------------------------------------------------


def _resolve_targets(state: QuantumState, layout_in: RegisterLayout, targets):
    if targets is None:
        targets = layout_in.labels
    targets = list(targets)
    if len(targets) != len(layout_in):
        raise LayoutError(
            f"{len(targets)} targets for a map with {len(layout_in)} input registers"
        )
    for t, r in zip(targets, layout_in.registers):
        if t not in state.layout:
            raise LayoutError(f"target register {t!r} not in state layout")
        if state.layout[t].dim != r.dim:
            raise LayoutError(
                f"target {t!r} has dim {state.layout[t].dim}, map expects {r.dim}"
            )
    if len(set(targets)) != len(targets):
        raise LayoutError(f"repeated target labels: {targets}")
    return targets


def _output_layout(state: QuantumState, targets, layout_out: RegisterLayout):
    untouched = [r for r in state.layout.registers if r.label not in set(targets)]
    clash = {r.label for r in untouched} & set(layout_out.labels)
    if clash:
        raise LayoutError(
            f"map output registers {sorted(clash)} collide with untouched registers"
        )
    return RegisterLayout(tuple(untouched) + layout_out.registers)


def _branch_kraus_action(
    state: QuantumState,
    branch: EnsembleBranch,
    targets: list[str],
    kraus: np.ndarray,
    layout_out: RegisterLayout,
):
    """Apply one Kraus operator to one branch. Returns (weight, factors) or None."""
    target_set = set(targets)
    overlapping = [f for f in branch.factors if set(f.labels) & target_set]
    rest = tuple(f for f in branch.factors if not (set(f.labels) & target_set))
    if overlapping:
        merged = overlapping[0].vector
        labels = list(overlapping[0].labels)
        for f in overlapping[1:]:
            merged = np.kron(merged, f.vector)
            labels.extend(f.labels)
    else:
        merged = np.ones(1, dtype=np.complex128)
        labels = []
    extras = [lab for lab in labels if lab not in target_set]
    dims = [state.layout[lab].dim for lab in labels]
    if labels:
        perm = [labels.index(lab) for lab in targets + extras]
        merged = merged.reshape(dims).transpose(perm)
    d_t = int(np.prod([state.layout[lab].dim for lab in targets])) if targets else 1
    mat = merged.reshape(d_t, -1)
    out = kraus @ mat
    weight = float(np.linalg.norm(out) ** 2)
    if weight < BRANCH_PROB_FLOOR:
        return None
    out = out / np.sqrt(weight)
    new_labels = tuple(layout_out.labels) + tuple(extras)
    if new_labels:
        factors = rest + (Factor(new_labels, out.reshape(-1)),)
    else:
        factors = rest  # map into the trivial space: only a scalar weight remains
    return weight, factors


def apply_channel(
    channel: KrausChannel, state: QuantumState, targets: Sequence[str] | None = None
) -> QuantumState:
    """Apply a channel to the named registers.

    Output layout: untouched registers in their original order, then the
    channel's output registers.
    """
    targets = _resolve_targets(state, channel.layout_in, targets)
    new_layout = _output_layout(state, targets, channel.layout_out)
    if state.is_dense:
        if new_layout.total_dim > DENSE_CAP:
            raise ValidationError(
                f"dense channel application would need dimension "
                f"{new_layout.total_dim} (cap {DENSE_CAP}); convert the state "
                f"with as_ensemble() first"
            )
        rest = [lab for lab in state.layout.labels if lab not in set(targets)]
        ordered = state.permuted(rest + targets)
        d_rest = state.layout.subset(rest).total_dim
        eye = np.eye(d_rest)
        acc = np.zeros((new_layout.total_dim, new_layout.total_dim), dtype=np.complex128)
        rho = ordered.dense.entries
        for k in channel.kraus:
            big = np.kron(eye, k)
            acc += big @ rho @ big.conj().T
        tr = float(np.real(np.trace(acc)))
        if abs(tr - 1.0) > 1e-10:
            raise ValidationError(f"channel application lost trace ({tr!r})")
        return QuantumState(new_layout, dense=MultipartiteOperator.square(acc, new_layout))
    branches = []
    for br in state.branches:
        for k in channel.kraus:
            hit = _branch_kraus_action(state, br, targets, k, channel.layout_out)
            if hit is None:
                continue
            weight, factors = hit
            p = br.probability * weight
            if p >= BRANCH_PROB_FLOOR:
                branches.append(EnsembleBranch(p, factors))
    total = sum(br.probability for br in branches)
    if abs(total - 1.0) > 1e-10:
        raise ValidationError(f"channel application lost trace ({total!r})")
    return QuantumState(new_layout, branches=tuple(branches))


def apply_instrument(
    instrument: Instrument, state: QuantumState, targets: Sequence[str] | None = None
) -> list[tuple[str, float, QuantumState]]:
    """Apply an instrument; returns (outcome, probability, normalized state) per
    outcome with probability above the branch floor."""
    targets = _resolve_targets(state, instrument.layout_in, targets)
    new_layout = _output_layout(state, targets, instrument.layout_out)
    results = []
    if state.is_dense:
        rest = [lab for lab in state.layout.labels if lab not in set(targets)]
        ordered = state.permuted(rest + targets)
        d_rest = state.layout.subset(rest).total_dim
        eye = np.eye(d_rest)
        rho = ordered.dense.entries
        for label, kraus in instrument.branches:
            acc = np.zeros(
                (new_layout.total_dim, new_layout.total_dim), dtype=np.complex128
            )
            for k in kraus:
                big = np.kron(eye, k)
                acc += big @ rho @ big.conj().T
            p = float(np.real(np.trace(acc)))
            if p < BRANCH_PROB_FLOOR:
                continue
            results.append(
                (
                    label,
                    p,
                    QuantumState(
                        new_layout, dense=MultipartiteOperator.square(acc / p, new_layout)
                    ),
                )
            )
    else:
        for label, kraus in instrument.branches:
            collected = []
            p_out = 0.0
            for br in state.branches:
                for k in kraus:
                    hit = _branch_kraus_action(state, br, targets, k, instrument.layout_out)
                    if hit is None:
                        continue
                    weight, factors = hit
                    w = br.probability * weight
                    if w >= BRANCH_PROB_FLOOR:
                        collected.append((w, factors))
                        p_out += w
            if p_out < BRANCH_PROB_FLOOR:
                continue
            branches = tuple(
                EnsembleBranch(w / p_out, factors) for w, factors in collected
            )
            results.append((label, p_out, QuantumState(new_layout, branches=branches)))
    total = sum(p for _, p, _ in results)
    if abs(total - 1.0) > OUTCOME_SUM_ATOL:
        raise ValidationError(f"instrument outcome probabilities sum to {total!r}")
    return results


# -- comparisons -----------------------------------------------------------


def _require_same_layout(a: QuantumState, b: QuantumState):
    if a.layout != b.layout:
        raise LayoutError(
            f"states live on different layouts: {a.layout.labels} vs {b.layout.labels}"
        )


def fidelity(a: QuantumState, b: QuantumState) -> float:
    """Overlap <b|a|b> with b pure."""
    _require_same_layout(a, b)
    vec = b.to_vector()
    if a.is_dense:
        val = vec.conj() @ a.dense.entries @ vec
        if abs(val.imag) > 1e-12:
            raise ValidationError(f"fidelity has imaginary residue {val.imag:.2e}")
        return float(val.real)
    acc = 0.0
    for br in a.branches:
        acc += br.probability * float(np.abs(vec.conj() @ a.branch_vector(br)) ** 2)
    return acc


def trace_distance(a: QuantumState, b: QuantumState) -> float:
    """Half the trace norm of the difference of the two density matrices."""
    _require_same_layout(a, b)
    diff = a.densify().entries - b.densify().entries
    diff = (diff + diff.conj().T) / 2
    vals = np.linalg.eigvalsh(diff)
    return float(0.5 * np.sum(np.abs(vals)))
