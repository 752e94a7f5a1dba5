"""Round-based simulator for local protocols with bounded quantum messages.

A protocol is a sequence of rounds. A local round applies an instrument to
registers owned by one party; its classical outcome may be broadcast, and a
later round may select its instrument by the outcome of an earlier broadcast
round. A send round hands a register to the other party; the product of the
dimensions of all sent registers is capped by the protocol's quantum budget.
Protocols with budget 1 are purely classical communication (LOCC).

Execution enumerates every outcome path exactly, producing a tree of leaves
(path, probability, pure-or-ensemble state). A ledger records what was sent;
Schmidt number is multiplicative under local processing and can grow by at
most the total sent dimension, which gives the certified impossibility bound.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Mapping, Sequence

import numpy as np

from .errors import ProtocolError, ValidationError
from .registers import (
    ALICE,
    BOB,
    EMPTY_LAYOUT,
    MultipartiteOperator,
    Register,
    RegisterLayout,
    svd_across_cut,
)
from .states import (
    EnsembleBranch,
    Instrument,
    KrausChannel,
    QuantumState,
    apply_instrument,
)
from .entanglement import SNCertificate

LOCAL = "local"
SEND = "send"
MAX_LEAVES = 200_000


# -- rounds and protocols ---------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ProtocolRound:
    name: str
    kind: str
    party: str
    targets: tuple[str, ...] = ()
    instrument: Instrument | None = None
    instruments_by_outcome: Mapping[str, Instrument] | None = None
    select_by: str | None = None
    broadcast: bool = False
    register: str | None = None
    to_party: str | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.kind == LOCAL:
            fixed = self.instrument is not None
            adaptive = self.instruments_by_outcome is not None
            if fixed == adaptive:
                raise ValidationError(
                    f"round {self.name!r} needs exactly one of instrument / "
                    f"instruments_by_outcome"
                )
            if adaptive and not self.select_by:
                raise ValidationError(
                    f"adaptive round {self.name!r} needs select_by"
                )
            if fixed and self.select_by:
                raise ValidationError(
                    f"round {self.name!r} has select_by but a fixed instrument"
                )
        elif self.kind == SEND:
            if not self.register or not self.to_party or not self.dim:
                raise ValidationError(
                    f"send round {self.name!r} needs register, to_party and dim"
                )
            if self.to_party == self.party:
                raise ValidationError(f"round {self.name!r} sends to the sender")
        else:
            raise ValidationError(f"unknown round kind {self.kind!r}")


def local_round(
    name: str,
    party: str,
    instrument: Instrument,
    targets: Sequence[str] | None = None,
    broadcast: bool = False,
) -> ProtocolRound:
    if targets is None:
        targets = instrument.layout_in.labels
    return ProtocolRound(
        name=name,
        kind=LOCAL,
        party=party,
        targets=tuple(targets),
        instrument=instrument,
        broadcast=broadcast,
    )


def adaptive_round(
    name: str,
    party: str,
    instruments_by_outcome: Mapping[str, Instrument],
    select_by: str,
    targets: Sequence[str] | None = None,
    broadcast: bool = False,
) -> ProtocolRound:
    if not instruments_by_outcome:
        raise ValidationError(f"round {name!r} has no instruments")
    some = next(iter(instruments_by_outcome.values()))
    if targets is None:
        targets = some.layout_in.labels
    for inst in instruments_by_outcome.values():
        if inst.layout_in.dims != some.layout_in.dims:
            raise ValidationError(
                f"round {name!r}: instruments disagree on input dimensions"
            )
        if inst.layout_out.labels != some.layout_out.labels:
            raise ValidationError(
                f"round {name!r}: instruments disagree on output registers"
            )
    return ProtocolRound(
        name=name,
        kind=LOCAL,
        party=party,
        targets=tuple(targets),
        instruments_by_outcome=dict(instruments_by_outcome),
        select_by=select_by,
        broadcast=broadcast,
    )


def send_round(
    name: str, party: str, register: str, to_party: str, dim: int
) -> ProtocolRound:
    return ProtocolRound(
        name=name,
        kind=SEND,
        party=party,
        register=register,
        to_party=to_party,
        dim=int(dim),
    )


@dataclasses.dataclass(frozen=True)
class SloccqProtocol:
    """Protocol with a hard cap on total transmitted quantum dimension."""

    rounds: tuple[ProtocolRound, ...]
    dimension_budget: int

    def __post_init__(self):
        if self.dimension_budget < 1:
            raise ValidationError("dimension budget must be >= 1")
        seen: set[str] = set()
        broadcast_before: set[str] = set()
        used = 1
        for rnd in self.rounds:
            if rnd.name in seen:
                raise ValidationError(f"duplicate round name {rnd.name!r}")
            if rnd.select_by is not None and rnd.select_by not in broadcast_before:
                raise ValidationError(
                    f"round {rnd.name!r} selects by {rnd.select_by!r}, which is "
                    f"not an earlier broadcast round"
                )
            seen.add(rnd.name)
            if rnd.kind == LOCAL and rnd.broadcast:
                broadcast_before.add(rnd.name)
            if rnd.kind == SEND:
                used *= rnd.dim
        if used > self.dimension_budget:
            raise ProtocolError(
                f"protocol sends total quantum dimension {used}, over the "
                f"budget {self.dimension_budget}"
            )

    @property
    def quantum_dimension_used(self) -> int:
        return math.prod(r.dim for r in self.rounds if r.kind == SEND)

    def to_json(self) -> dict:
        rounds = []
        for r in self.rounds:
            entry: dict = {"name": r.name, "kind": r.kind, "party": r.party}
            if r.kind == LOCAL:
                entry["targets"] = list(r.targets)
                entry["broadcast"] = r.broadcast
                if r.instrument is not None:
                    entry["instrument"] = r.instrument.to_json()
                else:
                    entry["select_by"] = r.select_by
                    entry["instruments_by_outcome"] = {
                        k: v.to_json() for k, v in r.instruments_by_outcome.items()
                    }
            else:
                entry["register"] = r.register
                entry["to_party"] = r.to_party
                entry["dim"] = r.dim
            rounds.append(entry)
        return {"dimension_budget": self.dimension_budget, "rounds": rounds}

    @classmethod
    def from_json(cls, data: Mapping) -> "SloccqProtocol":
        rounds = []
        for entry in data["rounds"]:
            kind = entry["kind"]
            if kind == LOCAL:
                if "instrument" in entry:
                    rounds.append(
                        ProtocolRound(
                            name=entry["name"],
                            kind=LOCAL,
                            party=entry["party"],
                            targets=tuple(entry["targets"]),
                            instrument=Instrument.from_json(entry["instrument"]),
                            broadcast=bool(entry.get("broadcast", False)),
                        )
                    )
                else:
                    rounds.append(
                        ProtocolRound(
                            name=entry["name"],
                            kind=LOCAL,
                            party=entry["party"],
                            targets=tuple(entry["targets"]),
                            instruments_by_outcome={
                                k: Instrument.from_json(v)
                                for k, v in entry["instruments_by_outcome"].items()
                            },
                            select_by=entry["select_by"],
                            broadcast=bool(entry.get("broadcast", False)),
                        )
                    )
            else:
                rounds.append(
                    ProtocolRound(
                        name=entry["name"],
                        kind=SEND,
                        party=entry["party"],
                        register=entry["register"],
                        to_party=entry["to_party"],
                        dim=int(entry["dim"]),
                    )
                )
        return cls(tuple(rounds), int(data["dimension_budget"]))


# -- execution --------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class BranchLeaf:
    path: tuple[tuple[str, str], ...]
    probability: float
    state: QuantumState

    def outcome_of(self, round_name: str) -> str:
        for name, outcome in self.path:
            if name == round_name:
                return outcome
        raise ProtocolError(f"no outcome recorded for round {round_name!r}")


@dataclasses.dataclass(frozen=True)
class ProtocolLedger:
    sent_dims: tuple[int, ...]
    broadcast_rounds: tuple[str, ...]
    rounds_executed: int

    @property
    def quantum_dimension(self) -> int:
        return math.prod(self.sent_dims) if self.sent_dims else 1


@dataclasses.dataclass(frozen=True)
class BranchTree:
    protocol: SloccqProtocol
    leaves: tuple[BranchLeaf, ...]
    ledger: ProtocolLedger

    @property
    def total_probability(self) -> float:
        return sum(leaf.probability for leaf in self.leaves)


def _check_ownership(state: QuantumState, rnd: ProtocolRound) -> None:
    for lab in rnd.targets:
        owner = state.layout.party_of(lab)
        if owner != rnd.party:
            raise ProtocolError(
                f"round {rnd.name!r}: party {rnd.party} cannot touch register "
                f"{lab!r} owned by {owner}"
            )


def _round_instrument(rnd: ProtocolRound, path) -> Instrument:
    if rnd.instrument is not None:
        return rnd.instrument
    for name, outcome in path:
        if name == rnd.select_by:
            try:
                return rnd.instruments_by_outcome[outcome]
            except KeyError:
                raise ProtocolError(
                    f"round {rnd.name!r} has no instrument for outcome "
                    f"{outcome!r} of {rnd.select_by!r}"
                ) from None
    raise ProtocolError(
        f"round {rnd.name!r} selects by {rnd.select_by!r} which has no "
        f"recorded outcome"
    )


def run_protocol(protocol: SloccqProtocol, initial: QuantumState) -> BranchTree:
    """Enumerate all outcome paths of the protocol on the given input."""
    leaves = [BranchLeaf((), 1.0, initial.as_ensemble())]
    sent: list[int] = []
    broadcasts: list[str] = []
    for rnd in protocol.rounds:
        if rnd.kind == SEND:
            new_leaves = []
            for leaf in leaves:
                if rnd.register not in leaf.state.layout.labels:
                    raise ProtocolError(
                        f"round {rnd.name!r} sends unknown register "
                        f"{rnd.register!r}"
                    )
                reg = leaf.state.layout[rnd.register]
                if reg.party != rnd.party:
                    raise ProtocolError(
                        f"round {rnd.name!r}: {rnd.party} does not own "
                        f"{rnd.register!r}"
                    )
                if reg.dim != rnd.dim:
                    raise ProtocolError(
                        f"round {rnd.name!r} declared dimension {rnd.dim} but "
                        f"{rnd.register!r} has dimension {reg.dim}"
                    )
                new_leaves.append(
                    BranchLeaf(
                        leaf.path,
                        leaf.probability,
                        leaf.state.with_party(rnd.register, rnd.to_party),
                    )
                )
            leaves = new_leaves
            sent.append(rnd.dim)
            continue
        if rnd.broadcast:
            broadcasts.append(rnd.name)
        new_leaves = []
        for leaf in leaves:
            _check_ownership(leaf.state, rnd)
            inst = _round_instrument(rnd, leaf.path)
            for reg in inst.layout_out.registers:
                if reg.party != rnd.party:
                    raise ProtocolError(
                        f"round {rnd.name!r} would create register "
                        f"{reg.label!r} for {reg.party}"
                    )
            for outcome, prob, state in apply_instrument(
                inst, leaf.state, rnd.targets
            ):
                new_leaves.append(
                    BranchLeaf(
                        leaf.path + ((rnd.name, outcome),),
                        leaf.probability * prob,
                        state,
                    )
                )
        leaves = new_leaves
        if len(leaves) > MAX_LEAVES:
            raise ProtocolError(
                f"branch tree exceeded {MAX_LEAVES} leaves at round {rnd.name!r}"
            )
    ledger = ProtocolLedger(tuple(sent), tuple(broadcasts), len(protocol.rounds))
    return BranchTree(protocol, tuple(leaves), ledger)


def final_state(
    tree: BranchTree,
    postselect: Sequence[tuple[str, str]] | None = None,
) -> tuple[QuantumState, float]:
    """Average the leaves (optionally only those matching the postselection).

    Returns the normalized state and the total probability it carries.
    """
    wanted = list(postselect or [])
    picked = [
        leaf
        for leaf in tree.leaves
        if all(pair in leaf.path for pair in wanted)
    ]
    total = sum(leaf.probability for leaf in picked)
    if not picked or total <= 0.0:
        raise ProtocolError("postselection removed every branch")
    layout = picked[0].state.layout
    branches: list[EnsembleBranch] = []
    for leaf in picked:
        st = leaf.state
        if st.layout.labels != layout.labels:
            raise ProtocolError("leaves ended on different register sets")
        st = st.permuted(layout.labels).as_ensemble()
        for br in st.branches:
            branches.append(
                EnsembleBranch(leaf.probability / total * br.probability, br.factors)
            )
    return QuantumState(layout, branches=tuple(branches)), total


# -- ledger bounds ----------------------------------------------------------


def ledger_bound(input_sn_upper: int, tree: BranchTree) -> SNCertificate:
    """Sound Schmidt-number cap for anything the protocol can output."""
    used = tree.ledger.quantum_dimension
    return SNCertificate(
        1,
        int(input_sn_upper) * used,
        "ledger",
        {"input_sn_upper": int(input_sn_upper), "quantum_dimension": used},
    )


@dataclasses.dataclass(frozen=True)
class ImpossibilityCertificate:
    input_sn_upper: int
    quantum_dimension: int
    achievable_sn_upper: int
    target_sn_lower: int
    impossible: bool
    method: str = "ledger"


def certify_impossible(
    input_sn_upper: int, quantum_dimension: int, target_sn_lower: int
) -> ImpossibilityCertificate:
    """Decide whether any protocol within the budget could reach the target.

    Local processing and classical talk cannot raise Schmidt number, and a
    quantum message of dimension q raises it by a factor of at most q. If
    input_sn_upper * q still falls short of the target's certified lower
    bound, no protocol in the class can produce the target.
    """
    cap = int(input_sn_upper) * int(quantum_dimension)
    return ImpossibilityCertificate(
        input_sn_upper=int(input_sn_upper),
        quantum_dimension=int(quantum_dimension),
        achievable_sn_upper=cap,
        target_sn_lower=int(target_sn_lower),
        impossible=cap < int(target_sn_lower),
    )


# -- linear-algebra helpers -------------------------------------------------


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def complete_isometry(cols: np.ndarray, dim: int) -> np.ndarray:
    """Unitary on C^dim whose leading columns are the given orthonormal set."""
    cols = np.asarray(cols, dtype=np.complex128).reshape(dim, -1)
    comp = np.eye(dim) - cols @ cols.conj().T
    vals, vecs = np.linalg.eigh(comp)
    extra = vecs[:, vals > 0.5]
    u = np.hstack([cols, extra])
    if u.shape != (dim, dim):
        raise ValidationError("columns are not an orthonormal set of the space")
    return u


# -- filtration to a maximally entangled state ------------------------------


@dataclasses.dataclass(frozen=True)
class FiltrationPlan:
    instrument: Instrument
    other_party_alignment: KrausChannel
    schmidt_rank: int
    success_probability: float


def filter_to_max_entangled(
    state: QuantumState, tolerance: float = 1e-12
) -> FiltrationPlan:
    """Two-outcome local filter taking a bipartite pure state to the uniform
    maximally entangled state on its Schmidt rank.

    The pass Kraus rotates the left Schmidt basis onto the leading
    computational levels while flattening the Schmidt spectrum; the companion
    unitary aligns the other party's basis the same way. Pass probability is
    rank * smallest squared Schmidt coefficient.
    """
    if len(state.layout) != 2:
        raise ValidationError("filtration expects exactly two registers")
    labels = state.layout.labels
    parties = [state.layout.party_of(lab) for lab in labels]
    if set(parties) != {ALICE, BOB}:
        raise ValidationError("filtration expects one register per party")
    if parties[0] == BOB:
        state = state.permuted((labels[1], labels[0]))
        labels = state.layout.labels
    dec = svd_across_cut(MultipartiteOperator.ket(state.to_vector(), state.layout))
    coeffs = dec.singular_values
    rank = int(np.sum(coeffs > tolerance * coeffs[0]))
    lam_min = float(coeffs[rank - 1] ** 2)
    da = state.layout[labels[0]].dim
    db = state.layout[labels[1]].dim
    if rank > min(da, db):
        raise ValidationError("rank exceeds a local dimension")

    pass_k = np.zeros((da, da), dtype=np.complex128)
    for j in range(rank):
        pass_k += (
            math.sqrt(lam_min) / coeffs[j]
        ) * np.outer(_basis(da, j), dec.left_basis[:, j].conj())
    fail_k = _psd_sqrt(np.eye(da) - pass_k.conj().T @ pass_k)
    reg_a = RegisterLayout((Register(labels[0], da, ALICE),))
    instrument = Instrument(
        [("pass", [pass_k]), ("fail", [fail_k])], reg_a, reg_a
    )
    align = np.zeros((db, db), dtype=np.complex128)
    for j in range(rank):
        align += np.outer(_basis(db, j), dec.right_basis[:, j].conj())
    align_u = complete_isometry(
        np.hstack(
            [_basis(db, j).reshape(-1, 1) for j in range(rank)]
        ),
        db,
    )
    # rotate remaining basis vectors anywhere orthonormal; only the first
    # rank columns matter on the passed state
    rest = complete_isometry(dec.right_basis[:, :rank], db)[:, rank:]
    full = align + align_u[:, rank:] @ rest.conj().T
    reg_b = RegisterLayout((Register(labels[1], db, BOB),))
    bob_channel = KrausChannel.from_unitary(full, reg_b)
    return FiltrationPlan(
        instrument=instrument,
        other_party_alignment=bob_channel,
        schmidt_rank=rank,
        success_probability=rank * lam_min,
    )


def _basis(dim: int, index: int) -> np.ndarray:
    v = np.zeros(dim, dtype=np.complex128)
    v[index] = 1.0
    return v


# -- teleportation ----------------------------------------------------------


def shift_clock_unitary(dim: int, q: int, p: int) -> np.ndarray:
    """X^q Z^p on C^dim."""
    omega = np.exp(2j * np.pi / dim)
    z = np.diag(omega ** np.arange(dim))
    x = np.zeros((dim, dim), dtype=np.complex128)
    for m in range(dim):
        x[(m + 1) % dim, m] = 1.0
    return np.linalg.matrix_power(x, q) @ np.linalg.matrix_power(z, p)


def bell_basis(dim: int) -> list[tuple[str, np.ndarray]]:
    phi = np.zeros(dim * dim, dtype=np.complex128)
    for m in range(dim):
        phi[m * dim + m] = 1.0 / math.sqrt(dim)
    out = []
    for q in range(dim):
        for p in range(dim):
            w = shift_clock_unitary(dim, q, p)
            out.append((f"q{q}p{p}", np.kron(w, np.eye(dim)) @ phi))
    return out


def bell_measurement_instrument(
    message: str, resource: str, dim: int, party: str
) -> Instrument:
    """Destructive measurement in the generalized Bell basis of two registers."""
    layout_in = RegisterLayout(
        (Register(message, dim, party), Register(resource, dim, party))
    )
    branches = [
        (label, [vec.conj().reshape(1, -1)]) for label, vec in bell_basis(dim)
    ]
    return Instrument(branches, layout_in, EMPTY_LAYOUT)


def teleport_rounds(
    message: str,
    resource_here: str,
    resource_there: str,
    dim: int,
    sender: str = ALICE,
    receiver: str = BOB,
    name_prefix: str = "teleport",
) -> list[ProtocolRound]:
    """Bell measurement at the sender plus conditioned correction at the
    receiver; consumes the shared maximally entangled resource pair."""
    measure = local_round(
        f"{name_prefix}-measure",
        sender,
        bell_measurement_instrument(message, resource_here, dim, sender),
        broadcast=True,
    )
    reg = RegisterLayout((Register(resource_there, dim, receiver),))
    corrections = {
        label: Instrument.from_channel(
            KrausChannel.from_unitary(shift_clock_unitary(dim, q, p), reg), "done"
        )
        for q in range(dim)
        for p in range(dim)
        for label in (f"q{q}p{p}",)
    }
    correct = adaptive_round(
        f"{name_prefix}-correct",
        receiver,
        corrections,
        select_by=f"{name_prefix}-measure",
    )
    return [measure, correct]


# -- compression helpers ----------------------------------------------------


def _compress_channel(
    layout_in: RegisterLayout,
    support: np.ndarray,
    out_label: str,
    party: str,
) -> KrausChannel:
    """Partial isometry onto a smaller register spanning the given support.

    ``support`` holds orthonormal columns of the input space; column m maps to
    level m of the output register. A measure-and-reset completion handles the
    orthocomplement so the map is a channel on the whole space.
    """
    d_in = layout_in.total_dim
    k = support.shape[1]
    layout_out = RegisterLayout((Register(out_label, k, party),))
    iso = support.conj().T  # (k, d_in)
    kraus = [iso]
    comp = np.eye(d_in) - support @ support.conj().T
    vals, vecs = np.linalg.eigh(comp)
    for idx in np.nonzero(vals > 0.5)[0]:
        k_m = np.zeros((k, d_in), dtype=np.complex128)
        k_m[0, :] = vecs[:, idx].conj()
        kraus.append(k_m)
    return KrausChannel(kraus, layout_in, layout_out)


def _decompress_isometry(
    vectors: np.ndarray, layout_out: RegisterLayout, in_label: str, dim: int, party: str
) -> KrausChannel:
    """Isometry sending level m of the input register to the m-th column."""
    d_out = layout_out.total_dim
    cols = np.asarray(vectors, dtype=np.complex128).reshape(d_out, -1)
    k = cols.shape[1]
    if k < dim:
        # pad with an orthonormal completion; the extra columns never fire
        comp = np.eye(d_out) - cols @ cols.conj().T
        vals, vecs = np.linalg.eigh(comp)
        extra = vecs[:, vals > 0.5][:, : dim - k]
        cols = np.hstack([cols, extra])
    layout_in = RegisterLayout((Register(in_label, dim, party),))
    return KrausChannel.from_isometry(cols[:, :dim], layout_in, layout_out)


# -- the converse construction ----------------------------------------------


@dataclasses.dataclass(frozen=True)
class ConverseProtocol:
    protocol: SloccqProtocol
    target: QuantumState
    quantum_dimension: int
    teleport_dimension: int
    postselect: tuple[tuple[str, str], ...]
    output_labels: tuple[str, ...]


def construct_converse(
    rho: QuantumState,
    components: Sequence[tuple[float, QuantumState]],
    quantum_dimension: int,
) -> ConverseProtocol:
    """Protocol reaching a mixture of bipartite pure components from one copy
    of ``rho`` with a single quantum message of the given dimension.

    The input is filtered to a maximally entangled state of its Schmidt rank
    k, extended by a locally prepared and partly transmitted pair into a
    maximally entangled resource of dimension k*q, and each mixture component
    is then created by the sampling party and teleported across. Every
    component must have Schmidt rank at most k*q across the party cut.
    """
    d = int(quantum_dimension)
    if d < 1:
        raise ValidationError("quantum dimension must be >= 1")
    a_label, b_label = rho.layout.labels
    if rho.layout.party_of(a_label) != ALICE:
        a_label, b_label = b_label, a_label
    plan = filter_to_max_entangled(rho)
    k = plan.schmidt_rank
    dk = k * d
    rounds = [
        local_round("filter", ALICE, plan.instrument, broadcast=True),
        local_round(
            "align", BOB, Instrument.from_channel(plan.other_party_alignment, "done")
        ),
    ]
    if d > 1:
        phi = np.zeros(d * d, dtype=np.complex128)
        for m in range(d):
            phi[m * d + m] = 1.0 / math.sqrt(d)
        prep_layout = RegisterLayout(
            (Register("E1", d, ALICE), Register("E2", d, ALICE))
        )
        rounds.append(
            local_round(
                "prep-link",
                ALICE,
                Instrument.from_channel(
                    KrausChannel.preparation(phi, prep_layout), "done"
                ),
                targets=(),
            )
        )
        rounds.append(send_round("send-link", ALICE, "E2", BOB, d))

    # compress (system half, link half) into one register per side
    da = rho.layout[a_label].dim
    db = rho.layout[b_label].dim
    if d > 1:
        sup_a = np.zeros((da * d, dk), dtype=np.complex128)
        for a in range(k):
            for e in range(d):
                sup_a[a * d + e, a * d + e] = 1.0
        lay_a = RegisterLayout(
            (Register(a_label, da, ALICE), Register("E1", d, ALICE))
        )
        sup_b = np.zeros((db * d, dk), dtype=np.complex128)
        for b in range(k):
            for e in range(d):
                sup_b[b * d + e, b * d + e] = 1.0
        lay_b = RegisterLayout(
            (Register(b_label, db, BOB), Register("E2", d, BOB))
        )
    else:
        sup_a = np.eye(da, dk, dtype=np.complex128)
        lay_a = RegisterLayout((Register(a_label, da, ALICE),))
        sup_b = np.eye(db, dk, dtype=np.complex128)
        lay_b = RegisterLayout((Register(b_label, db, BOB),))
    rounds.append(
        local_round(
            "compress-a",
            ALICE,
            Instrument.from_channel(_compress_channel(lay_a, sup_a, "RA", ALICE), "done"),
        )
    )
    rounds.append(
        local_round(
            "compress-b",
            BOB,
            Instrument.from_channel(_compress_channel(lay_b, sup_b, "RB", BOB), "done"),
        )
    )

    # sample the mixture component, then build it with the far half compressed
    probs = [float(p) for p, _ in components]
    if abs(sum(probs) - 1.0) > 1e-9 or min(probs) <= 0:
        raise ValidationError("component weights must be positive and sum to 1")
    sampler = Instrument(
        [
            (f"c{i}", [np.array([[math.sqrt(p)]], dtype=np.complex128)])
            for i, p in enumerate(probs)
        ],
        EMPTY_LAYOUT,
        EMPTY_LAYOUT,
    )
    rounds.append(
        local_round("component", ALICE, sampler, targets=(), broadcast=True)
    )

    preps: dict[str, Instrument] = {}
    decos: dict[str, Instrument] = {}
    out_a: tuple[str, ...] | None = None
    out_b: tuple[str, ...] | None = None
    target_layout: RegisterLayout | None = None
    for i, (p, comp) in enumerate(components):
        labels_a = comp.layout.party_labels(ALICE)
        labels_b = comp.layout.party_labels(BOB)
        if out_a is None:
            out_a, out_b = labels_a, labels_b
            target_layout = RegisterLayout(
                tuple(
                    Register(lab, comp.layout[lab].dim, comp.layout.party_of(lab))
                    for lab in out_a + out_b
                )
            )
        elif (labels_a, labels_b) != (out_a, out_b):
            raise ValidationError("components must share output registers")
        dec = svd_across_cut(
            MultipartiteOperator.ket(comp.to_vector(), comp.layout)
        )
        keep = dec.singular_values > 1e-12 * dec.singular_values[0]
        rank = int(np.sum(keep))
        if rank > dk:
            raise ProtocolError(
                f"component {i} has Schmidt rank {rank}, beyond the "
                f"teleportable dimension {dk}"
            )
        # prepared state: component with its far half replaced by levels of S
        da_out = math.prod(comp.layout[lab].dim for lab in out_a)
        vec = np.zeros(da_out * dk, dtype=np.complex128)
        for m in range(rank):
            vec += dec.singular_values[m] * np.kron(
                dec.left_basis[:, m], _basis(dk, m)
            )
        prep_regs = tuple(
            Register(lab, comp.layout[lab].dim, ALICE) for lab in out_a
        ) + (Register("S", dk, ALICE),)
        preps[f"c{i}"] = Instrument.from_channel(
            KrausChannel.preparation(vec, RegisterLayout(prep_regs)), "done"
        )
        deco_regs = RegisterLayout(
            tuple(Register(lab, comp.layout[lab].dim, BOB) for lab in out_b)
        )
        decos[f"c{i}"] = Instrument.from_channel(
            _decompress_isometry(
                dec.right_basis[:, :rank], deco_regs, "RB", dk, BOB
            ),
            "done",
        )
    rounds.append(
        adaptive_round("prepare", ALICE, preps, select_by="component", targets=())
    )
    rounds.extend(
        teleport_rounds("S", "RA", "RB", dk, sender=ALICE, receiver=BOB)
    )
    rounds.append(
        adaptive_round("decompress", BOB, decos, select_by="component")
    )

    target = _mixture_of_components(target_layout, components)
    return ConverseProtocol(
        protocol=SloccqProtocol(tuple(rounds), max(d, 1)),
        target=target,
        quantum_dimension=d,
        teleport_dimension=dk,
        postselect=(("filter", "pass"),),
        output_labels=tuple(out_a + out_b),
    )


def _mixture_of_components(
    layout: RegisterLayout, components: Sequence[tuple[float, QuantumState]]
) -> QuantumState:
    from .states import Factor

    branches = []
    for p, comp in components:
        ordered = comp.permuted(layout.labels)
        branches.append(
            EnsembleBranch(
                float(p), (Factor(layout.labels, ordered.to_vector()),)
            )
        )
    return QuantumState(layout, branches=tuple(branches))


# -- preparing a catalyst with a small quantum message ----------------------


@dataclasses.dataclass(frozen=True)
class CatalystPrepPlan:
    protocol: SloccqProtocol
    quantum_dimension: int
    catalyst: QuantumState


def compile_catalyst_prep(catalyst: QuantumState) -> CatalystPrepPlan:
    """Protocol that builds a shared catalyst from nothing.

    The catalyst must be a mixture of pure products across the party cut
    (which stage-cycle catalysts are). Alice samples the mixture branch,
    prepares that branch with Bob's half compressed into a message register,
    and sends the message; Bob decompresses. The message dimension is the
    largest branch Schmidt rank, which matches the catalyst's certified
    Schmidt number, so the compiled protocol shows the catalyst costs no more
    quantum communication than its Schmidt number.
    """
    cat = catalyst.as_ensemble()
    labels_a = cat.layout.party_labels(ALICE)
    labels_b = cat.layout.party_labels(BOB)
    if not labels_a or not labels_b:
        raise ValidationError("catalyst must span both parties")
    branch_data = []
    dim_msg = 1
    for br in cat.branches:
        ordered = QuantumState.pure(cat.layout, cat.branch_vector(br)).permuted(
            list(labels_a + labels_b)
        )
        dec = svd_across_cut(
            MultipartiteOperator.ket(ordered.to_vector(), ordered.layout)
        )
        keep = dec.singular_values > 1e-12 * dec.singular_values[0]
        rank = int(np.sum(keep))
        dim_msg = max(dim_msg, rank)
        branch_data.append((br.probability, dec, rank))

    from .registers import EMPTY_LAYOUT

    sampler = Instrument(
        [
            (f"s{i}", [np.array([[math.sqrt(p)]], dtype=np.complex128)])
            for i, (p, _, _) in enumerate(branch_data)
        ],
        EMPTY_LAYOUT,
        EMPTY_LAYOUT,
    )
    rounds = [
        local_round("stage", ALICE, sampler, targets=(), broadcast=True)
    ]
    prep_regs = tuple(
        Register(lab, cat.layout[lab].dim, ALICE) for lab in labels_a
    )
    deco_layout = RegisterLayout(
        tuple(Register(lab, cat.layout[lab].dim, BOB) for lab in labels_b)
    )
    da_tot = math.prod(r.dim for r in prep_regs)
    preps = {}
    decos = {}
    for i, (p, dec, rank) in enumerate(branch_data):
        if dim_msg > 1:
            vec = np.zeros(da_tot * dim_msg, dtype=np.complex128)
            for m in range(rank):
                vec += dec.singular_values[m] * np.kron(
                    dec.left_basis[:, m], _basis(dim_msg, m)
                )
            layout = RegisterLayout(
                prep_regs + (Register("S", dim_msg, ALICE),)
            )
            preps[f"s{i}"] = Instrument.from_channel(
                KrausChannel.preparation(vec, layout), "done"
            )
            decos[f"s{i}"] = Instrument.from_channel(
                _decompress_isometry(
                    dec.right_basis[:, :rank], deco_layout, "S", dim_msg, BOB
                ),
                "done",
            )
        else:
            vec_a = dec.left_basis[:, 0]
            preps[f"s{i}"] = Instrument.from_channel(
                KrausChannel.preparation(vec_a, RegisterLayout(prep_regs)), "done"
            )
            vec_b = dec.right_basis[:, 0]
            decos[f"s{i}"] = Instrument.from_channel(
                KrausChannel.preparation(vec_b, deco_layout), "done"
            )
    rounds.append(
        adaptive_round("prep-a", ALICE, preps, select_by="stage", targets=())
    )
    if dim_msg > 1:
        rounds.append(send_round("send-s", ALICE, "S", BOB, dim_msg))
        rounds.append(
            adaptive_round("prep-b", BOB, decos, select_by="stage")
        )
    else:
        rounds.append(
            adaptive_round("prep-b", BOB, decos, select_by="stage", targets=())
        )
    ordered_catalyst = cat.permuted(list(labels_a + labels_b))
    return CatalystPrepPlan(
        protocol=SloccqProtocol(tuple(rounds), dim_msg),
        quantum_dimension=dim_msg,
        catalyst=ordered_catalyst,
    )
