"""Round-based protocols: validation, execution, ledger bounds, teleportation."""

import math

import numpy as np
import pytest

from qcatalyst import (
    ALICE,
    BOB,
    Instrument,
    KrausChannel,
    ProtocolError,
    QuantumState,
    Register,
    RegisterLayout,
    SloccqProtocol,
    ValidationError,
    adaptive_round,
    apply_channel,
    apply_instrument,
    basis_product,
    bell_measurement_instrument,
    build_protocol,
    certify_impossible,
    complete_isometry,
    compile_catalyst_prep,
    construct_converse,
    filter_to_max_entangled,
    final_state,
    ledger_bound,
    local_round,
    max_entangled,
    run_protocol,
    schmidt_rank,
    send_round,
    shift_clock_unitary,
    teleport_rounds,
    tensor_states,
    trace_distance,
)
from qcatalyst.pipelines import qutrit_pair_states, separation_family, _mixture_components
from qcatalyst.sampling import random_instrument, random_pure_vector, rng


def qubit_reg(label, party):
    return RegisterLayout((Register(label, 2, party),))


def identity_round(name, label, party, dim=2):
    lay = RegisterLayout((Register(label, dim, party),))
    return local_round(
        name, party, Instrument.from_channel(KrausChannel.from_unitary(np.eye(dim), lay))
    )


class TestRoundValidation:
    def test_budget_enforced_at_construction(self):
        rounds = (
            send_round("s1", ALICE, "X", BOB, 3),
            send_round("s2", BOB, "Y", ALICE, 2),
        )
        with pytest.raises(ProtocolError):
            SloccqProtocol(rounds, 5)
        SloccqProtocol(rounds, 6)

    def test_duplicate_names_rejected(self):
        r = identity_round("same", "A", ALICE)
        with pytest.raises(ValidationError):
            SloccqProtocol((r, r), 1)

    def test_select_by_requires_earlier_broadcast(self):
        lay = qubit_reg("A", ALICE)
        inst = Instrument.from_channel(KrausChannel.from_unitary(np.eye(2), lay))
        adaptive = adaptive_round(
            "fix", ALICE, {"ok": inst}, select_by="missing"
        )
        with pytest.raises(ValidationError):
            SloccqProtocol((adaptive,), 1)

    def test_send_to_self_rejected(self):
        with pytest.raises(ValidationError):
            send_round("s", ALICE, "X", ALICE, 2)

    def test_party_ownership_enforced_at_run(self):
        st = max_entangled(2, ("A", "B"))
        bad = identity_round("touch", "B", ALICE)  # Alice touching Bob's register
        with pytest.raises(ProtocolError):
            run_protocol(SloccqProtocol((bad,), 1), st)

    def test_send_changes_ownership(self):
        st = max_entangled(2, ("A", "B"))
        prot = SloccqProtocol(
            (
                send_round("give", ALICE, "A", BOB, 2),
                identity_round("use", "A", BOB),
            ),
            2,
        )
        tree = run_protocol(prot, st)
        assert tree.leaves[0].state.layout.party_of("A") == BOB

    def test_send_dim_mismatch_caught(self):
        st = max_entangled(3, ("A", "B"))
        prot = SloccqProtocol((send_round("give", ALICE, "A", BOB, 2),), 2)
        with pytest.raises(ProtocolError):
            run_protocol(prot, st)

    def test_json_round_trip(self):
        st = max_entangled(2, ("A", "B"))
        lay = qubit_reg("A", ALICE)
        meas = Instrument(
            [
                ("0", [np.diag([1.0, 0.0]).astype(np.complex128)]),
                ("1", [np.diag([0.0, 1.0]).astype(np.complex128)]),
            ],
            lay,
            lay,
        )
        fix = {
            "0": Instrument.from_channel(KrausChannel.from_unitary(np.eye(2), qubit_reg("B", BOB))),
            "1": Instrument.from_channel(
                KrausChannel.from_unitary(
                    np.array([[0.0, 1.0], [1.0, 0.0]]), qubit_reg("B", BOB)
                )
            ),
        }
        prot = SloccqProtocol(
            (
                local_round("m", ALICE, meas, broadcast=True),
                adaptive_round("c", BOB, fix, select_by="m"),
            ),
            1,
        )
        back = SloccqProtocol.from_json(prot.to_json())
        t1 = run_protocol(prot, st)
        t2 = run_protocol(back, st)
        s1, _ = final_state(t1)
        s2, _ = final_state(t2)
        assert trace_distance(s1.permuted(s2.layout.labels), s2) < 1e-12


class TestBranching:
    def test_measurement_splits_probability(self):
        st = max_entangled(2, ("A", "B"))
        lay = qubit_reg("A", ALICE)
        meas = Instrument(
            [
                ("0", [np.diag([1.0, 0.0]).astype(np.complex128)]),
                ("1", [np.diag([0.0, 1.0]).astype(np.complex128)]),
            ],
            lay,
            lay,
        )
        tree = run_protocol(
            SloccqProtocol((local_round("m", ALICE, meas, broadcast=True),), 1), st
        )
        assert len(tree.leaves) == 2
        assert tree.total_probability == pytest.approx(1.0, abs=1e-12)
        for leaf in tree.leaves:
            assert leaf.probability == pytest.approx(0.5, abs=1e-12)

    def test_postselection(self):
        st = max_entangled(2, ("A", "B"))
        lay = qubit_reg("A", ALICE)
        meas = Instrument(
            [
                ("0", [np.diag([1.0, 0.0]).astype(np.complex128)]),
                ("1", [np.diag([0.0, 1.0]).astype(np.complex128)]),
            ],
            lay,
            lay,
        )
        tree = run_protocol(
            SloccqProtocol((local_round("m", ALICE, meas, broadcast=True),), 1), st
        )
        picked, prob = final_state(tree, [("m", "1")])
        assert prob == pytest.approx(0.5, abs=1e-12)
        vec = picked.to_vector()
        assert abs(vec[3]) == pytest.approx(1.0, abs=1e-12)

    def test_empty_postselection_raises(self):
        st = max_entangled(2, ("A", "B"))
        tree = run_protocol(
            SloccqProtocol((identity_round("id", "A", ALICE),), 1), st
        )
        with pytest.raises(ProtocolError):
            final_state(tree, [("id", "nope")])


class TestFiltration:
    def test_known_success_probability(self):
        # frozen: coefficients sqrt(0.8), sqrt(0.2) filter at probability 0.4
        lay = RegisterLayout((Register("A", 2, ALICE), Register("B", 2, BOB)))
        v = np.array([math.sqrt(0.8), 0.0, 0.0, math.sqrt(0.2)])
        st = QuantumState.pure(lay, v)
        plan = filter_to_max_entangled(st)
        assert plan.schmidt_rank == 2
        assert plan.success_probability == pytest.approx(0.4, abs=1e-12)

    def test_filter_output_is_max_entangled(self):
        gen = rng(61)
        for _ in range(20):
            da = int(gen.integers(2, 5))
            db = int(gen.integers(2, 5))
            lay = RegisterLayout(
                (Register("A", da, ALICE), Register("B", db, BOB))
            )
            st = QuantumState.pure(lay, random_pure_vector(da * db, gen))
            plan = filter_to_max_entangled(st)
            k = plan.schmidt_rank
            outcomes = {
                o: (p, s) for o, p, s in apply_instrument(plan.instrument, st)
            }
            assert "pass" in outcomes
            p_pass, passed = outcomes["pass"]
            assert p_pass == pytest.approx(plan.success_probability, abs=1e-9)
            aligned = apply_channel(plan.other_party_alignment, passed)
            phi = np.zeros(da * db, dtype=np.complex128)
            for j in range(k):
                phi[j * db + j] = 1.0 / math.sqrt(k)
            got = aligned.permuted(["A", "B"]).to_vector()
            overlap = abs(np.vdot(phi, got))
            assert overlap == pytest.approx(1.0, abs=1e-8)


class TestTeleportation:
    def test_bell_instrument_is_complete(self):
        for d in (2, 3):
            inst = bell_measurement_instrument("S", "RA", d, ALICE)
            total = sum(
                k.conj().T @ k for _, kraus in inst.branches for k in kraus
            )
            np.testing.assert_allclose(total, np.eye(d * d), atol=1e-12)

    def test_teleport_moves_arbitrary_state(self):
        gen = rng(62)
        for d in (2, 3, 4):
            msg = QuantumState.pure(
                RegisterLayout((Register("S", d, ALICE),)),
                random_pure_vector(d, gen),
            )
            resource = max_entangled(d, ("RA", "RB"))
            start = tensor_states(msg, resource)
            rounds = teleport_rounds("S", "RA", "RB", d)
            tree = run_protocol(SloccqProtocol(tuple(rounds), 1), start)
            assert len(tree.leaves) == d * d
            for leaf in tree.leaves:
                assert leaf.probability == pytest.approx(1.0 / d**2, abs=1e-10)
                got = leaf.state.to_vector()
                overlap = abs(np.vdot(msg.to_vector(), got))
                assert overlap == pytest.approx(1.0, abs=1e-9)

    def test_shift_clock_unitaries(self):
        for d in (2, 3, 5):
            for q in range(d):
                for p in range(d):
                    w = shift_clock_unitary(d, q, p)
                    np.testing.assert_allclose(
                        w.conj().T @ w, np.eye(d), atol=1e-12
                    )

    def test_complete_isometry(self):
        gen = rng(63)
        for _ in range(10):
            d = int(gen.integers(2, 7))
            k = int(gen.integers(1, d + 1))
            cols = np.linalg.qr(
                gen.standard_normal((d, k)) + 1j * gen.standard_normal((d, k))
            )[0]
            u = complete_isometry(cols, d)
            np.testing.assert_allclose(u.conj().T @ u, np.eye(d), atol=1e-10)
            np.testing.assert_allclose(u[:, :k], cols, atol=1e-12)


class TestLedger:
    def test_impossibility_certificate(self):
        cert = certify_impossible(2, 3, 8)
        assert cert.impossible and cert.achievable_sn_upper == 6
        cert2 = certify_impossible(2, 4, 8)
        assert not cert2.impossible

    def test_ledger_soundness_random_protocols(self):
        # random bounded-message protocols never beat the ledger cap
        gen = rng(64)
        for trial in range(60):
            da = int(gen.integers(2, 4))
            dm = int(gen.integers(2, 4))
            db = int(gen.integers(2, 4))
            lay = RegisterLayout(
                (
                    Register("A1", da, ALICE),
                    Register("A2", dm, ALICE),
                    Register("B", db, BOB),
                )
            )
            st = QuantumState.pure(lay, random_pure_vector(da * dm * db, gen))
            r0 = schmidt_rank(st).rank
            rounds = [
                local_round(
                    "a-op",
                    ALICE,
                    random_instrument(lay.subset(["A1", "A2"]), gen),
                    broadcast=True,
                ),
                local_round("b-op", BOB, random_instrument(lay.subset(["B"]), gen)),
                send_round("move", ALICE, "A2", BOB, dm),
                local_round(
                    "b-op2", BOB, random_instrument(lay.subset(["A2", "B"]).with_party("A2", BOB), gen)
                ),
            ]
            tree = run_protocol(SloccqProtocol(tuple(rounds), dm), st)
            cap = ledger_bound(r0, tree)
            assert cap.upper == r0 * dm
            for leaf in tree.leaves:
                rank = schmidt_rank(leaf.state).rank
                assert rank <= cap.upper

    def test_classical_only_never_raises_rank(self):
        gen = rng(65)
        for trial in range(60):
            da = int(gen.integers(2, 5))
            db = int(gen.integers(2, 5))
            lay = RegisterLayout(
                (Register("A", da, ALICE), Register("B", db, BOB))
            )
            st = QuantumState.pure(lay, random_pure_vector(da * db, gen))
            r0 = schmidt_rank(st).rank
            rounds = []
            for k in range(4):
                party, lab = ((ALICE, "A"), (BOB, "B"))[k % 2]
                rounds.append(
                    local_round(
                        f"op{k}",
                        party,
                        random_instrument(lay.subset([lab]), gen),
                        broadcast=True,
                    )
                )
            tree = run_protocol(SloccqProtocol(tuple(rounds), 1), st)
            assert tree.ledger.quantum_dimension == 1
            for leaf in tree.leaves:
                assert schmidt_rank(leaf.state).rank <= r0


class TestConverse:
    def test_reaches_target_exactly(self):
        fam = separation_family(1)
        conv = construct_converse(fam.rho, _mixture_components(fam), fam.d_enough)
        tree = run_protocol(conv.protocol, fam.rho)
        achieved, prob = final_state(tree, conv.postselect)
        assert prob == pytest.approx(1.0, abs=1e-9)
        assert trace_distance(achieved, conv.target) < 1e-10

    def test_budget_too_small_refused(self):
        fam = separation_family(1)
        with pytest.raises(ProtocolError):
            construct_converse(fam.rho, _mixture_components(fam), fam.d_short)


class TestCatalystCompilation:
    def test_two_stage_catalyst_costs_its_schmidt_number(self):
        rho, sigma = qutrit_pair_states()
        prot = build_protocol(rho, sigma, 2)
        plan = compile_catalyst_prep(prot.catalyst)
        assert plan.quantum_dimension == 2
        tree = run_protocol(plan.protocol, QuantumState.empty())
        prepared, _ = final_state(tree)
        labels = list(plan.catalyst.layout.labels)
        dist = trace_distance(prepared.permuted(labels), plan.catalyst)
        assert dist < 1e-10

    def test_product_catalyst_needs_no_quantum_message(self):
        rho, sigma = qutrit_pair_states()
        prod = basis_product(rho.layout, (0, 0))
        prot = build_protocol(prod, sigma, 3)
        plan = compile_catalyst_prep(prot.catalyst)
        assert plan.quantum_dimension == 1
        assert plan.protocol.quantum_dimension_used == 1
