"""The copy-cycling catalyst: structure, exactness, sensitivity, dual routes."""

import numpy as np
import pytest

from qcatalyst import (
    ALICE,
    BOB,
    ProtocolError,
    QuantumState,
    Register,
    RegisterLayout,
    ValidationError,
    apply_channel,
    build_catalyst,
    build_clo_channels,
    build_protocol,
    fidelity,
    max_entangled,
    mixture_target,
    basis_product,
    run_clo,
    tensor_states,
    trace_distance,
    verify_input_sensitivity,
)
from qcatalyst.pipelines import qutrit_pair_states
from qcatalyst.sampling import random_pure_vector, rng


@pytest.fixture(scope="module")
def pair():
    return qutrit_pair_states()


def random_pair(gen, da=3, db=3):
    lay = RegisterLayout((Register("A", da, ALICE), Register("B", db, BOB)))
    rho = QuantumState.pure(lay, random_pure_vector(da * db, gen))
    sigma = QuantumState.pure(
        lay, np.kron(random_pure_vector(da, gen), random_pure_vector(db, gen))
    )
    return rho, sigma


class TestCatalystStructure:
    def test_stage_count_and_weights(self, pair):
        rho, sigma = pair
        cat = build_catalyst(rho, sigma, 3)
        assert len(cat.branches) == 3
        for br in cat.branches:
            assert br.probability == pytest.approx(1.0 / 3.0)

    def test_single_copy_catalyst_is_trivial(self, pair):
        rho, sigma = pair
        cat = build_catalyst(rho, sigma, 1)
        assert cat.layout.total_dim == 1

    def test_explicit_flags_carry_matching_stage(self, pair):
        rho, sigma = pair
        cat = build_catalyst(rho, sigma, 2, "explicit-flags")
        assert "FA" in cat.layout.labels and "FB" in cat.layout.labels
        for br in cat.branches:
            flags = {
                f.labels[0]: int(np.argmax(np.abs(f.vector)))
                for f in br.factors
                if f.labels[0] in ("FA", "FB")
            }
            assert flags["FA"] == flags["FB"]

    def test_support_mode_needs_orthogonality(self):
        gen = rng(51)
        rho, sigma = random_pair(gen)
        with pytest.raises(ProtocolError):
            build_catalyst(rho, sigma, 2, "support-measurement")

    def test_mixed_input_rejected(self, pair):
        from qcatalyst import EnsembleBranch

        rho, sigma = pair
        mixed = QuantumState.from_branches(
            rho.layout,
            (
                EnsembleBranch(0.5, rho.branches[0].factors),
                EnsembleBranch(0.5, sigma.branches[0].factors),
            ),
        )
        with pytest.raises(ValidationError):
            build_catalyst(mixed, sigma, 2)


class TestChannels:
    def test_channels_are_trace_preserving(self, pair):
        rho, sigma = pair
        for mode in ("support-measurement", "explicit-flags"):
            for n in (1, 2, 3):
                alice, bob = build_clo_channels(rho, sigma, n, mode)
                assert alice.trace_preservation_defect() < 1e-12
                assert bob.trace_preservation_defect() < 1e-12

    def test_exactness_all_n_support_mode(self, pair):
        rho, sigma = pair
        for n in (1, 2, 3):
            rep = run_clo(build_protocol(rho, sigma, n), rho)
            assert rep.mode == "support-measurement"
            assert rep.output_distance < 1e-10
            assert rep.restoration_distance < 1e-10

    def test_exactness_explicit_flags_random_pair(self):
        gen = rng(52)
        for trial in range(3):
            rho, sigma = random_pair(gen)
            prot = build_protocol(rho, sigma, 2)
            assert prot.mode == "explicit-flags"
            rep = run_clo(prot, rho)
            assert rep.output_distance < 1e-9
            assert rep.restoration_distance < 1e-9

    def test_catalyst_sn_matches_rank_power(self):
        gen = rng(53)
        rho, sigma = random_pair(gen)
        from qcatalyst import schmidt_rank

        r = schmidt_rank(rho).rank
        for n in (2, 3):
            rep = run_clo(build_protocol(rho, sigma, n), rho)
            assert (rep.catalyst_sn.lower, rep.catalyst_sn.upper) == (
                r ** (n - 1),
                r ** (n - 1),
            )

    def test_output_matches_target_fidelity_route(self, pair):
        # second route: fidelity with each pure component of the mixture
        rho, sigma = pair
        n = 2
        rep = run_clo(build_protocol(rho, sigma, n), rho)
        lay = rep.output_state.layout
        rho_vec = rho.to_vector()
        comp_rho = QuantumState.pure_product(
            lay, [(("A1", "B1"), rho_vec), (("A2", "B2"), rho_vec)]
        )
        f = fidelity(rep.output_state, comp_rho)
        assert f == pytest.approx(1.0 / n, abs=1e-10)

    def test_dense_and_ensemble_routes_agree(self, pair):
        rho, sigma = pair
        prot = build_protocol(rho, sigma, 2)
        joint_e = tensor_states(rho.as_ensemble(), prot.catalyst)
        joint_d = joint_e.as_dense_state()
        outs = []
        for joint in (joint_e, joint_d):
            x = apply_channel(prot.alice_channel, joint)
            x = apply_channel(prot.bob_channel, x)
            outs.append(x)
        assert outs[1].is_dense
        assert trace_distance(outs[0], outs[1]) < 1e-9


class TestTarget:
    def test_mixture_target_weights(self, pair):
        rho, sigma = pair
        for n in (1, 2, 3):
            tau = mixture_target(rho, sigma, n)
            probs = sorted(br.probability for br in tau.branches)
            if n == 1:
                assert probs == [pytest.approx(1.0)]
            else:
                assert probs[0] == pytest.approx(1.0 / n)
                assert probs[-1] == pytest.approx((n - 1.0) / n)

    def test_target_fidelity_with_double_pair(self, pair):
        # frozen: the two-copy mixture has fidelity 1/2 with the pure
        # double pair
        rho, sigma = pair
        tau = mixture_target(rho, sigma, 2)
        rho_vec = rho.to_vector()
        double = QuantumState.pure_product(
            tau.layout, [(("A1", "B1"), rho_vec), (("A2", "B2"), rho_vec)]
        )
        assert fidelity(tau, double) == pytest.approx(0.5, abs=1e-12)


class TestGuards:
    def test_wrong_input_refused(self, pair):
        rho, sigma = pair
        prot = build_protocol(rho, sigma, 2)
        with pytest.raises(ProtocolError):
            run_clo(prot, sigma)

    def test_sensitivity_report_frozen_value(self, pair):
        # running the two-copy cycle on sigma instead of rho leaves the
        # catalyst stuck at the all-sigma stage: distance exactly 1/2
        rho, sigma = pair
        prot = build_protocol(rho, sigma, 2)
        rep = verify_input_sensitivity(prot, sigma)
        assert rep.restoration_distance == pytest.approx(0.5, abs=1e-12)
        assert rep.output_distance > 0.1

    def test_sigma_must_be_product(self, pair):
        rho, _ = pair
        with pytest.raises(ValidationError):
            build_protocol(rho, rho, 2)

    def test_entangled_catalyst_needs_entangled_input(self):
        # a product rho gives a product (rank-1) catalyst
        rho, sigma = qutrit_pair_states()
        lay = rho.layout
        prod = basis_product(lay, (0, 0))
        prot = build_protocol(prod, sigma, 3)
        rep = run_clo(prot, prod)
        assert (rep.catalyst_sn.lower, rep.catalyst_sn.upper) == (1, 1)
        assert rep.output_distance < 1e-10

    def test_larger_embedding_same_protocol(self, pair):
        # embedding both states into larger local spaces changes nothing
        rho, sigma = pair
        big_rho = rho.embed({"A": 4, "B": 4})
        big_sigma = sigma.embed({"A": 4, "B": 4})
        rep = run_clo(build_protocol(big_rho, big_sigma, 2), big_rho)
        assert rep.output_distance < 1e-10
        assert rep.restoration_distance < 1e-10


def test_joint_state_availability(pair):
    rho, sigma = pair
    rep2 = run_clo(build_protocol(rho, sigma, 2), rho)
    assert rep2.joint_available
    rep3 = run_clo(build_protocol(rho, sigma, 3), rho)
    assert not rep3.joint_available
    # the joint is still usable as an ensemble even past the dense cap
    margin = rep3.joint_state.marginal(["A1", "B1"])
    assert margin.layout.total_dim == 9
