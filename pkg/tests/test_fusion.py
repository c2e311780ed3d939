"""Heterogeneous fusion and channel-filter bookkeeping."""

import numpy as np
import pytest

from ddfusion import (
    CanonicalGaussian,
    ChannelFilter,
    FactorGraph,
    FactorKind,
    FusionMessage,
    LinearDynamics,
    NegativeInformationError,
    StructuralError,
    VariableKey,
    fuse,
    min_eigenvalue,
    prepare_message,
)

T = VariableKey("t1", 0, 1)
U = VariableKey("u_local", 0, 1)


def gauss(vars_, zeta, lam):
    return CanonicalGaussian(tuple(vars_), np.asarray(zeta, float),
                             np.asarray(lam, float))


def message(payload, sender=2, receiver=1, k=0):
    return FusionMessage(sender, receiver, k, payload)


# -- prepare_message ---------------------------------------------------


def test_message_over_full_state_is_the_joint():
    g = FactorGraph()
    g.add_variable(T)
    g.add_factor(FactorKind.PRIOR, gauss([T], [1.0], [[2.0]]))
    cf = ChannelFilter(2, {"t1"})
    msg = prepare_message(g, cf, 1, 2, 0)
    j = g.joint_canonical()
    assert np.allclose(msg.payload.zeta, j.zeta)
    assert np.allclose(msg.payload.lam, j.lam)


def test_message_independent_block_is_that_block():
    g = FactorGraph()
    g.add_variable(T)
    g.add_variable(U)
    g.add_factor(FactorKind.PRIOR, gauss([T], [1.0], [[2.0]]))
    g.add_factor(FactorKind.PRIOR, gauss([U], [5.0], [[4.0]]))
    msg = prepare_message(g, ChannelFilter(2, {"t1"}), 1, 2, 0)
    assert msg.payload.vars == (T,)
    assert np.allclose(msg.payload.lam, [[2.0]])
    assert np.allclose(msg.payload.zeta, [1.0])


def test_message_coupled_case_matches_schur_oracle():
    g = FactorGraph()
    g.add_variable(T)
    g.add_variable(U)
    g.add_factor(FactorKind.PRIOR,
                 gauss([T, U], [1.0, 2.0], [[2.0, 0.8], [0.8, 3.0]]))
    msg = prepare_message(g, ChannelFilter(2, {"t1"}), 1, 2, 0)
    # Schur complement by hand
    assert np.allclose(msg.payload.lam, [[2.0 - 0.8 * 0.8 / 3.0]])
    assert np.allclose(msg.payload.zeta, [1.0 - 0.8 * 2.0 / 3.0])


def test_message_no_common_slice_rejected():
    g = FactorGraph()
    g.add_variable(U)
    g.add_factor(FactorKind.PRIOR, gauss([U], [0.0], [[1.0]]))
    with pytest.raises(StructuralError):
        prepare_message(g, ChannelFilter(2, {"t1"}), 1, 2, 0)


# -- fuse --------------------------------------------------------------


def robot_graph():
    g = FactorGraph()
    g.add_variable(T)
    g.add_factor(FactorKind.PRIOR, gauss([T], [1.0], [[2.0]]))
    return g


def cf_with(payload):
    cf = ChannelFilter(2, {"t1"})
    cf.set_content(payload)
    return cf


def test_fuse_nothing_new_leaves_joint_unchanged():
    g = robot_graph()
    payload = gauss([T], [0.5], [[1.0]])
    cf = cf_with(payload)
    before = g.joint_canonical()
    fuse(g, cf, message(payload))
    after = g.joint_canonical()
    assert np.allclose(after.zeta, before.zeta)
    assert np.allclose(after.lam, before.lam)


def test_fuse_first_contact_adds_incoming_exactly():
    g = robot_graph()
    cf = ChannelFilter(2, {"t1"})  # empty CF
    incoming = gauss([T], [0.7], [[1.5]])
    node = fuse(g, cf, message(incoming))
    assert np.allclose(node.payload.zeta, incoming.zeta)
    assert np.allclose(node.payload.lam, incoming.lam)


def test_fuse_scalar_information_arithmetic():
    g = robot_graph()  # own information 2
    cf = cf_with(gauss([T], [0.0], [[1.0]]))
    fuse(g, cf, message(gauss([T], [0.0], [[2.0]])))
    j = g.joint_canonical()
    assert np.allclose(j.lam, [[2.0 + 2.0 - 1.0]])


def test_fuse_negative_information_event():
    g = robot_graph()
    cf = cf_with(gauss([T], [0.0], [[5.0]]))  # CF claims more than incoming
    with pytest.raises(NegativeInformationError):
        fuse(g, cf, message(gauss([T], [0.0], [[1.0]])))
    # factor removed again: joint back to the prior
    assert np.allclose(g.joint_canonical().lam, [[2.0]])


def test_fuse_mismatched_slice_rejected():
    g = robot_graph()
    cf = cf_with(gauss([T], [0.0], [[1.0]]))
    other = VariableKey("t1", 3, 1)
    with pytest.raises(StructuralError):
        fuse(g, cf, message(gauss([other], [0.0], [[1.0]])))


# -- channel filter ----------------------------------------------------


def test_cf_update_symmetric_endpoints_agree():
    own_i = gauss([T], [1.0], [[2.0]])
    own_j = gauss([T], [0.5], [[1.5]])
    prior = gauss([T], [0.2], [[0.5]])
    cf_i = cf_with(prior)
    cf_j = cf_with(prior)
    cf_i.update(own_i, message(own_j, sender=2, receiver=1))
    cf_j.update(own_j, message(own_i, sender=1, receiver=2))
    ji = cf_i.joint()
    jj = cf_j.joint()
    assert np.allclose(ji.zeta, jj.zeta)
    assert np.allclose(ji.lam, jj.lam)


def test_cf_first_contact_is_product_of_priors():
    own = gauss([T], [1.0], [[2.0]])
    incoming = gauss([T], [0.5], [[1.5]])
    cf = ChannelFilter(2, {"t1"})
    cf.graph.add_variable(T)
    cf.graph.add_factor(FactorKind.PRIOR, CanonicalGaussian.zero((T,)))
    cf.update(own, message(incoming))
    j = cf.joint()
    assert np.allclose(j.lam, [[3.5]])
    assert np.allclose(j.zeta, [1.5])


def test_cf_three_step_run_matches_data_pedigree_oracle():
    """Two robots exchanging every step over one static shared scalar.

    Oracle: track which raw measurements each robot has incorporated and
    compute the common information directly from the intersection (shared
    prior plus all measurements both sides know).
    """
    v = VariableKey("t1", None, 1)  # static: no prediction needed
    prior_lam, prior_zeta = 1.0, 0.0
    rng = np.random.default_rng(42)

    own = {}
    cfs = {}
    for rid in (1, 2):
        g = FactorGraph()
        g.add_variable(v)
        g.add_factor(FactorKind.PRIOR, gauss([v], [prior_zeta], [[prior_lam]]))
        own[rid] = g
        cf = ChannelFilter(3 - rid, {"t1"})
        cf.initialize({v: gauss([v], [prior_zeta], [[prior_lam]])})
        cfs[rid] = cf

    # data pedigree: robot -> list of (zeta, lam) raw measurement terms
    seen = {1: [], 2: []}
    for step in range(3):
        for rid in (1, 2):
            y = float(rng.standard_normal())
            r = 0.5
            term = (y / r, 1.0 / r)
            own[rid].add_factor(FactorKind.LOCAL_MEASUREMENT,
                                gauss([v], [term[0]], [[term[1]]]))
            seen[rid].append(term)
        # simultaneous exchange
        msgs = {rid: prepare_message(own[rid], cfs[rid], rid, 3 - rid, None)
                for rid in (1, 2)}
        for rid in (1, 2):
            fuse(own[rid], cfs[rid], msgs[3 - rid])
            cfs[rid].update(msgs[rid].payload, msgs[3 - rid])
        # after a symmetric full exchange both robots hold everything,
        # so the common data is the union of all measurements so far
        shared = [t for r_ in (1, 2) for t in seen[r_]]
        zeta_c = prior_zeta + sum(t[0] for t in shared)
        lam_c = prior_lam + sum(t[1] for t in shared)
        for rid in (1, 2):
            j = cfs[rid].joint()
            assert j.lam[0, 0] == pytest.approx(lam_c, abs=1e-10), f"step {step}"
            assert j.zeta[0] == pytest.approx(zeta_c, abs=1e-10), f"step {step}"
            # and each robot's own posterior equals the pooled posterior
            jo = own[rid].joint_canonical()
            assert jo.lam[0, 0] == pytest.approx(lam_c, abs=1e-10)
            assert jo.zeta[0] == pytest.approx(zeta_c, abs=1e-10)


def test_cf_predict_empty_is_noop():
    cf = ChannelFilter(2, {"t1"})
    cf.predict({}, 0)
    assert not cf.graph.factors


def test_cf_predict_static_vars_noop():
    v = VariableKey("t1", None, 1)
    cf = ChannelFilter(2, {"t1"})
    cf.initialize({v: gauss([v], [1.0], [[2.0]])})
    before = cf.graph.dumps()
    cf.predict({}, 0)
    assert cf.graph.dumps() == before


def test_cf_predict_matches_kalman_oracle():
    v0 = VariableKey("t1", 0, 1)
    cf = ChannelFilter(2, {"t1"})
    p0, m0 = 0.5, 1.2
    cf.initialize({v0: CanonicalGaussian.from_moment((v0,), [m0], [[p0]])})
    f, q = 0.9, 0.3
    cf.predict({"t1": LinearDynamics(f * np.eye(1), q * np.eye(1))}, 0)
    mean, cov = cf.joint().to_moment()
    assert mean[0] == pytest.approx(f * m0, abs=1e-10)
    assert cov[0, 0] == pytest.approx(f * p0 * f + q, abs=1e-10)


def test_cf_deflate_identity():
    cf = cf_with(gauss([T], [2.0], [[4.0]]))
    before = cf.graph.dumps()
    cf.deflate_factors(1.0)
    assert cf.graph.dumps() == before


def test_cf_deflate_scales_factors():
    cf = cf_with(gauss([T], [2.0], [[4.0]]))
    cf.deflate_factors(0.5)
    j = cf.joint()
    assert np.allclose(j.zeta, [1.0])
    assert np.allclose(j.lam, [[2.0]])


def test_cf_deflate_out_of_range_rejected():
    cf = cf_with(gauss([T], [2.0], [[4.0]]))
    for bad in (0.0, -0.5, 1.5):
        with pytest.raises(StructuralError):
            cf.deflate_factors(bad)


def test_cf_never_exceeds_robot_after_deflation():
    # robot holds prior*measurement; CF holds the prior; deflation keeps
    # the robot's common marginal dominating the CF
    g = robot_graph()
    cf = cf_with(gauss([T], [0.5], [[1.0]]))
    for lam_min in (0.9, 0.7, 0.5):
        cf.deflate_factors(lam_min)
        diff = g.marginal([T]).lam - cf.joint().lam
        assert min_eigenvalue(diff) >= -1e-9


def test_message_serialization_deterministic():
    msg = message(gauss([T], [1.0 / 3.0], [[2.0 / 3.0]]))
    assert msg.serialize() == msg.serialize()
    assert "sender=2" in msg.serialize()
