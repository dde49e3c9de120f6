import math

import numpy as np
import pytest

from dispkey.fock import PureFockState
from dispkey.optics import ModeUnitary, apply_lifted, beamsplitter, embed, haar_random_unitary, key_transform, phase_shifter
from dispkey.protocol import (
    DECRYPT_DONE,
    ENCRYPTED_INPUT,
    HELLO,
    PROTOCOL_VERSION,
    AliceClient,
    BobServer,
    BranchMissError,
    LoopbackChannel,
    ProtocolConfig,
    ProtocolCutoffError,
    UnexpectedMessageError,
    VersionMismatchError,
    measure_mode,
    mode_probabilities,
    project_mode,
    run_adaptive,
    run_passive,
)

BS = beamsplitter(math.pi / 4)
PHASE = embed(phase_shifter(math.pi), [0], 2)


def _random_state(modes, n, seed):
    from dispkey.fock import occupation_basis

    rng = np.random.default_rng(seed)
    dim = len(occupation_basis(modes, n))
    z = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return PureFockState.from_basis_amplitudes(modes, n, z / np.linalg.norm(z))


def _hom_config(sigma, seed):
    return ProtocolConfig(2, sigma, seed, BS, measured_mode=1, branch_table={0: ModeUnitary.identity(2), 1: PHASE})


def test_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(2, -1.0, 0, BS)
    with pytest.raises(ValueError):
        ProtocolConfig(2, 0.5, 0, BS, measured_mode=1)
    with pytest.raises(ValueError):
        ProtocolConfig(2, 0.5, 0, BS, branch_table={0: BS})
    with pytest.raises(ValueError):
        ProtocolConfig(2, 0.5, 0, BS, measured_mode=2, branch_table={0: BS})
    with pytest.raises(ValueError):
        ProtocolConfig(3, 0.5, 0, BS)
    assert _hom_config(0.5, 0).adaptive and not ProtocolConfig(2, 0.5, 0, BS).adaptive


def test_measure_product_state():
    m = measure_mode(PureFockState.fock((2, 0)), 0, seed=3)
    assert m.outcome == 2 and m.probability == pytest.approx(1.0)
    assert m.post_state.tensor[2, 0] == pytest.approx(1.0)


def test_measure_symmetric_state():
    psi = PureFockState.from_basis_amplitudes(2, 1, [0, 1 / math.sqrt(2), 1 / math.sqrt(2)])
    outcomes = [measure_mode(psi, 1, seed=s).outcome for s in range(400)]
    assert set(outcomes) == {0, 1}
    assert np.mean(outcomes) == pytest.approx(0.5, abs=0.1)
    m = measure_mode(psi, 1, seed=0)
    assert m.probability == pytest.approx(0.5)
    assert np.linalg.norm(m.post_state.tensor) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_probabilities_sum_to_one(seed):
    psi = _random_state(3, 3, seed)
    for mode in range(3):
        assert mode_probabilities(psi, mode).sum() == pytest.approx(1.0, abs=1e-10)


def test_measure_is_seeded_and_validated():
    psi = _random_state(2, 3, 1)
    assert measure_mode(psi, 0, 42).outcome == measure_mode(psi, 0, 42).outcome
    with pytest.raises(ValueError):
        measure_mode(psi, 2, 0)
    with pytest.raises(ValueError):
        project_mode(PureFockState.fock((1, 0)), 1, 1)


def test_passive_zero_key_is_exact():
    res = run_passive(_random_state(2, 2, 0), haar_random_unitary(2, 0), 0.0, 5)
    assert abs(1 - res.fidelity) <= 1e-12
    assert np.all(res.key.alphas == 0)


@pytest.mark.parametrize("seed", range(6))
def test_passive_round_trip(seed):
    u = haar_random_unitary(2, 100 + seed)
    res = run_passive(_random_state(2, 2, seed), u, 0.5, seed)
    assert res.fidelity >= 1 - 1e-6
    assert np.max(np.abs(res.final_key.alphas - u.matrix @ res.key.alphas)) <= 1e-12
    assert res.transcript.kinds() == ["encrypt", "compute", "return-mode", "decrypt"]
    assert res.outcome is None


def test_passive_seed_determinism():
    psi, u = _random_state(2, 1, 3), haar_random_unitary(2, 3)
    a, b = run_passive(psi, u, 0.5, 9), run_passive(psi, u, 0.5, 9)
    assert a.fidelity == b.fidelity and np.array_equal(a.key.alphas, b.key.alphas)
    c = run_passive(psi, u, 0.5, 10)
    assert not np.array_equal(a.key.alphas, c.key.alphas)


def test_passive_three_modes():
    res = run_passive(PureFockState.fock((1, 0, 1)), haar_random_unitary(3, 4), 0.3, 1)
    assert res.fidelity >= 1 - 1e-6


def test_cutoff_failure_is_typed():
    client = AliceClient(PureFockState.fock((1, 0)), 0.5, 0, max_leakage=1e-30)
    with pytest.raises(ProtocolCutoffError, match="mode"):
        client.run(LoopbackChannel(BobServer(ProtocolConfig(2, 0.5, 0, BS))))


def test_adaptive_zero_key_reduction():
    res = run_adaptive(_hom_config(0.0, 3), PureFockState.fock((1, 0)))
    assert abs(1 - res.fidelity) <= 1e-10
    assert res.outcome in (0, 1) and res.probability == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(8))
def test_adaptive_round_trip(seed):
    res = run_adaptive(_hom_config(0.5, seed), PureFockState.fock((1, 0)))
    assert res.fidelity >= 1 - 1e-6
    kinds = res.transcript.kinds()
    assert kinds == ["encrypt", "compute", "return-mode", "measure", "feedforward", "return-mode", "decrypt"]
    assert kinds.count("measure") == kinds.count("feedforward") == 1
    assert [e.index for e in res.transcript.events] == list(range(len(kinds)))
    assert res.transcript.by_actor("Bob")[-1].summary["outcome"] == res.outcome


def test_adaptive_final_key_is_branch_transformed_residual():
    cfg = _hom_config(0.7, 11)
    res = run_adaptive(cfg, PureFockState.fock((1, 0)))
    beta = key_transform(BS, res.key).alphas
    beta[1] = 0
    assert np.allclose(res.final_key.alphas, cfg.branch_table[res.outcome].matrix @ beta, atol=1e-14)


def test_adaptive_born_frequencies():
    outcomes = [run_adaptive(_hom_config(0.5, s), PureFockState.fock((1, 0))).outcome for s in range(600)]
    assert np.mean(outcomes) == pytest.approx(0.5, abs=3 * 0.5 / math.sqrt(600))


def test_adaptive_requires_adaptive_config():
    with pytest.raises(ValueError):
        run_adaptive(ProtocolConfig(2, 0.5, 0, BS), PureFockState.fock((1, 0)))


def test_branch_miss():
    cfg = ProtocolConfig(2, 0.5, 0, BS, measured_mode=1, branch_table={0: ModeUnitary.identity(2)})
    with pytest.raises(BranchMissError):
        run_adaptive(cfg, PureFockState.fock((1, 0)))
    # the server refuses an unconfigured outcome too
    bob = BobServer(cfg)
    bob.handle(HELLO, {"version": PROTOCOL_VERSION, "modes": 2})
    bob.handle(ENCRYPTED_INPUT, {"state": PureFockState.fock((1, 0))})
    with pytest.raises(BranchMissError):
        bob.handle("MEASURE_RESULT", {"outcome": 1, "state": PureFockState.fock((1, 0))})


def test_bob_state_machine():
    bob = BobServer(ProtocolConfig(2, 0.5, 0, BS))
    with pytest.raises(UnexpectedMessageError):
        bob.handle(DECRYPT_DONE, {})
    with pytest.raises(VersionMismatchError):
        BobServer(ProtocolConfig(2, 0.5, 0, BS)).handle(HELLO, {"version": 99, "modes": 2})
    with pytest.raises(UnexpectedMessageError):
        BobServer(ProtocolConfig(2, 0.5, 0, BS)).handle(HELLO, {"version": PROTOCOL_VERSION, "modes": 3})
    (kind, desc), = bob.handle(HELLO, {"version": PROTOCOL_VERSION, "modes": 2})
    assert kind == HELLO and desc["measured_mode"] is None and desc["version"] == PROTOCOL_VERSION
    (kind, reply), = bob.handle(ENCRYPTED_INPUT, {"state": PureFockState.fock((1, 0))})
    assert reply["stage"] == 1
    assert np.allclose(reply["state"].tensor, apply_lifted(BS, PureFockState.fock((1, 0))).tensor)
    assert bob.handle(DECRYPT_DONE, {})[0][0] == "RESULT" and bob.done
