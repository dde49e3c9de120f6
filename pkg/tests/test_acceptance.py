"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines are printed even
without ``-s``). Criterion 7 combines the diagonal bounds, which hold, with
the off-diagonal row-sum bound, which does not; it prints FAIL and is
reported as an expected failure rather than hidden.
"""

import itertools
import math
import threading
import time

import numpy as np
import pytest

from dispkey import experiments as ex
from dispkey.encryption import EncryptionParams, encrypt_closed_form, encrypted_distance, i_closed_form, min_eigenvalue
from dispkey.fock import PureFockState
from dispkey.network import BobListener, connect_alice
from dispkey.optics import (
    DisplacementKey,
    FockSector,
    ModeUnitary,
    apply_lifted,
    beamsplitter,
    embed,
    haar_random_unitary,
    key_transform,
    lift_unitary,
    multimode_cutoffs,
    multimode_displace,
    phase_shifter,
)
from dispkey.protocol import ProtocolConfig, run_adaptive, run_passive


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail, seconds):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {name}: {detail} ({seconds:.1f} s)", flush=True)

    return emit


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def test_criterion_01_oracle_equivalence(report):
    with Clock() as clk:
        rows = [ex.oracle_row(s2, 5, tol=1e-8, limit=1e-6) for s2 in (0.5, 1.0, 2.0, 4.0)]
    worst = max(r.measured for r in rows)
    ok = all(r.ok for r in rows) and clk.seconds < 120
    report(1, "closed form vs quadrature, indices <= 5", ok, f"worst |diff| {worst:.2e} <= 1e-6", clk.seconds)
    assert ok


def test_criterion_02_selection_symmetry_positivity(report):
    violations = 0
    checked = 0
    with Clock() as clk:
        for s2 in (0.5, 2.0, 16.0):
            p = EncryptionParams.from_variance(s2)
            for a, b, i, j in itertools.product(range(41), range(41), range(7), range(7)):
                v = i_closed_form(a, b, i, j, p)
                bad = v < 0 or v != i_closed_form(b, a, j, i, p) or (b - a != j - i and v != 0.0)
                violations += bad
                checked += 1
    ok = violations == 0 and clk.seconds < 30
    report(2, "selection rule, nonnegativity, symmetry", ok, f"{violations} violations in {checked} cells over 3 variances", clk.seconds)
    assert ok


@pytest.fixture(scope="module")
def encrypted_grid():
    t0 = time.perf_counter()
    out = []
    for s2 in (2.0, 10.0, 50.0):
        p = EncryptionParams.from_variance(s2)
        for k in range(10):
            psi = ex.random_single_mode(1 + k % 4, 1000 + k)
            enc = encrypt_closed_form(psi, p)
            out.append((s2, enc))
    return out, time.perf_counter() - t0


def test_criterion_03_trace_preservation(report, encrypted_grid):
    grid, seconds = encrypted_grid
    worst = max(abs(enc.matrix.trace - 1) for _, enc in grid)
    ok = worst <= 1e-10 and seconds < 60
    report(3, "trace preservation under adaptive cutoff", ok, f"worst |tr - 1| {worst:.2e} over {len(grid)} states", seconds)
    assert ok


def test_criterion_04_positivity(report, encrypted_grid):
    grid, _ = encrypted_grid
    with Clock() as clk:
        lowest = min(min_eigenvalue(enc) for _, enc in grid)
    ok = lowest >= -1e-8
    report(4, "positivity of encrypted densities", ok, f"min eigenvalue {lowest:.2e}", clk.seconds)
    assert ok


def test_criterion_05_monte_carlo_agreement(report):
    states = ["fock:0", "fock:1", "fock:2", "plus:1", "plus:2", "random:0"]
    with Clock() as clk:
        rows = [ex.monte_carlo_row(1.0, s, 100_000, 25, seed=0, random_n=2) for s in states]
    worst = max(r.measured for r in rows)
    ok = all(r.ok for r in rows) and clk.seconds < 60
    report(5, "Monte Carlo vs closed form", ok, f"worst deviation {worst:.2f} standard errors over {len(states)} states", clk.seconds)
    assert ok


def test_criterion_06_recurrence_series_binomial(report):
    with Clock() as clk:
        rows = ex.series_rows() + ex.recurrence_rows() + ex.inequality_rows()
    bad = [r for r in rows if not r.ok]
    ok = not bad and clk.seconds < 30
    report(6, "diagonal recurrence, binomial series, binomial inequality", ok, f"{len(rows) - len(bad)}/{len(rows)} rows hold", clk.seconds)
    assert ok


def test_criterion_07_diagonal_and_offdiagonal_bounds(report):
    with Clock() as clk:
        diag = ex.step_bound_rows() + ex.pair_bound_rows()
        off = ex.row_sum_rows()
    diag_bad = sum(not r.ok for r in diag)
    off_bad = sum(not r.ok for r in off)
    ok = diag_bad == 0 and off_bad == 0 and clk.seconds < 120
    detail = (
        f"diagonal bounds {len(diag) - diag_bad}/{len(diag)} hold; "
        f"off-diagonal row-sum bound violated in {off_bad}/{len(off)} cells "
        f"(measured sums decay like sigma^-k, not sigma^-2k)"
    )
    report(7, "diagonal and off-diagonal bounds", ok, detail, clk.seconds)
    assert diag_bad == 0 and clk.seconds < 120
    if off_bad:
        pytest.xfail("off-diagonal row-sum bound is false as stated; see the decisions ledger")


def test_criterion_08_security_bound(report):
    specs = ex.random_pair_specs(20, seed=0)
    with Clock() as clk:
        rows = [ex.bound_row(s2, a, b, random_n=n) for s2 in (2.0, 4.0, 16.0, 64.0) for a, b, n in specs]
    bad = sum(not r.ok for r in rows)
    margin = min(r.bound - r.measured for r in rows)
    ok = bad == 0 and clk.seconds < 300
    report(8, "trace distance vs security bound", ok, f"{len(rows) - bad}/{len(rows)} rows within bound, min slack {margin:.3f}", clk.seconds)
    assert ok


def test_criterion_09_secrecy_scaling(report):
    a, b = PureFockState.fock(0), PureFockState.fock(1)
    s2s = np.array([4.0, 8.0, 16.0, 32.0, 64.0])
    with Clock() as clk:
        dist = np.array([encrypted_distance(a, b, EncryptionParams.from_variance(s2)).measured for s2 in s2s])
    slope = np.polyfit(np.log(np.sqrt(s2s)), np.log(dist), 1)[0]
    ok = slope <= -1.8 and clk.seconds < 180
    report(9, "asymptotic secrecy scaling for |0>, |1>", ok, f"slope of log distance vs log sigma {slope:.3f} <= -1.8", clk.seconds)
    assert ok


def test_criterion_10_commutation_round_trip(report):
    residuals, deficits = [], []
    with Clock() as clk:
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n = 1 + seed % 2
            psi = ex.random_multimode(2, n, seed)
            u = haar_random_unitary(2, 500 + seed)
            key = DisplacementKey(rng.normal(0, 0.5, 2) + 1j * rng.normal(0, 0.5, 2))
            beta = key_transform(u, key)
            cut = multimode_cutoffs(n, key.alphas, beta.alphas)
            enc, _ = multimode_displace(key, psi, cut)
            computed = apply_lifted(u, enc)
            dec, _ = multimode_displace(-beta, computed, computed.cutoffs)
            ref = apply_lifted(u, psi).padded(dec.cutoffs)
            residuals.append(np.linalg.norm(dec.tensor - ref.tensor))
            deficits.append(1 - run_passive(psi, u, 0.5, seed).fidelity)
    ok = max(residuals) <= 1e-6 and max(deficits) <= 1e-6 and clk.seconds < 120
    report(10, "commutation and passive round trip", ok, f"max residual {max(residuals):.1e}, max fidelity deficit {max(deficits):.1e} over 20 seeds", clk.seconds)
    assert ok


def test_criterion_11_fock_lift(report):
    unit, homo = 0.0, 0.0
    with Clock() as clk:
        for m, s in [(2, 1), (2, 4), (2, 8), (2, 20), (3, 3), (3, 6), (3, 10), (4, 4)]:
            sec = FockSector(m, s)
            u, v = haar_random_unitary(m, 10 * m + s), haar_random_unitary(m, 10 * m + s + 1)
            lu, lv = lift_unitary(u, sec), lift_unitary(v, sec)
            unit = max(unit, np.max(np.abs(lu.conj().T @ lu - np.eye(sec.size))))
            homo = max(homo, np.max(np.abs(lu @ lv - lift_unitary(u @ v, sec))))
        sec = FockSector(2, 2)
        block = lift_unitary(beamsplitter(math.pi / 4), sec)
        hom = abs(block[sec.index()[(1, 1)], sec.index()[(1, 1)]])
    ok = unit <= 1e-9 and homo <= 1e-9 and hom <= 1e-12 and clk.seconds < 30
    report(11, "Fock lift", ok, f"unitarity {unit:.1e}, homomorphism {homo:.1e}, HOM amplitude {hom:.1e}", clk.seconds)
    assert ok


def test_criterion_12_adaptive_protocol(report):
    branches = {0: ModeUnitary.identity(2), 1: embed(phase_shifter(math.pi), [0], 2)}
    psi = PureFockState.fock((1, 0))
    config = ProtocolConfig(2, 0.5, 0, beamsplitter(math.pi / 4), measured_mode=1, branch_table=branches)
    runs = 10_000
    with Clock() as clk:
        zero = max(1 - run_adaptive(ProtocolConfig(2, 0.0, s, config.unitary_stage1, 1, branches), psi).fidelity for s in range(20))
        freqs, born, worst = ex.outcome_statistics(config, psi, runs)
        dev = float(np.max(np.abs(freqs - born)))

        listener = BobListener(config, timeout=30)
        holder = {}
        server = threading.Thread(target=lambda: holder.update(report=listener.serve_one()), daemon=True)
        server.start()
        net = connect_alice(listener.address, psi, config.sigma, config.seed)
        server.join(30)
        listener.close()
        local = run_adaptive(config, psi)
        same = (
            net.fidelity == local.fidelity
            and net.outcome == local.outcome
            and np.array_equal(net.key.alphas, local.key.alphas)
            and np.array_equal(net.final_key.alphas, local.final_key.alphas)
            and net.transcript.as_rows() == local.transcript.as_rows()
        )
    band = 3 / math.sqrt(runs)
    ok = zero <= 1e-10 and dev <= band and same and holder["report"].status == "ok" and clk.seconds < 180
    detail = (
        f"zero-key deficit {zero:.1e}; frequencies {np.round(freqs[:2], 4).tolist()} vs Born {born[:2].tolist()} "
        f"(|dev| {dev:.4f} <= {band:.3f}); worst encrypted deficit {worst:.1e}; networked run identical: {same}"
    )
    report(12, "adaptive protocol", ok, detail, clk.seconds)
    assert ok
