"""Client/server simulation of displacement-key encrypted linear optics.

Alice owns the plaintext state and the key. Bob owns the computation. A
Mediator, living with Bob, holds the joint quantum state and applies the
operations the parties declare to it; handing the state to Alice models
sending her the optical modes. Alice drives the session through a channel
that delivers her messages to Bob's handler, either in-process
(:class:`LoopbackChannel`) or over a socket (see :mod:`dispkey.network`).
Both paths run the same code, so equal seeds give equal results.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .fock import CutoffError, PureFockState, fidelity
from .optics import (
    DisplacementKey,
    ModeUnitary,
    apply_lifted,
    key_transform,
    multimode_cutoffs,
    multimode_displace,
)

PROTOCOL_VERSION = 1

# message types
HELLO = "HELLO"
ENCRYPTED_INPUT = "ENCRYPTED_INPUT"
APPLY_STAGE = "APPLY_STAGE"
MEASURE_REQUEST = "MEASURE_REQUEST"
MEASURE_RESULT = "MEASURE_RESULT"
DECRYPT_DONE = "DECRYPT_DONE"
RESULT = "RESULT"
ERROR = "ERROR"
MESSAGE_TYPES = (HELLO, ENCRYPTED_INPUT, APPLY_STAGE, MEASURE_REQUEST, MEASURE_RESULT, DECRYPT_DONE, RESULT, ERROR)

BRANCH_PROBABILITY_FLOOR = 1e-9


class ProtocolError(RuntimeError):
    code = "protocol"


class MalformedFrameError(ProtocolError):
    code = "malformed-frame"


class VersionMismatchError(ProtocolError):
    code = "version-mismatch"


class SessionTimeoutError(ProtocolError):
    code = "timeout"


class UnexpectedMessageError(ProtocolError):
    code = "unexpected-message"


class BranchMissError(ProtocolError):
    code = "branch-miss"


class RemoteError(ProtocolError):
    """An ERROR message received from the other party."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


class ProtocolCutoffError(ProtocolError):
    code = "cutoff"


ERROR_TYPES = {
    cls.code: cls
    for cls in (MalformedFrameError, VersionMismatchError, SessionTimeoutError, UnexpectedMessageError, BranchMissError, ProtocolCutoffError)
}


@dataclass
class ProtocolConfig:
    modes: int
    sigma: float
    seed: int
    unitary_stage1: ModeUnitary
    measured_mode: int | None = None
    branch_table: dict[int, ModeUnitary] = field(default_factory=dict)
    max_leakage: float = 1e-6

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if (self.measured_mode is None) != (not self.branch_table):
            raise ValueError("branch_table must be nonempty exactly when a measured mode is set")
        if self.measured_mode is not None and not 0 <= self.measured_mode < self.modes:
            raise ValueError(f"measured mode {self.measured_mode} outside 0..{self.modes - 1}")
        for u in [self.unitary_stage1, *self.branch_table.values()]:
            if u.m != self.modes:
                raise ValueError("all unitaries must act on the configured mode count")
        self.branch_table = {int(k): v for k, v in self.branch_table.items()}

    @property
    def adaptive(self) -> bool:
        return self.measured_mode is not None


@dataclass(frozen=True)
class Event:
    index: int
    actor: str
    kind: str
    summary: dict


@dataclass
class Transcript:
    events: list[Event] = field(default_factory=list)

    def record(self, actor: str, kind: str, **summary) -> Event:
        ev = Event(len(self.events), actor, kind, summary)
        self.events.append(ev)
        return ev

    def kinds(self) -> list[str]:
        return [e.kind for e in self.events]

    def by_actor(self, actor: str) -> list[Event]:
        return [e for e in self.events if e.actor == actor]

    def as_rows(self) -> list[dict]:
        return [{"index": e.index, "actor": e.actor, "kind": e.kind, **e.summary} for e in self.events]


@dataclass
class SessionResult:
    fidelity: float
    transcript: Transcript
    key: DisplacementKey
    final_key: DisplacementKey
    outcome: int | None = None
    probability: float | None = None


@dataclass
class Measurement:
    outcome: int
    post_state: PureFockState
    probability: float


def mode_probabilities(state: PureFockState, mode: int) -> np.ndarray:
    other = tuple(ax for ax in range(state.modes) if ax != mode)
    return np.sum(np.abs(state.tensor) ** 2, axis=other)


def measure_mode(state: PureFockState, mode: int, seed) -> Measurement:
    """Photon-number measurement of one mode, outcome drawn by the Born rule.

    ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    if not 0 <= mode < state.modes:
        raise ValueError(f"mode {mode} outside 0..{state.modes - 1}")
    rng = np.random.default_rng(seed)
    probs = mode_probabilities(state, mode)
    cdf = np.cumsum(probs)
    outcome = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    outcome = min(outcome, len(probs) - 1)
    return Measurement(outcome, project_mode(state, mode, outcome), float(probs[outcome] / cdf[-1]))


def project_mode(state: PureFockState, mode: int, outcome: int) -> PureFockState:
    tensor = np.zeros_like(state.tensor)
    idx = [slice(None)] * state.modes
    idx[mode] = outcome
    tensor[tuple(idx)] = state.tensor[tuple(idx)]
    norm = np.linalg.norm(tensor)
    if norm == 0:
        raise ValueError(f"outcome {outcome} has zero probability")
    return PureFockState(tensor / norm, max_photons=state.max_photons)


class Mediator:
    """Holds the joint quantum state; parties act on it only through declared operations."""

    def __init__(self):
        self._state: PureFockState | None = None

    def receive(self, state: PureFockState):
        self._state = state

    def apply(self, u: ModeUnitary):
        self._state = apply_lifted(u, self._state)

    def release(self) -> PureFockState:
        state, self._state = self._state, None
        return state


class BobServer:
    """Bob's side: message handler around a Mediator.

    Bob's decision logic reads only message types, stage numbers and the
    classical measurement outcome; quantum payloads go straight to the
    Mediator.
    """

    def __init__(self, config: ProtocolConfig):
        self.config = config
        self.mediator = Mediator()
        self.expect = {HELLO}
        self.done = False
        self.log: list[tuple[str, str]] = []

    def _public_description(self) -> dict:
        c = self.config
        return {
            "version": PROTOCOL_VERSION,
            "modes": c.modes,
            "unitary_stage1": c.unitary_stage1,
            "measured_mode": c.measured_mode,
            "branch_table": {str(k): v for k, v in sorted(c.branch_table.items())},
        }

    def handle(self, kind: str, payload: dict) -> list[tuple[str, dict]]:
        if kind not in self.expect:
            raise UnexpectedMessageError(f"Bob did not expect {kind} (expecting {sorted(self.expect)})")
        self.log.append(("recv", kind))
        if kind == HELLO:
            if payload.get("version") != PROTOCOL_VERSION:
                raise VersionMismatchError(f"client speaks version {payload.get('version')}, server {PROTOCOL_VERSION}")
            if payload.get("modes") != self.config.modes:
                raise UnexpectedMessageError(f"client state has {payload.get('modes')} modes, computation needs {self.config.modes}")
            self.expect = {ENCRYPTED_INPUT}
            return [(HELLO, self._public_description())]
        if kind == ENCRYPTED_INPUT:
            self.mediator.receive(payload["state"])
            self.mediator.apply(self.config.unitary_stage1)
            if self.config.adaptive:
                self.expect = {MEASURE_RESULT}
                return [
                    (APPLY_STAGE, {"stage": 1}),
                    (MEASURE_REQUEST, {"mode": self.config.measured_mode, "state": self.mediator.release()}),
                ]
            self.expect = {DECRYPT_DONE}
            return [(APPLY_STAGE, {"stage": 1, "state": self.mediator.release()})]
        if kind == MEASURE_RESULT:
            outcome = int(payload["outcome"])
            if outcome not in self.config.branch_table:
                raise BranchMissError(f"no stage-2 unitary configured for outcome {outcome}")
            self.mediator.receive(payload["state"])
            self.mediator.apply(self.config.branch_table[outcome])
            self.expect = {DECRYPT_DONE}
            return [(APPLY_STAGE, {"stage": 2, "outcome": outcome, "state": self.mediator.release()})]
        if kind == DECRYPT_DONE:
            self.done = True
            self.expect = set()
            return [(RESULT, {"status": "ok"})]
        raise UnexpectedMessageError(kind)


class LoopbackChannel:
    """In-process channel: Alice's sends go straight to Bob's handler."""

    def __init__(self, bob: BobServer):
        self.bob = bob
        self._inbox: deque = deque()

    def send(self, kind: str, payload: dict):
        self._inbox.extend(self.bob.handle(kind, payload))

    def recv(self) -> tuple[str, dict]:
        kind, payload = self._inbox.popleft()
        if kind == ERROR:
            raise RemoteError(payload.get("code"), payload.get("message"))
        return kind, payload


class AliceClient:
    """Alice's side: key sampling, encryption, mode measurement and decryption."""

    def __init__(self, psi: PureFockState, sigma: float, seed: int, max_leakage: float = 1e-6):
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        self.psi = psi
        self.sigma = sigma
        self.rng = np.random.default_rng(seed)
        self.max_leakage = max_leakage
        self.transcript = Transcript()

    def _expect(self, channel, kind):
        got, payload = channel.recv()
        if got != kind:
            raise UnexpectedMessageError(f"Alice expected {kind}, got {got}")
        return payload

    def _sample_key(self, m: int) -> DisplacementKey:
        u = self.rng.normal(0.0, self.sigma, m)
        v = self.rng.normal(0.0, self.sigma, m)
        return DisplacementKey(u + 1j * v)

    def _displace(self, key, state, cutoffs):
        try:
            return multimode_displace(key, state, cutoffs, self.max_leakage)
        except CutoffError as exc:
            raise ProtocolCutoffError(f"{exc} (mode {exc.mode})") from exc

    def run(self, channel) -> SessionResult:
        psi, t = self.psi, self.transcript
        channel.send(HELLO, {"version": PROTOCOL_VERSION, "modes": psi.modes})
        desc = self._expect(channel, HELLO)
        if desc.get("version") != PROTOCOL_VERSION:
            raise VersionMismatchError(f"server speaks version {desc.get('version')}, client {PROTOCOL_VERSION}")
        u1: ModeUnitary = desc["unitary_stage1"]
        mode = desc["measured_mode"]
        branches = {int(k): v for k, v in desc["branch_table"].items()}
        if mode is not None:
            self._check_branch_coverage(u1, mode, branches)

        alpha = self._sample_key(psi.modes)
        beta = key_transform(u1, alpha)
        keys = [alpha.alphas, beta.alphas]
        if mode is not None:
            residual = beta.alphas.copy()
            residual[mode] = 0
            keys += [b.matrix @ residual for b in branches.values()]
        g = np.max(np.abs(np.array(keys)), axis=0)
        cutoffs = multimode_cutoffs(psi.max_photons, g)
        enc, leak = self._displace(alpha, psi, cutoffs)
        t.record("Alice", "encrypt", modes=psi.modes, cutoffs=cutoffs, leakage=leak)
        channel.send(ENCRYPTED_INPUT, {"state": enc})

        if mode is None:
            reply = self._expect(channel, APPLY_STAGE)
            t.record("Bob", "compute", stage=1)
            t.record("Mediator", "return-mode", modes=list(range(psi.modes)))
            final_key = beta
            out, leak = self._displace(-final_key, reply["state"], reply["state"].cutoffs)
            reference = apply_lifted(u1, psi)
            outcome = probability = None
        else:
            self._expect(channel, APPLY_STAGE)
            t.record("Bob", "compute", stage=1)
            req = self._expect(channel, MEASURE_REQUEST)
            t.record("Mediator", "return-mode", modes=[req["mode"]])
            single = np.zeros(psi.modes, dtype=complex)
            single[mode] = beta.alphas[mode]
            state, leak_m = self._displace(DisplacementKey(-single), req["state"], req["state"].cutoffs)
            meas = measure_mode(state, mode, self.rng)
            outcome, probability = meas.outcome, meas.probability
            t.record("Alice", "measure", mode=mode, outcome=outcome, probability=probability)
            channel.send(MEASURE_RESULT, {"outcome": outcome, "state": meas.post_state})
            reply = self._expect(channel, APPLY_STAGE)
            t.record("Bob", "feedforward", outcome=reply["outcome"], stage=2)
            t.record("Mediator", "return-mode", modes=list(range(psi.modes)))
            residual = beta.alphas.copy()
            residual[mode] = 0
            final_key = key_transform(branches[outcome], DisplacementKey(residual))
            out, leak = self._displace(-final_key, reply["state"], reply["state"].cutoffs)
            plain = apply_lifted(u1, psi)
            reference = apply_lifted(branches[outcome], project_mode(plain, mode, outcome))

        t.record("Alice", "decrypt", leakage=leak)
        channel.send(DECRYPT_DONE, {})
        self._expect(channel, RESULT)
        shape = tuple(max(a, b) for a, b in zip(out.cutoffs, reference.cutoffs))
        fid = fidelity(out.padded(shape), reference.padded(shape))
        return SessionResult(fid, t, alpha, final_key, outcome, probability)

    def _check_branch_coverage(self, u1, mode, branches):
        probs = mode_probabilities(apply_lifted(u1, self.psi), mode)
        missing = [o for o, p in enumerate(probs) if p > BRANCH_PROBABILITY_FLOOR and o not in branches]
        if missing:
            raise BranchMissError(f"outcomes {missing} have probability > {BRANCH_PROBABILITY_FLOOR:g} but no branch")


def run_passive(psi: PureFockState, u: ModeUnitary, sigma: float, seed: int) -> SessionResult:
    """Encrypt, let Bob apply phi(U), decrypt with -U alpha; fidelity against phi(U)|psi>."""
    config = ProtocolConfig(psi.modes, sigma, seed, u)
    return AliceClient(psi, sigma, seed).run(LoopbackChannel(BobServer(config)))


def run_adaptive(config: ProtocolConfig, psi: PureFockState) -> SessionResult:
    """One interactive run with a single mid-circuit measurement and feedforward."""
    if not config.adaptive:
        raise ValueError("adaptive runs need a measured mode and branch table")
    return AliceClient(psi, config.sigma, config.seed, config.max_leakage).run(LoopbackChannel(BobServer(config)))
