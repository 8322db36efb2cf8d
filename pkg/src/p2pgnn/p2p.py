"""Per-device diffusion fragments and the wire codec.

Each device owns one row of the two decentralized signals: a map from peer
id to the latest prediction share received from that peer, and likewise for
error shares. Shares are normalized on the sender side by its own map sizes,
so as maps fill the pairwise exchanges reproduce the degree-normalized
operators of the centralized reference.

A device's own contribution enters its update through ``combined`` rather
than through a self-entry in the maps: storing the running value under the
device's own id (and summing it back in) makes the unlabeled error estimate
grow without bound and pushes the prediction operator's spectral radius
above 1 on low-degree graphs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MESSAGE_HEADER = struct.Struct("<IH")  # sender id u32, class count u16


class ProtocolError(Exception):
    """Malformed message or undecodable wire bytes."""


@dataclass(eq=False)
class Message:
    """One direction of a pairwise exchange: normalized prediction/error shares."""

    sender: int
    pred_share: np.ndarray
    err_share: np.ndarray


def encode_message(msg: Message) -> bytes:
    c = len(msg.pred_share)
    if len(msg.err_share) != c:
        raise ProtocolError("prediction and error shares must have equal length")
    return (
        MESSAGE_HEADER.pack(msg.sender, c)
        + np.ascontiguousarray(msg.pred_share, dtype="<f8").tobytes()
        + np.ascontiguousarray(msg.err_share, dtype="<f8").tobytes()
    )


def decode_message(buf: bytes) -> Message:
    if len(buf) < MESSAGE_HEADER.size:
        raise ProtocolError(f"message truncated: {len(buf)} bytes")
    sender, c = MESSAGE_HEADER.unpack_from(buf)
    expected = MESSAGE_HEADER.size + 2 * c * 8
    if len(buf) != expected:
        raise ProtocolError(f"message has {len(buf)} bytes, expected {expected} for C={c}")
    pred = np.frombuffer(buf, dtype="<f8", count=c, offset=MESSAGE_HEADER.size).copy()
    err = np.frombuffer(buf, dtype="<f8", count=c, offset=MESSAGE_HEADER.size + c * 8).copy()
    return Message(sender, pred, err)


def message_nbytes(n_classes: int) -> int:
    """Wire size of one message for a given class count."""
    return MESSAGE_HEADER.size + 2 * n_classes * 8


class DeviceState:
    """One node's diffusion fragment.

    Labeled devices (nonzero target) keep ``error = target - base_prediction``
    and ``combined = base_prediction`` at all times; unlabeled devices
    accumulate peer error shares into their own error estimate.
    """

    def __init__(self, node_id: int, n_classes: int, beta: float = 0.9, s: float = 1.0):
        if not 0.0 <= beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        self.id = int(node_id)
        self.n_classes = int(n_classes)
        self.beta = float(beta)
        self.s = float(s)
        self.base_prediction = np.zeros(n_classes)
        self.target = np.zeros(n_classes)
        self.prediction = np.zeros(n_classes)
        self.error = np.zeros(n_classes)
        self.combined = np.zeros(n_classes)
        self.predictions = {}  # peer id -> latest prediction share
        self.errors = {}       # peer id -> latest error share

    @property
    def labeled(self) -> bool:
        return bool(np.any(self.target != 0))

    def _check_vector(self, vec, what):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_classes,):
            raise ProtocolError(f"{what} must have length {self.n_classes}, got shape {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ProtocolError(f"{what} contains non-finite values")
        return vec

    def initialize(self, base_prediction, target):
        """Reset the fragment: empty maps, stored target, fresh base prediction."""
        target = self._check_vector(target, "target")
        self.predictions = {}
        self.errors = {}
        self.target = target.copy()
        self.error = np.zeros(self.n_classes)
        self.update(base_prediction)

    def update(self, base_prediction):
        """Swap in a new base prediction (e.g. after a gossip training step).

        Peer maps survive; a labeled device recomputes its clamped error.
        """
        base_prediction = self._check_vector(base_prediction, "base prediction")
        self.base_prediction = base_prediction.copy()
        self.prediction = base_prediction.copy()
        if self.labeled:
            self.error = self.target - self.base_prediction
        self.combined = self.base_prediction.copy()

    def send(self, peer_id: int) -> Message:
        """Read-only share generation; divisors guard the pre-contact empty maps."""
        return Message(
            self.id,
            self.prediction / max(1, len(self.predictions)) ** 0.5,
            self.error / max(1, len(self.errors)),
        )

    def receive(self, peer_id: int, msg: Message) -> Message:
        """Generate the reply from the pre-acknowledge state, then absorb ``msg``."""
        self._validate_message(peer_id, msg)
        reply = self.send(peer_id)
        self.acknowledge(peer_id, msg)
        return reply

    def acknowledge(self, peer_id: int, msg: Message):
        """Store the peer's shares and refresh the local error/prediction estimates."""
        pred_share, err_share = self._validate_message(peer_id, msg)
        self.predictions[peer_id] = pred_share.copy()
        self.errors[peer_id] = err_share.copy()
        if not self.labeled:
            self.error = np.sum(list(self.errors.values()), axis=0)
            self.combined = self.base_prediction + self.s * self.error
        else:
            self.combined = self.base_prediction.copy()
        peer_sum = np.sum(list(self.predictions.values()), axis=0)
        self.prediction = (
            (1.0 - self.beta) * self.combined
            + self.beta / max(1, len(self.predictions)) ** 0.5 * peer_sum
        )

    def _validate_message(self, peer_id, msg):
        if msg.sender != peer_id:
            raise ProtocolError(f"message claims sender {msg.sender}, expected {peer_id}")
        return (
            self._check_vector(msg.pred_share, "prediction share"),
            self._check_vector(msg.err_share, "error share"),
        )
