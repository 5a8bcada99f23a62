"""Common code interface, trivial baselines, and the TDD composition."""

from __future__ import annotations

import math
from typing import Protocol, runtime_checkable

import numpy as np

from .bmcl import BmclCode
from .channel import ChannelConfig
from .lqg import LqgCode
from .modulation import demap, make_constellation, map_message
from .ol import OlCode, SkCode

__all__ = ["Code", "Encoder", "UncodedCode", "TddCode", "make_code", "SCHEME_NAMES"]

SCHEME_NAMES = ("ol", "eol", "lqg", "bmcl", "sk", "sk-tdd", "uncoded")


@runtime_checkable
class Encoder(Protocol):
    def transmit(self, t: int) -> np.ndarray: ...
    def consume(self, t: int, z: np.ndarray) -> None: ...


@runtime_checkable
class Code(Protocol):
    name: str
    users: int
    uses: int
    bits: int

    def start(self, messages: np.ndarray) -> Encoder: ...
    def decode(self, y: np.ndarray) -> np.ndarray: ...


class UncodedCode:
    """Single-user PAM with repetition and matched combining; no feedback."""

    def __init__(self, P: float, sigma_b2: float, bits: int, N: int = 1):
        self.name = "uncoded"
        self.users = 1
        self.uses = N
        self.bits = bits
        self.P = P
        self.constellation = make_constellation(bits, 1.0)

    def start(self, messages: np.ndarray) -> "_UncodedEncoder":
        return _UncodedEncoder(self, messages)

    def decode(self, y: np.ndarray) -> np.ndarray:
        theta_hat = y[0].mean(axis=0) / math.sqrt(self.P)
        return demap(theta_hat, self.constellation)[None, :]


class _UncodedEncoder:
    def __init__(self, code: UncodedCode, messages: np.ndarray):
        self.x = math.sqrt(code.P) * map_message(messages[0], code.constellation)

    def transmit(self, t: int) -> np.ndarray:
        return self.x

    def consume(self, t: int, z: np.ndarray) -> None:
        pass


class TddCode:
    """Serve two users in disjoint halves with a single-user feedback code."""

    def __init__(self, inner_factory, bits: int, N: int):
        if N % 2 != 0:
            raise ValueError("TDD needs an even number of channel uses")
        self.name = "sk-tdd"
        self.users = 2
        self.uses = N
        self.bits = bits
        self.half = N // 2
        self.inner: list = [inner_factory(self.half), inner_factory(self.half)]

    def start(self, messages: np.ndarray) -> "_TddEncoder":
        return _TddEncoder(self, messages)

    def decode(self, y: np.ndarray) -> np.ndarray:
        h = self.half
        w1 = self.inner[0].decode(y[0:1, :h])
        w2 = self.inner[1].decode(y[1:2, h:])
        return np.concatenate([w1, w2], axis=0)


class _TddEncoder:
    def __init__(self, code: TddCode, messages: np.ndarray):
        self.code = code
        self.enc = [code.inner[0].start(messages[0:1]),
                    code.inner[1].start(messages[1:2])]

    def transmit(self, t: int) -> np.ndarray:
        h = self.code.half
        if t < h:
            return self.enc[0].transmit(t)
        return self.enc[1].transmit(t - h)

    def consume(self, t: int, z: np.ndarray) -> None:
        h = self.code.half
        if t < h:
            self.enc[0].consume(t, z[0:1])
        else:
            self.enc[1].consume(t - h, z[1:2])


def make_code(scheme: str, cfg: ChannelConfig, bits: int, *, g: float = 1.0,
              gamma: float | None = None, gamma_step: float = 0.01) -> Code:
    """Build a code instance for a channel configuration, with validation."""
    scheme = scheme.lower()
    P, sb2, sf2, N, L = cfg.P, cfg.sigma_b2, cfg.sigma_f2, cfg.N, cfg.L
    if scheme in ("ol", "eol"):
        if L != 2:
            raise ValueError(f"scheme {scheme!r} requires 2 users, got {L}")
        return OlCode(P, sb2, sf2, bits, N, g=g, two_sample=(scheme == "eol"))
    if scheme == "lqg":
        if L != 2:
            raise ValueError(f"scheme 'lqg' requires 2 users, got {L}")
        return LqgCode(P, sb2, sf2, bits, N)
    if scheme == "bmcl":
        if L < 1 or (L & (L - 1)) != 0:
            raise ValueError(f"scheme 'bmcl' needs a power-of-2 user count, got {L}")
        if N <= L:
            raise ValueError(f"scheme 'bmcl' needs N > L, got N={N}, L={L}")
        return BmclCode(P, sb2, sf2, bits, N, L=L, gamma=gamma, gamma_step=gamma_step)
    if scheme == "sk":
        if L != 1:
            raise ValueError(f"scheme 'sk' is single-user, got {L} users")
        return SkCode(P, sb2, sf2, bits, N)
    if scheme == "sk-tdd":
        if L != 2:
            raise ValueError(f"scheme 'sk-tdd' requires 2 users, got {L}")
        return TddCode(lambda n: SkCode(P, sb2, sf2, bits, n), bits, N)
    if scheme == "uncoded":
        if L != 1:
            raise ValueError(f"scheme 'uncoded' is single-user, got {L} users")
        return UncodedCode(P, sb2, bits, N)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEME_NAMES}")
