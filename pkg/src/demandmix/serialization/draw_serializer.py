"""
Binary container for posterior draws.

Layout (little endian):

    b"DMXA" | uint16 format version | uint32 header length | header JSON
    then one record per draw: uint32 record length | record

A record starts with (int64 iteration, uint32 K, uint32 B, int64 label count,
-1 when labels were not kept) followed by float64 blocks
mu (K×2), sigma (K×2×2), weights (B×K), pi (B×(K−1)), c, rho, nu2 (K−1 each),
beta (2×2), and finally the int64 labels. Draws of one archive may have
different K.
"""

import hashlib
import logging
import struct
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import ujson
from attrs import define, field

from demandmix.logging.exceptions import (
    ArchiveDecodeException,
    ArchiveVersionException,
    DemandMixException,
)
from demandmix.objects.mixture import Component, MixtureState, WeightMatrix
from demandmix.objects.season import SeasonalityConfig
from demandmix.priors import CarState
from demandmix.sampling.fixed_k import PosteriorDraw

LOG = logging.getLogger(__name__)

MAGIC = b"DMXA"
FORMAT_VERSION = 1

_PREAMBLE = struct.Struct("<4sHI")
_LENGTH = struct.Struct("<I")
_RECORD_HEAD = struct.Struct("<qIIq")
_FLOAT = np.dtype("<f8")
_INT = np.dtype("<i8")


def hash_obj(obj: Any) -> str:
    return hashlib.sha256(ujson.dumps(obj, sort_keys=True).encode()).hexdigest()[:32]


@define(slots=True)
class DrawArchive:
    """
    Ordered posterior draws plus run metadata. With several chains the draws
    are stored chain after chain and `chain_lengths` splits them again.
    """

    draws: List[PosteriorDraw]
    season: SeasonalityConfig
    seed: int = 0
    config_hash: str = ""
    acceptance: Dict[str, Dict[str, int]] = field(factory=dict)
    chain_lengths: List[int] = field(factory=list)
    run: Dict[str, Any] = field(factory=dict)

    def __attrs_post_init__(self) -> None:
        if not self.chain_lengths:
            self.chain_lengths = [len(self.draws)]
        if sum(self.chain_lengths) != len(self.draws):
            raise DemandMixException(
                f"Chain lengths {self.chain_lengths} do not add up to"
                f" {len(self.draws)} draws."
            )

    def __len__(self) -> int:
        return len(self.draws)

    def chains(self) -> List[List[PosteriorDraw]]:
        bounds = np.cumsum([0] + list(self.chain_lengths))
        return [self.draws[a:b] for a, b in zip(bounds[:-1], bounds[1:])]

    def metadata(self) -> Dict[str, Any]:
        return {
            "nDraws": len(self.draws),
            "season": self.season.model_dump(),
            "seed": self.seed,
            "configHash": self.config_hash,
            "acceptance": self.acceptance,
            "chainLengths": list(self.chain_lengths),
            "run": self.run,
        }


class DrawSerializer:
    """Encodes a `DrawArchive` to bytes and back, bit for bit."""

    def write(self, archive: DrawArchive) -> bytes:
        header = ujson.dumps(archive.metadata(), sort_keys=True).encode()
        parts = [_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)), header]
        for draw in archive.draws:
            record = self.encode_draw(draw)
            parts.append(_LENGTH.pack(len(record)))
            parts.append(record)
        return b"".join(parts)

    @staticmethod
    def encode_draw(draw: PosteriorDraw) -> bytes:
        m = draw.mixture
        n_labels = -1 if draw.labels is None else len(draw.labels)
        floats = np.concatenate(
            [
                np.array([c.mu for c in m.components]).ravel(),
                np.array([c.sigma for c in m.components]).ravel(),
                m.weights.w.ravel(),
                draw.car.pi.ravel(),
                draw.car.c,
                draw.car.rho,
                draw.car.nu2,
                np.asarray(draw.beta, dtype=float).ravel(),
            ]
        ).astype(_FLOAT)
        head = _RECORD_HEAD.pack(draw.iteration, m.K, m.weights.B, n_labels)
        labels = b"" if draw.labels is None else draw.labels.astype(_INT).tobytes()
        return head + floats.tobytes() + labels

    def read(self, payload: bytes) -> DrawArchive:
        if len(payload) < _PREAMBLE.size:
            raise ArchiveDecodeException("File too short for an archive header", 0)
        magic, version, header_len = _PREAMBLE.unpack_from(payload, 0)
        if magic != MAGIC:
            raise ArchiveDecodeException(f"Not a draw archive (magic {magic!r})", 0)
        if version != FORMAT_VERSION:
            raise ArchiveVersionException(found=version, expected=FORMAT_VERSION)
        offset = _PREAMBLE.size
        if offset + header_len > len(payload):
            raise ArchiveDecodeException("Truncated metadata header", offset)
        try:
            meta = ujson.loads(payload[offset : offset + header_len].decode())
        except ValueError as ex:
            raise ArchiveDecodeException(f"Unreadable metadata header: {ex}", offset)
        offset += header_len
        season = SeasonalityConfig.model_validate(meta["season"])

        draws = []
        for _ in range(int(meta["nDraws"])):
            if offset + _LENGTH.size > len(payload):
                raise ArchiveDecodeException("Truncated record length", offset)
            (length,) = _LENGTH.unpack_from(payload, offset)
            start = offset + _LENGTH.size
            if start + length > len(payload):
                raise ArchiveDecodeException(
                    f"Truncated record of {length} bytes", offset
                )
            record = payload[start : start + length]
            draws.append(self.decode_draw(record, season, start))
            offset = start + length
        if offset != len(payload):
            raise ArchiveDecodeException(
                f"{len(payload) - offset} unexpected trailing bytes", offset
            )
        LOG.debug("Decoded %d draws", len(draws))
        return DrawArchive(
            draws=draws,
            season=season,
            seed=int(meta["seed"]),
            config_hash=meta["configHash"],
            acceptance=meta["acceptance"],
            chain_lengths=list(meta["chainLengths"]),
            run=meta["run"],
        )

    @staticmethod
    def decode_draw(
        record: bytes, season: SeasonalityConfig, offset: int = 0
    ) -> PosteriorDraw:
        if len(record) < _RECORD_HEAD.size:
            raise ArchiveDecodeException("Record shorter than its head", offset)
        iteration, K, B, n_labels = _RECORD_HEAD.unpack_from(record, 0)
        sizes = _float_sizes(K, B)
        n_floats = sum(size for _, size in sizes)
        expected = (
            _RECORD_HEAD.size + 8 * n_floats + (8 * n_labels if n_labels > 0 else 0)
        )
        if len(record) != expected or B != season.B or K < 1:
            raise ArchiveDecodeException(
                f"Record size {len(record)} does not match K={K}, B={B}", offset
            )
        floats = np.frombuffer(
            record, dtype=_FLOAT, count=n_floats, offset=_RECORD_HEAD.size
        )
        blocks, at = {}, 0
        for name, size in sizes:
            blocks[name] = floats[at : at + size].copy()
            at += size
        labels: Optional[np.ndarray] = None
        if n_labels >= 0:
            labels = np.frombuffer(
                record,
                dtype=_INT,
                count=n_labels,
                offset=_RECORD_HEAD.size + 8 * n_floats,
            ).astype(np.int64)
        try:
            mu = blocks["mu"].reshape(K, 2)
            sigma = blocks["sigma"].reshape(K, 2, 2)
            mixture = MixtureState(
                components=[Component(mu=m, sigma=s) for m, s in zip(mu, sigma)],
                weights=WeightMatrix(blocks["w"].reshape(B, K)),
                season=season,
            )
            car = CarState(
                pi=blocks["pi"].reshape(B, K - 1),
                c=blocks["c"],
                rho=blocks["rho"],
                nu2=blocks["nu2"],
            )
        except DemandMixException as ex:
            raise ArchiveDecodeException(f"Invalid draw: {ex.message}", offset)
        return PosteriorDraw(
            iteration=int(iteration),
            mixture=mixture,
            car=car,
            beta=blocks["beta"].reshape(2, 2),
            labels=labels,
        )


def _float_sizes(K: int, B: int) -> List[Tuple[str, int]]:
    return [
        ("mu", 2 * K),
        ("sigma", 4 * K),
        ("w", B * K),
        ("pi", B * (K - 1)),
        ("c", K - 1),
        ("rho", K - 1),
        ("nu2", K - 1),
        ("beta", 4),
    ]
