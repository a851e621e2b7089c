import struct

import numpy as np
import pytest

from demandmix.api import operations
from demandmix.logging.exceptions import (
    ArchiveDecodeException,
    ArchiveVersionException,
    DemandMixException,
    InvalidInputException,
)
from demandmix.objects.mixture import MixtureState, WeightMatrix, logit_transform
from demandmix.priors import CarState
from demandmix.sampling.fixed_k import PosteriorDraw
from demandmix.serialization import DrawArchive, DrawSerializer, hash_obj
from demandmix.transports.file import FileTransport


@pytest.fixture()
def archive(two_mixture, small_season) -> DrawArchive:
    two = PosteriorDraw(
        iteration=11,
        mixture=two_mixture,
        car=CarState(
            pi=logit_transform(two_mixture.weights.w),
            c=[0.25],
            rho=[0.125],
            nu2=[1.0 / 3.0],
        ),
        beta=np.array([[0.1, 0.01], [0.01, 0.2]]),
        labels=np.array([1, 2, 2, 1]),
    )
    one = PosteriorDraw(
        iteration=12,
        mixture=MixtureState(
            components=two_mixture.components[:1],
            weights=WeightMatrix.uniform(small_season.B, 1),
            season=small_season,
        ),
        car=CarState.empty(small_season.B),
        beta=np.eye(2) * np.pi,
    )
    return DrawArchive(
        draws=[two, one, two],
        season=small_season,
        seed=42,
        config_hash="abc",
        acceptance={"pi": {"proposed": 10, "accepted": 3}},
        chain_lengths=[2, 1],
        run={"note": "unit"},
    )


class TestDrawSerializer:
    def test_roundtrip(self, archive):
        payload = DrawSerializer().write(archive)
        decoded = DrawSerializer().read(payload)

        assert DrawSerializer().write(decoded) == payload
        assert decoded.metadata() == archive.metadata()
        assert [d.K for d in decoded.draws] == [2, 1, 2]
        first = decoded.draws[0]
        original = archive.draws[0]
        assert np.array_equal(first.mixture.weights.w, original.mixture.weights.w)
        assert np.array_equal(first.beta, archive.draws[0].beta)
        assert first.car.nu2[0] == 1.0 / 3.0
        assert first.labels.tolist() == [1, 2, 2, 1]
        assert decoded.draws[1].labels is None
        assert decoded.draws[1].car.pi.shape == (14, 0)

    def test_chains(self, archive):
        decoded = DrawSerializer().read(DrawSerializer().write(archive))
        assert [len(c) for c in decoded.chains()] == [2, 1]
        assert decoded.chains()[1][0].iteration == 11

    def test_truncated_payload(self, archive):
        payload = DrawSerializer().write(archive)
        with pytest.raises(ArchiveDecodeException) as info:
            DrawSerializer().read(payload[:-5])
        assert info.value.offset > 0
        assert "offset" in str(info.value)

    def test_trailing_bytes(self, archive):
        payload = DrawSerializer().write(archive)
        with pytest.raises(ArchiveDecodeException) as info:
            DrawSerializer().read(payload + b"\x00\x00")
        assert info.value.offset == len(payload)

    def test_version_mismatch(self, archive):
        payload = bytearray(DrawSerializer().write(archive))
        payload[4:6] = struct.pack("<H", 2)
        with pytest.raises(ArchiveVersionException) as info:
            DrawSerializer().read(bytes(payload))
        assert info.value.found == 2

    @pytest.mark.parametrize("payload", [b"", b"NOPE\x01\x00\x00\x00\x00\x00"])
    def test_not_an_archive(self, payload):
        with pytest.raises(ArchiveDecodeException) as info:
            DrawSerializer().read(payload)
        assert info.value.offset == 0

    def test_chain_lengths_must_match(self, archive):
        with pytest.raises(DemandMixException):
            DrawArchive(draws=archive.draws, season=archive.season, chain_lengths=[1])


class TestOperations:
    def test_send_and_receive(self, archive, tmp_path):
        mirror = FileTransport(tmp_path / "mirror")
        files = FileTransport(tmp_path)
        payload = operations.send(archive, "draws.dmx", [mirror, files])

        assert mirror.get_object("draws.dmx") == payload
        assert (tmp_path / "draws.dmx").read_bytes() == payload
        received = operations.receive("draws.dmx", files)
        assert received.metadata() == archive.metadata()

    def test_receive_missing(self, tmp_path):
        with pytest.raises(InvalidInputException):
            operations.receive("missing", FileTransport(tmp_path))
        with pytest.raises(DemandMixException):
            operations.send(None, "x", [])

    def test_write_and_read_draws(self, archive, tmp_path):
        path = tmp_path / "nested" / "run.dmx"
        operations.write_draws(archive, path)
        assert operations.read_draws(path).config_hash == "abc"

    def test_draws_frame(self, archive):
        frame = operations.draws_frame(archive)
        assert list(frame.columns) == [
            "chain",
            "iteration",
            "k",
            "parameter",
            "index",
            "value",
        ]
        # three β entries per draw plus c, ρ, ν² for each weight column
        assert len(frame) == 3 * 3 + 2 * 3
        assert set(frame["chain"]) == {1, 2}
        nu2 = frame[(frame.parameter == "nu2")]
        assert nu2["value"].tolist() == pytest.approx([1 / 3, 1 / 3])


def test_hash_obj_ignores_key_order():
    assert hash_obj({"a": 1, "b": [1, 2]}) == hash_obj({"b": [1, 2], "a": 1})
    assert hash_obj({"a": 1}) != hash_obj({"a": 2})
    assert len(hash_obj({})) == 32
