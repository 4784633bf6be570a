import numpy as np
import pytest
from synth import random_manifest

from drex.exceptions import (
    FeatureFormatError,
    NonFiniteValueError,
    TruncatedPayloadError,
    ValidationError,
)
from drex.features import (
    DEFAULT_BLOCK_DIMS,
    DatasetManifest,
    FeatureRecord,
    read_features,
    validate_manifest,
    write_features,
)


def make_record(i=0, dino_dim=6, resnet_dim=14, score=0.5):
    rng = np.random.default_rng(i)
    return FeatureRecord(
        id=f"rec_{i}",
        dino=rng.normal(size=dino_dim).astype(np.float32),
        resnet=rng.normal(size=resnet_dim).astype(np.float32),
        score=score,
    )


class TestRoundtrip:
    def test_empty_manifest_header_only(self, tmp_path):
        path = tmp_path / "empty.drxf"
        manifest = DatasetManifest(records=[], dino_dim=384, block_dims=DEFAULT_BLOCK_DIMS)
        write_features(manifest, path)
        # fixed header fields (24 bytes) + 4 block dims x 4 bytes
        assert path.stat().st_size == 24 + 4 * len(DEFAULT_BLOCK_DIMS)
        back = read_features(path)
        assert len(back) == 0
        assert back.dino_dim == 384
        assert back.block_dims == DEFAULT_BLOCK_DIMS

    def test_single_record_bitwise(self, tmp_path):
        path = tmp_path / "one.drxf"
        manifest = DatasetManifest(
            records=[make_record(3)], dino_dim=6, block_dims=(2, 3, 4, 5)
        )
        write_features(manifest, path)
        back = read_features(path)
        assert back == manifest
        # bitwise, not just approximately
        assert back.records[0].dino.tobytes() == manifest.records[0].dino.tobytes()
        assert back.records[0].resnet.tobytes() == manifest.records[0].resnet.tobytes()

    def test_score_zero_distinct_from_missing(self, tmp_path):
        path = tmp_path / "zero.drxf"
        records = [make_record(0, score=0.0), make_record(1, score=None)]
        records[1].id = "other"
        manifest = DatasetManifest(records=records, dino_dim=6, block_dims=(2, 3, 4, 5))
        write_features(manifest, path)
        back = read_features(path)
        assert back.records[0].score == 0.0
        assert back.records[1].score is None

    def test_thousand_random_records_roundtrip(self, tmp_path):
        manifest = random_manifest(1000, seed=42)
        path = tmp_path / "many.drxf"
        write_features(manifest, path)
        back = read_features(path)
        assert len(back) == 1000
        for orig, new in zip(manifest.records, back.records):
            assert new.id == orig.id
            assert new.score == orig.score
            assert np.array_equal(new.dino, orig.dino)
            assert np.array_equal(new.resnet, orig.resnet)
        assert back == manifest

    def test_write_is_byte_deterministic(self, tmp_path):
        manifest = random_manifest(50, seed=9)
        p1, p2 = tmp_path / "a.drxf", tmp_path / "b.drxf"
        write_features(manifest, p1)
        write_features(manifest, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_unicode_ids(self, tmp_path):
        rec = make_record(0)
        rec.id = "képek/łódź_01.png"
        manifest = DatasetManifest(records=[rec], dino_dim=6, block_dims=(2, 3, 4, 5))
        path = tmp_path / "uni.drxf"
        write_features(manifest, path)
        assert read_features(path).records[0].id == rec.id


class TestReadErrors:
    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.drxf"
        path.write_bytes(b"NOPE" + b"\x00" * 36)
        with pytest.raises(FeatureFormatError, match="magic"):
            read_features(path)

    def test_wrong_version(self, tmp_path):
        manifest = random_manifest(1, seed=0)
        path = tmp_path / "v9.drxf"
        write_features(manifest, path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (9).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFormatError, match="version"):
            read_features(path)

    def test_truncated_mid_record_names_index(self, tmp_path):
        manifest = random_manifest(3, seed=1)
        path = tmp_path / "trunc.drxf"
        write_features(manifest, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 10])
        with pytest.raises(TruncatedPayloadError, match="record 2"):
            read_features(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        manifest = random_manifest(2, seed=2)
        path = tmp_path / "trail.drxf"
        write_features(manifest, path)
        path.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(FeatureFormatError, match="trailing"):
            read_features(path)

    def test_non_finite_payload(self, tmp_path):
        manifest = random_manifest(1, seed=3)
        path = tmp_path / "nan.drxf"
        write_features(manifest, path)
        raw = bytearray(path.read_bytes())
        # poke a NaN into the last 4 bytes (the final resnet float)
        raw[-4:] = np.float32("nan").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(NonFiniteValueError, match="record 0"):
            read_features(path)

    def test_bad_score_flag(self, tmp_path):
        rec = make_record(0, score=None)
        manifest = DatasetManifest(records=[rec], dino_dim=6, block_dims=(2, 3, 4, 5))
        path = tmp_path / "flag.drxf"
        write_features(manifest, path)
        raw = bytearray(path.read_bytes())
        # score flag sits right after the 4-byte id length and the id bytes
        flag_at = 24 + 16 + 4 + len(rec.id.encode())
        assert raw[flag_at] == 0
        raw[flag_at] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(FeatureFormatError, match="flag"):
            read_features(path)


class TestValidate:
    def base_manifest(self):
        return DatasetManifest(
            records=[make_record(0), make_record(1)], dino_dim=6, block_dims=(2, 3, 4, 5)
        )

    def test_valid_manifest_no_violations(self):
        assert validate_manifest(self.base_manifest()) == []

    def test_score_out_of_range(self):
        m = self.base_manifest()
        m.records[1].score = 1.5
        violations = validate_manifest(m)
        assert len(violations) == 1
        assert violations[0].rule == "score out of [0,1]"
        assert violations[0].record_id == "rec_1"

    def test_nan_in_dino(self):
        m = self.base_manifest()
        m.records[0].dino[2] = np.nan
        violations = validate_manifest(m)
        assert [v.rule for v in violations] == ["non-finite value"]
        assert violations[0].record_id == "rec_0"

    def test_duplicate_ids(self):
        m = self.base_manifest()
        m.records[1].id = "rec_0"
        assert any(v.rule == "duplicate id" for v in validate_manifest(m))

    def test_wrong_dims(self):
        m = self.base_manifest()
        m.records[0].dino = np.zeros(5, dtype=np.float32)
        rules = [v.rule for v in validate_manifest(m)]
        assert "dino length" in rules

    def test_write_refuses_invalid(self, tmp_path):
        m = self.base_manifest()
        m.records[1].score = -0.2
        with pytest.raises(ValidationError, match="rec_1"):
            write_features(m, tmp_path / "bad.drxf")


class TestBlockSlicing:
    def test_default_blocks_partition(self):
        m = DatasetManifest(records=[], dino_dim=384, block_dims=DEFAULT_BLOCK_DIMS)
        slices = [m.block_slice(i) for i in (1, 2, 3, 4)]
        assert slices[0] == slice(0, 256)
        assert slices[1] == slice(256, 768)
        assert slices[2] == slice(768, 1792)
        assert slices[3] == slice(1792, 3840)
        # exact partition: contiguous and covering
        assert slices[0].start == 0
        for a, b in zip(slices, slices[1:]):
            assert a.stop == b.start
        assert slices[-1].stop == m.resnet_dim == 3840

    def test_bad_block_index(self):
        m = DatasetManifest(records=[], dino_dim=4, block_dims=(2, 2))
        with pytest.raises(IndexError):
            m.block_slice(0)
        with pytest.raises(IndexError):
            m.block_slice(3)
