import numpy as np
import pytest
from PIL import Image

from ctdnet.data import (
    SyntheticSpec,
    augment,
    generate_sample,
    hflip,
    load_dataset,
    read_image,
    read_manifest,
    read_mask,
    read_pgm,
    stack_batch,
    write_dataset,
    write_image,
    write_mask,
    write_pgm,
)
from ctdnet.errors import ConfigError, DataIOError, GenerationError, ShapeError
from ctdnet.metrics import boundary_from_mask


class TestGeneration:
    def test_deterministic(self):
        spec = SyntheticSpec(seed=3)
        a, b = generate_sample(spec, 5), generate_sample(spec, 5)
        assert a.image.tobytes() == b.image.tobytes()
        assert a.mask.tobytes() == b.mask.tobytes()
        assert a.id == "00005"

    def test_indices_and_seeds_differ(self):
        spec = SyntheticSpec()
        assert generate_sample(spec, 0).mask.tobytes() != generate_sample(spec, 1).mask.tobytes()
        other = SyntheticSpec(seed=1)
        assert generate_sample(spec, 2).image.tobytes() != generate_sample(other, 2).image.tobytes()

    @pytest.mark.parametrize("shape", ["ellipse", "rectangle", "blob"])
    def test_invariants(self, shape):
        spec = SyntheticSpec(size=64, shapes=(shape,))
        for i in range(20):
            s = generate_sample(spec, i)
            assert s.image.shape == (3, 64, 64) and s.image.dtype == np.float32
            assert 0 <= s.image.min() and s.image.max() <= 1
            assert 0.02 <= s.mask.mean() <= 0.60
            np.testing.assert_array_equal(s.boundary, boundary_from_mask(s.mask))

    def test_foreground_contrasts_with_background(self):
        s = generate_sample(SyntheticSpec(noise=0.0), 0)
        fg = s.image[:, s.mask[0] == 1].mean(axis=1)
        bg = s.image[:, s.mask[0] == 0].mean(axis=1)
        assert np.abs(fg - bg).max() >= 0.35 - 1e-6

    def test_unsatisfiable_area(self):
        spec = SyntheticSpec(size=32, shapes=("rectangle",), min_area=0.95, max_area=1.0, max_retries=2)
        with pytest.raises(GenerationError):
            generate_sample(spec, 0)

    @pytest.mark.parametrize("kwargs", [
        dict(size=4), dict(min_objects=3, max_objects=2), dict(shapes=("star",)),
        dict(min_area=0.7, max_area=0.6), dict(noise=-1),
    ])
    def test_spec_validation(self, kwargs):
        with pytest.raises(ConfigError):
            SyntheticSpec(**kwargs)

    def test_stack_batch(self):
        spec = SyntheticSpec(size=32)
        images, masks, bounds = stack_batch([generate_sample(spec, i) for i in range(3)])
        assert images.shape == (3, 3, 32, 32) and masks.shape == bounds.shape == (3, 1, 32, 32)
        assert masks.dtype == np.float32


class TestAugment:
    def test_double_flip_is_identity(self):
        s = generate_sample(SyntheticSpec(), 0)
        back = hflip(hflip(s))
        np.testing.assert_array_equal(back.image, s.image)
        np.testing.assert_array_equal(back.mask, s.mask)

    def test_output_contract(self, rng):
        s = generate_sample(SyntheticSpec(size=100), 1)
        out = augment(s, rng, 64)
        assert out.image.shape == (3, 64, 64) and out.mask.shape == (1, 64, 64)
        assert set(np.unique(out.mask)) <= {0, 1}
        np.testing.assert_array_equal(out.boundary, boundary_from_mask(out.mask))

    def test_unit_scale_is_crop_free(self, rng):
        s = generate_sample(SyntheticSpec(size=64), 2)
        np.testing.assert_array_equal(augment(s, rng, 64, scale=1.0, flip=False).mask, s.mask)
        np.testing.assert_array_equal(augment(s, rng, 64, scale=1.0, flip=True).mask, hflip(s).mask)

    def test_seeded_rng_is_reproducible(self):
        s = generate_sample(SyntheticSpec(), 3)
        a = augment(s, np.random.default_rng(9), 64)
        b = augment(s, np.random.default_rng(9), 64)
        assert a.image.tobytes() == b.image.tobytes()

    def test_validation(self, rng):
        s = generate_sample(SyntheticSpec(), 0)
        with pytest.raises(ConfigError):
            augment(s, rng, 50)
        with pytest.raises(ConfigError):
            augment(s, rng, 64, scale=0.9)


class TestIO:
    def test_mask_round_trip(self, tmp_path, rng):
        mask = (rng.random((1, 13, 17)) > 0.5).astype(np.uint8)
        for name in ("m.pgm", "m.png"):
            write_mask(tmp_path / name, mask)
            np.testing.assert_array_equal(read_mask(tmp_path / name), mask)

    def test_rgb_quantisation(self, tmp_path, rng):
        img = rng.random((3, 9, 11)).astype(np.float32)
        write_image(tmp_path / "x.png", img)
        back = read_image(tmp_path / "x.png")
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7

    def test_pgm_header_with_comment(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
        np.testing.assert_array_equal(read_pgm(path), [[0, 255]])

    def test_truncated_pgm(self, tmp_path):
        write_pgm(tmp_path / "t.pgm", np.zeros((8, 8), np.uint8))
        raw = (tmp_path / "t.pgm").read_bytes()
        (tmp_path / "t.pgm").write_bytes(raw[:-5])
        with pytest.raises(DataIOError, match="t.pgm"):
            read_pgm(tmp_path / "t.pgm")

    def test_truncated_png(self, tmp_path):
        Image.fromarray(np.zeros((20, 20, 3), np.uint8)).save(tmp_path / "t.png")
        raw = (tmp_path / "t.png").read_bytes()
        (tmp_path / "t.png").write_bytes(raw[: len(raw) // 2])
        with pytest.raises(DataIOError, match="t.png"):
            read_image(tmp_path / "t.png")

    def test_missing_and_unsupported(self, tmp_path):
        with pytest.raises(DataIOError):
            read_image(tmp_path / "nope.png")
        with pytest.raises(DataIOError):
            write_image(tmp_path / "x.bmp", np.zeros((4, 4)))
        with pytest.raises(ShapeError):
            write_pgm(tmp_path / "x.pgm", np.zeros((4, 4)))


class TestDataset:
    def test_round_trip(self, tmp_path):
        spec = SyntheticSpec(size=32)
        ids = write_dataset(tmp_path, spec, 4)
        assert read_manifest(tmp_path) == ids == ["00000", "00001", "00002", "00003"]
        loaded = load_dataset(tmp_path)
        for s in loaded:
            ref = generate_sample(spec, int(s.id))
            np.testing.assert_array_equal(s.mask, ref.mask)
            assert np.abs(s.image - ref.image).max() <= 0.5 / 255 + 1e-7

    def test_empty_dataset(self, tmp_path):
        (tmp_path / "manifest.txt").write_text("")
        with pytest.raises(ConfigError):
            load_dataset(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataIOError):
            read_manifest(tmp_path)
