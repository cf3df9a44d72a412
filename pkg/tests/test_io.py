import numpy as np
import pytest
from PIL import Image

from freqtune.attack import Perturbation, random_perturbation
from freqtune.io import (
    FormatError,
    dataset_split,
    load_model,
    load_perturbation,
    read_dataset,
    read_image,
    save_model,
    save_perturbation,
    write_dataset,
    write_image,
)
from freqtune.texclass import SynthSpec, TexModel, synth_dataset


def test_model_roundtrip(tmp_path, small_model):
    path = tmp_path / "m.fttx"
    save_model(small_model, path)
    assert path.read_bytes()[:4] == b"FTTX"
    m = load_model(path)
    for k in small_model.params:
        np.testing.assert_array_equal(m.params[k], small_model.params[k])
    x = np.random.default_rng(0).uniform(0, 255, (2, 3, 8, 8))
    np.testing.assert_array_equal(m.forward(x), small_model.forward(x))


def test_model_corrupt(tmp_path, small_model):
    path = tmp_path / "m.fttx"
    save_model(small_model, path)
    raw = path.read_bytes()
    bad = tmp_path / "bad.fttx"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        load_model(bad)
    bad.write_bytes(raw[:-8])
    with pytest.raises(FormatError, match="truncated"):
        load_model(bad)
    bad.write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_model(bad)
    bad.write_bytes(raw[:4] + (7).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="version"):
        load_model(bad)


@pytest.mark.parametrize("kind", ["spatial", "bands"])
def test_perturbation_roundtrip(tmp_path, kind):
    r = np.random.default_rng(0)
    if kind == "spatial":
        p = random_perturbation((3, 16, 8), r, eps=10.0)
    else:
        p = random_perturbation((3, 16, 8), r, thresholds=r.uniform(0, 5, (8, 8)))
    path = tmp_path / "p.ftup"
    save_perturbation(p, path)
    q = load_perturbation(path)
    assert q.domain == p.domain and q.eps == p.eps
    np.testing.assert_array_equal(q.spatial, p.spatial)
    if kind == "bands":
        np.testing.assert_array_equal(q.bands, p.bands)
        np.testing.assert_array_equal(q.thresholds, p.thresholds)
    assert q.satisfies_constraint()


def test_perturbation_wrong_magic(tmp_path, small_model):
    path = tmp_path / "m.fttx"
    save_model(small_model, path)
    with pytest.raises(FormatError, match="magic"):
        load_perturbation(path)


def test_ppm_roundtrip(tmp_path, rng):
    img = np.round(rng.uniform(0, 255, (3, 16, 24)))
    path = tmp_path / "x.ppm"
    write_image(img, path)
    assert path.read_bytes()[:2] == b"P6"
    np.testing.assert_array_equal(read_image(path), img)


def test_png_matches_ppm(tmp_path, rng):
    img = np.round(rng.uniform(0, 255, (3, 8, 8)))
    write_image(img, tmp_path / "a.png")
    write_image(img, tmp_path / "a.ppm")
    np.testing.assert_array_equal(read_image(tmp_path / "a.png"), read_image(tmp_path / "a.ppm"))


def test_grey_and_crop(tmp_path):
    a = np.arange(10 * 19, dtype=np.uint8).reshape(10, 19)
    Image.fromarray(a).save(tmp_path / "g.pgm")
    img = read_image(tmp_path / "g.pgm")
    assert img.shape == (1, 8, 16)
    np.testing.assert_array_equal(img[0], a[1:9, 1:17])
    assert read_image(tmp_path / "g.pgm", channels=3).shape == (3, 8, 16)


def test_write_rounds_and_clips(tmp_path):
    write_image(np.array([[[-5.0, 300.0], [127.6, 0.4]]]), tmp_path / "c.pgm")
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "c.pgm")), [[0, 255], [128, 0]])


def test_unreadable_image(tmp_path):
    (tmp_path / "junk.ppm").write_bytes(b"not an image")
    with pytest.raises(FormatError, match="junk.ppm"):
        read_image(tmp_path / "junk.ppm")


def test_dataset_roundtrip(tmp_path):
    d = synth_dataset(SynthSpec(images_per_class=3, image_size=16))
    write_dataset(d, tmp_path / "ds")
    back = read_dataset(tmp_path / "ds")
    assert back.class_names == d.class_names
    np.testing.assert_array_equal(back.labels, d.labels)
    np.testing.assert_array_equal(back.images, d.images)


def test_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path / "nope")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FormatError, match="no class"):
        read_dataset(tmp_path / "empty")
    (tmp_path / "mixed" / "a").mkdir(parents=True)
    (tmp_path / "mixed" / "b").mkdir(parents=True)
    write_image(np.zeros((3, 8, 8)), tmp_path / "mixed" / "a" / "0.ppm")
    write_image(np.zeros((3, 16, 8)), tmp_path / "mixed" / "b" / "0.ppm")
    with pytest.raises(FormatError, match="differing shapes"):
        read_dataset(tmp_path / "mixed")


def test_dataset_split_layout(tmp_path):
    d = synth_dataset(SynthSpec(images_per_class=2, image_size=8))
    write_dataset(d, tmp_path / "flat")
    assert len(dataset_split(tmp_path / "flat", "test")) == 8
    write_dataset(d, tmp_path / "s" / "train")
    with pytest.raises(FileNotFoundError, match="test"):
        dataset_split(tmp_path / "s", "test")
    assert len(dataset_split(tmp_path / "s", "train")) == 8


def test_spatial_roundtrip_single_channel(tmp_path):
    p = Perturbation("spatial", np.full((1, 8, 8), -3.5), eps=4.0)
    save_perturbation(p, tmp_path / "p.ftup")
    assert load_perturbation(tmp_path / "p.ftup").spatial[0, 0, 0] == -3.5
