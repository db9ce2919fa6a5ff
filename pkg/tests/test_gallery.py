import json

import pytest

from minlab import gallery
from minlab.errors import GalleryFormatError, PeriodFailure
from minlab.weierstrass import topology


def test_builtins_load_and_validate():
    assert set(gallery.BUILTIN) == {"plane", "catenoid", "enneper", "jorge-meeks-3", "jorge-meeks-4",
                                    "jorge-meeks-5"}
    for name in gallery.BUILTIN:
        data = gallery.load(name)
        assert data.name == name and data.genus == 0


def test_known_indices():
    assert gallery.facts("catenoid").known_index == 1
    assert gallery.facts("jorge-meeks-3").known_index == 3
    assert gallery.facts("plane").known_index == 0


@pytest.mark.parametrize("r", [3, 4, 5])
def test_jorge_meeks_family(r):
    data = gallery.load(f"jorge-meeks-{r}")
    top = topology(data)
    assert (top.ends, top.gauss_degree) == (r, r - 1)
    for p in data.punctures:
        assert abs(p**r - 1) < 1e-12


def test_json_round_trip(tmp_path):
    for name in gallery.BUILTIN:
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(gallery.to_json(gallery.load(name))))
        again = gallery.load_file(path)
        assert again.gauss.coeff_close(gallery.load(name).gauss)
        assert again.height.coeff_close(gallery.load(name).height)


def test_rejects_unknown_and_missing_fields():
    obj = gallery.to_json(gallery.load("catenoid"))
    with pytest.raises(GalleryFormatError):
        gallery.parse({**obj, "comment": "x"})
    del obj["genus"]
    with pytest.raises(GalleryFormatError):
        gallery.parse(obj)


def test_rejects_bad_pairs():
    obj = gallery.to_json(gallery.load("catenoid"))
    obj["gauss"]["num"] = [[0, 1, 2]]
    with pytest.raises(GalleryFormatError):
        gallery.parse(obj)


def test_rejects_open_periods():
    obj = gallery.to_json(gallery.load("catenoid"))
    obj["height"] = {"num": [[1, 0]], "den": [[0, 0], [0, 0], [1, 0]]}
    with pytest.raises(PeriodFailure):
        gallery.parse(obj)


def test_unknown_surface():
    with pytest.raises(GalleryFormatError):
        gallery.load("helicoid")
