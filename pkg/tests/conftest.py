import json

import numpy as np
import pytest

from thzray.accel import build_accel
from thzray.geometry import load_scene

ROOM_W, ROOM_D, ROOM_H = 7.2, 7.2, 3.0
TX_POS = (1.46, 2.42, 2.41)
RX_POS = (5.2, 5.2, 1.5)

DEFAULT_MATERIALS = [
    {"name": "plaster", "rel_permittivity_real": 4.0, "rel_permittivity_imag": 0.2}
]


def quad(vertices, material="plaster"):
    return {"vertices": [list(map(float, v)) for v in vertices], "material": material}


def box_doc(materials=None, extra_surfaces=(), w=ROOM_W, d=ROOM_D, h=ROOM_H):
    """Closed rectangular room as six material-tagged quads."""
    return {
        "materials": materials or DEFAULT_MATERIALS,
        "surfaces": [
            quad([[0, 0, 0], [w, 0, 0], [w, d, 0], [0, d, 0]]),
            quad([[0, 0, h], [w, 0, h], [w, d, h], [0, d, h]]),
            quad([[0, 0, 0], [w, 0, 0], [w, 0, h], [0, 0, h]]),
            quad([[0, d, 0], [w, d, 0], [w, d, h], [0, d, h]]),
            quad([[0, 0, 0], [0, d, 0], [0, d, h], [0, 0, h]]),
            quad([[w, 0, 0], [w, d, 0], [w, d, h], [w, 0, h]]),
            *extra_surfaces,
        ],
    }


def write_scene(tmp_path, doc, name="scene.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="session")
def box_scene_path(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scenes")
    return write_scene(tmp, box_doc())


@pytest.fixture(scope="session")
def box_scene(box_scene_path):
    return load_scene(box_scene_path)


@pytest.fixture(scope="session")
def box_accel(box_scene):
    return build_accel(box_scene)


@pytest.fixture(scope="session")
def empty_scene_path(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scenes_empty")
    return write_scene(tmp, {"materials": [], "surfaces": []}, "empty.json")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
