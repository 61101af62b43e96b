import json

import numpy as np
import pytest

from urbantrack.geometry import line_of_sight
from urbantrack.scenario import default_path, load_scenario, parse_scenario


def test_bundled_scenario_constants():
    sc = load_scenario()
    assert sc.T == 0.25 and sc.scans == 140
    assert sc.offsets == (0, 40)
    assert len(sc.library) == 4
    assert len(sc.trajectory) == 141
    assert sc.fast.clutter_density == 2.5e-4
    assert sc.tracker.P_G == 0.99
    assert sc.fast.cells == 256 * 64


def test_targets_are_time_shifted_copies():
    sc = load_scenario()
    assert [i for i, _ in sc.truth(0)] == [0]
    assert [i for i, _ in sc.truth(40)] == [0, 1]
    np.testing.assert_array_equal(sc.truth(60)[1][1], sc.trajectory[20])
    assert [i for i, _ in sc.truth(139)] == [0, 1]


def test_overrides():
    sc = load_scenario(energy_scaling=False, clutter_density=0.0, model_mode="replication")
    assert not sc.fast.snr.energy_scaling
    assert sc.fast.clutter_density == 0.0 and sc.tracker.clutter_density == 0.0
    assert sc.tracker.model_mode == "replication"


def test_trajectory_stays_on_open_ground():
    sc = load_scenario()
    for a, b in zip(sc.trajectory[:-1], sc.trajectory[1:]):
        assert line_of_sight(sc.scene, a[[0, 2]], b[[0, 2]])


def test_turn_happens_inside_the_intersection_zone():
    sc = load_scenario()
    # the turn segment covers scans 60 to 100 of the first target
    for k in range(61, 100):
        assert sc.scene.in_intersection(sc.trajectory[k][[0, 2]])
    assert not sc.scene.in_intersection(sc.trajectory[20][[0, 2]])


def test_missing_sections_raise():
    d = json.loads(default_path().read_text())
    del d["trajectory"]
    with pytest.raises(KeyError):
        parse_scenario(d)
