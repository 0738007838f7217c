# SPDX-License-Identifier: GPL-3.0-or-later
from dataclasses import replace

import numpy as np
import pytest

from canalatlas.errors import NotTubularError, ValidationError
from canalatlas.geometry import (
    AreaFunction, cap_open_boundaries, centerline_and_area, load_area_function, plane_sections,
    save_area_function, synth_canal,
)


@pytest.mark.parametrize('capped', (True, False))
def test_straight_cylinder_area(straight_spec, capped):
    mesh = synth_canal(straight_spec, seed=0)
    if capped:
        mesh = cap_open_boundaries(mesh)
    area_fn = centerline_and_area(mesh)
    assert len(area_fn.arc_length) >= 50
    np.testing.assert_allclose(area_fn.area, np.pi * 0.004 ** 2, rtol=0.02)
    assert area_fn.length == pytest.approx(0.028, rel=0.02)
    assert area_fn.arc_length[0] == 0
    # Output is in SI
    assert area_fn.points[:, 2].max() == pytest.approx(0.028, rel=0.02)


def test_cone_area_is_decreasing(straight_spec):
    cone = cap_open_boundaries(synth_canal(replace(straight_spec, drum_radius=2.0), seed=0))
    area_fn = centerline_and_area(cone)
    assert np.all(np.diff(area_fn.area) < 0)
    assert area_fn.area[0] == pytest.approx(np.pi * 0.004 ** 2, rel=0.03)
    assert area_fn.area[-1] == pytest.approx(np.pi * 0.002 ** 2, rel=0.03)


def test_closed_cone_starts_at_the_wide_end(straight_spec):
    # Without boundary loops the entrance is the principal axis end with the larger section
    cone = cap_open_boundaries(synth_canal(replace(straight_spec, drum_radius=2.0), seed=0))
    area_fn = centerline_and_area(cone)
    assert area_fn.points[0, 2] < area_fn.points[-1, 2]


def test_bent_canal_length(canal_spec):
    mesh = synth_canal(replace(canal_spec, noise_amplitude=0.0), seed=0)
    area_fn = centerline_and_area(mesh, stations=60)
    assert len(area_fn.area) == 60
    assert area_fn.length == pytest.approx(0.028, rel=0.05)
    # The centerline starts at the entrance plane
    assert np.abs(area_fn.points[0]).max() < 5e-4


def test_entrance_hint(straight_spec):
    cylinder = cap_open_boundaries(synth_canal(straight_spec, seed=0))
    area_fn = centerline_and_area(cylinder, entrance=([0, 0, 28.0], [0, 0, -1.0]))
    assert area_fn.points[0, 2] > area_fn.points[-1, 2]
    assert area_fn.length == pytest.approx(0.028, rel=0.02)


def test_not_tubular(disk_mesh):
    with pytest.raises(NotTubularError):
        centerline_and_area(disk_mesh)


def test_plane_sections_of_cylinder(cylinder_mesh):
    loops = plane_sections(cylinder_mesh, np.array([0.0, 0.0, 10.2]), np.array([0.0, 0.0, 1.0]))
    assert len(loops) == 1
    np.testing.assert_allclose(np.hypot(loops[0][:, 0], loops[0][:, 1]), 4.0, rtol=0.01)
    assert plane_sections(
        cylinder_mesh, np.array([0.0, 0.0, 40.0]), np.array([0.0, 0.0, 1.0])) == []


def test_area_function_invariants():
    with pytest.raises(ValidationError, match='start at 0'):
        AreaFunction([0.001, 0.002], [1e-5, 1e-5])
    with pytest.raises(ValidationError, match='start at 0'):
        AreaFunction([0.0, 0.002, 0.002], [1e-5, 1e-5, 1e-5])
    with pytest.raises(ValidationError, match='positive'):
        AreaFunction([0.0, 0.001], [1e-5, 0.0])
    with pytest.raises(ValidationError, match='at least two'):
        AreaFunction([0.0], [1e-5])


def test_area_function_extended():
    area_fn = AreaFunction([0.0, 0.01, 0.02], [3e-5, 2e-5, 1e-5])
    extended = area_fn.extended(0.005)
    np.testing.assert_allclose(extended.arc_length, [0.0, 0.005, 0.015, 0.025])
    np.testing.assert_allclose(extended.area, [3e-5, 3e-5, 2e-5, 1e-5])
    assert area_fn.extended(0.0) is area_fn
    assert extended.area_at(0.0025) == pytest.approx(3e-5)


def test_area_function_csv(tmpdir):
    area_fn = AreaFunction.uniform(0.02, 5e-5, stations=5)
    path = str(tmpdir.join('area.csv'))
    save_area_function(area_fn, path)
    lines = tmpdir.join('area.csv').read().splitlines()
    assert lines[0] == 'arclength_m,area_m2'
    assert len(lines) == 6
    loaded = load_area_function(path)
    np.testing.assert_array_equal(loaded.arc_length, area_fn.arc_length)
    np.testing.assert_array_equal(loaded.area, area_fn.area)


def test_load_area_function_bad_header(tmpdir):
    path = tmpdir.join('area.csv')
    path.write('s,a\n0,1\n')
    with pytest.raises(ValidationError, match='header'):
        load_area_function(str(path))
