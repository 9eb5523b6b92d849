"""
Tests for W4 deposition, interface transfer, positivity repair and regeneration
"""

import numpy as np
import pytest

from errors import PreconditionError, RemapDomainError
from particles import ParticleSet, quiet_start_init
from phase_grid import Refinement, build_hierarchy
from problems import landau_f0
from remap import (CompositeField, RemapConfig, deposit_w4_composite, neighborhood_sum, redistribute_array,
                   redistribute_positivity, regenerate_particles, remap, remap_with_report,
                   transfer_interface_charge, w4_eval)

L = 4 * np.pi
ALL_PERIODIC = (True, True, True, True)


def landau_grid(refined=True):
    refinements = [Refinement((0, 0, -3, -3), (L, L, 3, 3), (1, 1, 2, 2))] if refined else []
    return build_hierarchy((0, 0, -6, -6), (L, L, 6, 6), (4, 4, 8, 8), refinements)


def landau_particles(grid):
    return quiet_start_init(grid, lambda x, y, vx, vy: landau_f0(x, y, vx, vy), threshold=0.0)


def test_w4_values():
    np.testing.assert_allclose(w4_eval([0.0, 0.5, 1.0, 1.5, 2.0, 2.5]), [1.0, 0.5625, 0.0, -0.0625, 0.0, 0.0])
    assert w4_eval(-0.5) == w4_eval(0.5)


def test_w4_reproduces_quadratics():
    j = np.arange(-3, 5)
    for s in (0.0, 0.3, 0.77):
        weights = w4_eval(s - j)
        assert weights.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.dot(weights, j) == pytest.approx(s, abs=1e-14)
        assert np.dot(weights, j**2) == pytest.approx(s**2, abs=1e-14)


def test_w4_rejects_bad_spacing():
    with pytest.raises(PreconditionError):
        w4_eval(0.5, h=0.0)


def test_redistribution_moves_deficit_to_neighbors():
    values, report = redistribute_array(np.array([3.0, -1.0, 1.0]), radius=1, iterations=3)
    np.testing.assert_allclose(values, [2.25, 0.0, 0.75])
    assert report.negative_before == 1
    assert report.negative_after == 0
    assert report.iterations_used == 1


def test_redistribution_flags_cells_without_capacity():
    values, report = redistribute_array(np.array([-1.0, 0.0, 0.0]), radius=1, iterations=3)
    np.testing.assert_array_equal(values, [-1.0, 0.0, 0.0])
    assert report.flagged == 1
    assert report.negative_after == 1


def test_redistribution_conserves_sum():
    rng = np.random.default_rng(11)
    values = rng.normal(loc=0.5, size=(6, 5, 4))
    mask = rng.uniform(size=values.shape) > 0.2
    repaired, _ = redistribute_array(values, mask, radius=1, iterations=5, periodic_axes=(True, False, False))
    assert repaired[mask].sum() == pytest.approx(values[mask].sum(), abs=1e-12)
    np.testing.assert_array_equal(repaired[~mask], values[~mask])


def test_neighborhood_sum_wraps_periodic_axes():
    values = np.zeros(5)
    values[0] = 1.0
    np.testing.assert_array_equal(neighborhood_sum(values, 1, (True,)), [1, 1, 0, 0, 1])
    np.testing.assert_array_equal(neighborhood_sum(values, 1, (False,)), [1, 1, 0, 0, 0])


def test_remap_config_validation():
    with pytest.raises(PreconditionError):
        RemapConfig(interval=0)
    with pytest.raises(PreconditionError):
        RemapConfig(radius=0)
    with pytest.raises(PreconditionError):
        RemapConfig(periodic=(True, True))


def test_deposit_conserves_charge_on_periodic_grid():
    grid = build_hierarchy((0, 0, 0, 0), (1, 1, 1, 1), (8, 8, 8, 8))
    rng = np.random.default_rng(5)
    particles = ParticleSet.from_phase_points(rng.uniform(0, 1, (200, 4)), rng.uniform(0.5, 1.5, 200))
    raw = deposit_w4_composite(particles, grid, ALL_PERIODIC)
    field = transfer_interface_charge(raw, grid, ALL_PERIODIC)
    assert field.stray_charge() == pytest.approx(0.0, abs=1e-12)
    assert field.total_charge() == pytest.approx(particles.total_charge, rel=1e-12)
    assert field.lost == 0.0


def test_deposit_rejects_non_finite_particles():
    grid = landau_grid(refined=False)
    particles = ParticleSet(np.array([np.nan]), np.zeros(1), np.zeros(1), np.zeros(1), np.ones(1))
    with pytest.raises(RemapDomainError):
        deposit_w4_composite(particles, grid)


def test_particles_outside_velocity_range_are_lost():
    grid = landau_grid(refined=False)
    particles = ParticleSet(np.array([1.0, 1.0]), np.array([1.0, 1.0]), np.array([0.0, 7.0]), np.zeros(2),
                            np.array([1.0, 0.25]))
    raw = deposit_w4_composite(particles, grid)
    assert raw.lost == pytest.approx(0.25)


def test_interface_transfer_keeps_every_charge():
    grid = landau_grid()
    # coarse particle next to the refined velocity band and a fine particle at its edge
    particles = ParticleSet(np.array([2.0, 5.0]), np.array([3.0, 1.0]), np.array([-3.4, 2.9]),
                            np.array([0.2, -2.8]), np.array([0.7, 0.4]))
    field = transfer_interface_charge(deposit_w4_composite(particles, grid), grid)
    assert field.stray_charge() == pytest.approx(0.0, abs=1e-12)
    assert field.total_charge() + field.lost == pytest.approx(1.1, rel=1e-12)


def test_remap_of_quiet_start_is_identity_on_single_level():
    grid = landau_grid(refined=False)
    particles = landau_particles(grid)
    fresh = remap(particles, grid, RemapConfig(threshold=0.0))
    assert len(fresh) == len(particles)
    np.testing.assert_allclose(fresh.phase_points(), particles.phase_points(), atol=1e-12)
    np.testing.assert_allclose(fresh.q, particles.q, atol=1e-14)


def test_remap_conservation_ledger():
    grid = landau_grid()
    particles = landau_particles(grid)
    shifted = particles.with_state(particles.x + 0.3 * particles.vx, particles.y, particles.vx + 0.05,
                                   particles.vy)
    fresh, report, field = remap_with_report(shifted, grid, RemapConfig(threshold=1e-12))
    assert report.conservation_error < 1e-12
    assert report.charge_before == pytest.approx(particles.total_charge)
    assert report.n_particles == len(fresh)
    assert field.stray_charge() == pytest.approx(0.0, abs=1e-12)


def test_second_remap_is_stable():
    grid = landau_grid(refined=False)
    particles = landau_particles(grid)
    moved = particles.with_state(particles.x + 0.1, particles.y - 0.2, particles.vx, particles.vy)
    config = RemapConfig(threshold=0.0)
    once = remap(moved, grid, config)
    twice = remap(once, grid, config)
    assert len(twice) == len(once)
    np.testing.assert_allclose(twice.q, once.q, atol=1e-12)


def test_positivity_repair_reduces_negative_cells():
    grid = build_hierarchy((0, 0, 0, 0), (1, 1, 1, 1), (6, 6, 6, 6))
    particles = ParticleSet.from_phase_points(np.array([[0.4, 0.55, 0.3, 0.62]]), np.array([1.0]))
    field = transfer_interface_charge(deposit_w4_composite(particles, grid, ALL_PERIODIC), grid, ALL_PERIODIC)
    assert field.min_valid() < 0
    repaired, report = redistribute_positivity(field, radius=1, iterations=3, periodic=ALL_PERIODIC)
    assert report.negative_before > report.negative_after
    assert repaired.total_charge() == pytest.approx(field.total_charge(), abs=1e-12)


def test_remap_worker_count_does_not_change_result():
    grid = landau_grid()
    particles = landau_particles(grid)
    moved = particles.with_state(particles.x + 0.05 * particles.vx, particles.y, particles.vx, particles.vy)
    serial = remap(moved, grid, RemapConfig(threshold=0.0, workers=1, chunk_size=512))
    threaded = remap(moved, grid, RemapConfig(threshold=0.0, workers=4, chunk_size=512))
    np.testing.assert_array_equal(serial.q, threaded.q)
    np.testing.assert_array_equal(serial.phase_points(), threaded.phase_points())


def test_covered_coarse_charge_splits_into_children():
    grid = landau_grid()
    field = CompositeField(grid)
    coarse = grid.levels[0]
    field.interior(0, 0)[1, 1, 3, 3] = 1.0 / coarse.cell_volume
    moved = transfer_interface_charge(field, grid)
    children = moved.interior(1, 0)[1, 1, 2:4, 2:4]
    assert np.all(children > 0)
    assert children.sum() * grid.levels[1].cell_volume == pytest.approx(1.0, rel=1e-14)
    assert moved.total_charge() == pytest.approx(1.0, rel=1e-14)
    assert moved.interior(0, 0)[1, 1, 3, 3] == 0.0


def test_fine_halo_charge_goes_to_one_coarse_cell():
    grid = landau_grid()
    field = CompositeField(grid)
    # global fine cell (1, 1, 3, 6) lies one cell below the fine box in vx
    field.data[1][0][3, 3, 1, 4] = 1.0
    moved = transfer_interface_charge(field, grid)
    assert moved.interior(0, 0)[1, 1, 1, 3] == pytest.approx(0.25)
    assert np.count_nonzero(moved.interior(0, 0)) == 1
    assert moved.stray_charge() == 0.0
    assert moved.total_charge() == pytest.approx(grid.levels[1].cell_volume)


def test_regenerate_from_empty_or_thresholded_field():
    grid = landau_grid()
    assert len(regenerate_particles(CompositeField(grid), grid, threshold=1e-9)) == 0
    field = transfer_interface_charge(deposit_w4_composite(landau_particles(grid), grid), grid)
    assert len(regenerate_particles(field, grid, threshold=1e6)) == 0


def test_w4_first_derivative_is_continuous_at_one():
    jumps = []
    for delta in (1e-2, 5e-3, 2.5e-3):
        left = (w4_eval(1.0) - w4_eval(1.0 - delta)) / delta
        right = (w4_eval(1.0 + delta) - w4_eval(1.0)) / delta
        assert left == pytest.approx(-0.5, abs=0.05)
        assert right == pytest.approx(-0.5, abs=0.05)
        jumps.append(abs(right - left))
    assert jumps[1] == pytest.approx(0.5 * jumps[0], rel=0.05)
    assert jumps[2] == pytest.approx(0.5 * jumps[1], rel=0.05)


def test_w4_second_derivative_jumps_at_one():
    delta = 1e-3
    left = (w4_eval(1.0) - 2 * w4_eval(1.0 - delta) + w4_eval(1.0 - 2 * delta)) / delta**2
    right = (w4_eval(1.0 + 2 * delta) - 2 * w4_eval(1.0 + delta) + w4_eval(1.0)) / delta**2
    # the kernel is C1: 4 from the inner cubic, 2 from the outer one
    assert left == pytest.approx(4.0, abs=0.05)
    assert right == pytest.approx(2.0, abs=0.05)


def test_covered_split_follows_linear_profile():
    grid = landau_grid()
    field = CompositeField(grid)
    coarse = field.interior(0, 0)
    coarse[1, 1, 2:6, 3] = [1.0, 2.0, 3.0, 4.0]
    # a valid neighbor holding full f must not steepen the split
    coarse[1, 1, 1, 3] = 100.0
    moved = transfer_interface_charge(field, grid)
    expected = 0.75 + 0.5 * np.arange(8)
    np.testing.assert_allclose(moved.interior(1, 0)[1, 1, :, 2], expected, rtol=1e-14)
    np.testing.assert_allclose(moved.interior(1, 0)[1, 1, :, 3], expected, rtol=1e-14)
    assert moved.interior(0, 0)[1, 1, 1, 3] == 100.0
    assert moved.total_charge() == pytest.approx(110.0 * grid.levels[0].cell_volume, rel=1e-14)


def column_charge(particles):
    ix = np.floor(particles.x / (L / 4)).astype(int)
    iy = np.floor(particles.y / (L / 4)).astype(int)
    columns = np.zeros((4, 4))
    np.add.at(columns, (ix, iy), particles.q)
    return columns


def test_interface_transfer_keeps_charge_in_its_spatial_column():
    grid = landau_grid()
    particles = landau_particles(grid)
    shifted = particles.with_state(particles.x, particles.y, particles.vx + 0.3, particles.vy - 0.2)
    fresh = remap(shifted, grid, RemapConfig(threshold=0.0, iterations=0, periodic=ALL_PERIODIC))
    np.testing.assert_allclose(column_charge(fresh), column_charge(particles), rtol=1e-12)


def shifted_remap_error(grid, shift=0.3):
    particles = landau_particles(grid)
    shifted = particles.with_state(particles.x, particles.y, particles.vx + shift, particles.vy)
    _, _, field = remap_with_report(shifted, grid, RemapConfig(threshold=0.0, iterations=0))
    error = 0.0
    for level in grid.levels:
        centers = grid.centers(level.index, grid.valid_cells(level.index))
        exact = landau_f0(centers[:, 0], centers[:, 1], centers[:, 2] - shift, centers[:, 3])
        error += level.cell_volume * np.sum(np.abs(field.valid_values(level.index) - exact))
    return error


def test_refined_velocity_band_reduces_remap_error():
    single_level = shifted_remap_error(landau_grid(refined=False))
    two_level = shifted_remap_error(landau_grid())
    assert 0 < two_level < single_level


def test_second_remap_changes_f_less_than_the_first():
    grid = landau_grid()
    particles = landau_particles(grid)
    start = transfer_interface_charge(deposit_w4_composite(particles, grid), grid)
    moved = particles.with_state(particles.x + 0.1, particles.y - 0.2, particles.vx + 0.2, particles.vy)
    config = RemapConfig(threshold=0.0)
    once, _, first = remap_with_report(moved, grid, config)
    _, _, second = remap_with_report(once, grid, config)
    assert second.l1_distance(first) < first.l1_distance(start)
    assert first.l1_distance(start) > 0


def test_remap_report_carries_repair_change():
    grid = build_hierarchy((0, 0, 0, 0), (1, 1, 1, 1), (6, 6, 6, 6))
    particles = ParticleSet.from_phase_points(np.array([[0.4, 0.55, 0.3, 0.62]]), np.array([1.0]))
    _, report, _ = remap_with_report(particles, grid, RemapConfig(threshold=0.0, periodic=ALL_PERIODIC))
    assert report.redistribution.negative_before > 0
    assert report.repair_l1 > 0
    with pytest.raises(PreconditionError):
        CompositeField(grid).l1_distance(CompositeField(landau_grid()))
