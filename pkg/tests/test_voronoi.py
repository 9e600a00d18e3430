import math

import numpy as np
import pytest

from gatemix.measure import MixingMeasure, ThetaBox, translate
from gatemix.voronoi import (
    TranslationSolverConfig,
    exact_loss,
    exact_loss_at,
    min_unsolvable_order,
    overfit_loss,
    overfit_loss_at,
    translation_bounds,
    voronoi_cells,
)

from conftest import random_measure


def perturbed(measure, rng, scale, weights_too=True):
    """Shape-preserving random perturbation.

    With ``weights_too=False`` the gating biases stay exact, which keeps
    the weight term's kink on a grid node; a 401-point grid oracle is
    only ~1e-2 accurate when that kink falls between nodes.
    """
    return MixingMeasure(
        beta0=measure.beta0 + (scale * rng.standard_normal(measure.k) if weights_too else 0.0),
        beta1=measure.beta1 + scale * rng.standard_normal(measure.beta1.shape),
        a=measure.a + scale * rng.standard_normal(measure.a.shape),
        b=measure.b + scale * rng.standard_normal(measure.k),
        sigma=np.maximum(measure.sigma + scale * rng.standard_normal(measure.k), 0.06),
    )


def split_atom(measure, rng, scale, j=0, weights_too=True):
    """Over-fitted copy: atom j duplicated with its weight halved."""
    idx = list(range(measure.k)) + [j]
    g = measure.permuted(idx)
    beta0 = g.beta0.copy()
    beta0[j] -= math.log(2.0)
    beta0[-1] -= math.log(2.0)
    g = g.replace(beta0=beta0)
    return perturbed(g, rng, scale, weights_too=weights_too)


def split_atom_clean(measure, rng, scale, j=0):
    return split_atom(measure, rng, scale, j=j, weights_too=False)


def grid_values_exact(fitted, true, cells, t1_grid, t2_grid):
    """Dense evaluation of the exact-fitted summand on a (t1, t2) grid,
    written directly from the definition (d = 1 only)."""
    w = np.exp(fitted.beta0)
    target = np.empty(fitted.k, dtype=int)
    for j, cell in enumerate(cells):
        for i in cell:
            target[i] = j
    db1 = fitted.beta1[:, 0] - true.beta1[target, 0]
    fix2 = ((fitted.a[:, 0] - true.a[target, 0]) ** 2
            + (fitted.b - true.b[target]) ** 2
            + (fitted.sigma - true.sigma[target]) ** 2)
    norm_part = np.sum(
        w[None, :] * np.sqrt((db1[None, :] - t2_grid[:, None]) ** 2 + fix2[None, :]),
        axis=1,
    )
    cell_w = np.array([w[list(c)].sum() for c in cells])
    weight_part = np.sum(
        np.abs(cell_w[None, :] - np.exp(true.beta0[None, :] + t1_grid[:, None])),
        axis=1,
    )
    return weight_part[:, None] + norm_part[None, :]


def grid_values_overfit(fitted, true, cells, t1_grid, t2_grid):
    """Dense evaluation of the over-fitted summand on a grid (d = 1)."""
    w = np.exp(fitted.beta0)
    norm_part = np.zeros_like(t2_grid)
    for j, cell in enumerate(cells):
        for i in cell:
            db1 = fitted.beta1[i, 0] - true.beta1[j, 0]
            da = fitted.a[i, 0] - true.a[j, 0]
            db = fitted.b[i] - true.b[j]
            ds = fitted.sigma[i] - true.sigma[j]
            if len(cell) == 1:
                norm_part += w[i] * np.sqrt((db1 - t2_grid) ** 2 + da**2 + db**2 + ds**2)
            else:
                rho = min_unsolvable_order(len(cell)).order
                norm_part += w[i] * (
                    ((db1 - t2_grid) ** 2 + db**2) ** (rho / 2.0)
                    + (da**2 + ds**2) ** (rho / 4.0)
                )
    cell_w = np.array([w[list(c)].sum() if c else 0.0 for c in cells])
    weight_part = np.sum(
        np.abs(cell_w[None, :] - np.exp(true.beta0[None, :] + t1_grid[:, None])),
        axis=1,
    )
    return weight_part[:, None] + norm_part[None, :]


GRID = np.linspace(-2.0, 2.0, 401)
GRID_CFG = TranslationSolverConfig(t1_bounds=(-2.0, 2.0),
                                   t2_bounds=(np.array([-2.0]), np.array([2.0])))


class TestVoronoiCells:
    def test_identity_assignment(self, separated_1d):
        assign = voronoi_cells(separated_1d, separated_1d)
        assert assign.cells == ((0,), (1,))
        assert assign.is_exact()

    def test_tie_goes_to_lowest_index(self):
        true = MixingMeasure([0.0, 0.0], [[0.0], [0.0]], [[-1.0], [1.0]], [0.0, 0.0], [1.0, 1.0])
        fitted = MixingMeasure([0.0], [[0.0]], [[0.0]], [0.0], [1.0])  # equidistant
        assign = voronoi_cells(fitted, true)
        assert assign.cells == ((0,), ())

    def test_two_atoms_near_first_target(self):
        true = MixingMeasure([0.0, 0.0], [[0.0], [0.0]], [[0.0], [3.0]], [0.0, 0.0], [1.0, 1.0])
        fitted = MixingMeasure(
            [0.0, 0.0, 0.0], [[0.0]] * 3, [[0.1], [-0.2], [2.9]], [0.0] * 3, [1.0] * 3
        )
        assign = voronoi_cells(fitted, true)
        assert assign.cells == ((0, 1), (2,))
        assert assign.sizes() == (2, 1)

    def test_rejects_coinciding_true_atoms(self):
        true = MixingMeasure([0.0, 0.0], [[0.0], [1.0]], [[1.0], [1.0]], [0.0, 0.0], [1.0, 1.0])
        fitted = MixingMeasure([0.0], [[0.0]], [[1.0]], [0.0], [1.0])
        with pytest.raises(ValueError):
            voronoi_cells(fitted, true)


class TestOrderLookup:
    def test_known_values(self):
        assert min_unsolvable_order(2) == (4, False)
        assert min_unsolvable_order(3) == (6, False)

    def test_conjectured_beyond_three(self):
        info = min_unsolvable_order(5)
        assert info.order == 10 and info.conjectured

    def test_rejects_singletons(self):
        with pytest.raises(ValueError):
            min_unsolvable_order(1)


class TestExactLossAt:
    def test_zero_at_matching_translation(self, separated_1d):
        g = translate(separated_1d, 0.4, [-0.3])
        assign = voronoi_cells(g, separated_1d)
        assert exact_loss_at(g, separated_1d, assign, 0.4, [-0.3]) < 1e-12

    def test_single_intercept_perturbation(self, separated_1d):
        delta = 0.07
        b = separated_1d.b.copy()
        b[0] += delta
        g = separated_1d.replace(b=b)
        assign = voronoi_cells(g, separated_1d)
        val = exact_loss_at(g, separated_1d, assign, 0.0, [0.0])
        assert abs(val - math.exp(separated_1d.beta0[0]) * delta) < 1e-14

    def test_matches_termwise_oracle(self):
        rng = np.random.default_rng(33)
        for _ in range(10):
            true = random_measure(rng, 3, 1, margin=0.6)
            g = perturbed(true, rng, 0.05)
            assign = voronoi_cells(g, true)
            if not assign.is_exact():
                continue
            t1 = rng.uniform(-0.5, 0.5)
            t2 = rng.uniform(-0.5, 0.5)
            val = exact_loss_at(g, true, assign, t1, [t2])
            # direct scalar transcription of the summand
            oracle = 0.0
            for j, cell in enumerate(assign.cells):
                cw = 0.0
                for i in cell:
                    w = math.exp(g.beta0[i])
                    cw += w
                    oracle += w * math.sqrt(
                        (g.beta1[i, 0] - true.beta1[j, 0] - t2) ** 2
                        + (g.a[i, 0] - true.a[j, 0]) ** 2
                        + (g.b[i] - true.b[j]) ** 2
                        + (g.sigma[i] - true.sigma[j]) ** 2
                    )
                oracle += abs(cw - math.exp(true.beta0[j] + t1))
            assert abs(val - oracle) < 1e-12

    def test_rejects_overfitted_shape(self, separated_1d):
        rng = np.random.default_rng(2)
        g = split_atom(separated_1d, rng, 0.01)
        assign = voronoi_cells(g, separated_1d)
        with pytest.raises(ValueError, match="over-fitted"):
            exact_loss_at(g, separated_1d, assign, 0.0, [0.0])


class TestExactLoss:
    def test_translated_truth_reaches_near_zero(self, separated_1d, theta1d):
        g = translate(separated_1d, 0.7, [0.35], theta=theta1d)
        res = exact_loss(g, separated_1d, theta=theta1d)
        assert res.value < 1e-3
        assert abs(res.t1 - 0.7) < 0.05 and abs(res.t2[0] - 0.35) < 0.05

    def test_never_above_origin_value(self):
        rng = np.random.default_rng(44)
        for _ in range(5):
            true = random_measure(rng, 2, 1, margin=0.6)
            g = perturbed(true, rng, 0.1)
            assign = voronoi_cells(g, true)
            if not assign.is_exact():
                continue
            res = exact_loss(g, true)
            assert res.value <= exact_loss_at(g, true, assign, 0.0, [0.0]) + 1e-12

    def test_grid_oracle_agreement(self):
        rng = np.random.default_rng(55)
        done = 0
        while done < 8:
            true = random_measure(rng, 2, 1, margin=0.6)
            g = perturbed(true, rng, 0.08, weights_too=False)
            assign = voronoi_cells(g, true)
            if not assign.is_exact():
                continue
            res = exact_loss(g, true, GRID_CFG)
            oracle = float(np.min(grid_values_exact(g, true, assign.cells, GRID, GRID)))
            assert abs(res.value - oracle) < 1e-3
            done += 1

    def test_never_worse_than_grid_with_perturbed_weights(self):
        rng = np.random.default_rng(56)
        done = 0
        while done < 5:
            true = random_measure(rng, 2, 1, margin=0.6)
            g = perturbed(true, rng, 0.08)
            assign = voronoi_cells(g, true)
            if not assign.is_exact():
                continue
            res = exact_loss(g, true, GRID_CFG)
            oracle = float(np.min(grid_values_exact(g, true, assign.cells, GRID, GRID)))
            assert res.value <= oracle + 1e-3
            done += 1

    def test_start_point_invariance(self):
        rng = np.random.default_rng(66)
        true = random_measure(rng, 2, 1, margin=0.6)
        g = perturbed(true, rng, 0.1)
        if not voronoi_cells(g, true).is_exact():
            pytest.skip("perturbation crossed a cell boundary")
        vals = []
        for start in ([0.0], [-1.5], [1.9]):
            cfg = TranslationSolverConfig(
                t1_bounds=(-2.0, 2.0), t2_bounds=(np.array([-2.0]), np.array([2.0])),
                t_start=np.array(start),
            )
            vals.append(exact_loss(g, true, cfg).value)
        assert max(vals) - min(vals) < 1e-3

    def test_permutation_invariance(self):
        rng = np.random.default_rng(77)
        true = random_measure(rng, 3, 1, margin=0.6)
        g = perturbed(true, rng, 0.05)
        if not voronoi_cells(g, true).is_exact():
            pytest.skip("perturbation crossed a cell boundary")
        atv = exact_loss_at(g, true, voronoi_cells(g, true), 0.1, [0.2])
        gp = g.permuted([2, 0, 1])
        atp = exact_loss_at(gp, true, voronoi_cells(gp, true), 0.1, [0.2])
        assert abs(atv - atp) < 1e-12

    def test_zero_iff_translation(self, separated_1d, theta1d):
        # zero direction: recovered translation reproduces the measure
        g = translate(separated_1d, -0.5, [0.25], theta=theta1d)
        res = exact_loss(g, separated_1d, theta=theta1d)
        assert res.value < 1e-3
        rebuilt = translate(separated_1d, res.t1, res.t2)
        assert np.max(np.abs(rebuilt.beta0 - g.beta0)) < 1e-2
        assert np.max(np.abs(rebuilt.beta1 - g.beta1)) < 1e-2
        # nonzero direction: a genuine perturbation keeps the loss away from 0
        rng = np.random.default_rng(88)
        gp = perturbed(separated_1d, rng, 0.2)
        res2 = exact_loss(gp, separated_1d, theta=theta1d)
        assert res2.value > 1e-2


class TestOverfitLossAt:
    def test_zero_at_matching_translation(self, separated_1d):
        g = translate(separated_1d, 0.2, [0.1])
        assign = voronoi_cells(g, separated_1d)
        assert overfit_loss_at(g, separated_1d, assign, 0.2, [0.1]) < 1e-12

    def test_size_two_cell_quartic_intercepts(self, separated_1d):
        rng = np.random.default_rng(4)
        g = split_atom(separated_1d, rng, 0.0)  # exact duplicate, weights halved
        b = g.b.copy()
        b[0] += 0.2
        b[2] += -0.15
        g = g.replace(b=b)
        assign = voronoi_cells(g, separated_1d)
        assert assign.sizes() == (2, 1)
        val = overfit_loss_at(g, separated_1d, assign, 0.0, [0.0])
        w = math.exp(separated_1d.beta0[0]) / 2.0
        expected = w * 0.2**4 + w * 0.15**4
        assert abs(val - expected) < 1e-12

    def test_reduces_to_exact_form_on_singletons(self):
        rng = np.random.default_rng(5)
        true = random_measure(rng, 3, 1, margin=0.6)
        g = perturbed(true, rng, 0.05)
        assign = voronoi_cells(g, true)
        if not assign.is_exact():
            pytest.skip("perturbation crossed a cell boundary")
        t1, t2 = 0.3, [-0.2]
        assert abs(
            overfit_loss_at(g, true, assign, t1, t2)
            - exact_loss_at(g, true, assign, t1, t2)
        ) < 1e-14

    def test_monotone_in_single_coordinate(self, separated_1d):
        rng = np.random.default_rng(6)
        g = split_atom(separated_1d, rng, 0.02)
        assign = voronoi_cells(g, separated_1d)
        base = overfit_loss_at(g, separated_1d, assign, 0.0, [0.0])
        b = g.b.copy()
        b[0] += 0.3
        worse = overfit_loss_at(g.replace(b=b), separated_1d, assign, 0.0, [0.0])
        assert worse >= base


class TestOverfitLoss:
    def test_duplicated_atom_reaches_near_zero(self, separated_1d, theta1d):
        rng = np.random.default_rng(7)
        g = split_atom(separated_1d, rng, 0.0)
        res = overfit_loss(g, separated_1d, theta=theta1d)
        assert res.value < 1e-3
        assert overfit_loss_at(g, separated_1d, res.assignment, 0.0, [0.0]) < 1e-12

    def test_grid_oracle_agreement(self, separated_1d):
        rng = np.random.default_rng(99)
        for _ in range(8):
            g = split_atom_clean(separated_1d, rng, 0.07)
            assign = voronoi_cells(g, separated_1d)
            res = overfit_loss(g, separated_1d, GRID_CFG)
            oracle = float(np.min(grid_values_overfit(
                g, separated_1d, assign.cells, GRID, GRID)))
            assert abs(res.value - oracle) < 1e-3


class TestTranslationBounds:
    def test_contains_origin_for_interior_measure(self, theta1d):
        rng = np.random.default_rng(8)
        g = random_measure(rng, 2, 1, margin=0.4)
        lo, hi = translation_bounds(theta1d, g)
        assert np.all(lo <= 0.0) and np.all(hi >= 0.0)

    def test_respects_component_slack(self):
        theta = ThetaBox.default(1)
        g = MixingMeasure([4.0, -4.0], [[3.0], [-3.0]], [[0.0], [1.0]], [0.0, 0.0], [1.0, 1.0])
        lo, hi = translation_bounds(theta, g)
        assert abs(lo[0] - (-1.0)) < 1e-12 and abs(hi[0] - 1.0) < 1e-12
        assert abs(lo[1] - (-2.0)) < 1e-12 and abs(hi[1] - 2.0) < 1e-12
