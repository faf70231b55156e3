import numpy as np
from django.test import SimpleTestCase

from core.services.errors import DegenerateLatticeError, LatticeError
from core.services.lattice import (
    AlignmentPath,
    LogProbLattice,
    Step,
    alpha_total_log_prob,
    backward_variables,
    forced_align,
    forward_variables,
    logsumexp,
    loss_and_grad,
    path_log_prob,
    posterior_map,
    total_log_prob,
)
from core.tests.utils import all_paths, random_lattice, walk_log_prob


class LogSumExpTests(SimpleTestCase):

    def test_matches_naive_sum(self):
        values = np.array([-1.0, -2.5, 0.3])
        self.assertAlmostEqual(float(logsumexp(values)), float(np.log(np.exp(values).sum())), places=12)

    def test_all_minus_infinity_stays_minus_infinity(self):
        self.assertEqual(float(logsumexp(np.array([-np.inf, -np.inf]))), -np.inf)

    def test_large_values_do_not_overflow(self):
        self.assertAlmostEqual(float(logsumexp(np.array([1000.0, 1000.0]))), 1000.0 + np.log(2.0), places=9)

    def test_axis(self):
        values = np.log(np.array([[1.0, 3.0], [2.0, 2.0]]))
        np.testing.assert_allclose(logsumexp(values, axis=1), np.log([4.0, 4.0]))


class LogProbLatticeTests(SimpleTestCase):

    def test_from_logits_is_normalized(self):
        lattice, _ = random_lattice(np.random.default_rng(0), 3, 2)
        lattice.check_normalized()
        self.assertEqual((lattice.T, lattice.U, lattice.vbar, lattice.blank), (3, 2, 4, 3))

    def test_unnormalized_rows_rejected(self):
        with self.assertRaises(LatticeError):
            LogProbLattice(np.zeros((2, 2, 3))).check_normalized()

    def test_entries_are_read_only(self):
        lattice, _ = random_lattice(np.random.default_rng(0), 2, 1)
        with self.assertRaises(ValueError):
            lattice.entries[0, 0, 0] = 0.0

    def test_bad_shape(self):
        with self.assertRaises(LatticeError):
            LogProbLattice(np.zeros((2, 3)))
        with self.assertRaises(LatticeError):
            LogProbLattice(np.zeros((0, 1, 3)))


class InputValidationTests(SimpleTestCase):

    def setUp(self):
        self.lattice, self.y = random_lattice(np.random.default_rng(1), 3, 2)

    def test_target_length_mismatch(self):
        with self.assertRaises(LatticeError):
            total_log_prob(self.lattice, self.y + [0])

    def test_blank_in_targets(self):
        with self.assertRaises(LatticeError):
            total_log_prob(self.lattice, [self.lattice.blank, 0])

    def test_nan_entries(self):
        entries = self.lattice.entries.copy()
        entries[1, 1, 0] = np.nan
        with self.assertRaises(LatticeError):
            forward_variables(LogProbLattice(entries), self.y)

    def test_degenerate_lattice(self):
        entries = self.lattice.entries.copy()
        entries[:, :, self.lattice.blank] = -np.inf
        lattice = LogProbLattice(entries)
        self.assertEqual(total_log_prob(lattice, self.y), -np.inf)
        with self.assertRaises(DegenerateLatticeError):
            loss_and_grad(lattice, self.y)
        with self.assertRaises(DegenerateLatticeError):
            forced_align(lattice, self.y)


class TotalProbabilityTests(SimpleTestCase):

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            T, U = int(rng.integers(1, 7)), int(rng.integers(0, 7))
            lattice, y = random_lattice(rng, T, U)
            brute = sum(np.exp(walk_log_prob(lattice, y, path)) for path in all_paths(T, U))
            computed = np.exp(total_log_prob(lattice, y))
            self.assertLess(abs(computed - brute) / brute, 1e-10, msg=f"T={T} U={U}")

    def test_single_node_lattice(self):
        entries = np.log(np.array([[[0.25, 0.75]]]))
        self.assertAlmostEqual(total_log_prob(LogProbLattice(entries), []), np.log(0.75), places=12)

    def test_alpha_total_omits_final_blank(self):
        lattice, y = random_lattice(np.random.default_rng(5), 4, 3)
        final_blank = lattice.entries[lattice.T - 1, lattice.U, lattice.blank]
        self.assertAlmostEqual(alpha_total_log_prob(lattice, y) + final_blank, total_log_prob(lattice, y), places=10)

    def test_path_log_prob_matches_walk(self):
        rng = np.random.default_rng(6)
        lattice, y = random_lattice(rng, 3, 3)
        for path in all_paths(3, 3):
            self.assertAlmostEqual(path_log_prob(lattice, y, path), walk_log_prob(lattice, y, path), places=12)


class PosteriorMapTests(SimpleTestCase):

    def test_duality_and_anti_diagonal_conservation(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            T, U = int(rng.integers(1, 7)), int(rng.integers(0, 7))
            lattice, y = random_lattice(rng, T, U)
            posterior = posterior_map(lattice, y)
            self.assertAlmostEqual(float(posterior.log_beta[0, 0]), posterior.log_total, delta=1e-6)
            for k in range(T + U):
                nodes = [(t, k - t) for t in range(T) if 0 <= k - t <= U]
                mass = logsumexp(np.array([posterior.log_gamma[t, u] for t, u in nodes]))
                self.assertAlmostEqual(float(mass), posterior.log_total, delta=1e-6)

    def test_gamma_never_exceeds_total(self):
        lattice, y = random_lattice(np.random.default_rng(8), 5, 4)
        posterior = posterior_map(lattice, y)
        self.assertLessEqual(float(posterior.log_gamma.max()), posterior.log_total + 1e-9)
        self.assertAlmostEqual(float(posterior.log_gamma[lattice.T - 1, lattice.U]), posterior.log_total, places=9)

    def test_standalone_variables_agree(self):
        lattice, y = random_lattice(np.random.default_rng(9), 4, 2)
        posterior = posterior_map(lattice, y)
        np.testing.assert_allclose(forward_variables(lattice, y), posterior.log_alpha)
        np.testing.assert_allclose(backward_variables(lattice, y), posterior.log_beta)


class LossGradientTests(SimpleTestCase):

    def _loss(self, entries, y):
        return loss_and_grad(LogProbLattice(entries), y)[0]

    def test_central_differences(self):
        rng = np.random.default_rng(11)
        eps = 1e-6
        for _ in range(100):
            T, U = int(rng.integers(1, 6)), int(rng.integers(0, 6))
            lattice, y = random_lattice(rng, T, U)
            _, grad = loss_and_grad(lattice, y)
            flat_size = lattice.entries.size
            for index in rng.choice(flat_size, size=min(8, flat_size), replace=False):
                position = np.unravel_index(index, lattice.entries.shape)
                plus = lattice.entries.copy()
                minus = lattice.entries.copy()
                plus[position] += eps
                minus[position] -= eps
                numeric = (self._loss(plus, y) - self._loss(minus, y)) / (2 * eps)
                analytic = grad[position]
                error = abs(numeric - analytic) / max(1e-4, abs(numeric) + abs(analytic))
                self.assertLess(error, 1e-4, msg=f"T={T} U={U} at {position}")

    def test_gradient_sums_to_minus_path_length(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            T, U = int(rng.integers(1, 6)), int(rng.integers(0, 6))
            lattice, y = random_lattice(rng, T, U)
            loss, grad = loss_and_grad(lattice, y)
            self.assertAlmostEqual(float(grad.sum()), -(T + U), delta=1e-6)
            self.assertAlmostEqual(loss, -total_log_prob(lattice, y), places=10)

    def test_only_target_and_blank_entries_carry_gradient(self):
        lattice, y = random_lattice(np.random.default_rng(13), 3, 2, vocab=5)
        _, grad = loss_and_grad(lattice, y)
        used = np.zeros_like(grad, dtype=bool)
        used[:, :, lattice.blank] = True
        for u, token in enumerate(y):
            used[:, u, token] = True
        self.assertTrue(np.all(grad[~used] == 0.0))


class LogSpaceStabilityTests(SimpleTestCase):

    def setUp(self):
        # targets and blank at 1e-30, a distractor token holds the rest of each row
        self.T, self.U = 6, 5
        entries = np.full((self.T, self.U + 1, 4), np.log(1e-30))
        entries[:, :, 2] = np.log1p(-3e-30)
        self.lattice = LogProbLattice(entries)
        self.y = [0, 1, 0, 1, 1]

    def test_total_and_gradient_stay_finite(self):
        loss, grad = loss_and_grad(self.lattice, self.y)
        self.assertTrue(np.isfinite(loss))
        self.assertTrue(np.all(np.isfinite(grad)))
        self.assertAlmostEqual(float(grad.sum()), -(self.T + self.U), delta=1e-6)
        expected = (self.T + self.U) * np.log(1e-30) + np.log(252.0)
        self.assertAlmostEqual(total_log_prob(self.lattice, self.y), expected, places=6)

    def test_posterior_map_stays_finite(self):
        posterior = posterior_map(self.lattice, self.y)
        for grid in (posterior.log_alpha, posterior.log_beta, posterior.log_gamma):
            self.assertTrue(np.all(np.isfinite(grid)))
        forced_align(self.lattice, self.y).validate(self.T, self.U)


class ForcedAlignTests(SimpleTestCase):

    def test_matches_exhaustive_max_path(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            T, U = int(rng.integers(1, 6)), int(rng.integers(0, 6))
            lattice, y = random_lattice(rng, T, U)
            best = max(all_paths(T, U), key=lambda path: walk_log_prob(lattice, y, path))
            path = forced_align(lattice, y)
            path.validate(T, U)
            self.assertEqual(path, best)
            self.assertAlmostEqual(path_log_prob(lattice, y, path), walk_log_prob(lattice, y, best), places=10)

    def test_beats_random_valid_paths(self):
        rng = np.random.default_rng(23)
        T, U = 9, 8
        lattice, y = random_lattice(rng, T, U)
        best = path_log_prob(lattice, y, forced_align(lattice, y))
        moves = [Step.EMIT] * U + [Step.BLANK] * (T - 1)
        for _ in range(1000):
            order = rng.permutation(len(moves))
            path = AlignmentPath(tuple(moves[i] for i in order) + (Step.BLANK,))
            self.assertGreaterEqual(best, walk_log_prob(lattice, y, path) - 1e-12)

    def test_recovers_planted_staircase(self):
        rng = np.random.default_rng(22)
        for durations in ([2, 1, 3], [1, 1, 1, 1], [0, 4, 0, 2], [3]):
            planted = AlignmentPath.from_durations(durations)
            T, U = planted.T, planted.U
            y = [int(v) for v in rng.integers(0, 3, size=U)]
            logits = rng.normal(scale=0.5, size=(T, U + 1, 4))
            for (t, u), step in zip(planted.nodes(), planted.steps):
                token = 3 if step is Step.BLANK else y[u]
                logits[t, u, token] += 12.0
            self.assertEqual(forced_align(LogProbLattice.from_logits(logits), y), planted)

    def test_ties_prefer_blank_predecessor(self):
        lattice = LogProbLattice(np.full((2, 2, 2), np.log(0.5)))
        path = forced_align(lattice, [0])
        self.assertEqual(path.durations(), [1, 0])
        self.assertEqual(path.steps, (Step.EMIT, Step.BLANK, Step.BLANK))


class AlignmentPathTests(SimpleTestCase):

    def test_durations_round_trip(self):
        path = AlignmentPath.from_durations([2, 0, 1])
        self.assertEqual(path.durations(), [2, 0, 1])
        self.assertEqual((path.T, path.U, len(path)), (3, 3, 6))

    def test_nodes_and_text(self):
        path = AlignmentPath.from_durations([1, 0])
        self.assertEqual(path.nodes(), [(0, 0), (0, 1), (1, 1)])
        self.assertEqual(path.to_text(), "0,0\n0,1\n1,1\n")

    def test_must_end_with_blank(self):
        with self.assertRaises(LatticeError):
            AlignmentPath((Step.BLANK, Step.EMIT))
        with self.assertRaises(LatticeError):
            AlignmentPath(())

    def test_validate_counts(self):
        with self.assertRaises(LatticeError):
            AlignmentPath.from_durations([1, 1]).validate(2, 3)
