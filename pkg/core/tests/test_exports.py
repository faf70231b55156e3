import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.services.exports import grid_to_pgm, grid_to_text, write_grid_pgm, write_path_text
from core.services.lattice import AlignmentPath


def parse_pgm(data):
    header, _, rest = data.partition(b"\n")
    size, _, rest = rest.partition(b"\n")
    depth, _, pixels = rest.partition(b"\n")
    width, height = (int(v) for v in size.split())
    return header, width, height, int(depth), np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


class PgmTests(SimpleTestCase):

    def test_dimensions_and_orientation(self):
        grid = np.array([[-np.inf, -2.0, -1.0], [-4.0, -3.0, 0.0]])  # T=2, U=2
        header, width, height, depth, pixels = parse_pgm(grid_to_pgm(grid))
        self.assertEqual((header, width, height, depth), (b"P5", 2, 3, 255))
        # bottom row is u = 0
        self.assertEqual(pixels[-1, 0], 0)
        self.assertEqual(pixels[0, 1], 255)
        self.assertEqual(pixels[-1, 1], 0)

    def test_scale_is_anchored_at_zero(self):
        grid = np.array([[-4.0, -1.0], [-3.0, -np.inf]])  # T=2, U=1
        _, _, _, _, pixels = parse_pgm(grid_to_pgm(grid))
        np.testing.assert_array_equal(pixels, [[191, 0], [0, 64]])

    def test_zero_grid_is_white(self):
        _, _, _, _, pixels = parse_pgm(grid_to_pgm(np.zeros((2, 3))))
        self.assertTrue((pixels == 255).all())

    def test_all_minus_infinity_is_black(self):
        _, _, _, _, pixels = parse_pgm(grid_to_pgm(np.full((2, 2), -np.inf)))
        self.assertFalse(pixels.any())

    def test_write(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_grid_pgm(Path(tmp) / 'g.pgm', np.zeros((3, 2)))
            self.assertTrue(path.read_bytes().startswith(b"P5\n3 2\n255\n"))


class TextTests(SimpleTestCase):

    def test_grid_rows_per_input_position(self):
        text = grid_to_text(np.array([[0.0, -np.inf], [-1.5, -2.0]]))
        self.assertEqual(text, "0.0,-inf\n-1.5,-2.0\n")

    def test_path_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_path_text(Path(tmp) / 'p.txt', AlignmentPath.from_durations([2, 0]))
            self.assertEqual(path.read_text(), "0,0\n0,1\n0,2\n1,2\n")
