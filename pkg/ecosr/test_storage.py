import tempfile
import unittest
from pathlib import Path

import numpy as np

from .errors import ContainerFormatError, MissingCentroidError, OverwriteError
from .storage import (HEADER, CentroidCache, PersistentDict, decode_ecot, encode_ecot, load_checkpoint,
                      read_ecot, save_checkpoint, write_ecot)
from .utils import guarded_outputs, parse_list, rng_for


class TestEcot(unittest.TestCase):
    def test_header_layout(self):
        buf = encode_ecot(np.zeros((2, 3, 4), dtype=np.float32))
        self.assertEqual(buf[:4], b"ECOT")
        self.assertEqual(HEADER.unpack_from(buf), (b"ECOT", 2, 3, 4))
        self.assertEqual(len(buf), HEADER.size + 4 * 24)

    def test_file_round_trip(self):
        arr = np.random.default_rng(0).normal(size=(5, 4, 3)).astype(np.float32)
        with tempfile.TemporaryDirectory() as tmp:
            write_ecot(Path(tmp) / "a.ecot", arr)
            np.testing.assert_array_equal(read_ecot(Path(tmp) / "a.ecot"), arr)

    def test_two_dimensional_arrays_gain_a_channel(self):
        arr, end = decode_ecot(encode_ecot(np.ones((2, 2), dtype=np.float32)))
        self.assertEqual(arr.shape, (2, 2, 1))
        self.assertEqual(end, HEADER.size + 16)

    def test_corruption(self):
        buf = encode_ecot(np.ones((2, 2, 1), dtype=np.float32))
        with self.assertRaises(ContainerFormatError):
            decode_ecot(b"NOPE" + buf[4:])
        with self.assertRaises(ContainerFormatError):
            decode_ecot(buf[:-1])
        with self.assertRaises(ContainerFormatError):
            decode_ecot(buf[:5])
        with tempfile.TemporaryDirectory() as tmp:
            (Path(tmp) / "b.ecot").write_bytes(buf + b"\0")
            with self.assertRaises(ContainerFormatError):
                read_ecot(Path(tmp) / "b.ecot")


class TestCheckpoint(unittest.TestCase):
    def test_records_in_name_order(self):
        params = {"b.weight": np.ones((2, 1, 3, 3), dtype=np.float32), "a.bias": np.zeros(4, dtype=np.float32)}
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "m.ecot"
            save_checkpoint(path, params, {"step": 3})
            buf = path.read_bytes()
            first, end = decode_ecot(buf)
            second, _ = decode_ecot(buf, end)
            loaded, sidecar = load_checkpoint(path)
        self.assertEqual(first.shape, (4, 1, 1))
        self.assertEqual(second.shape, (2, 1, 9))
        self.assertEqual([p["name"] for p in sidecar["params"]], ["a.bias", "b.weight"])
        self.assertEqual(sidecar["format"], "ECOT")
        np.testing.assert_array_equal(loaded["b.weight"], params["b.weight"])

    def test_missing(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ContainerFormatError):
                load_checkpoint(Path(tmp) / "none.ecot")


class TestPersistentDict(unittest.TestCase):
    def test_dump_on_exit(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "state.json"
            with PersistentDict(path) as state:
                state["a"] = 1
            with PersistentDict(path) as state:
                self.assertEqual(state, {"a": 1})
                state["b"] = [1, 2]
            with PersistentDict(path) as state:
                self.assertEqual(state["b"], [1, 2])

    def test_not_written_on_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "state.json"
            with self.assertRaises(RuntimeError):
                with PersistentDict(path) as state:
                    state["a"] = 1
                    raise RuntimeError("boom")
            self.assertFalse(path.exists())
            with self.assertRaises(FileNotFoundError):
                with PersistentDict(path, create=False):
                    pass


class TestCentroidCache(unittest.TestCase):
    def test_write_and_read(self):
        arr = np.random.default_rng(1).uniform(size=(4, 4, 3)).astype(np.float32)
        with tempfile.TemporaryDirectory() as tmp:
            cache = CentroidCache(Path(tmp) / "c")
            self.assertFalse(cache.exists())
            with cache.writer("deadbeef", 2) as writer:
                writer.put("x", arr)
            self.assertEqual(cache.ids(), ["x"])
            self.assertEqual(cache.scale, 2)
            got = cache.get("x")
            np.testing.assert_array_equal(got, arr)
            self.assertFalse(got.flags.writeable)
            with self.assertRaises(MissingCentroidError):
                cache.get("y")
            with self.assertRaises(OverwriteError):
                cache.writer("other", 2)

    def test_missing_cache_names_command(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(MissingCentroidError) as ctx:
                CentroidCache(tmp).index
        self.assertIn("gen-centroids", str(ctx.exception))

    def test_failed_write_leaves_no_index(self):
        with tempfile.TemporaryDirectory() as tmp:
            cache = CentroidCache(Path(tmp) / "c")
            with self.assertRaises(RuntimeError):
                with cache.writer("h", 2) as writer:
                    writer.put("x", np.zeros((2, 2, 3), dtype=np.float32))
                    raise RuntimeError("teacher failed")
            self.assertFalse(cache.exists())


class TestUtils(unittest.TestCase):
    def test_keyed_generators(self):
        self.assertEqual(rng_for(1, 2).integers(1 << 30), rng_for(1, 2).integers(1 << 30))
        self.assertNotEqual(rng_for(1, 2).integers(1 << 30), rng_for(1, 3).integers(1 << 30))

    def test_parse_list(self):
        self.assertEqual(parse_list("0,0.25, 1"), [0.0, 0.25, 1.0])
        self.assertEqual(parse_list("a,b", str), ["a", "b"])

    def test_guard_removes_partial_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = Path(tmp) / "run"
            with self.assertRaises(ValueError):
                with guarded_outputs() as guard:
                    guard.track(out).mkdir()
                    (out / "partial").write_text("x")
                    raise ValueError("fail")
            self.assertFalse(out.exists())

            kept = Path(tmp) / "kept"
            with self.assertRaises(ValueError):
                with guarded_outputs() as guard:
                    guard.track(kept).mkdir()
                    guard.keep()
                    raise ValueError("fail")
            self.assertTrue(kept.exists())


if __name__ == "__main__":
    unittest.main()
