"""Shared builders for referee-level tests."""

from __future__ import annotations

import random
import threading
from contextlib import contextmanager

from energyref.dataset import DatasetManifest, ImageEntry, PPM_TYPE, encode_pnm, PixelMatrix
from energyref.referee import make_server
from energyref.scoring import BoundingBox, Detection, GroundTruthObject
from energyref.wire import format_detections

import numpy as np


def oracle_rows(manifest, image_ids=None) -> str:
    wanted = set(image_ids) if image_ids is not None else None
    return format_detections(
        Detection(g.image_id, g.class_id, 1.0, g.box) for g in manifest.ground_truth
        if wanted is None or g.image_id in wanted)


def grid_manifest(root, num_images, cols, rows, cell=4) -> DatasetManifest:
    """One-class manifest whose images each hold a cols x rows grid of disjoint objects."""
    root.mkdir(parents=True, exist_ok=True)
    payload = encode_pnm(PixelMatrix.from_array(np.zeros((rows * cell, cols * cell), np.uint8)))
    images, gt = [], []
    for n in range(num_images):
        image_id = f"g{n:05d}"
        path = root / f"{image_id}.pgm"
        path.write_bytes(payload)
        images.append(ImageEntry(image_id, path.resolve(), "image/x-portable-graymap"))
        for r in range(rows):
            for c in range(cols):
                gt.append(GroundTruthObject(image_id, 1, BoundingBox(c * cell, r * cell,
                                                                      (c + 1) * cell - 1,
                                                                      (r + 1) * cell - 1)))
    return DatasetManifest(images, ["object"], gt)


@contextmanager
def serving(referee):
    server = make_server(referee)
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        server.server_close()
        thread.join(5)


def fuzz_trace(referee, clock, rng: random.Random, steps: int = 12):
    """Drive one session with random timings; returns the detections the model says were accepted."""
    token = referee.login("alpha", "pw-a")
    ids = referee.manifest.image_ids
    expected = []
    deadline = referee.session(token).deadline_s
    for _ in range(steps):
        clock.advance(rng.choice([0.0, 0.5, 1.0, 30.0, 120.0, 250.0, rng.uniform(0, 400)]))
        op = rng.random()
        try:
            if op < 0.6:
                rows = oracle_rows(referee.manifest, rng.sample(ids, k=rng.randint(1, 3)))
                if not rows:
                    continue
                n = referee.post_results(token, rows)
                assert clock() <= deadline
                expected.append(n)
            elif op < 0.8:
                referee.get_image(token, rng.randrange(len(ids)))
            elif op < 0.9:
                referee.close_expired()
            else:
                referee.logout(token)
        except Exception as exc:  # noqa: BLE001 - any rejection is fine, admission is what matters
            from energyref.errors import EnergyRefError
            assert isinstance(exc, EnergyRefError), exc
    clock.advance(rng.choice([0.0, 700.0]))
    if referee.session(token).status == "active":
        referee.logout(token)
    return token, sum(expected)
