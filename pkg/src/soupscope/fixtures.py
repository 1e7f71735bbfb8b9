"""Hand-built configurations reproducing the topology of the illustrated examples.

All lattice fixtures use mesh 1 and the annulus A(0; 4.3, 12.3), whose
radii miss every refined cell centre.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import Annulus, Point, PolyLoop

FIXTURE_ANNULUS = Annulus(Point(0.0, 0.0), 4.3, 12.3)


def rect_loop(x0: int, x1: int, y0: int, y1: int, id=0) -> PolyLoop:
    """Lattice loop walking the perimeter of [x0, x1] x [y0, y1] counterclockwise."""
    if not (x0 < x1 and y0 < y1):
        raise ValueError("rectangle needs x0 < x1 and y0 < y1")
    s = [(x, y0) for x in range(x0, x1)]
    s += [(x1, y) for y in range(y0, y1)]
    s += [(x, y1) for x in range(x1, x0, -1)]
    s += [(x0, y) for y in range(y1, y0, -1)]
    sites = np.array(s, dtype=np.int64)
    return PolyLoop(sites.astype(float), id=id, sites=sites)


def comp_change_fixture():
    """Four crossing spokes, two non-crossing squares, and the red and blue extra loops.

    Returns (base loops, red loop, blue loop).  The red loop touches two
    spokes and merges their components; the blue loop crosses nothing by
    itself but chains the two squares into a new crossing component.
    """
    base = [
        rect_loop(2, 14, 0, 1, id="spoke+x"),
        rect_loop(-14, -2, -1, 0, id="spoke-x"),
        rect_loop(-1, 0, 2, 14, id="spoke+y"),
        rect_loop(0, 1, -14, -2, id="spoke-y"),
        rect_loop(-6, -2, -6, -2, id="near-square"),
        rect_loop(-12, -8, -12, -8, id="far-square"),
    ]
    red = rect_loop(0, 8, 1, 8, id="red")
    blue = rect_loop(-8, -6, -8, -6, id="blue")
    return base, red, blue


def clusters_fixture():
    """Two outermost crossing clusters, a nested crossing loop and a loop that crosses nothing."""
    return [
        rect_loop(2, 8, 0, 1, id="chain-inner"),
        rect_loop(8, 14, 0, 1, id="chain-outer"),
        rect_loop(-14, -2, -4, 4, id="box"),
        rect_loop(-13, -3, -1, 0, id="nested"),
        rect_loop(-1, 0, 5, 10, id="short"),
    ]


def self_crossing_loop() -> PolyLoop:
    """Continuum loop with four crossings of the fixture annulus, two of them intersecting.

    The annulus here is A(0; 1, 3).
    """
    pts = [(0.5, -0.5), (4.0, 0.5), (4.0, -0.5), (0.5, 0.5),
           (-0.5, 0.5), (-4.0, 0.5), (-4.0, -0.5), (-0.5, -0.5)]
    return PolyLoop(np.array(pts), id="figure-eight")


SELF_CROSSING_ANNULUS = Annulus(Point(0.0, 0.0), 1.0, 3.0)


def _loop_json(l: PolyLoop) -> dict:
    d = {"id": l.id, "vertices": l.vertices.tolist()}
    if l.sites is not None:
        d["sites"] = l.sites.tolist()
    return d


def _annulus_json(a: Annulus) -> dict:
    return {"center": [a.center.x, a.center.y], "r": a.inner_r, "R": a.outer_r}


def fixture_documents() -> dict:
    base, red, blue = comp_change_fixture()
    return {
        "comp_change.json": {"annulus": _annulus_json(FIXTURE_ANNULUS),
                             "loops": [_loop_json(l) for l in base],
                             "red": _loop_json(red), "blue": _loop_json(blue),
                             "expected": {"comp": 4, "comp_with_red": 3, "comp_with_blue": 5}},
        "clusters.json": {"annulus": _annulus_json(FIXTURE_ANNULUS),
                          "loops": [_loop_json(l) for l in clusters_fixture()],
                          "expected": {"clus": 2, "comp": 2}},
        "self_crossing.json": {"annulus": _annulus_json(SELF_CROSSING_ANNULUS),
                               "loops": [_loop_json(self_crossing_loop())],
                               "expected": {"per_loop": 4, "disjoint_arcs": 3}},
    }


def write_fixtures(directory) -> list:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, doc in fixture_documents().items():
        p = d / name
        p.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        paths.append(p)
    return paths


def load_fixture(path):
    """(loops, annulus, extra dict) from a fixture JSON file."""
    doc = json.loads(Path(path).read_text())

    def mk(d):
        return PolyLoop(np.asarray(d["vertices"], dtype=float), id=d["id"], sites=d.get("sites"))

    a = doc["annulus"]
    ann = Annulus(Point(*a["center"]), a["r"], a["R"])
    extra = {k: mk(v) for k, v in doc.items() if k in ("red", "blue")}
    extra["expected"] = doc.get("expected", {})
    return [mk(d) for d in doc["loops"]], ann, extra
