"""SVG renderer checks: well-formed XML, per-trajectory path elements,
parse-back waypoint counts, confidence-driven opacity."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mtglab import env, oracle, render
from mtglab.model import ConfidenceReport
from mtglab.render import PlotSpec

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def scene():
    grid, pose = env.generate_scene(env.SceneSpec("corridor", 7))
    gt = oracle.build_ground_truth(grid, pose)
    poses, vels = env.simulate_history(grid, pose, np.random.default_rng(0))
    obs = env.observe(grid, poses, vels)
    return grid, pose, gt, obs


def draw(tmp_path, scene, name="plot.svg", **kw):
    grid, pose, gt, obs = scene
    spec_kw = {"layers": kw.pop("layers", render.LAYERS),
               "scale": kw.pop("scale", 20.0)}
    spec = PlotSpec(path=str(tmp_path / name), **spec_kw)
    kw.setdefault("gt", gt)
    kw.setdefault("observation", obs)
    text = render.render(grid, pose, spec, **kw)
    return spec.path, text


def parse(path):
    return ET.parse(path).getroot()


def path_points(el):
    d = el.get("d")
    return d.count("M ") + d.count("L ")


def test_output_is_wellformed_standalone_xml(tmp_path, scene):
    path, text = draw(tmp_path, scene)
    assert text.startswith('<?xml version="1.0"')
    root = parse(path)
    assert root.tag == f"{SVG}svg"
    assert root.get("viewBox") is not None
    with open(path) as f:
        assert f.read() == text


def test_one_path_element_per_trajectory(tmp_path, scene):
    grid, pose, gt, obs = scene
    path, _ = draw(tmp_path, scene, generated=gt)
    root = parse(path)
    gt_paths = [p for p in root.iter(f"{SVG}path") if p.get("class") == "gt"]
    gen_paths = [p for p in root.iter(f"{SVG}path") if p.get("class") == "gen"]
    assert len(gt_paths) == len(gt.trajectories)
    assert len(gen_paths) == len(gt.trajectories)


def test_polyline_point_count_matches_waypoints(tmp_path, scene):
    grid, pose, gt, obs = scene
    path, _ = draw(tmp_path, scene)
    root = parse(path)
    for el in root.iter(f"{SVG}path"):
        if el.get("class") == "gt":
            assert path_points(el) == gt.trajectories[0].waypoints.shape[0]


def test_no_generated_layer_when_generated_missing(tmp_path, scene):
    path, _ = draw(tmp_path, scene, generated=None)
    root = parse(path)
    assert all(p.get("class") != "gen" for p in root.iter(f"{SVG}path"))
    assert any(p.get("class") == "gt" for p in root.iter(f"{SVG}path"))
    assert any(el.tag == f"{SVG}rect" for el in root.iter())


def test_full_confidence_gives_full_opacity(tmp_path, scene):
    grid, pose, gt, obs = scene
    k = len(gt.trajectories)
    conf = ConfidenceReport(variance=np.zeros(4),
                            covariances=np.zeros((k, 4, 4)),
                            confidences=np.ones(k))
    path, _ = draw(tmp_path, scene, generated=gt, confidence=conf)
    ops = [float(p.get("stroke-opacity")) for p in parse(path).iter(f"{SVG}path")
           if p.get("class") == "gen"]
    assert ops and all(o == 1.0 for o in ops)


def test_low_confidence_dims_but_keeps_visible(tmp_path, scene):
    grid, pose, gt, obs = scene
    k = len(gt.trajectories)
    confs = np.full(k, 1e-9)
    confs[0] = 0.5
    conf = ConfidenceReport(variance=np.zeros(4),
                            covariances=np.zeros((k, 4, 4)),
                            confidences=confs)
    path, _ = draw(tmp_path, scene, generated=gt, confidence=conf)
    ops = [float(p.get("stroke-opacity")) for p in parse(path).iter(f"{SVG}path")
           if p.get("class") == "gen"]
    assert ops[0] == 0.5
    for o in ops[1:]:
        assert o == pytest.approx(render.MIN_OPACITY, abs=1e-3)


def test_confidence_layer_off_means_full_opacity(tmp_path, scene):
    grid, pose, gt, obs = scene
    k = len(gt.trajectories)
    conf = ConfidenceReport(variance=np.zeros(4),
                            covariances=np.zeros((k, 4, 4)),
                            confidences=np.full(k, 0.2))
    layers = ("grid", "gt", "generated")
    path, _ = draw(tmp_path, scene, layers=layers, generated=gt,
                   confidence=conf)
    ops = [float(p.get("stroke-opacity")) for p in parse(path).iter(f"{SVG}path")
           if p.get("class") == "gen"]
    assert ops and all(o == 1.0 for o in ops)


def test_beam_layer_one_line_per_beam(tmp_path, scene):
    grid, pose, gt, obs = scene
    path, _ = draw(tmp_path, scene)
    lines = list(parse(path).iter(f"{SVG}line"))
    assert len(lines) == obs.scans.shape[1]


def test_grid_layer_only(tmp_path, scene):
    path, _ = draw(tmp_path, scene, layers=("grid",), gt=None,
                   observation=None)
    root = parse(path)
    assert not list(root.iter(f"{SVG}path"))
    assert not list(root.iter(f"{SVG}line"))
    rects = list(root.iter(f"{SVG}rect"))
    assert len(rects) > 1  # background plus traversable runs


def test_robot_marker_at_pose(tmp_path, scene):
    grid, pose, gt, obs = scene
    scale = 20.0
    path, _ = draw(tmp_path, scene, scale=scale)
    circ = next(iter(parse(path).iter(f"{SVG}circle")))
    h_px = grid.extent[1] * scale
    assert float(circ.get("cx")) == pytest.approx(pose.x * scale, abs=0.01)
    assert float(circ.get("cy")) == pytest.approx(h_px - pose.y * scale,
                                                  abs=0.01)


def test_viewbox_matches_grid_extent(tmp_path, scene):
    grid, pose, gt, obs = scene
    scale = 10.0
    path, _ = draw(tmp_path, scene, scale=scale)
    vb = [float(v) for v in parse(path).get("viewBox").split()]
    assert vb[0] == 0.0 and vb[1] == 0.0
    assert vb[2] == pytest.approx(grid.extent[0] * scale, abs=0.01)
    assert vb[3] == pytest.approx(grid.extent[1] * scale, abs=0.01)


def test_plot_spec_validation(tmp_path):
    with pytest.raises(ValueError, match="at least one layer"):
        PlotSpec(path="x.svg", layers=())
    with pytest.raises(ValueError, match="unknown layers"):
        PlotSpec(path="x.svg", layers=("grid", "bogus"))
    with pytest.raises(ValueError, match="scale"):
        PlotSpec(path="x.svg", scale=0.0)
