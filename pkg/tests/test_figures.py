"""SVG figure tests: coordinate mapping, contour extraction, and file shape.

All emitted files are parsed with the stdlib XML parser, so a malformed
element fails loudly rather than rendering wrong.
"""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from gradtail.analysis import TailLabel
from gradtail.datasets import GaussianSpec, gen_two_gaussians
from gradtail.figures import (
    SvgCanvas,
    analytic_boundary_contour,
    contour_segments,
    entropy_figure,
    model_boundary_contour,
    panel_figure,
    prediction_figure,
    render_svg,
    scatter_figure,
    tail_figure,
)
from gradtail.mlp import MlpModel

SVG = "{http://www.w3.org/2000/svg}"


def small_dataset(seed=0):
    return gen_two_gaussians(
        seed,
        GaussianSpec((0.0, 0.0), 1.0, 30, 0),
        GaussianSpec((2.2, 2.2), 0.5, 10, 1),
    )


def parse(path):
    return ET.fromstring(path.read_text())


def count_tags(root, tag):
    return len(root.findall(f".//{SVG}{tag}"))


# ---------------------------------------------------------------------------
# coordinate mapping
# ---------------------------------------------------------------------------


def test_px_maps_world_corners():
    canvas = SvgCanvas(bounds=(-4.0, 5.0), size=450, margin=40)
    assert canvas.px(-4.0, 5.0) == (40.0, 40.0)        # top-left
    assert canvas.px(5.0, -4.0) == (490.0, 490.0)      # bottom-right
    assert canvas.px(0.5, 0.5) == (265.0, 265.0)       # center


def test_px_flips_y_axis():
    canvas = SvgCanvas(bounds=(0.0, 1.0), size=100, margin=0)
    _, py_low = canvas.px(0.5, 0.2)
    _, py_high = canvas.px(0.5, 0.8)
    assert py_high < py_low  # larger world y is closer to the top of the image


def test_canvas_rejects_degenerate_bounds():
    with pytest.raises(ValueError, match="increasing"):
        SvgCanvas(bounds=(2.0, 2.0))


def test_origin_offsets_panels():
    a = SvgCanvas(bounds=(0.0, 1.0), size=100, margin=10, origin=(0, 0))
    b = SvgCanvas(bounds=(0.0, 1.0), size=100, margin=10, origin=(200, 0))
    assert b.px(0.0, 1.0)[0] - a.px(0.0, 1.0)[0] == 200.0


# ---------------------------------------------------------------------------
# marching squares
# ---------------------------------------------------------------------------


def test_contour_of_vertical_line():
    xs = np.linspace(-2.0, 2.0, 41)
    ys = np.linspace(-2.0, 2.0, 41)
    field = np.tile(xs - 0.3, (41, 1))  # f(x, y) = x - 0.3
    segs = contour_segments(xs, ys, field)
    assert segs
    for (x1, y1), (x2, y2) in segs:
        assert abs(x1 - 0.3) < 1e-9 and abs(x2 - 0.3) < 1e-9
    covered = sorted({y for seg in segs for _, y in seg})
    assert covered[0] == -2.0 and covered[-1] == 2.0


def test_contour_of_circle_lies_on_circle():
    xs = np.linspace(-2.0, 2.0, 201)
    ys = np.linspace(-2.0, 2.0, 201)
    gx, gy = np.meshgrid(xs, ys)
    field = gx**2 + gy**2 - 1.0
    segs = contour_segments(xs, ys, field)
    pts = np.array([p for seg in segs for p in seg])
    radii = np.hypot(pts[:, 0], pts[:, 1])
    # linear interpolation error is O(h^2) with h = 0.02
    assert np.max(np.abs(radii - 1.0)) < 1e-3
    # the curve goes all the way round
    angles = np.arctan2(pts[:, 1], pts[:, 0])
    assert angles.min() < -3.0 and angles.max() > 3.0


def test_contour_interpolates_level():
    xs = np.array([0.0, 1.0])
    ys = np.array([0.0, 1.0])
    field = np.array([[0.0, 4.0], [0.0, 4.0]]) - 1.0  # crossing at x = 0.25
    segs = contour_segments(xs, ys, field)
    assert len(segs) == 1
    (x1, _), (x2, _) = segs[0]
    assert x1 == pytest.approx(0.25) and x2 == pytest.approx(0.25)


def test_contour_saddle_emits_two_segments():
    xs = np.array([0.0, 1.0])
    ys = np.array([0.0, 1.0])
    field = np.array([[1.0, -1.0], [-1.0, 1.0]])
    segs = contour_segments(xs, ys, field)
    assert len(segs) == 2


def test_contour_shape_mismatch():
    with pytest.raises(ValueError, match="field shape"):
        contour_segments(np.arange(3.0), np.arange(4.0), np.zeros((3, 4)))


def test_analytic_contour_matches_closed_form_circle():
    common = GaussianSpec((0.0, 0.0), 1.0, 10, 0)
    uncommon = GaussianSpec((2.2, 2.2), 0.5, 5, 1)
    segs = analytic_boundary_contour(common, uncommon, bounds=(-4.0, 5.0), resolution=300)
    pts = np.array([p for seg in segs for p in seg])
    mu = np.array([2.2, 2.2])
    radius = np.sqrt(2.0 * mu @ mu + 2.0 * np.log(2.0))
    dist = np.linalg.norm(pts - 2.0 * mu, axis=1)
    assert np.max(np.abs(dist - radius)) < 0.01


def test_model_contour_matches_linear_decision_rule():
    # logits difference z0 - z1 = x + y - 2 -> boundary is the line x + y = 2
    model = MlpModel(
        [2, 2],
        [np.array([[0.5, 0.5], [-0.5, -0.5]])],
        [np.array([-1.0, 1.0])],
    )
    segs = model_boundary_contour(model, bounds=(-4.0, 5.0), resolution=200)
    pts = np.array([p for seg in segs for p in seg])
    assert np.max(np.abs(pts.sum(axis=1) - 2.0)) < 1e-6


def test_model_contour_rejects_regressor():
    model = MlpModel([2, 1], [np.ones((1, 2))], [np.zeros(1)])
    with pytest.raises(ValueError, match="two-logit"):
        model_boundary_contour(model)


# ---------------------------------------------------------------------------
# emitted files
# ---------------------------------------------------------------------------


def test_scatter_figure_structure(tmp_path):
    ds = small_dataset()
    path = tmp_path / "scatter.svg"
    scatter_figure(ds, path)
    root = parse(path)
    assert root.tag == f"{SVG}svg"
    # 10 uncommon circles; crosses share one batched path, boundary one more
    assert count_tags(root, "circle") == 10
    paths = root.findall(f".//{SVG}path")
    assert len(paths) == 2
    dashes = [p.get("stroke-dasharray") for p in paths]
    assert any(d for d in dashes)


def test_prediction_figure_adds_model_curve(tmp_path):
    ds = small_dataset()
    model = MlpModel.initialize((2, 5, 2), seed=1)
    path = tmp_path / "pred.svg"
    prediction_figure(model, ds, path)
    root = parse(path)
    strokes = {p.get("stroke") for p in root.findall(f".//{SVG}path")}
    assert "#1f77b4" in strokes  # model boundary drawn in its own color


def test_tail_figure_uses_three_colors(tmp_path):
    ds = small_dataset()
    labels = np.array(
        [TailLabel.COMMON] * 20 + [TailLabel.RARE] * 10 + [TailLabel.HARD] * 9 + [None],
        dtype=object,
    )
    path = tmp_path / "tail.svg"
    tail_figure(ds, labels, path)
    root = parse(path)
    strokes = {el.get("stroke") for el in root.iter()} - {None}
    assert {"#2ca02c", "#e6b800", "#d62728", "#bbbbbb"} <= strokes


def test_tail_figure_rare_only_drops_other_points(tmp_path):
    ds = small_dataset()
    labels = np.array([TailLabel.HARD] * 30 + [TailLabel.RARE] * 10, dtype=object)
    path = tmp_path / "rare.svg"
    tail_figure(ds, labels, path, rare_only=True)
    root = parse(path)
    # the 10 rare examples are uncommon-class -> circles; nothing else drawn
    assert count_tags(root, "circle") == 10
    strokes = {el.get("stroke") for el in root.iter()} - {None}
    assert "#d62728" not in strokes


def test_entropy_figure_median_split(tmp_path):
    ds = small_dataset()
    entropy = np.linspace(0.0, 0.6, ds.n)
    path = tmp_path / "entropy.svg"
    entropy_figure(ds, entropy, path)
    text = path.read_text()
    assert "#d62728" in text and "#2ca02c" in text


def test_entropy_figure_handles_unvisited(tmp_path):
    ds = small_dataset()
    entropy = np.full(ds.n, np.nan)
    entropy[:5] = 0.3
    path = tmp_path / "entropy.svg"
    entropy_figure(ds, entropy, path)
    assert "#bbbbbb" in path.read_text()


def test_panel_figure_lays_out_columns(tmp_path):
    ds = small_dataset()
    model = MlpModel.initialize((2, 5, 2), seed=2)
    path = tmp_path / "panel.svg"
    panel_figure([("w=1", None, ds), ("w=5", model, ds), ("w=25", model, ds)], path)
    root = parse(path)
    titles = [t.text for t in root.findall(f".//{SVG}text") if t.get("font-weight") == "bold"]
    assert titles == ["w=1", "w=5", "w=25"]
    assert int(root.get("width")) == 3 * (300 + 2 * 36)


def test_panel_figure_rejects_empty():
    with pytest.raises(ValueError, match="at least one panel"):
        panel_figure([], "unused.svg")


def test_render_svg_is_valid_xml(tmp_path):
    canvas = SvgCanvas(bounds=(0.0, 1.0), size=50, margin=5)
    canvas.frame("t")
    canvas.crosses(np.array([[0.5, 0.5]]), "#000000")
    canvas.circles(np.array([[0.25, 0.75]]), "#ff0000")
    canvas.polyline([(0.0, 0.0), (1.0, 1.0)], "#00ff00")
    path = tmp_path / "mini.svg"
    render_svg([canvas], path)
    root = parse(path)
    assert count_tags(root, "polyline") == 1
