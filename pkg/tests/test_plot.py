import xml.etree.ElementTree as ET

import numpy as np
import pytest

from aerobat.plot import (MissingChannelError, cost_trace_figure, line_plot, nice_ticks,
                          trajectory_figures)


def traj_data(t_end=4.0, n=401):
    t = np.linspace(0, t_end, n)
    return {"t": t, "pitch": 0.6 + 0.1 * np.sin(t), "vx": -t, "vy": 0 * t, "vz": np.cos(t),
            "l3b": 0.008 + 0 * t, "l3c": 0.01 + 0 * t, "l8b": 0.007 + 0 * t,
            "l10b": 0.008 + 0 * t, "lift": np.sin(t), "thrust": np.cos(t)}


def test_nice_ticks_cover_range():
    for lo, hi in ((0, 4), (-0.37, 2.9), (1e-4, 3e-4), (5, 5)):
        t = nice_ticks(lo, hi)
        assert t[0] <= lo and t[-1] >= hi
        steps = np.diff(t)
        np.testing.assert_allclose(steps, steps[0])


def test_figures_are_valid_svg_and_deterministic():
    a = trajectory_figures(traj_data(), pitch_ref=np.radians(33))
    b = trajectory_figures(traj_data(), pitch_ref=np.radians(33))
    assert set(a) == {"pitch", "velocity", "fdc", "forces"}
    for k in a:
        assert a[k] == b[k]
        root = ET.fromstring(a[k])
        assert root.tag.endswith("svg")


def test_pitch_axis_spans_horizon_and_has_reference():
    svg = trajectory_figures(traj_data(), pitch_ref=np.radians(33))["pitch"]
    texts = [e.text for e in ET.fromstring(svg).iter() if e.tag.endswith("text")]
    assert "0" in texts and "4" in texts
    assert "reference 33 deg" in texts
    assert "time [s]" in texts and "pitch [deg]" in texts
    no_ref = trajectory_figures(traj_data(), pitch_ref=None)["pitch"]
    assert "reference" not in no_ref


def test_missing_channel_named():
    d = traj_data()
    del d["l8b"]
    with pytest.raises(MissingChannelError) as exc:
        trajectory_figures(d)
    assert "l8b" in str(exc.value)


def test_cost_trace_figure():
    svg = cost_trace_figure({"trace": [3.0, 2.0, 1e300, 1.5], "feasible": [True, True, False,
                                                                          True], "problem": "gait"})
    assert "best so far" in svg and "1e+300" not in svg
    with pytest.raises(MissingChannelError):
        cost_trace_figure({})


def test_line_plot_thins_long_series():
    x = np.linspace(0, 1, 50001)
    svg = line_plot([("y", x, x ** 2)], "x", "y", "t")
    pts = svg.split('points="')[1].split('"')[0].split()
    assert len(pts) <= 2000
