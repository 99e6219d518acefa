import pytest

from dynlab.lab.properties import (PROPERTIES, check_p5_premise, extra_light_minority, light_variance,
                                   property_suite)


@pytest.mark.parametrize("pid", PROPERTIES)
def test_quick_suite_passes(pid):
    rep = property_suite(pid, quick=True, seed=1)
    assert rep.quick and rep.property == pid
    assert rep.passed, rep.metrics
    d = rep.to_dict()
    assert {"metrics", "thresholds", "params", "seed"} <= set(d)


def test_unknown_property():
    with pytest.raises(ValueError):
        property_suite("p8")


def test_p5_premise():
    check_p5_premise(0.1)
    with pytest.raises(ValueError):
        check_p5_premise(0.0)


def test_light_variance_small():
    out = light_variance(n=10**4, kappa=10, trials=300, seed=2)
    assert out["variance"] <= out["bound"] + 3 * out["variance_se"]


def test_extra_light_minority_small():
    out = extra_light_minority(n=10**4, kappa=40, phases=40, seed=2)
    assert out["phase_rounds"] == 4
    assert out["minority_freq"] >= 0.8
