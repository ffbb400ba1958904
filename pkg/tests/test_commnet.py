import math

import numpy as np
import pytest

from clops.commnet import (
    Advisory,
    AdvisoryKind,
    Bsm,
    CommError,
    LogDistance,
    Rsu,
    UnitDisk,
    batch_deliver,
    deliver,
    disseminate_advisory,
    emit_bsm,
    emit_bsms,
    link_geo,
    mark_informed,
)
from clops.mobility import Vehicle, VehicleKind
from clops.netgraph import GeoPoint, haversine_km

from conftest import grid_graph

M_PER_DEG_LAT = 111126.0  # ~meters per degree of latitude on the 6367 km sphere


def pt_at_m(north_m: float, ref=GeoPoint(35.0, -85.0)) -> GeoPoint:
    return GeoPoint(ref.lat + north_m / M_PER_DEG_LAT, ref.lon)


def cv(vid, link, pos, speed=10.0):
    return Vehicle(vid, VehicleKind.CV, link, 0, pos, speed, (link,), 0, 1)


class TestEmit:
    def test_zero_cvs_empty(self):
        g = grid_graph(1, 2)
        assert emit_bsms([], g, 1.0) == []

    def test_one_bsm_per_cv_per_step(self):
        g = grid_graph(1, 2)
        cvs = [cv(i, "n00-n01", 10.0 * i) for i in range(10)]
        count = 0
        for frame in range(1, 601):  # 60 s at 10 Hz
            count += len(emit_bsms(cvs, g, frame / 10.0))
        assert count == 6000

    def test_position_interpolated_linearly(self):
        g = grid_graph(1, 2, spacing_km=1.0)
        l = g.links["n00-n01"]
        a, b = g.nodes[l.frm].pos, g.nodes[l.to].pos
        bsm = emit_bsm(cv(1, "n00-n01", l.length_m / 4.0), g, 0.5)
        assert bsm.pos.lat == pytest.approx(a.lat + 0.25 * (b.lat - a.lat), abs=1e-12)
        assert bsm.pos.lon == pytest.approx(a.lon + 0.25 * (b.lon - a.lon), abs=1e-12)

    def test_non_cv_rejected(self):
        g = grid_graph(1, 2)
        v = Vehicle(1, VehicleKind.NON_CV, "n00-n01", 0, 0.0, 0.0, ("n00-n01",), 0, 1)
        with pytest.raises(CommError):
            emit_bsm(v, g, 0.1)

    def test_heading_along_link(self):
        g = grid_graph(1, 2)  # west->east link
        bsm = emit_bsm(cv(1, "n00-n01", 5.0), g, 0.1)
        assert bsm.heading_deg == pytest.approx(90.0, abs=1.0)


class TestDeliver:
    def test_unit_disk_inside(self):
        b = Bsm(1, 0.1, pt_at_m(0), 10.0, 0.0)
        got = deliver(b, [("r", pt_at_m(150.0))], UnitDisk(300.0))
        assert got == {"r"}

    def test_unit_disk_outside(self):
        b = Bsm(1, 0.1, pt_at_m(0), 10.0, 0.0)
        got = deliver(b, [("r", pt_at_m(400.0))], UnitDisk(300.0))
        assert got == set()

    def test_sender_never_receives_itself(self):
        b = Bsm(1, 0.1, pt_at_m(0), 10.0, 0.0)
        assert deliver(b, [(1, pt_at_m(0))], UnitDisk(300.0)) == set()

    def test_unit_disk_symmetric(self):
        a, c = pt_at_m(0), pt_at_m(287.0)
        forward = deliver(Bsm(1, 0.1, a, 0, 0), [(2, c)], UnitDisk(300.0))
        backward = deliver(Bsm(2, 0.1, c, 0, 0), [(1, a)], UnitDisk(300.0))
        assert bool(forward) == bool(backward)

    def test_log_distance_cutoff_matches_inversion(self):
        # d0=10 m, n=2.5, margin 30 dB -> cutoff = 10 * 10^(30/25) = 158.489 m
        model = LogDistance(ref_range_m=10.0, exponent=2.5, threshold_db=-30.0)
        cutoff = 10.0 * 10.0 ** (30.0 / 25.0)
        assert model.cutoff_m() == pytest.approx(cutoff, rel=1e-12)
        b = Bsm(1, 0.1, pt_at_m(0), 0, 0)
        inside = deliver(b, [("r", pt_at_m(cutoff - 1.0))], model)
        outside = deliver(b, [("r", pt_at_m(cutoff + 1.0))], model)
        assert inside == {"r"} and outside == set()

    def test_fading_off_deterministic_and_order_free(self):
        model = LogDistance()
        b = Bsm(1, 0.1, pt_at_m(0), 0, 0)
        cands = [(f"r{i}", pt_at_m(20.0 * i)) for i in range(12)]
        a = deliver(b, cands, model, seed=1)
        c = deliver(b, list(reversed(cands)), model, seed=99)
        assert a == c

    def test_fading_changes_with_seed_but_reproducible(self):
        model = LogDistance(fading_sigma_db=6.0)
        b = Bsm(1, 0.1, pt_at_m(0), 0, 0)
        cands = [(f"r{i}", pt_at_m(120.0 + 7.0 * i)) for i in range(40)]
        one = deliver(b, cands, model, seed=5)
        two = deliver(b, cands, model, seed=5)
        assert one == two

    def test_batch_matches_scalar(self):
        model = UnitDisk(250.0)
        b = Bsm(3, 0.2, pt_at_m(10.0), 5.0, 0.0)
        cands = [(f"r{i}", pt_at_m(-300.0 + 45.0 * i)) for i in range(15)] + [(3, pt_at_m(0.0))]
        scalar = deliver(b, cands, model)
        ids = [rid for rid, _ in cands]
        lats = np.array([p.lat for _, p in cands])
        lons = np.array([p.lon for _, p in cands])
        vector = set(batch_deliver(b, ids, lats, lons, model))
        assert vector == scalar

    def test_batch_matches_scalar_log_distance(self):
        model = LogDistance(ref_range_m=10.0, exponent=2.5, threshold_db=-30.0)
        b = Bsm(3, 0.2, pt_at_m(0.0), 5.0, 0.0)
        cands = [(f"r{i}", pt_at_m(31.0 * i + 3.0)) for i in range(12)]
        scalar = deliver(b, cands, model)
        ids = [rid for rid, _ in cands]
        lats = np.array([p.lat for _, p in cands])
        lons = np.array([p.lon for _, p in cands])
        assert set(batch_deliver(b, ids, lats, lons, model)) == scalar


def make_advisory(**kw):
    args = dict(aid="adv1", rsu_node="n00", links=("n00-n01",),
                kind=AdvisoryKind.DETOUR, valid_from_s=1.0, valid_to_s=30.0)
    args.update(kw)
    return Advisory(**args)


class TestAdvisories:
    def test_empty_links_rejected(self):
        with pytest.raises(CommError):
            make_advisory(links=())

    def test_bad_interval_rejected(self):
        with pytest.raises(CommError):
            make_advisory(valid_from_s=5.0, valid_to_s=5.0)

    def test_no_cv_in_range_empty(self):
        adv = make_advisory()
        rsu = Rsu("rsu:n00", "n00", pt_at_m(0))
        cvs = [(7, VehicleKind.CV, pt_at_m(5000.0))]
        got = disseminate_advisory(adv, [rsu], cvs, UnitDisk(300.0), 1.0)
        assert got == frozenset()

    def test_parked_cv_informed_at_first_valid_step(self):
        adv = make_advisory()
        rsu = Rsu("rsu:n00", "n00", pt_at_m(0))
        cvs = [(7, VehicleKind.CV, pt_at_m(20.0))]
        before = disseminate_advisory(adv, [rsu], cvs, UnitDisk(300.0), 0.9)
        at = disseminate_advisory(adv, [rsu], cvs, UnitDisk(300.0), 1.0)
        assert before == frozenset() and at == frozenset({7})

    def test_informed_set_monotone(self):
        adv = make_advisory()
        rsu = Rsu("rsu:n00", "n00", pt_at_m(0))
        informed = frozenset()
        seen = set()
        for frame in range(10, 100):
            t = frame / 10.0
            # a CV drives past the RSU at 20 m/s starting 400 m out
            pos = pt_at_m(-400.0 + 20.0 * (t - 1.0))
            informed = disseminate_advisory(
                adv, [rsu], [(7, VehicleKind.CV, pos)], UnitDisk(300.0), t, informed
            )
            assert seen <= set(informed)
            seen = set(informed)
        assert 7 in seen  # passed within range during the valid window

    def test_non_cv_never_informed(self):
        adv = make_advisory()
        rsu = Rsu("rsu:n00", "n00", pt_at_m(0))
        cvs = [(7, VehicleKind.NON_CV, pt_at_m(5.0))]
        assert disseminate_advisory(adv, [rsu], cvs, UnitDisk(300.0), 1.0) == frozenset()


class TestMarkInformed:
    def test_non_cv_false(self):
        v = Vehicle(1, VehicleKind.NON_CV, "l", 0, 0.0, 0.0, ("l",), 0, 1)
        assert mark_informed(v, make_advisory()) is False

    def test_idempotent_single_trigger(self):
        v = cv(1, "l", 0.0)
        adv = make_advisory()
        assert mark_informed(v, adv) is True
        assert mark_informed(v, adv) is False
        assert v.informed == {"adv1"}
