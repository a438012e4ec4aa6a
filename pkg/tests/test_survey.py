import math

import numpy as np
import pytest

from ssbathy.geometry import PORT, STARBOARD, Pose
from ssbathy.heightfield import (
    HeightField,
    TerrainSpec,
    generate_terrain,
    sample_height,
    sample_height_masked,
)
from ssbathy.survey import (
    AltimeterReading,
    SurveyConfig,
    SurveyFormatError,
    _trace_arcs_general,
    plan_lawnmower,
    read_survey,
    simulate_altimeter,
    simulate_ping,
    simulate_survey,
    trace_arcs,
    write_survey,
)


def flat_field(z, size=41, cell=0.5, x0=0.0, y0=0.0):
    return HeightField(x0, y0, cell, np.full((size, size), float(z)))


def ray_march_visible(field, sensor, hit, exclude=0.02, step=0.01):
    """Independent occlusion oracle: march the sensor->hit segment densely.

    The exclusion window only has to absorb the transversal approach to the
    hit itself; real occluders can sit arbitrarily close behind a crest.
    """
    seg = hit - sensor
    length = np.linalg.norm(seg)
    n = max(int(length / step), 2)
    t = np.linspace(0.0, 1.0, n)
    pts = sensor[None, :] + t[:, None] * seg[None, :]
    keep = t * length < length - exclude
    z = sample_height_masked(field, pts[keep, 0], pts[keep, 1])
    return not np.any(z > pts[keep, 2] + 1e-6)


class TestFlatFloorTrace:
    def setup_method(self):
        self.alt = 10.0
        self.field = flat_field(-self.alt, size=121, cell=0.5)
        self.pose = Pose.from_yaw_pitch_roll([30.0, 30.0, 0.0], 0.0)
        self.cfg = SurveyConfig(max_range=24.0, bin_resolution=0.5)

    def test_grazing_matches_closed_form(self):
        geom = self.cfg.geometry(STARBOARD)
        trace = trace_arcs(self.field, self.pose, geom)
        r = geom.bin_ranges()
        expect = r >= self.alt
        assert np.array_equal(trace.has_crossing, expect)
        got = trace.grazing[expect]
        want = np.arcsin(np.clip(self.alt / r[expect], -1.0, 1.0))
        assert np.allclose(got, want, atol=1e-6)

    def test_square_cosine_intensity_at_twenty_meters(self):
        # altitude 10 at slant range 20 grazes at 30 deg and echoes at 1/4 gain
        geom = self.cfg.geometry(STARBOARD)
        ping = simulate_ping(self.field, self.pose, geom, self.cfg)
        r = geom.bin_ranges()
        i20 = int(np.argmin(np.abs(r - 20.0)))
        assert r[i20] == pytest.approx(20.0)
        assert ping.intensity[i20] == pytest.approx(0.25 * self.cfg.gain, abs=1e-9)
        assert ping.valid[i20]

    def test_intensity_decreases_with_range_in_gate(self):
        geom = self.cfg.geometry(PORT)
        ping = simulate_ping(self.field, self.pose, geom, self.cfg)
        vals = ping.intensity[ping.valid]
        assert len(vals) > 10
        assert np.all(np.diff(vals) < 0)

    def test_water_column_bins_sit_at_noise_floor(self):
        geom = self.cfg.geometry(STARBOARD)
        ping = simulate_ping(self.field, self.pose, geom, self.cfg)
        r = geom.bin_ranges()
        water = r < self.alt
        assert np.all(~ping.valid[water])
        assert np.allclose(
            ping.intensity[water], self.cfg.noise_floor * self.cfg.gain
        )

    def test_gate_flags_match_grazing_window(self):
        geom = self.cfg.geometry(STARBOARD)
        trace = trace_arcs(self.field, self.pose, geom)
        r = geom.bin_ranges()
        g = np.arcsin(np.clip(self.alt / r, 0.0, 1.0))
        want = (r >= self.alt) & (g >= geom.grazing_min) & (g <= geom.grazing_max)
        assert np.array_equal(trace.in_gate, want)

    def test_hits_lie_on_the_surface_at_slant_range(self):
        geom = self.cfg.geometry(PORT)
        trace = trace_arcs(self.field, self.pose, geom)
        idx = np.nonzero(trace.has_crossing)[0]
        hit = trace.hit[idx]
        assert np.allclose(hit[:, 2], -self.alt, atol=1e-6)
        d = np.linalg.norm(hit - self.pose.position, axis=1)
        assert np.allclose(d, trace.ranges[idx], atol=1e-6)
        # port side sweeps negative body-lateral, here world -y
        assert np.all(hit[:, 1] <= self.pose.position[1] + 1e-9)

    def test_first_lit_bin_sits_at_the_altitude(self):
        # off-grid altitude keeps the first return inside a fractional bin
        alt = 11.3
        field = flat_field(-alt, size=121, cell=0.5)
        geom = self.cfg.geometry(STARBOARD)
        ping = simulate_ping(field, self.pose, geom, self.cfg)
        r = geom.bin_ranges()
        lit = ping.intensity > 3 * self.cfg.noise_floor * self.cfg.gain
        first = int(np.argmax(lit))
        assert lit[first]
        assert abs(r[first] - alt) <= self.cfg.bin_resolution


class TestShadowing:
    def build_wall_scene(self):
        # flat floor at -12 with a 6 m wall ridge crossing the starboard swath
        size, cell = 81, 0.5
        h = np.full((size, size), -12.0)
        iy0 = int(round(6.0 / cell))
        iy1 = int(round(6.5 / cell))
        h[iy0 : iy1 + 1, :] = -6.0
        field = HeightField(0.0, 0.0, cell, h)
        pose = Pose.from_yaw_pitch_roll([20.0, 2.0, 0.0], 0.0)
        cfg = SurveyConfig(max_range=20.0, bin_resolution=0.5)
        return field, pose, cfg

    def test_wall_casts_a_reacquired_shadow_band(self):
        field, pose, cfg = self.build_wall_scene()
        geom = cfg.geometry(STARBOARD)
        trace = trace_arcs(field, pose, geom)
        ping = simulate_ping(field, pose, geom, cfg)
        r = geom.bin_ranges()
        # floor behind the wall is hidden out to where the crest sight line
        # regains the floor (lateral offset 8 m, slant range ~14.4)
        for rq in (13.5, 14.0):
            i = int(np.argmin(np.abs(r - rq)))
            assert trace.has_crossing[i]
            assert not trace.visible[i]
            assert not ping.valid[i]
            assert ping.intensity[i] == pytest.approx(cfg.noise_floor * cfg.gain)
        for rq in (15.0, 16.0, 17.0):
            i = int(np.argmin(np.abs(r - rq)))
            assert trace.visible[i]
            assert ping.valid[i]

    def test_visibility_agrees_with_ray_march_oracle(self):
        field, pose, cfg = self.build_wall_scene()
        for side in (STARBOARD, PORT):
            geom = cfg.geometry(side)
            trace = trace_arcs(field, pose, geom)
            for i in np.nonzero(trace.has_crossing)[0]:
                want = ray_march_visible(field, pose.position, trace.hit[i])
                assert want == bool(trace.visible[i]), f"{side} bin {i}"
            if side == STARBOARD:  # the wall only crosses the starboard swath
                assert np.any(~trace.visible[trace.has_crossing])

    def test_smooth_terrain_is_fully_visible(self):
        spec = TerrainSpec(
            nx=81, ny=81, cell=0.5, base_depth=12.0,
            hills=[(20.0, 20.0, 8.0, 1.5), (12.0, 28.0, 6.0, 1.0)],
            rock_count=6, seed=5,
        )
        field = generate_terrain(spec)
        pose = Pose.from_yaw_pitch_roll([20.0, 20.0, 0.0], 0.7)
        cfg = SurveyConfig(max_range=18.0, bin_resolution=0.5)
        for side in (STARBOARD, PORT):
            trace = trace_arcs(field, pose, cfg.geometry(side))
            idx = np.nonzero(trace.has_crossing)[0]
            assert len(idx) > 10
            for i in idx:
                assert ray_march_visible(field, pose.position, trace.hit[i]) == bool(
                    trace.visible[i]
                )


class TestGeneralAttitudePath:
    def test_general_path_matches_level_path(self):
        spec = TerrainSpec(
            nx=81, ny=81, cell=0.5, base_depth=11.0,
            hills=[(18.0, 22.0, 7.0, 1.2)], rock_count=4, seed=11,
        )
        field = generate_terrain(spec)
        pose = Pose.from_yaw_pitch_roll([20.0, 18.0, 0.0], 1.1)
        cfg = SurveyConfig(max_range=20.0, bin_resolution=0.5)
        for side in (STARBOARD, PORT):
            geom = cfg.geometry(side)
            level = trace_arcs(field, pose, geom)
            general = _trace_arcs_general(field, pose, geom, pose.rotation())
            assert np.array_equal(level.has_crossing, general.has_crossing)
            m = level.has_crossing
            assert np.allclose(level.grazing[m], general.grazing[m], atol=1e-5)
            assert np.allclose(level.hit[m], general.hit[m], atol=1e-4)
            assert np.array_equal(level.in_gate, general.in_gate)

    def test_pitched_pose_hits_stay_on_surface(self):
        field = flat_field(-10.0, size=121, cell=0.5)
        pose = Pose.from_yaw_pitch_roll(
            [30.0, 30.0, 0.0], 0.4, pitch=math.radians(4.0), roll=math.radians(-3.0)
        )
        cfg = SurveyConfig(max_range=22.0, bin_resolution=0.5)
        geom = cfg.geometry(STARBOARD)
        trace = trace_arcs(field, pose, geom)
        idx = np.nonzero(trace.has_crossing)[0]
        assert len(idx) > 5
        hit = trace.hit[idx]
        z = sample_height(field, hit[:, 0], hit[:, 1])
        assert np.allclose(hit[:, 2], z, atol=1e-6)
        d = np.linalg.norm(hit - pose.position, axis=1)
        assert np.allclose(d, trace.ranges[idx], atol=1e-6)

    def test_roll_rotates_the_sweep_origin_with_the_body(self):
        # same world crossings, but grazing is measured in the body frame,
        # so an 8 degree roll shifts every starboard angle by exactly 8 deg
        field = flat_field(-10.0, size=121, cell=0.5)
        roll = math.radians(8.0)
        level = Pose.from_yaw_pitch_roll([30.0, 30.0, 0.0], 0.0)
        rolled = Pose.from_yaw_pitch_roll([30.0, 30.0, 0.0], 0.0, roll=roll)
        cfg = SurveyConfig(max_range=22.0, bin_resolution=0.5)
        geom = cfg.geometry(STARBOARD)
        t0 = trace_arcs(field, level, geom)
        t1 = trace_arcs(field, rolled, geom)
        m = t0.has_crossing & t1.has_crossing
        assert np.count_nonzero(m) > 10
        assert np.allclose(t1.grazing[m] - t0.grazing[m], roll, atol=1e-5)
        assert np.allclose(t0.hit[m], t1.hit[m], atol=1e-4)


class TestCoverageEdges:
    def test_swath_leaving_the_grid_goes_invalid(self):
        field = flat_field(-10.0, size=41, cell=0.5)  # 20 m square
        pose = Pose.from_yaw_pitch_roll([10.0, 18.0, 0.0], 0.0)  # 2 m from north edge
        cfg = SurveyConfig(max_range=20.0, bin_resolution=0.5)
        geom = cfg.geometry(STARBOARD)  # sweeps toward +y, off the grid
        trace = trace_arcs(field, pose, geom)
        r = geom.bin_ranges()
        # ground range beyond 2 m leaves the grid: only r <= sqrt(100+4)
        reachable = trace.has_crossing
        assert np.all(r[reachable] <= math.sqrt(104.0) + 0.5)
        assert not np.all(reachable[r >= 10.0])

    def test_altimeter_reading_and_off_grid_none(self):
        field = flat_field(-7.5, size=41, cell=0.5)
        cfg = SurveyConfig()
        on = simulate_altimeter(field, Pose.from_yaw_pitch_roll([4.0, 5.0, 0.0], 0.3), cfg)
        assert on is not None
        assert on.point == pytest.approx([4.0, 5.0, -7.5])
        off = simulate_altimeter(field, Pose.from_yaw_pitch_roll([40.0, 5.0, 0.0], 0.3), cfg)
        assert off is None


class TestPlanLawnmower:
    def test_line_count_and_offsets(self):
        cfg = SurveyConfig(line_spacing=25.0, ping_spacing=10.0, crossing=False)
        lines = plan_lawnmower(cfg, (0.0, 100.0, 0.0, 100.0))
        assert len(lines) == 4
        ys = [line[0].position[1] for line in lines]
        assert ys == pytest.approx([12.5, 37.5, 62.5, 87.5])

    def test_boustrophedon_alternates_direction(self):
        cfg = SurveyConfig(line_spacing=25.0, ping_spacing=10.0, crossing=False)
        lines = plan_lawnmower(cfg, (0.0, 100.0, 0.0, 100.0))
        d0 = lines[0][1].position[0] - lines[0][0].position[0]
        d1 = lines[1][1].position[0] - lines[1][0].position[0]
        assert d0 > 0 > d1
        # yaw flips by pi on the return leg
        r0 = lines[0][0].rotation()
        r1 = lines[1][0].rotation()
        assert r0[0, 0] == pytest.approx(1.0)
        assert r1[0, 0] == pytest.approx(-1.0)

    def test_crossing_set_is_perpendicular_and_split(self):
        cfg = SurveyConfig(
            line_spacing=10.0, ping_spacing=5.0, crossing=True, num_lines=6
        )
        lines = plan_lawnmower(cfg, (0.0, 60.0, 0.0, 60.0))
        assert len(lines) == 6
        first = lines[0]
        last = lines[-1]
        v_first = first[1].position[:2] - first[0].position[:2]
        v_last = last[1].position[:2] - last[0].position[:2]
        assert abs(np.dot(v_first, v_last)) < 1e-9

    def test_poses_stay_inside_extent_at_sensor_depth(self):
        cfg = SurveyConfig(line_spacing=7.0, ping_spacing=1.5, sensor_z=-1.0)
        extent = (2.0, 50.0, -3.0, 41.0)
        for line in plan_lawnmower(cfg, extent):
            for pose in line:
                x, y, z = pose.position
                assert extent[0] <= x <= extent[1]
                assert extent[2] <= y <= extent[3]
                assert z == -1.0


class TestSurveySimulation:
    def make_field(self):
        spec = TerrainSpec(
            nx=65, ny=65, cell=0.5, base_depth=10.0,
            hills=[(16.0, 16.0, 6.0, 1.0)], rock_count=4, seed=3,
        )
        return generate_terrain(spec)

    def test_structure_and_determinism(self):
        field = self.make_field()
        cfg = SurveyConfig(
            line_spacing=16.0, ping_spacing=4.0, max_range=16.0,
            bin_resolution=0.5, intensity_noise=0.05, altimeter_noise=0.02,
            seed=42,
        )
        a = simulate_survey(field, cfg)
        b = simulate_survey(field, cfg)
        assert len(a) == len(b) > 0
        for la, lb in zip(a, b):
            assert len(la.pings) == len(lb.pings)
            for pa, pb in zip(la.pings, lb.pings):
                assert np.array_equal(pa.intensity, pb.intensity)
                assert np.array_equal(pa.valid, pb.valid)
            for aa, ab in zip(la.altimeter, lb.altimeter):
                assert np.array_equal(aa.point, ab.point)
        # two sides per pose, altimeter per on-grid pose
        line = a[0]
        assert len(line.pings) == 2 * (line.pings[-1].index + 1)
        sides = {p.geom.side for p in line.pings}
        assert sides == {PORT, STARBOARD}

    def test_seed_changes_noise(self):
        field = self.make_field()
        base = dict(
            line_spacing=16.0, ping_spacing=4.0, max_range=16.0,
            bin_resolution=0.5, intensity_noise=0.05,
        )
        a = simulate_survey(field, SurveyConfig(seed=1, **base))
        b = simulate_survey(field, SurveyConfig(seed=2, **base))
        assert not np.array_equal(a[0].pings[0].intensity, b[0].pings[0].intensity)
        # validity is geometric, independent of the draw
        assert np.array_equal(a[0].pings[0].valid, b[0].pings[0].valid)

    def test_noiseless_needs_no_generator(self):
        field = self.make_field()
        cfg = SurveyConfig(max_range=16.0, bin_resolution=0.5)
        pose = Pose.from_yaw_pitch_roll([16.0, 16.0, 0.0], 0.0)
        ping = simulate_ping(field, pose, cfg.geometry(PORT), cfg, rng=None)
        assert np.any(ping.valid)


class TestSurveyFileRoundTrip:
    def make_survey(self):
        field = generate_terrain(
            TerrainSpec(nx=49, ny=49, cell=0.5, base_depth=9.0,
                        hills=[(12.0, 12.0, 5.0, 0.8)], seed=2)
        )
        cfg = SurveyConfig(
            line_spacing=12.0, ping_spacing=6.0, max_range=14.0,
            bin_resolution=0.5, intensity_noise=0.03, seed=9,
        )
        return simulate_survey(field, cfg), cfg

    def test_round_trip_preserves_everything(self, tmp_path):
        survey, cfg = self.make_survey()
        path = tmp_path / "survey.txt"
        write_survey(survey, path)
        back = read_survey(path, tilt=cfg.tilt, aperture=cfg.aperture)
        assert len(back) == len(survey)
        for la, lb in zip(survey, back):
            assert len(la.pings) == len(lb.pings)
            assert len(la.altimeter) == len(lb.altimeter)
            for pa, pb in zip(la.pings, lb.pings):
                assert pa.index == pb.index
                assert pa.geom.side == pb.geom.side
                assert pa.geom.nbins == pb.geom.nbins
                assert np.array_equal(pa.intensity, pb.intensity)
                assert np.array_equal(pa.valid, pb.valid)
                assert np.array_equal(pa.pose.position, pb.pose.position)
                assert np.allclose(pa.pose.quaternion, pb.pose.quaternion, atol=0)
            for aa, ab in zip(la.altimeter, lb.altimeter):
                assert np.array_equal(aa.point, ab.point)

    def test_line_breaks_from_index_reset(self, tmp_path):
        survey, cfg = self.make_survey()
        path = tmp_path / "survey.txt"
        write_survey(survey, path)
        back = read_survey(path)
        assert [len(l.pings) for l in back] == [len(l.pings) for l in survey]

    def test_malformed_records_report_line_numbers(self, tmp_path):
        good = (
            "PING 0 0 0 0 1 0 0 0 starboard 0.5 0.5 2\n"
            "0.1 0.2\n"
            "1 0\n"
        )
        cases = [
            ("PING 0 0 0\n", "line 1"),
            (good + "PING 1 0 0 0 1 0 0 0 starboard 0.5 0.5 2\n0.1 bad\n1 0\n", "line 5"),
            (good + "ALT 1 2\n", "line 4"),
            (good.replace("1 0\n", "1 2\n"), "line 3"),
            ("BOGUS 1 2 3\n", "line 1"),
            ("PING 0 0 0 0 1 0 0 0 up 0.5 0.5 2\n0.1 0.2\n1 0\n", "line 1"),
        ]
        for text, frag in cases:
            p = tmp_path / "bad.txt"
            p.write_text(text)
            with pytest.raises(SurveyFormatError) as err:
                read_survey(p)
            assert frag in str(err.value)

    def test_truncated_ping_block(self, tmp_path):
        p = tmp_path / "trunc.txt"
        p.write_text("PING 0 0 0 0 1 0 0 0 port 0.5 0.5 4\n0.1 0.2 0.3 0.4\n")
        with pytest.raises(SurveyFormatError):
            read_survey(p)

    def test_altimeter_only_interleave(self, tmp_path):
        p = tmp_path / "alt.txt"
        p.write_text("ALT 1 2 -9\nALT 3 4 -8.5\n")
        back = read_survey(p)
        assert len(back) == 1
        assert len(back[0].altimeter) == 2
        assert isinstance(back[0].altimeter[0], AltimeterReading)
        assert back[0].altimeter[1].point == pytest.approx([3.0, 4.0, -8.5])
