import math

import numpy as np
import pytest

from ssbathy.draping import (
    DrapedLine,
    DrapedPing,
    detect_first_bottom_return,
    drape_ping,
    drape_survey,
    estimate_altitude,
    flat_prior_grazing,
    make_training_windows,
    predict_intensity,
    read_draped,
    write_draped,
)
from ssbathy.geometry import PORT, STARBOARD, Pose
from ssbathy.heightfield import HeightField, TerrainSpec, generate_terrain
from ssbathy.survey import Ping, SurveyConfig, SurveyFormatError, simulate_ping, simulate_survey


def ramp_field(m, z0=-10.0, y_ref=30.0, size=121, cell=0.5):
    """Planar floor z = z0 + m * (y - y_ref), depth z0 under the track."""
    y = np.arange(size) * cell
    h = np.broadcast_to(z0 + m * (y[:, None] - y_ref), (size, size)).copy()
    return HeightField(0.0, 0.0, cell, h)


def hilly_field(seed=7):
    spec = TerrainSpec(
        nx=81, ny=81, cell=0.5, base_depth=10.0,
        hills=[(20.0, 20.0, 7.0, 1.3), (10.0, 26.0, 5.0, 0.9)],
        rock_count=5, seed=seed,
    )
    return generate_terrain(spec)


class TestDrapeClosure:
    def test_forward_prediction_reproduces_noiseless_intensity(self):
        field = hilly_field()
        cfg = SurveyConfig(
            line_spacing=14.0, ping_spacing=3.0, max_range=16.0,
            bin_resolution=0.5, num_lines=4,
        )
        survey = simulate_survey(field, cfg)
        checked = 0
        for line in survey:
            for ping in line.pings:
                draped = drape_ping(ping, field)
                pred = predict_intensity(draped, cfg.gain)
                m = draped.valid
                assert np.allclose(pred[m], ping.intensity[m], atol=1e-9)
                checked += int(np.count_nonzero(m))
        assert checked > 500

    def test_draped_validity_never_exceeds_recorded(self):
        field = hilly_field(seed=9)
        cfg = SurveyConfig(max_range=16.0, bin_resolution=0.5)
        pose = Pose.from_yaw_pitch_roll([20.0, 20.0, 0.0], 0.3)
        ping = simulate_ping(field, pose, cfg.geometry(STARBOARD), cfg)
        draped = drape_ping(ping, field)
        assert not np.any(draped.valid & ~ping.valid)
        assert np.all(np.isnan(draped.hit[~draped.valid]))
        assert np.all(np.isfinite(draped.hit[draped.valid]))


class TestRampNormals:
    @pytest.mark.parametrize("m", [0.15, 0.3])
    def test_lateral_slope_projects_to_minus_sine(self, m):
        # floor rising away from an east-going track on starboard
        field = ramp_field(m)
        pose = Pose.from_yaw_pitch_roll([30.0, 30.0, 0.0], 0.0)
        cfg = SurveyConfig(max_range=18.0, bin_resolution=0.5)
        beta = math.atan(m)
        for side, want in ((STARBOARD, -math.sin(beta)), (PORT, -math.sin(beta))):
            ping = simulate_ping(field, pose, cfg.geometry(side), cfg)
            draped = drape_ping(ping, field)
            got = draped.normal2d[draped.valid, 0]
            assert len(got) > 10
            # the body frame is side-agnostic: one world normal, one lateral entry
            assert np.allclose(got, want, atol=1e-9)

    def test_side_local_targets_mirror(self):
        # rising toward +y: starboard strip rises away (-), port strip falls (+)
        m = 0.2
        field = ramp_field(m)
        pose = Pose.from_yaw_pitch_roll([30.0, 30.0, 0.0], 0.0)
        cfg = SurveyConfig(max_range=18.0, bin_resolution=0.5)
        beta = math.atan(m)
        line = DrapedLine(pings=[], altimeter=[])
        for side in (STARBOARD, PORT):
            ping = simulate_ping(field, pose, cfg.geometry(side), cfg)
            line.pings.append(drape_ping(ping, field))
        # one ping per side; window height 1 keeps the fabricated line tiny
        wins = make_training_windows([line], pings_per_window=1, overlap=0.0, augment=False)
        by_side = {w.side: w for w in wins}
        s = by_side[STARBOARD]
        p = by_side[PORT]
        assert np.allclose(s.target[s.mask], -math.sin(beta), atol=1e-9)
        assert np.allclose(p.target[p.mask], math.sin(beta), atol=1e-9)


class TestFirstBottomReturn:
    def make_ping(self, alt, max_range=16.0, noise=0.0, seed=0):
        field = HeightField(0.0, 0.0, 0.5, np.full((121, 121), -alt))
        cfg = SurveyConfig(max_range=max_range, bin_resolution=0.5, intensity_noise=noise)
        pose = Pose.from_yaw_pitch_roll([30.0, 30.0, 0.0], 0.0)
        rng = np.random.default_rng(seed) if noise else None
        return simulate_ping(field, pose, cfg.geometry(STARBOARD), cfg, rng), cfg

    def test_detection_sits_at_the_altitude(self):
        ping, cfg = self.make_ping(9.3)
        alt = estimate_altitude(ping)
        assert abs(alt - 9.3) <= cfg.bin_resolution

    def test_detection_survives_noise(self):
        for seed in range(5):
            ping, cfg = self.make_ping(9.3, noise=0.05, seed=seed)
            alt = estimate_altitude(ping)
            assert abs(alt - 9.3) <= 2 * cfg.bin_resolution

    def test_all_water_ping_raises(self):
        ping, _ = self.make_ping(40.0, max_range=14.0)
        with pytest.raises(ValueError, match="no bottom return"):
            detect_first_bottom_return(ping)

    def test_zero_threshold_takes_first_positive_bin(self):
        ping, _ = self.make_ping(9.3)
        assert detect_first_bottom_return(ping, threshold=0.0) == 0

    def test_parameter_validation(self):
        ping, _ = self.make_ping(9.3)
        with pytest.raises(ValueError):
            detect_first_bottom_return(ping, noise_bins=0)
        with pytest.raises(ValueError):
            detect_first_bottom_return(ping, threshold=-1.0)

    def test_flat_prior_grazing_values(self):
        r = np.array([5.0, 10.0, 14.14213562373095, 20.0])
        g = flat_prior_grazing(r, 10.0)
        assert g[0] == pytest.approx(math.pi / 2)  # inside the altitude
        assert g[1] == pytest.approx(math.pi / 2)
        assert g[2] == pytest.approx(math.pi / 4)
        assert g[3] == pytest.approx(math.asin(0.5))


def fabricate_line(n_pings, nbins=24, line_index=0, seed=0):
    """Synthetic draped line with a detectable bottom return at bin 8."""
    rng = np.random.default_rng(seed)
    cfg = SurveyConfig(max_range=nbins * 0.5, bin_resolution=0.5)
    line = DrapedLine(pings=[], altimeter=[])
    for k in range(n_pings):
        pose = Pose.from_yaw_pitch_roll([float(k), 0.0, 0.0], 0.0)
        for side in (STARBOARD, PORT):
            geom = cfg.geometry(side)
            nb = geom.nbins
            intensity = np.full(nb, 0.01)
            intensity[8:] = 0.4 + 0.1 * rng.random(nb - 8)
            valid = np.zeros(nb, dtype=bool)
            valid[9:] = True
            n2d = np.full((nb, 2), np.nan)
            n2d[valid, 0] = rng.uniform(-0.3, 0.3, np.count_nonzero(valid))
            n2d[valid, 1] = np.sqrt(1.0 - n2d[valid, 0] ** 2)
            ping = Ping(index=k, pose=pose, geom=geom, intensity=intensity, valid=valid)
            hit = np.full((nb, 3), np.nan)
            hit[valid] = rng.normal(size=(np.count_nonzero(valid), 3))
            grazing = np.full(nb, np.nan)
            grazing[valid] = rng.uniform(0.3, 1.2, np.count_nonzero(valid))
            line.pings.append(
                DrapedPing(ping=ping, hit=hit, normal2d=n2d, grazing=grazing, valid=valid)
            )
    return line


class TestTrainingWindows:
    def test_reference_window_count(self):
        # 256 pings, height 64, 75% overlap: stride 16, 13 windows per side
        line = fabricate_line(256)
        wins = make_training_windows([line], pings_per_window=64, overlap=0.75, augment=False)
        per_side = {}
        for w in wins:
            per_side[w.side] = per_side.get(w.side, 0) + 1
        assert per_side == {PORT: 13, STARBOARD: 13}
        assert all(not w.flipped for w in wins)

    def test_augmentation_doubles_and_flips(self):
        line = fabricate_line(64)
        plain = make_training_windows([line], pings_per_window=32, augment=False)
        both = make_training_windows([line], pings_per_window=32, augment=True)
        assert len(both) == 2 * len(plain)
        originals = [w for w in both if not w.flipped]
        flipped = [w for w in both if w.flipped]
        for o, f in zip(originals, flipped):
            assert f.side != o.side
            assert np.array_equal(f.intensity, o.intensity[::-1])
            assert np.array_equal(f.target, o.target[::-1])
            assert np.array_equal(f.mask, o.mask[::-1])
            assert np.array_equal(f.grazing_prior, o.grazing_prior[::-1])

    def test_stride_arithmetic(self):
        line = fabricate_line(85)
        wins = make_training_windows([line], pings_per_window=32, overlap=0.75, augment=False)
        starts = sorted(w.start for w in wins if w.side == PORT)
        assert starts == [0, 8, 16, 24, 32, 40, 48]

    def test_short_line_warns_and_skips(self):
        line = fabricate_line(20)
        with pytest.warns(UserWarning, match="shorter than window"):
            wins = make_training_windows([line], pings_per_window=32)
        assert wins == []

    def test_mask_excludes_invalid_and_fbr_failures(self):
        line = fabricate_line(40)
        # break the bottom return of one ping: everything at the floor level
        broken = line.pings[6]
        broken.ping.intensity[:] = 0.01
        wins = make_training_windows([line], pings_per_window=40, augment=False)
        w = next(w for w in wins if w.side == broken.geom.side)
        assert not np.any(w.mask[3])  # ping 6 is row 3 of its side
        assert np.all(w.target[~w.mask] == 0.0)
        assert np.all(np.isfinite(w.grazing_prior))

    def test_window_parameters_validated(self):
        line = fabricate_line(40)
        with pytest.raises(ValueError):
            make_training_windows([line], pings_per_window=0)
        with pytest.raises(ValueError):
            make_training_windows([line], overlap=1.0)


class TestDrapedRoundTrip:
    def make_draped(self):
        field = hilly_field(seed=4)
        cfg = SurveyConfig(
            line_spacing=14.0, ping_spacing=5.0, max_range=14.0,
            bin_resolution=0.5, num_lines=3,
        )
        return drape_survey(simulate_survey(field, cfg), field), cfg

    def test_round_trip(self, tmp_path):
        draped, cfg = self.make_draped()
        path = tmp_path / "draped.txt"
        write_draped(draped, path)
        back = read_draped(path, tilt=cfg.tilt, aperture=cfg.aperture)
        assert len(back) == len(draped)
        for la, lb in zip(draped, back):
            assert len(la.pings) == len(lb.pings)
            assert len(la.altimeter) == len(lb.altimeter)
            for a, b in zip(la.pings, lb.pings):
                assert np.array_equal(a.valid, b.valid)
                assert np.allclose(a.hit, b.hit, atol=0, equal_nan=True)
                assert np.allclose(a.normal2d, b.normal2d, atol=0, equal_nan=True)
                assert np.allclose(a.grazing, b.grazing, atol=1e-12, equal_nan=True)
                assert np.array_equal(a.intensity, b.intensity)

    def test_missing_extension_rows_raise(self, tmp_path):
        draped, _ = self.make_draped()
        path = tmp_path / "draped.txt"
        write_draped(draped, path)
        rows = path.read_text().splitlines()
        bad = [r for r in rows if not r.startswith("hit")]
        p2 = tmp_path / "broken.txt"
        p2.write_text("\n".join(bad) + "\n")
        with pytest.raises(SurveyFormatError, match="expected hit row"):
            read_draped(p2)
