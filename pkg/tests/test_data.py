import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palstm.data import (
    CSV_HEADER,
    FaultSpec,
    FleetConfig,
    SchemaError,
    TelemetryStream,
    generate_fleet,
    inject_fault,
    load_csv,
    load_labels,
    make_windows,
    stack_windows,
    write_csv,
    write_labels,
)


def _stream(n, label=None):
    k = np.arange(n, dtype=float)
    return TelemetryStream("V0", k * 10, 300 + k, k, 50 + 0 * k, 25 + 0 * k, 1000 + k, label)


class TestGenerator:
    def test_same_seed_identical(self):
        a = generate_fleet(FleetConfig(n_vehicles=3, stream_length=200, seed=4))
        b = generate_fleet(FleetConfig(n_vehicles=3, stream_length=200, seed=4))
        assert all(x.equals(y) for x, y in zip(a, b))

    def test_seed_changes_output(self):
        a = generate_fleet(FleetConfig(n_vehicles=1, stream_length=50, seed=1))[0]
        b = generate_fleet(FleetConfig(n_vehicles=1, stream_length=50, seed=2))[0]
        assert not a.equals(b)

    def test_mileage_non_decreasing(self):
        for s in generate_fleet(FleetConfig(n_vehicles=5, stream_length=500, seed=0)):
            assert np.all(np.diff(s.mileage) >= 0)
            assert np.all(s.label == 0)

    def test_soc_stays_in_range(self):
        for s in generate_fleet(FleetConfig(n_vehicles=3, stream_length=3000, seed=0)):
            assert s.soc.min() > 15 and s.soc.max() < 95

    def test_aging_drop_matches_regression(self):
        cfg = FleetConfig(n_vehicles=30, stream_length=1500, seed=3, gamma=0.3)
        fleet = generate_fleet(cfg)
        I = np.concatenate([s.current for s in fleet])
        soc = np.concatenate([s.soc for s in fleet])
        m = np.concatenate([s.mileage for s in fleet]) / cfg.mileage_max
        v = np.concatenate([s.voltage for s in fleet])
        # voltage - v0 - slope*soc = -I*r0 - I*r0*gamma*m + noise
        A = np.column_stack([np.ones_like(I), I, I * m])
        coef, *_ = np.linalg.lstsq(A, v - cfg.v0 - cfg.ocv_slope * soc, rcond=None)
        assert coef[1] == pytest.approx(-cfg.r0, rel=0.05)
        assert coef[2] == pytest.approx(-cfg.r0 * cfg.gamma, rel=0.1)

    def test_no_aging_without_gamma(self):
        cfg = FleetConfig(n_vehicles=30, stream_length=1500, seed=3, gamma=0.0)
        fleet = generate_fleet(cfg)
        I = np.concatenate([s.current for s in fleet])
        m = np.concatenate([s.mileage for s in fleet]) / cfg.mileage_max
        resid = np.concatenate([s.voltage - cfg.v0 - cfg.ocv_slope * s.soc for s in fleet])
        coef, *_ = np.linalg.lstsq(np.column_stack([np.ones_like(I), I, I * m]), resid, rcond=None)
        assert abs(coef[2]) < 0.1 * 0.3 * cfg.r0

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            FleetConfig(r0=0.0)


class TestFaults:
    def test_stuck_voltage(self):
        s = generate_fleet(FleetConfig(n_vehicles=1, stream_length=200, seed=0))[0]
        f = inject_fault(s, FaultSpec("stuck_voltage", 50, 40))
        assert np.var(f.voltage[50:90]) == 0.0
        np.testing.assert_array_equal(f.label[50:90], 1)
        assert f.label.sum() == 40
        assert s.label.sum() == 0

    def test_zero_offset_only_labels(self):
        s = _stream(30)
        f = inject_fault(s, FaultSpec("offset_drop", 5, 10, 0.0))
        np.testing.assert_array_equal(f.voltage, s.voltage)
        assert f.label.sum() == 10

    def test_offset_shift(self):
        s = generate_fleet(FleetConfig(n_vehicles=1, stream_length=200, seed=0))[0]
        f = inject_fault(s, FaultSpec("offset_drop", 20, 50, 3.5))
        assert np.mean(f.voltage[20:70]) - np.mean(s.voltage[20:70]) == pytest.approx(-3.5, abs=1e-9)

    def test_noise_burst_reproducible(self):
        s = _stream(60)
        a = inject_fault(s, FaultSpec("noise_burst", 0, 30, 1.0), np.random.default_rng(1))
        b = inject_fault(s, FaultSpec("noise_burst", 0, 30, 1.0), np.random.default_rng(1))
        np.testing.assert_array_equal(a.voltage, b.voltage)

    def test_span_checked(self):
        with pytest.raises(ValueError):
            inject_fault(_stream(10), FaultSpec("stuck_voltage", 5, 10))
        with pytest.raises(ValueError):
            FaultSpec("melt", 0, 1)


class TestWindows:
    def test_counts(self):
        assert len(make_windows(_stream(256), 256)) == 1
        assert len(make_windows(_stream(300), 256, stride=10)) == 5

    def test_mileage_is_last_step(self):
        w = make_windows(_stream(20), 8)[1]
        assert w.start == 8 and w.mileage == 1015.0
        assert w.values.shape == (8, 4)

    def test_short_stream(self):
        with pytest.raises(ValueError):
            make_windows(_stream(5), 8)

    @settings(max_examples=50)
    @given(st.integers(8, 60), st.integers(2, 8), st.integers(1, 6), st.data())
    def test_labels_match_scan(self, n, T, stride, data):
        label = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)))
        windows = make_windows(_stream(n, label), T, stride)
        assert len(windows) == (n - T) // stride + 1
        for w in windows:
            expected = 0
            for t in range(w.start, w.start + T):
                if label[t]:
                    expected = 1
            assert w.label == expected

    def test_stack(self):
        X, m, y = stack_windows(make_windows(_stream(32), 8))
        assert X.shape == (4, 8, 4) and m.shape == (4,) and y.shape == (4,)


class TestCsv:
    def test_round_trip(self):
        fleet = generate_fleet(FleetConfig(n_vehicles=3, stream_length=40, seed=5))
        buf = io.StringIO()
        write_csv(fleet, buf)
        loaded = load_csv(io.StringIO(buf.getvalue()))
        assert len(loaded) == 3
        assert all(a.equals(b) for a, b in zip(fleet, loaded))

    def test_header(self):
        buf = io.StringIO()
        write_csv([_stream(2)], buf)
        assert buf.getvalue().splitlines()[0] == ",".join(CSV_HEADER)

    def test_empty_data_section(self):
        assert load_csv(io.StringIO(",".join(CSV_HEADER) + "\n")) == []

    def test_malformed_row_reports_line(self):
        rows = [",".join(CSV_HEADER)] + [f"V1,{i},1,2,3,4,5" for i in range(15)] + ["V1,99,abc,2,3,4,5"]
        with pytest.raises(SchemaError, match="17"):
            load_csv(io.StringIO("\n".join(rows) + "\n"))

    def test_missing_column(self):
        with pytest.raises(SchemaError, match="mileage"):
            load_csv(io.StringIO("vehicle_id,timestamp,voltage,current,soc,temperature\n"))

    def test_sorts_by_timestamp_and_groups(self):
        text = ",".join(CSV_HEADER) + "\nB,2,1,1,1,1,1\nA,5,1,1,1,1,1\nB,1,1,1,1,1,1\n"
        streams = load_csv(io.StringIO(text))
        assert [s.vehicle_id for s in streams] == ["B", "A"]
        np.testing.assert_array_equal(streams[0].timestamp, [1.0, 2.0])

    def test_decreasing_mileage_warns(self):
        text = ",".join(CSV_HEADER) + "\nA,1,1,1,1,1,9\nA,2,1,1,1,1,3\n"
        with pytest.warns(UserWarning):
            load_csv(io.StringIO(text))

    def test_labels_round_trip(self):
        s = inject_fault(_stream(20), FaultSpec("stuck_voltage", 4, 6))
        buf = io.StringIO()
        write_labels([s], buf)
        clean = _stream(20)
        load_labels(io.StringIO(buf.getvalue()), [clean])
        np.testing.assert_array_equal(clean.label, s.label)

    def test_bad_label_value(self):
        with pytest.raises(SchemaError):
            load_labels(io.StringIO("vehicle_id,timestamp,label\nV0,0,2\n"), [_stream(3)])
