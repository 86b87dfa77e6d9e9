use std::collections::BTreeSet;

use brokersim::cli::{self, SweepPoint, SweepRow, SWEEP_CSV_COLUMNS};
use brokersim::scenario::builtin_scenario;
use brokersim::sim::{run_simulation, CsvSink, HashSink, RunConfig};
use brokersim::telemetry;
use serde_json::Value;

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn short() -> RunConfig {
    RunConfig {
        seed: 3,
        horizon: 8.0,
        warmup: 1.0,
        ..RunConfig::default()
    }
}

fn key_paths(v: &Value, prefix: &str, out: &mut BTreeSet<String>) {
    if let Value::Object(m) = v {
        for (k, child) in m {
            let path = format!("{prefix}{k}");
            out.insert(path.clone());
            if k != "utilization" {
                key_paths(child, &format!("{path}."), out);
            }
        }
    }
}

#[test]
fn frames_csv_header() {
    let spec = builtin_scenario("face-recognition-accel").unwrap();
    let mut sink = CsvSink::new(Vec::new()).unwrap();
    run_simulation(&spec, &short(), &mut sink).unwrap();
    let text = String::from_utf8(sink.into_inner()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), golden("frames_header.csv").trim_end());
    let columns = golden("frames_header.csv").trim_end().split(',').count();
    for line in lines {
        assert_eq!(line.split(',').count(), columns, "{line}");
    }
}

#[test]
fn utilization_csv_header() {
    let spec = builtin_scenario("face-recognition-accel").unwrap();
    let r = run_simulation(&spec, &short(), &mut ()).unwrap();
    let mut out = Vec::new();
    telemetry::write_utilization_csv(&mut out, &r.utilization).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().next().unwrap(), golden("utilization_header.csv").trim_end());
    assert!(text.lines().count() > 1);
}

#[test]
fn sweep_csv_header() {
    assert_eq!(SWEEP_CSV_COLUMNS.join(","), golden("sweep_header.csv").trim_end());
    let spec = builtin_scenario("face-recognition-accel").unwrap();
    let result = run_simulation(&spec, &short(), &mut ()).unwrap();
    let row = SweepRow {
        point: SweepPoint {
            acceleration: 1.0,
            drives_per_broker: spec.drives_per_broker,
            brokers: spec.brokers,
            scale_factor: 1.0,
            seed: 3,
        },
        result,
    };
    let mut out = Vec::new();
    cli::write_sweep_csv(&mut out, "face-recognition-accel", &[row]).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_CSV_COLUMNS.join(","));
    assert_eq!(lines[1].split(',').count(), SWEEP_CSV_COLUMNS.len());
    assert!(lines[1].starts_with("face-recognition-accel,1,1,3,1,3,"));
}

#[test]
fn summary_json_keys() {
    let spec = builtin_scenario("face-recognition-accel").unwrap();
    let r = run_simulation(&spec, &short(), &mut ()).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    let mut got = BTreeSet::new();
    key_paths(&v, "", &mut got);
    let expected: BTreeSet<String> = golden("summary_keys.txt").lines().map(str::to_owned).collect();
    assert_eq!(got, expected);
}

#[test]
fn frame_stream_is_reproducible() {
    let spec = builtin_scenario("object-detection-accel").unwrap();
    let digest = |seed| {
        let mut sink = HashSink::default();
        let config = RunConfig { seed, ..short() };
        run_simulation(&spec, &config, &mut sink).unwrap();
        sink.0
    };
    assert_eq!(digest(9), digest(9));
    assert_ne!(digest(9), digest(10));
}
