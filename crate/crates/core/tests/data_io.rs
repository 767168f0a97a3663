use std::fs;

use mfnets::data_io::{self, load_dataset, load_points, save_dataset, save_points};
use mfnets::experiments::{self, Records};
use mfnets::{Error, NodeData};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE), Just(1e300)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn datasets_round_trip_exactly(
        dim in 1usize..4,
        rows in prop::collection::vec(prop::collection::vec(finite(), 4), 1..20),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("node.csv");
        let x = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        let y = DVector::from_fn(rows.len(), |i, _| rows[i][3]);
        let data = NodeData::new(4, x, y, 0.25).unwrap();
        save_dataset(&path, &data).unwrap();
        let back = load_dataset(&path, 4, 0.25).unwrap();
        prop_assert_eq!(&back.x, &data.x);
        prop_assert_eq!(&back.y, &data.y);

        let pts = dir.path().join("points.csv");
        save_points(&pts, &data.x, None).unwrap();
        prop_assert_eq!(load_points(&pts).unwrap(), data.x.clone());
    }
}

#[test]
fn malformed_tables_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "x1,y\n0.5,1\n0.25,oops\n").unwrap();
    match load_dataset(&path, 1, 1.0) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
    fs::write(&path, "x1,y\n0.5,1,2\n").unwrap();
    assert!(matches!(load_dataset(&path, 1, 1.0), Err(Error::Parse { line: 2, .. })));
    fs::write(&path, "a,b\n0.5,1\n").unwrap();
    assert!(load_dataset(&path, 1, 1.0).is_err());
    assert!(load_dataset(&dir.path().join("missing.csv"), 1, 1.0).is_err());
}

#[test]
fn generators_are_reproducible() {
    let a = data_io::generate_analytical_noise(&[4; 9], None, 3).unwrap();
    let b = data_io::generate_analytical_noise(&[4; 9], None, 3).unwrap();
    let c = data_io::generate_analytical_noise(&[4; 9], None, 4).unwrap();
    for k in 0..9 {
        assert_eq!(a.datasets[k].y, b.datasets[k].y);
    }
    assert_ne!(a.datasets[0].y, c.datasets[0].y);
    assert_eq!(a.test_x.nrows(), 41 * 41);
}

#[test]
fn study_outputs_do_not_depend_on_thread_count() {
    let config = experiments::TopologyConfig { trials: 16, ..Default::default() };
    let write = |threads: &str| {
        std::env::set_var(experiments::THREADS_ENV, threads);
        let dir = tempfile::tempdir().unwrap();
        let report = experiments::run_topology(&config).unwrap();
        report.write_csv(dir.path()).unwrap();
        experiments::write_manifest(dir.path(), "topology", &config).unwrap();
        let mut files = Vec::new();
        for name in ["trials.csv", "histograms.csv", "summary.csv", "manifest.json"] {
            files.push(fs::read(dir.path().join(name)).unwrap());
        }
        files
    };
    let one = write("1");
    let four = write("4");
    std::env::remove_var(experiments::THREADS_ENV);
    assert_eq!(one, four);
}

#[test]
fn pools_smaller_than_the_request_are_rejected() {
    let config = experiments::TopologyConfig {
        trials: 2,
        pool: experiments::PoolSource::PeerFamily { pool_size: 4, noise: 0.0 },
        ..Default::default()
    };
    assert!(matches!(experiments::run_topology(&config), Err(Error::PoolTooSmall { .. })));
}
