//! End-to-end runs of the command-line interface, in process.

use std::path::{Path, PathBuf};

use echoscat::cli::{run, RunConfig, RESOLVED_CONFIG};
use echoscat::io::load_grid;
use echoscat::metrics::MetricReport;

const SMALL: &str = r#"{
  "psf_bands": 2,
  "imaging": { "n_lines": 48, "depth_mm": 12.0 },
  "admm": { "max_iter": 15, "cg_iters": 5 },
  "experiment": { "inclusion_radius_mm": 3.0, "phantom_side_mm": 20.0, "angles_deg": [0.0, 5.0] },
  "dataset": { "image_side_mm": 16.0 }
}"#;

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn echoscat(args: &[&str]) -> i32 {
    run(std::iter::once("echoscat").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn phantom_simulate_reconstruct_evaluate() {
    let (dir, cfg) = setup();
    let ph = dir.path().join("phantom");
    assert_eq!(echoscat(&["phantom", "--config", s(&cfg), "--seed", "7", "--out", s(&ph)]), 0);
    for f in ["phantom.sgrid", "phantom.pgm", "cloud.scat", RESOLVED_CONFIG] {
        assert!(ph.join(f).is_file(), "{f}");
    }
    let cloud = ph.join("cloud.scat");
    let sim = |out: &Path| {
        echoscat(&["simulate", "--config", s(&cfg), "--seed", "7", "--input", s(&cloud), "--angles", "0,4", "--out", s(out)])
    };
    let (a, b) = (dir.path().join("sim_a"), dir.path().join("sim_b"));
    assert_eq!(sim(&a), 0);
    assert_eq!(sim(&b), 0);
    for f in ["view_000.sgrid", "view_000.pgm", "view_001.sgrid", "view_001.pgm"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }

    let rec = dir.path().join("rec");
    let view0 = a.join("view_000.sgrid");
    assert_eq!(echoscat(&["reconstruct", "--config", s(&cfg), "--input", s(&view0), "--out", s(&rec)]), 0);
    let map = load_grid(rec.join("map.sgrid")).unwrap();
    assert_eq!((map.rows(), map.cols()), (load_grid(&view0).unwrap().rows(), 48));
    let csv = String::from_utf8(read(rec.join("convergence.csv"))).unwrap();
    assert!(csv.starts_with("iteration,objective,primal_residual,dual_residual\n"));

    let ev = dir.path().join("eval");
    assert_eq!(
        echoscat(&["evaluate", "--config", s(&cfg), "--angles", "0,4", "--reference", s(&a), "--reconstructed", s(&b), "--out", s(&ev)]),
        0
    );
    let report = MetricReport::from_csv(&String::from_utf8(read(ev.join("report.csv"))).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 2);
    for r in &report.rows {
        assert_eq!((r.snr_err, r.mii_err, r.cnr_err, r.chi2), (0.0, 0.0, 0.0, 0.0));
    }
    assert!(ev.join("report.json").is_file());
}

#[test]
fn resolved_config_records_precedence() {
    let (dir, cfg) = setup();
    let out = dir.path().join("ph");
    assert_eq!(
        echoscat(&["phantom", "--config", s(&cfg), "--f0-mhz", "4", "--lambda", "0.02*max", "--out", s(&out)]),
        0
    );
    let resolved = RunConfig::from_json(&String::from_utf8(read(out.join(RESOLVED_CONFIG))).unwrap()).unwrap();
    assert_eq!(resolved.imaging.f0_hz, 4e6);
    assert_eq!(resolved.imaging.n_lines, 48);
    assert_eq!(resolved.psf_bands, 2);
    assert_eq!(resolved.imaging.pitch_mm, 0.22);
    assert_eq!(resolved.paths.out.as_deref(), Some(out.as_path()));
}

#[test]
fn dataset_targets_flow_through_the_predicted_backend() {
    let (dir, cfg) = setup();
    let ds = dir.path().join("ds");
    assert_eq!(echoscat(&["dataset", "--config", s(&cfg), "--mode", "scatgan3", "--count", "2", "--out", s(&ds)]), 0);
    for k in 0..2 {
        let pair = ds.join(format!("pair_{k:05}"));
        for f in ["input_000.sgrid", "input_001.sgrid", "input_002.sgrid", "target.sgrid", "meta.json"] {
            assert!(pair.join(f).is_file(), "{f}");
        }
    }
    let pred = dir.path().join("pred");
    std::fs::create_dir(&pred).unwrap();
    std::fs::copy(ds.join("pair_00000/target.sgrid"), pred.join("pred.sgrid")).unwrap();
    let rec = dir.path().join("rec");
    assert_eq!(
        echoscat(&["reconstruct", "--config", s(&cfg), "--backend", "predicted", "--predicted", s(&pred), "--out", s(&rec)]),
        0
    );
    assert_eq!(read(rec.join("pred.sgrid")), read(pred.join("pred.sgrid")));

    // A grid off the B-mode raster is a data error and leaves nothing behind.
    let bad = dir.path().join("bad");
    std::fs::create_dir(&bad).unwrap();
    std::fs::copy(dir.path().join("ds/pair_00000/target.sgrid"), bad.join("pred.sgrid")).unwrap();
    let wide = dir.path().join("wide.json");
    std::fs::write(&wide, r#"{"imaging": {"n_lines": 40, "depth_mm": 12.0}}"#).unwrap();
    let rec2 = dir.path().join("rec2");
    assert_eq!(
        echoscat(&["reconstruct", "--config", s(&wide), "--backend", "predicted", "--predicted", s(&bad), "--out", s(&rec2)]),
        3
    );
    assert!(!rec2.exists());
}

#[test]
fn identity_experiment_scores_zero_and_repeats() {
    let (dir, cfg) = setup();
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let code = echoscat(&["experiment", "--config", s(&cfg), "--protocol", "1", "--backend", "identity", "--seed", "3", "--out", s(&out)]);
        (code, out)
    };
    let (c1, o1) = run_once("e1");
    let (c2, o2) = run_once("e2");
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(read(o1.join("report.csv")), read(o2.join("report.csv")));
    let report = MetricReport::from_csv(&String::from_utf8(read(o1.join("report.csv"))).unwrap()).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.angle_deg).collect::<Vec<_>>(), vec![0.0, 5.0]);
    assert!(report.rows.iter().all(|r| r.snr_err == 0.0 && r.mii_err == 0.0 && r.cnr_err == 0.0 && r.chi2 == 0.0));
    assert!(o1.join("summary.txt").is_file());
    assert!(o1.join("ground_truth/view_001.sgrid").is_file());
}

#[test]
fn usage_and_data_errors_map_to_exit_codes() {
    let (dir, cfg) = setup();
    let out = dir.path().join("x");
    assert_eq!(echoscat(&["phantom", "--config", s(&cfg)]), 2);
    assert_eq!(echoscat(&["phantom", "--kind", "blob", "--out", s(&out)]), 2);
    assert_eq!(echoscat(&["experiment", "--angles", "5..1", "--out", s(&out)]), 2);
    assert_eq!(echoscat(&["experiment", "--backend", "predicted", "--out", s(&out)]), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"imaging": {"lines": 3}}"#).unwrap();
    assert_eq!(echoscat(&["phantom", "--config", s(&bad), "--out", s(&out)]), 3);
    assert_eq!(echoscat(&["phantom", "--config", s(&dir.path().join("missing.json")), "--out", s(&out)]), 3);
    assert!(!out.exists());
}
