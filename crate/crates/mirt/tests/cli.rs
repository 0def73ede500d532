//! Command-line and file-format integration tests.

use std::path::Path;
use std::process::Command;

use proptest::prelude::*;

use mirt::grid::{Grid3, Tensor2Field};
use mirt::io;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mirt"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let out = dir.join("out");
    let text = format!(
        "[grid]\nn = 12\nhalf_extent = 1.2\n\n[lines]\nn_t = 16\nn_alpha = 8\nn_beta = 12\n\n[run]\nseed = 7\noutput_dir = \"{}\"\n\n{extra}",
        out.display()
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_config_exits_2() {
    let status = bin()
        .args(["--config", "/nonexistent/config.toml", "phantom"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[grid]\nn = 12\nnot_a_key = 1\n").unwrap();
    let status = bin()
        .args(["--config"])
        .arg(&path)
        .arg("phantom")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn adjoint_test_passes_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["adjoint-test", "--pairs", "3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report =
        std::fs::read_to_string(dir.path().join("out").join("adjoint_report.txt")).unwrap();
    assert!(report.contains("max_adjoint_defect = "));
}

#[test]
fn kt_check_circle_reports_zero_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[curve]\nkind = \"circle\"\nradius = 2.0\n",
    );
    let out = bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["kt-check", "--samples", "128"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("out").join("kt_report.txt")).unwrap();
    assert!(report.contains("xi_prime_fraction = 0.000000"));
}

#[test]
fn ellipticity_gate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let status = bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["ellipticity", "--tuples", "50"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn forward_then_reconstruct_from_sinogram() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let status = bin().args(["--config"]).arg(&cfg).arg("forward").status().unwrap();
    assert_eq!(status.code(), Some(0));
    let sino = dir.path().join("out").join("sinogram.msn");
    assert!(sino.exists());
    let status = bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["reconstruct", "--input"])
        .arg(&sino)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("out").join("f_rec.mrt").exists());
    // identical inputs give byte-identical outputs
    let a = std::fs::read(dir.path().join("out").join("f_rec.mrt")).unwrap();
    let status = bin()
        .args(["--config"])
        .arg(&cfg)
        .args(["reconstruct", "--input"])
        .arg(&sino)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let b = std::fs::read(dir.path().join("out").join("f_rec.mrt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    for seed in ["1", "2"] {
        let status = bin()
            .args(["--config"])
            .arg(&cfg)
            .args(["--seed", seed, "adjoint-test", "--pairs", "1"])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tensor_files_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 64 * 9)) {
        let grid = Grid3::cube(4, 1.2).unwrap();
        let f = Tensor2Field::from_values(grid, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.mrt");
        io::write_tensor(&p, &f).unwrap();
        let back = io::read_tensor(&p).unwrap();
        prop_assert_eq!(f.values, back.values);
    }

    #[test]
    fn sinogram_files_round_trip(chans in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 12)) {
        let file = io::SinogramFile {
            n_t: 3,
            n_alpha: 2,
            n_beta: 2,
            t0: 0.0,
            t1: 1.5,
            pole_band: 0.1,
            records: chans
                .iter()
                .enumerate()
                .map(|(i, (a, b))| [i as f64, 0.2, 0.3, *a, *b])
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.msn");
        io::write_sinogram(&p, &file).unwrap();
        let back = io::read_sinogram(&p).unwrap();
        prop_assert_eq!(file, back);
    }
}
