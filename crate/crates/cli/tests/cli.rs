use std::path::{Path, PathBuf};
use std::process::Command;

use triscale_core::{EffectiveModel, PoreTensorTable};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn triscale(args: &[&str], config: &Path, out: &Path) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_triscale"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs");
    let text = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    (o.status.code().unwrap_or(-1), text)
}

#[test]
fn validate_config_prints_derived_constants() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = triscale(&["validate-config"], &configs().join("desk.toml"), dir.path());
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("\"zs_measure\": 0.75") && text.contains("config hash"), "{text}");
}

#[test]
fn unknown_keys_give_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(configs().join("trivial.toml")).unwrap() + "\n[macro]\ncells = 3\n";
    std::fs::write(&cfg, text).unwrap();
    let (code, out) = triscale(&["validate-config"], &cfg, dir.path());
    assert_eq!(code, 2, "{out}");
}

#[test]
fn disks_are_rejected_by_the_fine_scale_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("disk.toml");
    let text = std::fs::read_to_string(configs().join("desk.toml")).unwrap().replace(
        r#"pores = [{ kind = "box", center = [0.5, 0.5], half_widths = [0.25, 0.25] }]"#,
        r#"pores = [{ kind = "disk", center = [0.5, 0.5], radius = 0.25 }]"#,
    );
    std::fs::write(&cfg, text).unwrap();
    let (code, out) = triscale(&["dns"], &cfg, &dir.path().join("out"));
    assert_eq!(code, 2, "{out}");
}

#[test]
fn later_stage_without_artifacts_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = triscale(&["upscale"], &configs().join("laminate.toml"), dir.path());
    assert_eq!(code, 2, "{out}");
    assert!(out.contains("pore_tensors.json"), "{out}");
}

#[test]
fn laminate_stages_reproduce_layer_means_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("laminate.toml");
    for stage in ["cell-micro", "cell-meso", "upscale"] {
        let (code, out) = triscale(&[stage], &cfg, dir.path());
        assert_eq!(code, 0, "{stage}: {out}");
    }
    let path = dir.path().join("effective_model.json");
    let model = EffectiveModel::load(&path).unwrap();
    let a = model.a_hat();
    assert!((a.m[0][0] - 1.6).abs() < 0.016 && (a.m[1][1] - 2.5).abs() < 0.025, "{a:?}");

    // Serialize-then-load is bit-identical.
    let again = EffectiveModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(again, model);
    let text = std::fs::read_to_string(dir.path().join("pore_tensors.json")).unwrap();
    let table: PoreTensorTable = serde_json::from_str(&text).unwrap();
    let back: PoreTensorTable = serde_json::from_str(&serde_json::to_string(&table).unwrap()).unwrap();
    assert_eq!(back, table);
    let report = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    for stage in ["cell-micro", "cell-meso", "upscale"] {
        assert!(report.contains(stage), "{report}");
    }
}

#[test]
fn trivial_pipeline_passes_and_macro_restart_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("trivial.toml");
    let (code, out) = triscale(&["all", "--workers", "2"], &cfg, dir.path());
    assert_eq!(code, 0, "{out}");
    for f in ["errors.csv", "msconv.csv", "convergence.svg", "energy.svg", "corrector.svg", "dns_eps2_mask.pgm"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let first = std::fs::read(dir.path().join("macro_solution.bin")).unwrap();
    let (code, out) = triscale(&["macro"], &cfg, dir.path());
    assert_eq!(code, 0, "{out}");
    let second = std::fs::read(dir.path().join("macro_solution.bin")).unwrap();
    assert!(first == second, "restarted macro stage differs");

    let (code, out) = triscale(&["compare"], &cfg, dir.path());
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("discretization level: PASS"), "{out}");
}
