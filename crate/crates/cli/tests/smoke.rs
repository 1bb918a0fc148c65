use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const SMOKE_LIMIT: Duration = Duration::from_secs(60);

fn tilted(args: &[&str], out: &Path) -> Output {
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_tilted"))
        .args(args)
        .args(["--threads", "1", "--out"])
        .arg(out)
        .env_remove("TILTED_OUT")
        .output()
        .expect("binary runs");
    assert!(start.elapsed() < SMOKE_LIMIT, "{args:?} took {:?}", start.elapsed());
    output
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = tilted(args, out);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {stderr}");
    String::from_utf8(o.stdout).unwrap()
}

fn config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

const IMAGE_SMOKE: &str = r#"
angles_deg = [0.0, 45.0]
seeds = [0]

[image.texture]
texture = "brick"
size = 32

[model]
channels = 8
resolution = 16
transforms = 2
hidden = [8]

[train]
steps = 20
batch_size = 128

[train.two_phase]
enabled = true
bottleneck_channels = 2
bottleneck_steps = 10
bottleneck_resolution = 8
"#;

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--help"], dir.path());
    assert!(out.contains("theory-spectrum") && out.contains("sweep-resolution"));
}

#[test]
fn unknown_flag_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tilted(&["theory-spectrum", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = tilted(&["theory-lowrank", "--config", "/no/such/dir/cfg.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/dir/cfg.toml"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "bad.toml", "n = 64\nwidth = 3\n");
    let o = tilted(&["theory-spectrum", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));
}

#[test]
fn print_config_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["theory-spectrum", "theory-lowrank", "theory-align", "fit-image2d", "fit-sdf", "sweep-rotation", "sweep-resolution", "probe-two-phase"] {
        let text = ok(&[cmd, "--print-config"], dir.path());
        let cfg = config(dir.path(), "printed.toml", &text);
        let again = ok(&[cmd, "--print-config", "--config", &cfg], dir.path());
        assert_eq!(text, again, "{cmd}");
    }
}

#[test]
fn diverging_training_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = IMAGE_SMOKE.replace("steps = 20", "steps = 20\nlr_grid = 1e300\nlr_decoder = 1e300");
    let cfg = config(dir.path(), "div.toml", &body.replace("angles_deg = [0.0, 45.0]\nseeds = [0]\n", ""));
    let o = tilted(&["fit-image2d", "--config", &cfg, "--variant", "axis-aligned"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn theory_spectrum_smoke() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["theory-spectrum", "--n", "256", "--k", "4"], dir.path());
    let lines = csv_lines(&dir.path().join("theory_spectrum.csv"));
    assert_eq!(lines[0], "k,analytic,measured,rel_error");
    assert_eq!(lines.len(), 5);
}

#[test]
fn theory_lowrank_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "lr.toml", "sizes = [32, 64]\nmax_components = 8\npsnr_targets = [20.0]\n");
    ok(&["theory-lowrank", "--config", &cfg], dir.path());
    let lines = csv_lines(&dir.path().join("theory_lowrank.csv"));
    assert_eq!(lines.len(), 1 + 2 * 2 * 8 + 2);
}

#[test]
fn theory_align_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "al.toml", "[align.problem]\nt_nu = 200\n\n[rough]\nn = 64\nsteps = 10\n");
    ok(&["theory-align", "--config", &cfg, "--n", "64", "--runs", "3", "--seed", "7"], dir.path());
    let lines = csv_lines(&dir.path().join("theory_align.csv"));
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("7,"));
    assert!(lines[4].starts_with("success_rate,"));
    assert_eq!(csv_lines(&dir.path().join("theory_rough_stage.csv")).len(), 13);
}

#[test]
fn fit_image2d_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let body = IMAGE_SMOKE.replace("angles_deg = [0.0, 45.0]\nseeds = [0]\n", "angle_deg = 30.0\n");
    let cfg = config(dir.path(), "fit.toml", &body);
    ok(&["fit-image2d", "--config", &cfg, "--seed", "3"], dir.path());
    for f in ["fit_image2d.csv", "target.png", "reconstruction.png", "feature_norm.png", "fit_image2d.ckpt"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let lines = csv_lines(&dir.path().join("fit_image2d.csv"));
    assert!(lines[1].starts_with("brick32,tilted,30,3,holdout_psnr,"));
    let ckpt = tilted_core::checkpoint::load_checkpoint(&dir.path().join("fit_image2d.ckpt")).unwrap();
    assert_eq!(ckpt.volume.transforms.len(), 2);
}

#[test]
fn fit_sdf_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "sdf.toml",
        "channels = 4\nbase_resolution = 8\nscales = [1]\ntransforms = 2\nhidden = [16]\ntrain_points = 2000\neval_resolution = 16\n\n[train]\nsteps = 20\nbatch_size = 128\n",
    );
    ok(&["fit-sdf", "--config", &cfg, "--seed", "1", "--kind", "vm"], dir.path());
    let lines = csv_lines(&dir.path().join("fit_sdf.csv"));
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].starts_with("sdf_"));
}

#[test]
fn sweep_rotation_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config(a.path(), "rot.toml", IMAGE_SMOKE);
    ok(&["sweep-rotation", "--config", &cfg, "--seed", "5"], a.path());
    ok(&["sweep-rotation", "--config", &cfg, "--seed", "5"], b.path());
    let x = std::fs::read(a.path().join("sweep_rotation.csv")).unwrap();
    assert_eq!(x, std::fs::read(b.path().join("sweep_rotation.csv")).unwrap());
    assert!(a.path().join("sweep_rotation.png").is_file());
    let c = tempfile::tempdir().unwrap();
    ok(&["sweep-rotation", "--config", &cfg, "--seed", "6"], c.path());
    assert_ne!(x, std::fs::read(c.path().join("sweep_rotation.csv")).unwrap());
}

#[test]
fn sweep_resolution_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let body = IMAGE_SMOKE.replace("angles_deg = [0.0, 45.0]", "resolutions = [2, 8]");
    let cfg = config(dir.path(), "res.toml", &body);
    ok(&["sweep-resolution", "--config", &cfg], dir.path());
    let text = std::fs::read_to_string(dir.path().join("sweep_resolution.csv")).unwrap();
    assert!(text.contains("grid_parameters"));
    assert!(dir.path().join("sweep_resolution.png").is_file());
}

#[test]
fn probe_two_phase_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let body = IMAGE_SMOKE.replace("angles_deg = [0.0, 45.0]\n", "angle_deg = 30.0\n");
    let cfg = config(dir.path(), "probe.toml", &body);
    ok(&["probe-two-phase", "--config", &cfg], dir.path());
    let text = std::fs::read_to_string(dir.path().join("probe_two_phase.csv")).unwrap();
    assert!(text.contains("transforms_carried_bitwise,1.00000000"));
}
