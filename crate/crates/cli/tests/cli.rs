use std::fs;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bb84-misalign"));
    c.env_remove("BB84_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn is_table_line(line: &str) -> bool {
    let parts: Vec<&str> = line.split(' ').collect();
    parts.len() == 2
        && parts.iter().all(|p| {
            let (int, frac) = p.trim_start_matches('-').split_once('.').unwrap_or(("", ""));
            !int.is_empty() && int.bytes().all(|b| b.is_ascii_digit()) && frac.len() == 6 && frac.bytes().all(|b| b.is_ascii_digit())
        })
}

#[test]
fn sweep_qber_writes_fixed_format_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.dat");
    let out = run(&[
        "sweep-qber", "--theta-deg", "90", "--qmin", "0", "--qmax", "0.1", "--steps", "3", "--starts", "4",
        "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(text.ends_with('\n'));
    assert!(lines.iter().all(|l| is_table_line(l)), "{text}");
    assert_eq!(lines[0], "0.000000 1.000000");
    let r: f64 = lines[2].split(' ').nth(1).unwrap().parse().unwrap();
    assert!((r - 0.252933).abs() < 1e-3, "{r}");
}

#[test]
fn reruns_are_byte_identical_and_flag_beats_env() {
    let args = ["sweep-qber", "--theta-deg", "75", "--qmin", "0.02", "--qmax", "0.06", "--steps", "2", "--starts", "3"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);

    let mut with_env = args.to_vec();
    with_env.extend(["--seed", "1"]);
    let c = bin().args(&with_env).env("BB84_SEED", "999").output().unwrap();
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn single_threshold_at_aligned_bases() {
    let out = run(&["threshold", "--single", "--theta-deg", "90", "--starts", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let t: f64 = text.trim().parse().unwrap();
    assert!((t - 0.146447).abs() < 1e-3, "{t}");
    assert_eq!(text, format!("{t:.6}\n"));
}

#[test]
fn infeasible_qber_exits_three() {
    let out = run(&["sweep-qber", "--alpha-deg", "30", "--beta-deg", "150", "--qmin", "0", "--qmax", "0.2", "--steps", "3"]);
    assert_eq!(code(&out), 3);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("q_min"), "{err}");

    let out = run(&["attack", "--q", "0.1", "--alpha-deg", "30", "--beta-deg", "150", "--starts", "2"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn invalid_flags_exit_two() {
    assert_eq!(code(&run(&["sweep-qber", "--theta-deg", "90", "--steps", "nope"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["attack", "--q", "1.5", "--theta-deg", "90"])), 2);
    assert_eq!(code(&run(&["attack", "--q", "0.1", "--theta-deg", "200"])), 2);
    assert_eq!(code(&run(&["sweep-theta", "--steps", "3"])), 2);
    assert_eq!(code(&run(&["sweep-qber", "--theta-deg", "90", "--starts", "0"])), 2);
}

#[test]
fn attack_dump_roundtrips_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("m.txt");
    let out = run(&["attack", "--q", "0.06", "--theta-deg", "80", "--starts", "4", "--dump", dump.to_str().unwrap(), "--verify"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["q_ae_basis0 ", "delta_basis0 ", "q_ae_basis1 ", "delta_basis1 ", "i_ab ", "i_ae ", "r ", "converged true"] {
        assert!(text.lines().any(|l| l.starts_with(key)), "missing {key}: {text}");
    }
    assert!(!text.contains("FAIL"));

    let out = run(&["verify", "--metric", dump.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.lines().count() > 10 && report.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn verify_rejects_a_corrupted_metric() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    // diag(1, 0, 0, 0) with a spurious off-diagonal entry between a and b.
    let mut lines = vec!["0 0".to_string(); 16];
    lines[0] = "1 0".into();
    lines[1] = "0.3 0".into();
    lines[4] = "0.3 0".into();
    fs::write(&path, lines.join("\n")).unwrap();
    let out = run(&["verify", "--metric", path.to_str().unwrap(), "--theta-deg", "90"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    let out = run(&["verify", "--metric", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "no angles anywhere");
}
