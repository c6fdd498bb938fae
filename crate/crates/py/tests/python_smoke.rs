use std::path::Path;
use std::process::Command;

#[test]
fn python_smoke_script() {
    // Integration tests do not get the cdylib; build it first.
    let status = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "mfpinn-py", "--lib"])
        .status()
        .unwrap();
    assert!(status.success());
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("python").join("smoke_test.py");
    let out = Command::new("python3").arg(&script).output().expect("python3 is required");
    assert!(
        out.status.success(),
        "{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}
