//! Loads the compiled extension into python3 and runs python/smoke_test.py.

use std::path::PathBuf;
use std::process::Command;

fn extension() -> PathBuf {
    // target/<profile>/deps/smoke-<hash> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().unwrap().parent().unwrap();
    let lib = dir.join("libbundle_menu_py.so");
    assert!(lib.exists(), "extension not built at {}", lib.display());
    lib
}

#[test]
fn python_smoke_test() {
    if cfg!(not(target_os = "linux")) || Command::new("python3").arg("--version").output().is_err() {
        eprintln!("skipping: needs python3 on linux");
        return;
    }
    let site = tempfile::tempdir().unwrap();
    std::fs::copy(extension(), site.path().join("bundle_menu.so")).unwrap();
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../python/smoke_test.py");
    let out = Command::new("python3")
        .arg(&script)
        .env("PYTHONPATH", site.path())
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("smoke test ok"));
}
