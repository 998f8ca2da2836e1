//! Compiles a small C program against the generated header and the static
//! library, then runs it. Skipped when no C compiler is available.

use std::path::PathBuf;
use std::process::Command;

/// The static library built alongside this test: cargo always leaves it next
/// to the test binary in `<target>/<profile>/deps`, and copies it up to
/// `<target>/<profile>` only on some builds.
fn static_library() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let name = "libsglab_ffi.a";
    let beside = deps.join(name);
    if beside.exists() {
        beside
    } else {
        deps.parent().unwrap().join(name)
    }
}

#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let lib = static_library();
    assert!(lib.exists(), "static library not at {}", lib.display());
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "smoke program failed: {stdout}");
    assert!(stdout.contains("sigma_N"), "{stdout}");
}
