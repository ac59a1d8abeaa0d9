use std::path::Path;
use std::process::Command;

const HEADER: &str = include_str!("../include/stochcal.h");
const SOURCE: &str = include_str!("../src/lib.rs");

fn exported_functions() -> Vec<&'static str> {
    SOURCE
        .lines()
        .filter_map(|l| l.split_once("extern \"C\" fn ").map(|(_, rest)| rest))
        .map(|rest| rest.split('(').next().unwrap())
        .collect()
}

#[test]
fn header_declares_every_export() {
    let names = exported_functions();
    assert!(names.len() >= 10);
    for name in names {
        let declared = [" ", "*"]
            .iter()
            .any(|lead| HEADER.contains(&format!("{lead}{name}(")));
        assert!(declared, "{name} missing from the header; rerun cbindgen");
    }
    for handle in ["ScDataset", "ScEmulator", "ScObservation"] {
        assert!(HEADER.contains(&format!("typedef struct {handle} {handle};")));
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    std::fs::write(
        &src,
        "#include \"stochcal.h\"\nint main(void) { return SC_STATUS_OK; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
