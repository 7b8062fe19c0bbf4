use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = fs::read_dir(dir) else {
        return;
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            collect(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

/// Harness modules whose code reaches run outputs. Reporting, plotting and
/// CLI code are left out so editing them keeps cached runs valid.
const OUTPUT_MODULES: [&str; 4] = ["config.rs", "csvio.rs", "ident.rs", "run.rs"];

/// Build id: hash over every source that determines run output bytes.
fn main() {
    let here = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let core = here.join("../core");
    let mut files = Vec::new();
    collect(&core.join("src"), &mut files);
    files.push(core.join("Cargo.toml"));
    for m in OUTPUT_MODULES {
        files.push(here.join("src").join(m));
    }
    files.push(here.join("build.rs"));
    for f in &files {
        println!("cargo:rerun-if-changed={}", f.display());
    }
    println!("cargo:rerun-if-changed={}", core.join("src").display());
    let mut rel: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| {
            let name = p
                .strip_prefix(here.join(".."))
                .unwrap_or(&p)
                .to_string_lossy()
                .replace('\\', "/");
            (name, p)
        })
        .collect();
    rel.sort();
    let mut h = Sha256::new();
    for (name, path) in rel {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(fs::read(&path).unwrap_or_default());
        h.update([0]);
    }
    let id: String = h
        .finalize()
        .iter()
        .take(6)
        .map(|b| format!("{b:02x}"))
        .collect();
    println!("cargo:rustc-env=STATEKL_BUILD_ID={id}");
}
