#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use csc_assess::{Assessor, CCompiler, ToolchainConfig};
use csc_core::{load_corpus, ChallengePack};
use csc_sandbox::{Limits, Sandbox, SandboxConfig};

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn corpus() -> Vec<ChallengePack> {
    let report = load_corpus(&corpus_dir()).expect("corpus directory is readable");
    assert!(report.is_clean(), "corpus errors: {:?}", report.errors);
    report.packs
}

pub fn pack(id: &str) -> ChallengePack {
    corpus()
        .into_iter()
        .find(|p| p.id.as_str() == id)
        .unwrap_or_else(|| panic!("no pack {id}"))
}

/// Keeps the jail directory alive as long as the assessor.
pub struct Harness {
    pub assessor: Assessor,
    pub sandbox: Arc<Sandbox>,
    _dir: tempfile::TempDir,
}

pub fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let sandbox = Sandbox::new(SandboxConfig {
        jail_root: dir.path().join("jails"),
        ..SandboxConfig::default()
    })
    .unwrap();
    sandbox
        .probe()
        .expect("sandbox isolation must be available (run as root)");
    let sandbox = Arc::new(sandbox);
    let toolchain = Arc::new(CCompiler::new(ToolchainConfig::default()).expect("C compiler on PATH"));
    Harness {
        assessor: Assessor::new(Some(Arc::clone(&sandbox)), toolchain, Limits::default()),
        sandbox,
        _dir: dir,
    }
}
