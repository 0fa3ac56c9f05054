#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use disentangle_core::decomposition::DecompositionWeights;
use disentangle_core::metrics::MigConfig;
use disentangle_core::model::save_checkpoint;
use disentangle_core::trainer::{train, EvalConfig, TrainConfig};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_disentangle"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn disentangle")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("bad JSON ({e}): {}", stdout(o)))
}

pub fn schema(name: &str) -> jsonschema::JSONSchema {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(name);
    let text = std::fs::read_to_string(&path).expect("schema file");
    let value: serde_json::Value = serde_json::from_str(&text).expect("schema JSON");
    jsonschema::JSONSchema::compile(&value).expect("valid schema")
}

pub fn assert_valid(schema_name: &str, v: &serde_json::Value) {
    let s = schema(schema_name);
    if let Err(errors) = s.validate(v) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{schema_name}: {msgs:?}");
    };
}

/// Settings shared by the trained fixtures: the bumps set, lr 3e-3, batch 128.
pub fn quick_config(beta: f64, steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        weights: DecompositionWeights::tcvae(beta),
        batch_size: 128,
        steps,
        learning_rate: 3e-3,
        seed,
        log_every: 100,
        eval: EvalConfig {
            higgins: None,
            mig: Some(MigConfig { samples_per_value: 1000 }),
            ..EvalConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// A β-TCVAE (β = 6) checkpoint trained once per test binary.
pub fn trained_checkpoint() -> &'static PathBuf {
    static CKPT: OnceLock<PathBuf> = OnceLock::new();
    CKPT.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir").keep();
        let out = train(&quick_config(6.0, 3000, 0)).map_err(|e| e.to_string()).unwrap();
        let path = dir.join("trained.ckpt");
        save_checkpoint(&out.model, &path).unwrap();
        path
    })
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

/// Small and fast: no Higgins, few MIG samples.
pub const TINY: &str = "\
steps = 20
batch_size = 32
hidden = 16
latent_dim = 3
log_every = 5
elbo_samples = 2
mig_samples_per_value = 100
higgins_l = off
learning_rate = 0.003
";
