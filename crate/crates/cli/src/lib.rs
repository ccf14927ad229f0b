//! Command implementations behind the `qvt` binary. Each command returns its
//! report as a string so behavior is testable without capturing stdout.

pub mod verify;

use std::error::Error;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qvt_core::attention::{NormAxis, NormMode};
use qvt_core::circuit::Circuit;
use qvt_core::ortho::{LayoutKind, OrthoLayer};
use qvt_core::sampling::sample;
use qvt_model::checkpoint;
use qvt_model::config::{ArchKind, NetworkConfig, RunConfigFile};
use qvt_model::data::{cache_dir, fetch, load_dataset, manifest_for};
use qvt_model::net::Network;
use qvt_model::params::census;
use qvt_model::train::{evaluate, train_run};

pub type CliResult<T> = Result<T, Box<dyn Error>>;

pub fn parse_arch(name: &str) -> CliResult<ArchKind> {
    ArchKind::ALL.into_iter().find(|a| a.name() == name).ok_or_else(|| {
        let names: Vec<&str> = ArchKind::ALL.iter().map(|a| a.name()).collect();
        format!("unknown architecture {name:?} (expected one of {names:?})").into()
    })
}

pub fn parse_layout(name: &str) -> CliResult<LayoutKind> {
    LayoutKind::ALL.into_iter().find(|l| l.name() == name).ok_or_else(|| {
        let names: Vec<&str> = LayoutKind::ALL.iter().map(|l| l.name()).collect();
        format!("unknown layout {name:?} (expected one of {names:?})").into()
    })
}

/// Download (or revalidate) a dataset archive into the cache.
pub fn cmd_fetch(id: &str, dir: Option<&Path>) -> CliResult<String> {
    let manifest = manifest_for(id)?;
    let dir = dir.map(Path::to_path_buf).unwrap_or_else(cache_dir);
    let path = fetch(&manifest, &dir)?;
    Ok(format!("{} verified at {}\n", manifest.id, path.display()))
}

/// Circuit-resource summary for one architecture/layout combination.
pub fn cmd_resources(
    arch: &str,
    layout: &str,
    dim: usize,
    patch_grid: usize,
    layers: usize,
) -> CliResult<String> {
    let config = NetworkConfig {
        arch: parse_arch(arch)?,
        layout: parse_layout(layout)?,
        dim,
        layers,
        hidden: 2 * dim,
        patch_grid,
        attention_norm: NormMode::Softmax,
        attention_axis: NormAxis::Rows,
        per_token_positional: false,
        dataset: "census".into(),
        num_classes: 2,
        channels: 1,
        epochs: 1,
        batch_size: 1,
        seed: 0,
    };
    config.validate()?;
    let c = census(&config);
    let mut out = String::new();
    writeln!(out, "architecture:                 {}", c.arch)?;
    writeln!(out, "layout:                       {}", c.layout)?;
    writeln!(out, "qubits per circuit:           {}", c.qubits)?;
    writeln!(out, "loader rotations per circuit: {}", c.loader_gates)?;
    writeln!(out, "trainable angles per layer:   {}", c.trainable_per_layer)?;
    writeln!(out, "trainable angles total:       {}", c.trainable_total)?;
    writeln!(out, "distinct circuits per layer:  {}", c.distinct_circuits)?;
    if config.arch != ArchKind::ClassicalVit {
        let transform =
            OrthoLayer::identity(config.layout, config.transform_wires())?.circuit();
        writeln!(out, "transform rotations:          {}", transform.rbs_count())?;
        writeln!(out, "transform circuit depth:      {}", transform.depth())?;
    }
    Ok(out)
}

/// Run the training loop described by a JSON run file, once per seed.
pub fn cmd_train(config_path: &Path, jobs: Option<usize>, resume: bool) -> CliResult<String> {
    if let Some(jobs) = jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| format!("cannot read run config {}: {e}", config_path.display()))?;
    let run = RunConfigFile::parse(&text)?;
    let manifest = manifest_for(&run.dataset)?;
    let dataset = load_dataset(&manifest, &cache_dir())?;
    let output = PathBuf::from(&run.output_dir);
    let mut out = String::new();
    for &seed in &run.seeds {
        let config = run.network_config(dataset.num_classes, dataset.channels, seed);
        let outcome = train_run(&config, &dataset, &output, resume)?;
        let s = &outcome.summary;
        writeln!(
            out,
            "seed {}: best epoch {} (val AUC {:.4}) | test AUC {:.4} ACC {:.4} | {}",
            s.seed,
            s.best_epoch,
            s.best_val_auc,
            s.test_auc,
            s.test_acc,
            outcome.run_dir.display()
        )?;
    }
    Ok(out)
}

/// Re-score a checkpoint on one split of its training dataset.
pub fn cmd_eval(checkpoint_path: &Path, split_name: &str) -> CliResult<String> {
    let ckpt = checkpoint::load(checkpoint_path)
        .map_err(|e| format!("cannot load checkpoint {}: {e}", checkpoint_path.display()))?;
    let manifest = manifest_for(&ckpt.meta.config.dataset)?;
    let dataset = load_dataset(&manifest, &cache_dir())?;
    let split = match split_name {
        "train" => &dataset.train,
        "val" => &dataset.val,
        "test" => &dataset.test,
        other => {
            return Err(format!("unknown split {other:?} (expected train, val, or test)").into())
        }
    };
    let net = Network::new(ckpt.meta.config.clone())?;
    let eval = evaluate(&net, &ckpt.params, split, dataset.num_classes)?;
    let mut out = String::new();
    writeln!(
        out,
        "{} seed {} on {}/{}: AUC {:.4} ACC {:.4}",
        ckpt.meta.config.arch.name(),
        ckpt.meta.seed,
        dataset.id,
        split_name,
        eval.auc,
        eval.acc
    )?;
    if !eval.skipped.is_empty() {
        writeln!(out, "classes absent from the split, skipped by macro AUC: {:?}", eval.skipped)?;
    }
    Ok(out)
}

/// Sample a circuit stored as JSON and tabulate the outcome frequencies.
pub fn cmd_sample_demo(
    circuit_path: &Path,
    shots: u64,
    seed: u64,
    input: Option<&str>,
) -> CliResult<String> {
    let text = std::fs::read_to_string(circuit_path)
        .map_err(|e| format!("cannot read circuit {}: {e}", circuit_path.display()))?;
    let circuit = Circuit::from_json(&text)?;
    let input = match input {
        Some(bits) => bits.to_string(),
        None => {
            let mut bits = String::from("1");
            bits.push_str(&"0".repeat(circuit.n_qubits().saturating_sub(1)));
            bits
        }
    };
    let result = sample(&circuit, &input, shots, seed)?;
    let mut rows: Vec<(&String, &u64)> = result.counts.iter().collect();
    rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    let mut out = String::new();
    writeln!(out, "{shots} shots, seed {seed}, input {input}")?;
    for (bits, &count) in rows {
        writeln!(out, "{bits}  {count:>10}  {:.5}", count as f64 / shots as f64)?;
    }
    Ok(out)
}

/// Run one verification scope and format one line per check.
pub fn cmd_verify(scope: &str) -> CliResult<(String, bool)> {
    let results = verify::run_scope(scope)?;
    let mut out = String::new();
    let mut all_pass = true;
    for r in &results {
        all_pass &= r.pass;
        writeln!(
            out,
            "[{}] {}: worst {:.3e} (tolerance {:.3e})",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.worst,
            r.tolerance
        )?;
    }
    Ok((out, all_pass))
}
