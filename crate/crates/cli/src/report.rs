//! One CSV row per finished run: method, target calls and metrics.

use std::path::Path;

use ptsd_core::pipeline::{RunManifest, RunStatus};

const HEADER: [&str; 11] = [
    "run_dir",
    "method",
    "target",
    "seed",
    "status",
    "density_calls",
    "energy_calls",
    "gradient_calls",
    "w2",
    "tvd",
    "mmd",
];

pub fn write(runs: &[impl AsRef<Path>], out: Option<&Path>) -> anyhow::Result<()> {
    let sink: Box<dyn std::io::Write> = match out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(HEADER)?;
    for dir in runs {
        let dir = dir.as_ref();
        let m = RunManifest::load(&dir.join("manifest.json"))
            .map_err(|e| anyhow::anyhow!("{}: {e}", dir.display()))?;
        w.write_record(row(dir, &m))?;
    }
    w.flush()?;
    Ok(())
}

fn row(dir: &Path, m: &RunManifest) -> Vec<String> {
    let status = match &m.status {
        RunStatus::Running => "running",
        RunStatus::Completed => "completed",
        RunStatus::Failed { .. } => "failed",
    };
    let metric = |key: &str| {
        m.evaluation
            .as_ref()
            .and_then(|e| e.get(key))
            .and_then(|v| v.as_f64())
            .map_or_else(String::new, |v| v.to_string())
    };
    vec![
        dir.display().to_string(),
        m.method.clone(),
        m.target.clone(),
        m.seed.to_string(),
        status.into(),
        m.calls.density_calls.to_string(),
        m.calls.energy_calls.to_string(),
        m.calls.gradient_calls.to_string(),
        metric("w2"),
        metric("tvd"),
        metric("mmd"),
    ]
}
