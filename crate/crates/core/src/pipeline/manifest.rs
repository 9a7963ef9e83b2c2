use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::targets::{CounterSnapshot, EnergyTarget};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    InitialPt,
    Train,
    GuidedSample,
    Resample,
    Refine,
    Clone,
    /// Full-ladder tempering of the baseline.
    LadderPt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageKind,
    /// Ladder level written or trained (1 = coldest).
    pub level: Option<usize>,
    pub temperature: Option<f64>,
    /// Target evaluations made during the stage.
    pub calls: CounterSnapshot,
    pub wall_seconds: f64,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed { message: String },
}

/// Everything needed to audit a run: configuration, per-stage evaluation
/// counts and timings, diagnostics, and output files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    /// `ptsd`, `ptdm`, or `ptsd-no_guidance` / `ptsd-no_is`.
    pub method: String,
    pub target: String,
    pub seed: u64,
    pub config: Value,
    /// Dotted-key overrides as given on the command line.
    pub overrides: Vec<String>,
    pub temperatures: Vec<f64>,
    pub stages: Vec<StageRecord>,
    /// Target evaluations of the whole run; equals the sum over stages.
    pub calls: CounterSnapshot,
    pub wall_seconds: f64,
    pub status: RunStatus,
    /// Files written for this run, keyed by role.
    pub outputs: BTreeMap<String, String>,
    /// Attached evaluation report, if the run was evaluated.
    #[serde(default)]
    pub evaluation: Option<Value>,
}

impl RunManifest {
    pub fn new(method: impl Into<String>, target: impl Into<String>, seed: u64, config: Value) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA,
            method: method.into(),
            target: target.into(),
            seed,
            config,
            overrides: Vec::new(),
            temperatures: Vec::new(),
            stages: Vec::new(),
            calls: CounterSnapshot::default(),
            wall_seconds: 0.0,
            status: RunStatus::Running,
            outputs: BTreeMap::new(),
            evaluation: None,
        }
    }

    /// Sum of the stage deltas.
    pub fn stage_total(&self) -> CounterSnapshot {
        self.stages.iter().fold(CounterSnapshot::default(), |acc, s| acc.add(&s.calls))
    }

    pub fn is_closed(&self) -> bool {
        self.stage_total() == self.calls
    }

    pub fn stage_sequence(&self) -> Vec<StageKind> {
        self.stages.iter().map(|s| s.stage).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Appends stage records to a manifest, measuring target calls against the
/// target's counter and wall time.
pub struct Recorder<'a> {
    pub manifest: &'a mut RunManifest,
    target: &'a EnergyTarget,
    start_calls: CounterSnapshot,
    start: Instant,
}

impl<'a> Recorder<'a> {
    pub fn new(manifest: &'a mut RunManifest, target: &'a EnergyTarget) -> Self {
        Self { start_calls: target.calls(), start: Instant::now(), manifest, target }
    }

    /// Runs one stage and records it; `work` returns the stage output and
    /// its diagnostics.
    pub fn stage<T>(
        &mut self,
        stage: StageKind,
        level: Option<usize>,
        temperature: Option<f64>,
        work: impl FnOnce() -> Result<(T, Value)>,
    ) -> Result<T> {
        let before = self.target.calls();
        let t0 = Instant::now();
        let outcome = work();
        let calls = self.target.calls().since(&before);
        let details = match &outcome {
            Ok((_, d)) => d.clone(),
            Err(e) => serde_json::json!({ "error": e.to_string() }),
        };
        self.manifest.stages.push(StageRecord {
            stage,
            level,
            temperature,
            calls,
            wall_seconds: t0.elapsed().as_secs_f64(),
            details,
        });
        self.sync();
        outcome.map(|(out, _)| out)
    }

    /// Brings the run totals up to date.
    pub fn sync(&mut self) {
        self.manifest.calls = self.target.calls().since(&self.start_calls);
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
    }

    pub fn finish(&mut self, error: Option<&Error>) {
        self.sync();
        self.manifest.status = match error {
            None => RunStatus::Completed,
            Some(e) => RunStatus::Failed { message: e.to_string() },
        };
    }
}
