//! On-disk artefacts: sample CSVs, model files, and the run directory layout.
//!
//! A run directory holds `manifest.json`, `models/level_<k>.<ext>` and
//! `buffers/level_<k>.csv`, each rewritten as the run progresses.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::buffer::SampleBuffer;
use crate::diffusion::GaussianOracle;
use crate::error::{Error, Result};
use crate::network::Denoiser;
use crate::pipeline::{Persist, RunManifest, RunObserver, TrainedModel};

/// Writes rows with a header `x0,x1,...`.
pub fn write_samples(path: &Path, samples: ArrayView2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record((0..samples.ncols()).map(|i| format!("x{i}"))).map_err(csv_error)?;
    for row in samples.outer_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample CSV written by [`write_samples`].
pub fn read_samples(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let dim = r.headers().map_err(csv_error)?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for record in r.records() {
        let record = record.map_err(csv_error)?;
        if record.len() != dim {
            return Err(Error::Format(format!("{}: row {rows} has {} columns, expected {dim}", path.display(), record.len())));
        }
        for field in record.iter() {
            data.push(field.trim().parse::<f64>().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, dim), data).map_err(|e| Error::Format(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Loads a model file saved by a run: `.ckpt` for networks, `.json` for
/// fitted Gaussians.
pub fn load_model(path: &Path) -> Result<TrainedModel> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ckpt") => Ok(TrainedModel::Network(Denoiser::load(path)?)),
        Some("json") => {
            let oracle: GaussianOracle = serde_json::from_slice(&fs::read(path)?)?;
            Ok(TrainedModel::Gaussian(oracle))
        }
        _ => Err(Error::Format(format!("{}: unknown model file type", path.display()))),
    }
}

/// Run-directory observer. Output files are listed in the saved manifest.
pub struct RunDir {
    root: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("models"))?;
        fs::create_dir_all(root.join("buffers"))?;
        Ok(Self { root, outputs: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// Path of the model file at `level`, if one was written.
    pub fn model_path(&self, level: usize) -> Option<PathBuf> {
        self.outputs.get(&format!("model_level_{level}")).map(|p| self.root.join(p))
    }

    /// Records an extra file under `role`, relative to the run directory.
    pub fn record(&mut self, role: impl Into<String>, relative: impl Into<String>) {
        self.outputs.insert(role.into(), relative.into());
    }

    /// Saves `manifest` with this directory's outputs merged in.
    pub fn save_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let mut m = manifest.clone();
        m.outputs.extend(self.outputs.clone());
        m.save(&self.manifest_path())
    }
}

impl RunObserver for RunDir {
    fn model(&mut self, level: usize, model: &dyn Persist) -> Result<()> {
        let rel = format!("models/level_{level}.{}", model.extension());
        model.save(&self.root.join(&rel))?;
        self.record(format!("model_level_{level}"), rel);
        Ok(())
    }

    fn buffer(&mut self, level: usize, buffer: &SampleBuffer) -> Result<()> {
        let rel = format!("buffers/level_{level}.csv");
        write_samples(&self.root.join(&rel), buffer.samples())?;
        self.record(format!("buffer_level_{level}"), rel);
        Ok(())
    }

    fn manifest(&mut self, manifest: &RunManifest) -> Result<()> {
        self.save_manifest(manifest)
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn samples_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let x = array![[0.1, -2.5e-7], [1.0 / 3.0, f64::MAX]];
        write_samples(&path, x.view()).unwrap();
        assert_eq!(read_samples(&path).unwrap(), x);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,x1\n"));
    }

    #[test]
    fn ragged_csv_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "x0,x1\n1,2\n3\n").unwrap();
        assert!(matches!(read_samples(&path), Err(Error::Format(_))));
    }

    #[test]
    fn model_files_load_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path()).unwrap();
        let oracle = GaussianOracle::new(3, 2.0);
        run.model(4, &oracle).unwrap();
        let path = run.model_path(4).unwrap();
        assert!(path.ends_with("models/level_4.json"));
        match load_model(&path).unwrap() {
            TrainedModel::Gaussian(g) => assert_eq!(g, oracle),
            other => panic!("unexpected model {other:?}"),
        }
        assert!(load_model(&dir.path().join("m.bin")).is_err());
    }

    #[test]
    fn manifest_lists_written_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(dir.path()).unwrap();
        let buffer = SampleBuffer::new(1.0, array![[1.0, 2.0]], vec![crate::buffer::Provenance::External]).unwrap();
        run.buffer(2, &buffer).unwrap();
        let manifest = RunManifest::new("ptsd", "gaussian:2", 0, serde_json::json!({}));
        run.manifest(&manifest).unwrap();
        let saved = RunManifest::load(&run.manifest_path()).unwrap();
        assert_eq!(saved.outputs["buffer_level_2"], "buffers/level_2.csv");
        assert_eq!(read_samples(&dir.path().join("buffers/level_2.csv")).unwrap(), array![[1.0, 2.0]]);
    }
}
