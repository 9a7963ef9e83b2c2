//! Sample buffers: the samples held at one temperature, with per-row origin
//! and cached target evaluations.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Where a buffer row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Subsampled from the initial parallel-tempering run.
    InitialPt { chain: usize },
    /// A raw model draw kept without importance resampling.
    Generated { row: usize },
    /// Importance-resampled copy of generated row `source`.
    Resampled { source: usize },
    /// Final state of paired refinement chain `pair`.
    Refined { pair: usize },
    /// A thinned state of subset refinement chain `chain`.
    SubsetPt { chain: usize },
    /// Post-processing chain of a baseline or user-supplied run.
    External,
}

/// Cached base (T = 1) energy and gradient of one row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowCache {
    pub energy: Option<f64>,
    pub gradient: Option<Vec<f64>>,
}

/// Samples at one temperature. Rows of `samples`, `provenance` and `cache`
/// correspond one-to-one.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    temperature: f64,
    samples: Array2<f64>,
    provenance: Vec<Provenance>,
    cache: Vec<RowCache>,
}

impl SampleBuffer {
    pub fn new(temperature: f64, samples: Array2<f64>, provenance: Vec<Provenance>) -> Result<Self> {
        check_dim(samples.nrows(), provenance.len())?;
        let cache = vec![RowCache::default(); samples.nrows()];
        Ok(Self { temperature, samples, provenance, cache })
    }

    pub fn with_cache(
        temperature: f64,
        samples: Array2<f64>,
        provenance: Vec<Provenance>,
        cache: Vec<RowCache>,
    ) -> Result<Self> {
        check_dim(samples.nrows(), provenance.len())?;
        check_dim(samples.nrows(), cache.len())?;
        Ok(Self { temperature, samples, provenance, cache })
    }

    pub fn empty(temperature: f64, dim: usize) -> Self {
        Self { temperature, samples: Array2::zeros((0, dim)), provenance: vec![], cache: vec![] }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.samples.row(i)
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn cache(&self) -> &[RowCache] {
        &self.cache
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    /// Overwrites row `i` together with its origin and cache.
    pub fn set_row(&mut self, i: usize, x: &[f64], provenance: Provenance, cache: RowCache) {
        self.samples.row_mut(i).assign(&ArrayView1::from(x));
        self.provenance[i] = provenance;
        self.cache[i] = cache;
    }

    pub fn push(&mut self, x: &[f64], provenance: Provenance, cache: RowCache) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        self.samples
            .push_row(ArrayView1::from(x))
            .map_err(|e| Error::Format(e.to_string()))?;
        self.provenance.push(provenance);
        self.cache.push(cache);
        Ok(())
    }

    /// Appends all rows of `other`, which must share dimension and temperature.
    pub fn extend(&mut self, other: SampleBuffer) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        if other.temperature != self.temperature {
            return Err(Error::InvalidConfig(format!(
                "cannot merge buffers at T={} and T={}",
                self.temperature, other.temperature
            )));
        }
        self.samples
            .append(Axis(0), other.samples.view())
            .map_err(|e| Error::Format(e.to_string()))?;
        self.provenance.extend(other.provenance);
        self.cache.extend(other.cache);
        Ok(())
    }

    /// A new buffer made of the given rows, in order, repeats allowed.
    pub fn select(&self, rows: &[usize]) -> SampleBuffer {
        SampleBuffer {
            temperature: self.temperature,
            samples: self.samples.select(Axis(0), rows),
            provenance: rows.iter().map(|&i| self.provenance[i]).collect(),
            cache: rows.iter().map(|&i| self.cache[i].clone()).collect(),
        }
    }

    /// First `n` rows.
    pub fn truncated(&self, n: usize) -> SampleBuffer {
        let n = n.min(self.len());
        SampleBuffer {
            temperature: self.temperature,
            samples: self.samples.slice(s![..n, ..]).to_owned(),
            provenance: self.provenance[..n].to_vec(),
            cache: self.cache[..n].to_vec(),
        }
    }

    /// Pooled standard deviation of all coordinates about their column means.
    pub fn pooled_std(&self) -> f64 {
        pooled_std(self.samples.view())
    }
}

/// Pooled standard deviation of a sample matrix about its column means.
pub fn pooled_std(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 1.0;
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let ss: f64 = x
        .outer_iter()
        .map(|r| r.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum();
    (ss / ((n - 1) * x.ncols()) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn buffer() -> SampleBuffer {
        SampleBuffer::new(
            2.0,
            array![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]],
            (0..3).map(|chain| Provenance::InitialPt { chain }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn select_repeats_rows_with_their_caches() {
        let mut b = buffer();
        b.set_row(1, &[2.0, 3.0], Provenance::Resampled { source: 9 }, RowCache {
            energy: Some(1.5),
            gradient: None,
        });
        let s = b.select(&[1, 1, 0]);
        assert_eq!(s.len(), 3);
        assert_eq!(s.row(0), s.row(1));
        assert_eq!(s.cache()[1].energy, Some(1.5));
        assert_eq!(s.provenance()[2], Provenance::InitialPt { chain: 0 });
    }

    #[test]
    fn extend_checks_temperature_and_dim() {
        let mut b = buffer();
        b.extend(buffer()).unwrap();
        assert_eq!(b.len(), 6);
        assert!(b.extend(SampleBuffer::empty(3.0, 2)).is_err());
        assert!(b.extend(SampleBuffer::empty(2.0, 3)).is_err());
        b.push(&[1.0, 1.0], Provenance::External, RowCache::default()).unwrap();
        assert_eq!(b.len(), 7);
    }

    #[test]
    fn pooled_std_of_known_matrix() {
        let x = array![[1.0, -1.0], [-1.0, 1.0]];
        assert!((pooled_std(x.view()) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn provenance_serializes_with_kind_tag() {
        let s = serde_json::to_string(&Provenance::Resampled { source: 4 }).unwrap();
        assert_eq!(s, r#"{"kind":"resampled","source":4}"#);
    }
}
