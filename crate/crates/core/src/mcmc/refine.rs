//! Short two-temperature tempering runs started from buffer samples.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sweep, ChainState, PtSchedule, PtStats, Tally};
use crate::buffer::{Provenance, RowCache, SampleBuffer};
use crate::error::{check_dim, Error, Result};
use crate::rng::lane;
use crate::targets::EnergyTarget;

/// How refinement chains feed back into the buffers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum RefineMode {
    /// One chain pair per random pairing of rows; final states replace the rows.
    #[default]
    Full,
    /// Chain pairs from `chains` random pairings; every `thin`-th state of
    /// each chain is appended to its buffer, original rows are kept.
    Subset { chains: usize, thin: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineStats {
    pub pairs: usize,
    pub steps: usize,
    /// `[cold, hot]` MALA acceptance, then the swap acceptance.
    pub chain: PtStats,
    pub appended: usize,
}

/// Runs `steps` sweeps of 2-level tempering from random pairs of `cold` and
/// `hot` rows. Missing cached evaluations are filled in first.
pub fn local_pt_refine(
    target: &EnergyTarget,
    cold: &mut SampleBuffer,
    hot: &mut SampleBuffer,
    steps: usize,
    schedule: &PtSchedule,
    mode: RefineMode,
    seed: u64,
) -> Result<RefineStats> {
    check_dim(cold.dim(), hot.dim())?;
    check_dim(target.dim(), cold.dim())?;
    check_dim(2, schedule.step_sizes.len())?;
    if cold.is_empty() || hot.is_empty() {
        return Err(Error::Empty("refinement needs non-empty buffers".into()));
    }
    let available = cold.len().min(hot.len());
    let pairs = match mode {
        RefineMode::Full => available,
        RefineMode::Subset { chains, thin } => {
            if thin == 0 {
                return Err(Error::InvalidConfig("subset thinning must be positive".into()));
            }
            chains.min(available)
        }
    };
    if steps == 0 || pairs == 0 {
        return Ok(RefineStats { pairs: 0, steps, chain: Tally::new(2).stats(), appended: 0 });
    }

    let mut rng = lane(seed, 0);
    let mut cold_rows: Vec<usize> = (0..cold.len()).collect();
    let mut hot_rows: Vec<usize> = (0..hot.len()).collect();
    cold_rows.shuffle(&mut rng);
    hot_rows.shuffle(&mut rng);
    let (t_cold, t_hot) = (cold.temperature(), hot.temperature());
    let thin = match mode {
        RefineMode::Full => usize::MAX,
        RefineMode::Subset { thin, .. } => thin,
    };

    type Trace = Vec<[(Vec<f64>, RowCache); 2]>;
    let runs: Vec<Result<([ChainState; 2], Trace, Tally)>> = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = lane(seed, p as u64 + 1);
            let (ci, hi) = (cold_rows[p], hot_rows[p]);
            let mut states = [
                ChainState::from_cached(target, cold.row(ci).to_vec(), t_cold, &cold.cache()[ci])?,
                ChainState::from_cached(target, hot.row(hi).to_vec(), t_hot, &hot.cache()[hi])?,
            ];
            let mut tally = Tally::new(2);
            let mut trace = Vec::new();
            for s in 1..=steps {
                sweep(target, &mut states, schedule, s, &mut tally, &mut rng)?;
                if s.is_multiple_of(thin) {
                    trace.push([
                        (states[0].x.clone(), states[0].row_cache()),
                        (states[1].x.clone(), states[1].row_cache()),
                    ]);
                }
            }
            Ok((states, trace, tally))
        })
        .collect();

    let mut total = Tally::new(2);
    let mut appended = 0;
    let mut finished = Vec::with_capacity(pairs);
    for r in runs {
        let (states, trace, tally) = r?;
        total = total.merge(&tally);
        finished.push((states, trace));
    }
    match mode {
        RefineMode::Full => {
            for (p, (states, _)) in finished.into_iter().enumerate() {
                let [c, h] = states;
                cold.set_row(cold_rows[p], &c.x, Provenance::Refined { pair: p }, c.row_cache());
                hot.set_row(hot_rows[p], &h.x, Provenance::Refined { pair: p }, h.row_cache());
            }
        }
        RefineMode::Subset { .. } => {
            for (p, (_, trace)) in finished.into_iter().enumerate() {
                for [(xc, cc), (xh, ch)] in trace {
                    cold.push(&xc, Provenance::SubsetPt { chain: p }, cc)?;
                    hot.push(&xh, Provenance::SubsetPt { chain: p }, ch)?;
                    appended += 1;
                }
            }
        }
    }
    Ok(RefineStats { pairs, steps, chain: total.stats(), appended })
}
