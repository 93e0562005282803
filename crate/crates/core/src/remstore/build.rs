//! Fitting χ batches into REM entries.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChannelModel, RemEntry, NOISE};
use crate::error::{Error, Result};
use crate::ingest::ChiBatch;
use crate::mixture::{self, FitReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentChoice {
    /// Fit exactly this many components (capped so every fit has 2 samples per component).
    Fixed(usize),
    /// AIC selection over 1..=max.
    Select(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub components: ComponentChoice,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub retain_samples: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            components: ComponentChoice::Fixed(mixture::DEFAULT_COMPONENTS),
            restarts: mixture::DEFAULT_RESTARTS,
            seed: 0,
            max_iter: mixture::DEFAULT_MAX_ITER,
            tol: mixture::DEFAULT_TOL,
            retain_samples: true,
        }
    }
}

/// Fits one batch according to `opts`, seeding from `seed`.
pub fn fit_batch(samples: &[f64], opts: &FitOptions, seed: u64) -> Result<FitReport> {
    let cap = (samples.len() / 2).max(1);
    match opts.components {
        ComponentChoice::Fixed(j) => {
            let j = j.clamp(1, cap);
            (0..opts.restarts.max(1))
                .map(|r| {
                    mixture::em_fit(
                        samples,
                        j,
                        mixture::derive_seed(seed, j, r),
                        opts.max_iter,
                        opts.tol,
                    )
                })
                .collect::<Result<Vec<_>>>()
                .map(|fits| {
                    fits.into_iter()
                        .reduce(|a, b| if b.log_likelihood > a.log_likelihood { b } else { a })
                        .expect("at least one restart")
                })
        }
        ComponentChoice::Select(jmax) => mixture::select_components_with(
            samples,
            jmax.clamp(1, cap),
            seed,
            opts.restarts.max(1),
            opts.max_iter,
            opts.tol,
        ),
    }
}

/// One entry per distinct location, in order of first appearance, with
/// channels ascending. Every location must carry the same channel set.
pub fn build_rem(batches: &[ChiBatch], opts: &FitOptions) -> Result<Vec<RemEntry>> {
    let mut order: Vec<[u64; 3]> = Vec::new();
    let mut groups: BTreeMap<[u64; 3], Vec<&ChiBatch>> = BTreeMap::new();
    for b in batches {
        b.validate()?;
        let k = b.location.key();
        let g = groups.entry(k).or_default();
        if g.is_empty() {
            order.push(k);
        }
        if g.iter().any(|o| o.channel.index == b.channel.index) {
            return Err(Error::InvalidInput(format!(
                "duplicate batch for channel {} at one location",
                b.channel.index
            )));
        }
        g.push(b);
    }
    let jobs: Vec<(usize, &ChiBatch)> = order
        .iter()
        .enumerate()
        .flat_map(|(i, k)| groups[k].iter().map(move |b| (i, *b)))
        .collect();
    let fits: Vec<Result<FitReport>> = jobs
        .par_iter()
        .map(|(i, b)| {
            let seed = opts.seed
                ^ (*i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                ^ (b.channel.index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            fit_batch(&b.samples, opts, seed)
        })
        .collect();
    let mut entries: Vec<RemEntry> = order
        .iter()
        .enumerate()
        .map(|(i, k)| RemEntry {
            id: i as u64,
            location: groups[k][0].location,
            channels: Vec::new(),
            cluster_label: NOISE,
        })
        .collect();
    for ((i, b), fit) in jobs.iter().zip(fits) {
        entries[*i].channels.push(ChannelModel {
            channel: b.channel,
            model: fit?.model,
            sample_count: b.samples.len(),
            samples: opts.retain_samples.then(|| b.samples.clone()),
            mean_power_mw: b.mean_power_mw,
        });
    }
    for e in &mut entries {
        e.channels.sort_by_key(|c| c.channel.index);
    }
    super::validate_rem(&entries)?;
    Ok(entries)
}
