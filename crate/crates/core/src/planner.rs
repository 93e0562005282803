//! Outage evaluation and channel assignment along a route.
//!
//! A channel's outage at a location is the mixture CDF of χ evaluated at
//! `t = ln(ln2·C_th / (B·P_tx·L(d)))`. Plans are built from an
//! [`OutageTable`] holding that probability for every (location, channel).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagation::{two_slope_gain, Shadowing, TwoSlopeParams};
use crate::remstore::{ChannelModel, RemEntry};
use crate::types::{Location, PlatoonConfig, Route};

pub const DEFAULT_PACKET_BYTES: usize = 400;
pub const DEFAULT_REWARD_FREE: f64 = 3.0;
pub const DEFAULT_REWARD_BUSY: f64 = -3.0;
pub const DEFAULT_LEARNING_ALPHA: f64 = 0.3;
/// Relative mean-power rise that makes Bumblebee leave its channel.
pub const BUMBLEBEE_RISE: f64 = 0.15;

/// Evaluation context for one (entry, channel) pair.
#[derive(Debug, Clone, Copy)]
pub struct OutageQuery<'a> {
    pub entry: &'a RemEntry,
    pub channel: u16,
    pub cfg: &'a PlatoonConfig,
    pub prop: &'a TwoSlopeParams,
}

impl<'a> OutageQuery<'a> {
    pub fn new(
        entry: &'a RemEntry,
        channel: u16,
        cfg: &'a PlatoonConfig,
        prop: &'a TwoSlopeParams,
    ) -> Result<Self> {
        if entry.channel(channel).is_none() {
            return Err(Error::InvalidInput(format!(
                "channel {channel} not present in REM entry {}",
                entry.id
            )));
        }
        Ok(OutageQuery {
            entry,
            channel,
            cfg,
            prop,
        })
    }

    fn model(&self) -> &ChannelModel {
        self.entry.channel(self.channel).expect("checked in new")
    }
}

/// `ln(ln2·C_th / (B·P_tx·L))` with `gain` linear.
pub fn outage_threshold(cfg: &PlatoonConfig, gain: f64) -> f64 {
    (std::f64::consts::LN_2 * cfg.capacity_threshold_bps
        / (cfg.subcarrier_spacing_hz * cfg.tx_power_mw() * gain))
        .ln()
}

/// Median-gain threshold at the configured platoon range.
pub fn threshold_at_range(cfg: &PlatoonConfig, prop: &TwoSlopeParams) -> Result<f64> {
    let gain = two_slope_gain(cfg.range_m, prop, Shadowing::off())?;
    Ok(outage_threshold(cfg, gain))
}

pub fn outage_probability(q: &OutageQuery) -> Result<f64> {
    Ok(q.model().model.cdf(threshold_at_range(q.cfg, q.prop)?))
}

/// `D / ((1 − outage)·C_th)` seconds.
pub fn latency_lower_bound(outage: f64, cfg: &PlatoonConfig, packet_bits: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&outage) {
        return Err(Error::InvalidInput(format!("outage {outage} is not a probability")));
    }
    if outage >= 1.0 {
        return Err(Error::ChannelNeverAvailable);
    }
    Ok(packet_bits / ((1.0 - outage) * cfg.capacity_threshold_bps))
}

/// Nearest entry for each route location, and whether it lies farther than
/// `geo_radius_m` (an extrapolation).
pub fn resolve_route(
    route: &Route,
    rem: &[RemEntry],
    geo_radius_m: f64,
) -> Result<Vec<(usize, bool)>> {
    if rem.is_empty() {
        return Err(Error::InvalidInput("REM is empty".into()));
    }
    Ok(route
        .locations
        .par_iter()
        .map(|l| {
            let (best, d) = rem
                .iter()
                .enumerate()
                .map(|(i, e)| (i, l.distance(&e.location)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            (best, d > geo_radius_m)
        })
        .collect())
}

/// Outage probabilities for every route location and channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageTable {
    /// Channel indices, ascending; columns of `outage`.
    pub channels: Vec<u16>,
    pub locations: Vec<Location>,
    pub distance_m: Vec<f64>,
    /// Resolved REM entry id per location.
    pub entry_ids: Vec<u64>,
    pub extrapolated: Vec<bool>,
    pub outage: Vec<Vec<f64>>,
}

impl OutageTable {
    pub fn build(
        route: &Route,
        rem: &[RemEntry],
        cfg: &PlatoonConfig,
        prop: &TwoSlopeParams,
        geo_radius_m: f64,
    ) -> Result<Self> {
        route.validate()?;
        crate::remstore::validate_rem(rem)?;
        let channels = rem[0].channel_indices();
        if channels.is_empty() {
            return Err(Error::EmptyChannelSet);
        }
        let resolved = resolve_route(route, rem, geo_radius_m)?;
        let t = threshold_at_range(cfg, prop)?;
        let outage = resolved
            .par_iter()
            .map(|&(i, _)| rem[i].channels.iter().map(|c| c.model.cdf(t)).collect())
            .collect();
        Ok(OutageTable {
            channels,
            locations: route.locations.clone(),
            distance_m: route.cumulative_distance_m(),
            entry_ids: resolved.iter().map(|&(i, _)| rem[i].id).collect(),
            extrapolated: resolved.iter().map(|&(_, x)| x).collect(),
            outage,
        })
    }

    /// Table from a raw outage matrix, locations laid out 1 m apart on x.
    pub fn from_matrix(channels: Vec<u16>, outage: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::EmptyChannelSet);
        }
        if outage.is_empty() || outage.iter().any(|r| r.len() != channels.len()) {
            return Err(Error::InvalidInput("outage matrix shape mismatch".into()));
        }
        let n = outage.len();
        Ok(OutageTable {
            channels,
            locations: (0..n).map(|i| Location { x: i as f64, y: 0.0, z: 0.0 }).collect(),
            distance_m: (0..n).map(|i| i as f64).collect(),
            entry_ids: (0..n as u64).collect(),
            extrapolated: vec![false; n],
            outage,
        })
    }

    pub fn len(&self) -> usize {
        self.outage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outage.is_empty()
    }

    pub fn feasible(&self, p_max: f64) -> Vec<Vec<bool>> {
        self.outage
            .iter()
            .map(|r| r.iter().map(|&p| p <= p_max).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub loc: Location,
    pub distance_m: f64,
    pub entry_id: u64,
    pub channel: u16,
    pub outage: f64,
    /// `None` when the chosen channel is never available.
    pub latency_lb_s: Option<f64>,
    pub extrapolated: bool,
    /// Channels with outage ≤ `p_max` here.
    pub feasible: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub algorithm: String,
    pub switches: usize,
    pub p_max: f64,
    pub packet_bits: f64,
    pub capacity_threshold_bps: f64,
    pub locations: Vec<PlanStep>,
}

impl ChannelPlan {
    pub fn channels(&self) -> Vec<u16> {
        self.locations.iter().map(|s| s.channel).collect()
    }

    /// Steps whose chosen channel exceeds `p_max`.
    pub fn violations(&self) -> usize {
        self.locations.iter().filter(|s| s.outage > self.p_max).count()
    }
}

pub fn count_switches<T: PartialEq>(seq: &[T]) -> usize {
    seq.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Assembles a plan from column choices into `table`.
pub fn build_plan(
    algorithm: &str,
    table: &OutageTable,
    choice: &[usize],
    cfg: &PlatoonConfig,
    p_max: f64,
    packet_bits: f64,
) -> ChannelPlan {
    let locations: Vec<PlanStep> = choice
        .iter()
        .enumerate()
        .map(|(l, &c)| {
            let outage = table.outage[l][c];
            PlanStep {
                loc: table.locations[l],
                distance_m: table.distance_m[l],
                entry_id: table.entry_ids[l],
                channel: table.channels[c],
                outage,
                latency_lb_s: latency_lower_bound(outage, cfg, packet_bits).ok(),
                extrapolated: table.extrapolated[l],
                feasible: table.outage[l]
                    .iter()
                    .zip(&table.channels)
                    .filter(|(&p, _)| p <= p_max)
                    .map(|(_, &ch)| ch)
                    .collect(),
            }
        })
        .collect();
    ChannelPlan {
        algorithm: algorithm.to_string(),
        switches: count_switches(choice),
        p_max,
        packet_bits,
        capacity_threshold_bps: cfg.capacity_threshold_bps,
        locations,
    }
}

fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = i;
        }
    }
    best
}

/// Lowest-outage channel everywhere; ties go to the lowest index.
pub fn greedy_choice(table: &OutageTable) -> Vec<usize> {
    table.outage.iter().map(|r| argmin(r)).collect()
}

/// Keeps the current channel while it stays within `p_max`, otherwise moves
/// to the lowest-outage channel.
pub fn greedy_constrained_choice(table: &OutageTable, p_max: f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(table.len());
    for r in &table.outage {
        let c = match out.last() {
            Some(&cur) if r[cur] <= p_max => cur,
            _ => argmin(r),
        };
        out.push(c);
    }
    out
}

/// Minimum-switch feasible assignment over the layered graph START → layer
/// 0 → … → layer L−1 → END. Among minimum-switch assignments the
/// lexicographically smallest column sequence is returned. `None` when some
/// layer has no feasible column.
pub fn min_switch_assignment(feasible: &[Vec<bool>]) -> Option<Vec<usize>> {
    let layers = feasible.len();
    if layers == 0 {
        return Some(Vec::new());
    }
    let width = feasible[0].len();
    if feasible.iter().any(|r| !r.iter().any(|&f| f)) {
        return None;
    }
    // Distances to END, found by Dijkstra on the reversed graph.
    let idx = |l: usize, c: usize| l * width + c;
    let mut dist = vec![usize::MAX; layers * width];
    let mut heap = BinaryHeap::new();
    for c in (0..width).filter(|&c| feasible[layers - 1][c]) {
        dist[idx(layers - 1, c)] = 0;
        heap.push(Reverse((0usize, layers - 1, c)));
    }
    while let Some(Reverse((d, l, c))) = heap.pop() {
        if d > dist[idx(l, c)] || l == 0 {
            continue;
        }
        for p in (0..width).filter(|&p| feasible[l - 1][p]) {
            let nd = d + usize::from(p != c);
            if nd < dist[idx(l - 1, p)] {
                dist[idx(l - 1, p)] = nd;
                heap.push(Reverse((nd, l - 1, p)));
            }
        }
    }
    let start = (0..width)
        .filter(|&c| feasible[0][c])
        .min_by_key(|&c| (dist[idx(0, c)], c))?;
    let mut path = vec![start];
    for l in 1..layers {
        let cur = *path.last().unwrap();
        let want = dist[idx(l - 1, cur)];
        let next = (0..width)
            .find(|&c| {
                feasible[l][c]
                    && dist[idx(l, c)] != usize::MAX
                    && dist[idx(l, c)] + usize::from(c != cur) == want
            })
            .expect("a shortest-path successor exists");
        path.push(next);
    }
    Some(path)
}

pub fn assign_greedy(table: &OutageTable, cfg: &PlatoonConfig, packet_bits: f64) -> ChannelPlan {
    build_plan("greedy", table, &greedy_choice(table), cfg, cfg.max_outage, packet_bits)
}

pub fn assign_greedy_constrained(
    table: &OutageTable,
    cfg: &PlatoonConfig,
    p_max: f64,
    packet_bits: f64,
) -> Result<ChannelPlan> {
    check_feasible(table, p_max)?;
    let choice = greedy_constrained_choice(table, p_max);
    Ok(build_plan("greedy-constrained", table, &choice, cfg, p_max, packet_bits))
}

fn check_feasible(table: &OutageTable, p_max: f64) -> Result<()> {
    for (l, r) in table.outage.iter().enumerate() {
        let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min <= p_max) {
            let loc = table.locations[l];
            return Err(Error::NoFeasibleChannel {
                index: l,
                x: loc.x,
                y: loc.y,
                z: loc.z,
                min_outage: min,
                p_max,
            });
        }
    }
    Ok(())
}

pub fn assign_dijkstra(
    table: &OutageTable,
    cfg: &PlatoonConfig,
    p_max: f64,
    packet_bits: f64,
) -> Result<ChannelPlan> {
    check_feasible(table, p_max)?;
    let choice = min_switch_assignment(&table.feasible(p_max)).expect("feasibility checked");
    Ok(build_plan("dijkstra", table, &choice, cfg, p_max, packet_bits))
}

/// Mean interference-plus-noise power (mW) per subcarrier for a channel.
/// Falls back to `K·E[e^{−χ}]` under the model when no measured mean exists.
pub fn mean_power_mw(c: &ChannelModel, active_subcarriers: usize) -> f64 {
    c.mean_power_mw.unwrap_or_else(|| {
        let m = &c.model;
        active_subcarriers as f64
            * m.weights
                .iter()
                .zip(&m.means)
                .zip(&m.stddevs)
                .map(|((w, mu), s)| w * (-mu + 0.5 * s * s).exp())
                .sum::<f64>()
    })
}

/// Mean-power matrix aligned with `table`.
pub fn mean_power_table(table: &OutageTable, rem: &[RemEntry], cfg: &PlatoonConfig) -> Result<Vec<Vec<f64>>> {
    table
        .entry_ids
        .iter()
        .map(|id| {
            let e = rem
                .iter()
                .find(|e| e.id == *id)
                .ok_or_else(|| Error::InvalidInput(format!("REM entry {id} not found")))?;
            Ok(e.channels
                .iter()
                .map(|c| mean_power_mw(c, cfg.active_subcarriers))
                .collect())
        })
        .collect()
}

/// Stays on the current channel until its mean power rises more than 15%
/// over the previous location, then moves to the lowest-mean channel.
pub fn bumblebee_choice(means: &[Vec<f64>], initial: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(means.len());
    let mut cur = initial;
    for (l, row) in means.iter().enumerate() {
        if l > 0 && row[cur] > (1.0 + BUMBLEBEE_RISE) * means[l - 1][cur] {
            cur = argmin(row);
        }
        out.push(cur);
    }
    out
}

pub fn assign_bumblebee(
    table: &OutageTable,
    means: &[Vec<f64>],
    initial_channel: u16,
    cfg: &PlatoonConfig,
    packet_bits: f64,
) -> Result<ChannelPlan> {
    if means.len() != table.len() || means.iter().any(|r| r.len() != table.channels.len()) {
        return Err(Error::InvalidInput("mean-power matrix shape mismatch".into()));
    }
    let initial = column(table, initial_channel)?;
    let choice = bumblebee_choice(means, initial);
    Ok(build_plan("bumblebee", table, &choice, cfg, cfg.max_outage, packet_bits))
}

fn column(table: &OutageTable, channel: u16) -> Result<usize> {
    table
        .channels
        .iter()
        .position(|&c| c == channel)
        .ok_or_else(|| Error::InvalidInput(format!("channel {channel} not in channel set")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningParams {
    pub reward_free: f64,
    pub reward_busy: f64,
    pub alpha: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        LearningParams {
            reward_free: DEFAULT_REWARD_FREE,
            reward_busy: DEFAULT_REWARD_BUSY,
            alpha: DEFAULT_LEARNING_ALPHA,
        }
    }
}

/// Exponentially averaged rewards. `passes[p][l][c]` is true when channel
/// column `c` was busy at location `l` in training pass `p`.
pub fn learning_statistics(passes: &[Vec<Vec<bool>>], p: &LearningParams) -> Vec<Vec<f64>> {
    let Some(first) = passes.first() else {
        return Vec::new();
    };
    let mut q: Vec<Vec<f64>> = first.iter().map(|r| vec![0.0; r.len()]).collect();
    for pass in passes {
        for (ql, bl) in q.iter_mut().zip(pass) {
            for (v, &busy) in ql.iter_mut().zip(bl) {
                let r = if busy { p.reward_busy } else { p.reward_free };
                *v = (1.0 - p.alpha) * *v + p.alpha * r;
            }
        }
    }
    q
}

/// Max-statistic channel per location; ties keep the current channel when it
/// is among the best, else the lowest index.
pub fn learning_choice(stats: &[Vec<f64>]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(stats.len());
    for row in stats {
        let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let c = match out.last() {
            Some(&cur) if row[cur] == best => cur,
            _ => row.iter().position(|&v| v == best).unwrap_or(0),
        };
        out.push(c);
    }
    out
}

/// Busy/free training passes from a REM. Retained samples are split in time
/// order into `passes` chunks and a chunk is busy when its empirical outage
/// exceeds `p_max`; model-only channels use the model outage for every pass.
pub fn training_passes(
    table: &OutageTable,
    rem: &[RemEntry],
    cfg: &PlatoonConfig,
    prop: &TwoSlopeParams,
    p_max: f64,
    passes: usize,
) -> Result<Vec<Vec<Vec<bool>>>> {
    let passes = passes.max(1);
    let t = threshold_at_range(cfg, prop)?;
    let per_loc: Vec<Vec<Vec<bool>>> = table
        .entry_ids
        .iter()
        .map(|id| {
            let e = rem
                .iter()
                .find(|e| e.id == *id)
                .ok_or_else(|| Error::InvalidInput(format!("REM entry {id} not found")))?;
            Ok(e.channels
                .iter()
                .map(|c| match &c.samples {
                    Some(s) if s.len() >= passes => (0..passes)
                        .map(|p| {
                            let chunk = &s[p * s.len() / passes..(p + 1) * s.len() / passes];
                            let below = chunk.iter().filter(|&&x| x < t).count();
                            below as f64 / chunk.len() as f64 > p_max
                        })
                        .collect(),
                    _ => vec![c.model.cdf(t) > p_max; passes],
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..passes)
        .map(|p| {
            per_loc
                .iter()
                .map(|chs| chs.iter().map(|v| v[p]).collect())
                .collect()
        })
        .collect())
}

pub fn assign_learning(
    table: &OutageTable,
    passes: &[Vec<Vec<bool>>],
    params: &LearningParams,
    cfg: &PlatoonConfig,
    packet_bits: f64,
) -> Result<ChannelPlan> {
    if passes
        .iter()
        .any(|p| p.len() != table.len() || p.iter().any(|r| r.len() != table.channels.len()))
    {
        return Err(Error::InvalidInput("training pass shape mismatch".into()));
    }
    if !(params.alpha > 0.0 && params.alpha <= 1.0) {
        return Err(Error::InvalidConfig("learning alpha must lie in (0,1]".into()));
    }
    let choice = if passes.is_empty() {
        vec![0; table.len()]
    } else {
        learning_choice(&learning_statistics(passes, params))
    };
    Ok(build_plan("learning", table, &choice, cfg, cfg.max_outage, packet_bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::GmmModel;
    use crate::types::ChannelId;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> PlatoonConfig {
        PlatoonConfig::reference()
    }

    fn brute_min_switches(feasible: &[Vec<bool>]) -> Option<usize> {
        let w = feasible[0].len();
        let total = w.pow(feasible.len() as u32);
        let mut best: Option<usize> = None;
        for code in 0..total {
            let mut c = code;
            let seq: Vec<usize> = (0..feasible.len())
                .map(|_| {
                    let d = c % w;
                    c /= w;
                    d
                })
                .collect();
            if seq.iter().enumerate().all(|(l, &ch)| feasible[l][ch]) {
                let s = count_switches(&seq);
                best = Some(best.map_or(s, |b: usize| b.min(s)));
            }
        }
        best
    }

    #[test]
    fn threshold_unit_argument_and_power_doubling() {
        let mut c = cfg();
        let unit_gain = std::f64::consts::LN_2 * c.capacity_threshold_bps
            / (c.subcarrier_spacing_hz * c.tx_power_mw());
        assert!(outage_threshold(&c, unit_gain).abs() < 1e-12);
        let t1 = outage_threshold(&c, 1e-9);
        c.tx_power_per_subcarrier_dbm += 10.0 * 2f64.log10();
        let t2 = outage_threshold(&c, 1e-9);
        assert!((t1 - t2 - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn threshold_at_two_hundred_metres() {
        // ln(ln2·3e6 / (156.3e3 · (100/48) · L)) with L at 200 m, evaluated
        // at 50 digits.
        let t = threshold_at_range(&cfg(), &TwoSlopeParams::reference()).unwrap();
        let expected = 23.059_352_998_225_811;
        assert!(((t - expected) / expected).abs() < 1e-12, "{t:.15}");
    }

    fn entry_with(model: GmmModel) -> RemEntry {
        RemEntry {
            id: 0,
            location: Location::new(0.0, 0.0, 0.0).unwrap(),
            channels: vec![ChannelModel {
                channel: ChannelId::new(0, 0.0),
                model,
                sample_count: 10,
                samples: None,
                mean_power_mw: None,
            }],
            cluster_label: -1,
        }
    }

    #[test]
    fn outage_tail_and_median() {
        let c = cfg();
        let p = TwoSlopeParams::reference();
        let t = threshold_at_range(&c, &p).unwrap();
        let e = entry_with(GmmModel::single(t, 0.7).unwrap());
        let q = OutageQuery::new(&e, 0, &c, &p).unwrap();
        assert!((outage_probability(&q).unwrap() - 0.5).abs() < 1e-12);
        let e = entry_with(GmmModel::new(vec![0.5, 0.5], vec![t + 10.0, t + 12.0], vec![1.0, 0.5]).unwrap());
        let q = OutageQuery::new(&e, 0, &c, &p).unwrap();
        assert!(outage_probability(&q).unwrap() < 1e-12);
        assert!(OutageQuery::new(&e, 9, &c, &p).is_err());
    }

    #[test]
    fn latency_values() {
        let c = cfg();
        let base = latency_lower_bound(0.0, &c, 3200.0).unwrap();
        assert!((base - 1.0667e-3).abs() < 1e-6);
        assert_eq!(latency_lower_bound(0.5, &c, 3200.0).unwrap(), 2.0 * base);
        let p = 1.0 - 1.0 / 1.03;
        let rise = latency_lower_bound(p, &c, 3200.0).unwrap() - base;
        assert!((rise - 32e-6).abs() < 0.1e-6, "{rise}");
        assert!(matches!(latency_lower_bound(1.0, &c, 3200.0), Err(Error::ChannelNeverAvailable)));
    }

    #[test]
    fn greedy_cases() {
        let t = OutageTable::from_matrix(vec![5], vec![vec![0.9], vec![0.1], vec![0.5]]).unwrap();
        assert_eq!(assign_greedy(&t, &cfg(), 3200.0).switches, 0);
        let t = OutageTable::from_matrix(
            vec![0, 1],
            vec![vec![0.1, 0.2], vec![0.2, 0.1], vec![0.1, 0.2], vec![0.2, 0.1]],
        )
        .unwrap();
        let plan = assign_greedy(&t, &cfg(), 3200.0);
        assert_eq!(plan.switches, 3);
        assert_eq!(plan.channels(), vec![0, 1, 0, 1]);
        let t = OutageTable::from_matrix(vec![0, 1], vec![vec![0.3, 0.3]]).unwrap();
        assert_eq!(greedy_choice(&t), vec![0]);
    }

    #[test]
    fn greedy_switches_match_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Vec<Vec<f64>> = (0..100).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let t = OutageTable::from_matrix(vec![0, 1, 2, 3], m.clone()).unwrap();
        let plan = assign_greedy(&t, &cfg(), 3200.0);
        let mut prev = None;
        let mut n = 0;
        for row in &m {
            let mut b = 0;
            for c in 1..4 {
                if row[c] < row[b] {
                    b = c;
                }
            }
            if prev.is_some_and(|p| p != b) {
                n += 1;
            }
            prev = Some(b);
        }
        assert_eq!(plan.switches, n);
    }

    #[test]
    fn dijkstra_small_cases() {
        let all = vec![vec![true; 3]; 5];
        assert_eq!(min_switch_assignment(&all).unwrap(), vec![0; 5]);
        let f = vec![vec![true, false], vec![true, true], vec![false, true]];
        let p = min_switch_assignment(&f).unwrap();
        assert_eq!(count_switches(&p), 1);
        assert_eq!(p, vec![0, 0, 1]);
        assert!(min_switch_assignment(&[vec![true], vec![false]]).is_none());
    }

    #[test]
    fn dijkstra_reports_infeasible_location() {
        let t = OutageTable::from_matrix(vec![0, 1], vec![vec![0.0, 0.5], vec![0.3, 0.2]]).unwrap();
        match assign_dijkstra(&t, &cfg(), 1e-4, 3200.0).unwrap_err() {
            Error::NoFeasibleChannel { index, min_outage, .. } => {
                assert_eq!(index, 1);
                assert_eq!(min_outage, 0.2);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn dijkstra_is_lexicographically_smallest_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let layers = rng.random_range(1..=7);
            let w = rng.random_range(1..=3);
            let f: Vec<Vec<bool>> = (0..layers)
                .map(|_| {
                    let mut r: Vec<bool> = (0..w).map(|_| rng.random_bool(0.5)).collect();
                    let k = rng.random_range(0..w);
                    r[k] = true;
                    r
                })
                .collect();
            let p = min_switch_assignment(&f).unwrap();
            let best = brute_min_switches(&f).unwrap();
            assert_eq!(count_switches(&p), best);
            // Enumerate all optimal sequences in lexicographic order.
            let total = w.pow(layers as u32);
            let mut first: Option<Vec<usize>> = None;
            for code in 0..total {
                let mut c = code;
                let mut seq = vec![0; layers];
                for l in (0..layers).rev() {
                    seq[l] = c % w;
                    c /= w;
                }
                if seq.iter().enumerate().all(|(l, &ch)| f[l][ch]) && count_switches(&seq) == best {
                    first = Some(seq);
                    break;
                }
            }
            assert_eq!(Some(p), first);
        }
    }

    #[test]
    fn bumblebee_cases() {
        let improving = vec![vec![5.0, 9.0], vec![4.0, 1.0], vec![3.0, 1.0]];
        assert_eq!(count_switches(&bumblebee_choice(&improving, 0)), 0);
        let jump = vec![vec![1.0, 2.0], vec![1.16, 0.9], vec![1.16, 0.9]];
        assert_eq!(bumblebee_choice(&jump, 0), vec![0, 1, 1]);
        let small = vec![vec![1.0, 2.0], vec![1.14, 0.9]];
        assert_eq!(bumblebee_choice(&small, 0), vec![0, 0]);
    }

    #[test]
    fn model_mean_power_fallback() {
        let e = entry_with(GmmModel::single(-(2f64.ln()), 1e-4).unwrap());
        let m = mean_power_mw(&e.channels[0], 48);
        assert!((m - 96.0).abs() < 1e-6, "{m}");
    }

    #[test]
    fn learning_cases() {
        let p = LearningParams::default();
        let free = vec![vec![vec![false; 3]; 6]; 4];
        assert_eq!(learning_choice(&learning_statistics(&free, &p)), vec![0; 6]);

        let mut busy0 = free.clone();
        for pass in &mut busy0 {
            for l in pass.iter_mut() {
                l[0] = true;
            }
        }
        assert!(learning_choice(&learning_statistics(&busy0, &p)).iter().all(|&c| c != 0));

        // One pass with α = 1 reduces to greedy on the busy indicator.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pass: Vec<Vec<bool>> = (0..40).map(|_| (0..3).map(|_| rng.random_bool(0.5)).collect()).collect();
        let one = LearningParams { alpha: 1.0, ..p };
        let got = learning_choice(&learning_statistics(std::slice::from_ref(&pass), &one));
        let mut cur: Option<usize> = None;
        for (l, row) in pass.iter().enumerate() {
            let any_free = row.iter().any(|&b| !b);
            let want = match cur {
                Some(c) if !row[c] || !any_free => c,
                _ => row.iter().position(|&b| b == !any_free).unwrap(),
            };
            assert_eq!(got[l], want, "location {l}");
            cur = Some(want);
        }
    }

    #[test]
    fn plan_latency_is_recomputed_exactly() {
        let t = OutageTable::from_matrix(vec![0, 1], vec![vec![1e-5, 0.2], vec![0.3, 1.0]]).unwrap();
        let plan = assign_greedy(&t, &cfg(), 3200.0);
        for s in &plan.locations {
            assert_eq!(s.latency_lb_s, latency_lower_bound(s.outage, &cfg(), 3200.0).ok());
        }
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(serde_json::from_str::<ChannelPlan>(&json).unwrap(), plan);
    }

    proptest! {
        #[test]
        fn more_power_never_raises_outage(
            dbm in -10.0..30.0f64, extra in 0.01..20.0f64,
            mu in 15.0..35.0f64, sd in 0.1..3.0f64,
        ) {
            let p = TwoSlopeParams::reference();
            let e = entry_with(GmmModel::single(mu, sd).unwrap());
            let mut c = cfg();
            c.tx_power_per_subcarrier_dbm = dbm;
            let lo = outage_probability(&OutageQuery::new(&e, 0, &c, &p).unwrap()).unwrap();
            let t_lo = threshold_at_range(&c, &p).unwrap();
            c.tx_power_per_subcarrier_dbm = dbm + extra;
            let hi = outage_probability(&OutageQuery::new(&e, 0, &c, &p).unwrap()).unwrap();
            prop_assert!(threshold_at_range(&c, &p).unwrap() < t_lo);
            prop_assert!(hi <= lo);
        }
    }
}
