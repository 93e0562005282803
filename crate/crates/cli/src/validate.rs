//! `validate`: re-checks artifact invariants and the input hash chain.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

use rem_core::ingest::{read_chi_csv, read_trace, MANIFEST_SUFFIX};
use rem_core::planner::{count_switches, latency_lower_bound, outage_probability, ChannelPlan, OutageQuery};
use rem_core::remstore::{read_rem, RemEntry};
use rem_core::scenario::{GroundTruth, ScenarioSpec};
use rem_core::{PlatoonConfig, Route};

use crate::artifact::{check_hash_chain, read_csv_meta, read_json_artifact, Meta};
use crate::commands::load_run_config;
use crate::ValidateArgs;

/// Assignments enumerated exhaustively up to this many; larger plans use
/// layer-by-layer dynamic programming.
const EXHAUSTIVE_LIMIT: u64 = 2_000_000;

pub fn run(a: &ValidateArgs) -> Result<()> {
    let recheck = match (&a.rem, &a.route) {
        (Some(rem), Some(_)) => Some((read_rem(rem)?.entries, load_run_config(a.config.as_deref())?)),
        (None, None) => None,
        _ => bail!("--rem and --route go together"),
    };
    let mut failed = 0;
    for f in &a.files {
        let problems = match check_file(f, a.oracle, recheck.as_ref().map(|(r, c)| (r.as_slice(), c))) {
            Ok(p) => p,
            Err(e) => vec![format!("{e:#}")],
        };
        if problems.is_empty() {
            println!("ok   {}", f.display());
        } else {
            failed += 1;
            for p in problems {
                println!("FAIL {}: {p}", f.display());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} files failed validation", a.files.len());
    }
    Ok(())
}

fn chain(path: &Path, meta: Option<Meta>) -> Vec<String> {
    match meta {
        Some(m) => check_hash_chain(path, &m),
        None => vec!["no meta block (tool version, seed, input hashes)".into()],
    }
}

fn check_file(
    path: &Path,
    oracle: bool,
    recheck: Option<(&[RemEntry], &crate::commands::RunConfig)>,
) -> Result<Vec<String>> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    if name.ends_with(".jsonl") {
        let rem = read_rem(path)?;
        let meta = rem.meta.map(serde_json::from_value).transpose().context("bad meta")?;
        return Ok(chain(path, meta));
    }
    if name.ends_with(MANIFEST_SUFFIX) {
        read_trace(path)?;
        let (meta, _): (_, Value) = read_json_artifact(path)?;
        return Ok(chain(path, meta));
    }
    if name.ends_with(".csv") {
        let meta = read_csv_meta(path)?;
        let mut problems = chain(path, meta);
        problems.extend(check_csv(path)?);
        return Ok(problems);
    }
    let (meta, body): (_, Value) = read_json_artifact(path)?;
    let mut problems = chain(path, meta);
    let has = |k: &str| body.get(k).is_some();
    if has("switches") && has("locations") {
        let plan: ChannelPlan = serde_json::from_value(body)?;
        problems.extend(check_plan(&plan, oracle, recheck));
    } else if has("regions") && has("route") {
        let spec: ScenarioSpec = serde_json::from_value(body)?;
        spec.validate()?;
    } else if has("regions") && has("locations") {
        let _: GroundTruth = serde_json::from_value(body)?;
    } else if has("locations") {
        let route: Route = serde_json::from_value(body)?;
        route.validate()?;
    } else {
        bail!("unrecognised artifact");
    }
    Ok(problems)
}

fn check_csv(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap_or_default();
    let mut problems = Vec::new();
    if header == "channel,loc_x,loc_y,loc_z,chi" {
        read_chi_csv(text.as_bytes())?;
        return Ok(problems);
    }
    let width = header.split(',').count();
    for (i, line) in text.lines().filter(|l| !l.starts_with('#')).skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            problems.push(format!("row {} has {} cells, header has {width}", i + 1, cells.len()));
        }
        if header == "eps_g,max_nn_m" && cells.iter().any(|c| c.parse::<f64>().is_err()) {
            problems.push(format!("row {} is not numeric", i + 1));
        }
    }
    Ok(problems)
}

/// Minimum switches over feasible assignments, computed independently of the
/// planner: exhaustive enumeration when small, otherwise a forward DP.
fn oracle_min_switches(feasible: &[Vec<bool>]) -> Option<usize> {
    let w = feasible.first()?.len();
    let total = (w as u64).checked_pow(feasible.len() as u32);
    if let Some(total) = total.filter(|&t| t <= EXHAUSTIVE_LIMIT) {
        let mut best: Option<usize> = None;
        let mut seq = vec![0usize; feasible.len()];
        for code in 0..total {
            let mut c = code;
            for s in seq.iter_mut() {
                *s = (c % w as u64) as usize;
                c /= w as u64;
            }
            if seq.iter().zip(feasible).all(|(&ch, f)| f[ch]) {
                let s = count_switches(&seq);
                best = Some(best.map_or(s, |b| b.min(s)));
            }
        }
        return best;
    }
    let inf = usize::MAX / 2;
    let mut cost: Vec<usize> = feasible[0].iter().map(|&f| if f { 0 } else { inf }).collect();
    for f in &feasible[1..] {
        let best_prev = *cost.iter().min().unwrap();
        cost = (0..w)
            .map(|c| if f[c] { cost[c].min(best_prev + 1) } else { inf })
            .collect();
    }
    cost.into_iter().filter(|&c| c < inf).min()
}

fn check_plan(
    plan: &ChannelPlan,
    oracle: bool,
    recheck: Option<(&[RemEntry], &crate::commands::RunConfig)>,
) -> Vec<String> {
    let mut problems = Vec::new();
    let chans = plan.channels();
    if count_switches(&chans) != plan.switches {
        problems.push(format!(
            "switches {} but the channel sequence has {}",
            plan.switches,
            count_switches(&chans)
        ));
    }
    let cfg = PlatoonConfig {
        capacity_threshold_bps: plan.capacity_threshold_bps,
        ..PlatoonConfig::default()
    };
    for (l, s) in plan.locations.iter().enumerate() {
        if !(0.0..=1.0).contains(&s.outage) {
            problems.push(format!("location {l}: outage {} outside [0,1]", s.outage));
            continue;
        }
        let lat = latency_lower_bound(s.outage, &cfg, plan.packet_bits).ok();
        if lat != s.latency_lb_s {
            problems.push(format!("location {l}: latency {:?}, recomputed {lat:?}", s.latency_lb_s));
        }
        if (s.outage <= plan.p_max) != s.feasible.contains(&s.channel) {
            problems.push(format!("location {l}: feasible set disagrees with outage"));
        }
        if let Some((rem, run)) = recheck {
            match rem.iter().find(|e| e.id == s.entry_id) {
                None => problems.push(format!("location {l}: REM entry {} missing", s.entry_id)),
                Some(e) => {
                    let q = OutageQuery::new(e, s.channel, &run.platoon, &run.propagation)
                        .and_then(|q| outage_probability(&q));
                    match q {
                        Ok(p) if p == s.outage => {}
                        Ok(p) => problems.push(format!("location {l}: outage {} recomputed as {p}", s.outage)),
                        Err(e) => problems.push(format!("location {l}: {e}")),
                    }
                }
            }
        }
    }
    let constrained = matches!(plan.algorithm.as_str(), "dijkstra" | "greedy-constrained");
    if constrained && plan.violations() > 0 {
        problems.push(format!("{} locations exceed p_max", plan.violations()));
    }
    if oracle && !plan.locations.is_empty() {
        let mut channels: Vec<u16> = plan.locations.iter().flat_map(|s| s.feasible.clone()).collect();
        channels.push(plan.locations[0].channel);
        channels.sort_unstable();
        channels.dedup();
        let feasible: Vec<Vec<bool>> = plan
            .locations
            .iter()
            .map(|s| channels.iter().map(|c| s.feasible.contains(c)).collect())
            .collect();
        match oracle_min_switches(&feasible) {
            None => problems.push("oracle: no feasible assignment exists".into()),
            Some(best) if plan.algorithm == "dijkstra" && plan.switches != best => {
                problems.push(format!("oracle: optimum is {best} switches, plan has {}", plan.switches))
            }
            Some(best) if plan.violations() == 0 && plan.switches < best => {
                problems.push(format!("oracle: feasible plan beats the optimum {best}"))
            }
            Some(_) => {}
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_paths_agree() {
        let f = vec![
            vec![true, false, true],
            vec![false, true, false],
            vec![true, true, false],
            vec![false, false, true],
        ];
        assert_eq!(oracle_min_switches(&f), Some(2));
        let long: Vec<Vec<bool>> = (0..40).map(|i| vec![i < 20, i >= 10, true]).collect();
        assert_eq!(oracle_min_switches(&long), Some(0));
        let forced: Vec<Vec<bool>> = (0..40).map(|i| vec![i < 20, i >= 20]).collect();
        assert_eq!(oracle_min_switches(&forced), Some(1));
    }
}
