use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use rem_core::ingest::{
    batch_by_location, find_manifests, power_frames, read_chi_csv, read_mean_power_csv,
    read_trace, spectralize, write_chi_csv, write_mean_power_csv, RecordKind, TraceManifest,
    MANIFEST_SUFFIX,
};
use rem_core::planner::{
    assign_bumblebee, assign_dijkstra, assign_greedy, assign_greedy_constrained, assign_learning,
    mean_power_table, training_passes, ChannelPlan, LearningParams, OutageTable,
};
use rem_core::propagation::TwoSlopeParams;
use rem_core::remstore::{
    build_rem, dbscan_compress, read_rem, sidecar_path, sweep_geo_radius, write_rem,
    ClusteringParams, ComponentChoice, FitOptions, MergeOptions, RemFile,
};
use rem_core::scenario::{generate as generate_scenario, ScenarioSpec};
use rem_core::{validate_config, PlatoonConfig, Route};

use crate::artifact::{
    read_config, read_json_artifact, with_temp, write_atomic, write_json_artifact, Meta,
};
use crate::{Algorithm, ClusterArgs, FitArgs, GenerateArgs, IngestArgs, PlanArgs, ReportArgs};

/// `platoon` and `propagation` sections of a config or scenario file.
#[derive(Debug, Default, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub platoon: PlatoonConfig,
    #[serde(default)]
    pub propagation: TwoSlopeParams,
}

pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg: RunConfig = match path {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    validate_config(cfg.platoon.clone())?;
    cfg.propagation.validate()?;
    Ok(cfg)
}

fn csv_with_meta(meta: &Meta, write: impl FnOnce(&mut Vec<u8>) -> rem_core::Result<()>) -> Result<Vec<u8>> {
    let mut buf = meta.csv_comment().into_bytes();
    write(&mut buf)?;
    Ok(buf)
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let mut spec: ScenarioSpec = read_config(&a.spec)?;
    spec.seed = a.seed;
    spec.validate()?;
    let meta = Meta::new("generate", Some(a.seed), std::slice::from_ref(&a.spec), json!({"mode": spec.mode}))?;
    fs::create_dir_all(&a.out)?;
    let staging = a.out.join(format!(".staging-{}", std::process::id()));
    let result = (|| -> Result<()> {
        let files = generate_scenario(&spec, &staging)?;
        let route: Route = serde_json::from_slice(&fs::read(&files.route)?)?;
        write_json_artifact(&a.out.join("route.json"), &meta, &route)?;
        let truth: serde_json::Value = serde_json::from_slice(&fs::read(&files.ground_truth)?)?;
        write_json_artifact(&a.out.join("ground_truth.json"), &meta, &truth)?;
        write_json_artifact(&a.out.join("scenario.json"), &meta, &spec)?;
        for f in &files.data {
            let name = f.strip_prefix(&staging)?;
            let dest = a.out.join(name);
            if let Some(d) = dest.parent() {
                fs::create_dir_all(d)?;
            }
            if name.to_string_lossy().ends_with(MANIFEST_SUFFIX) {
                let m: TraceManifest = serde_json::from_slice(&fs::read(f)?)?;
                let data = f.parent().unwrap().join(&m.data_file);
                fs::rename(&data, dest.parent().unwrap().join(&m.data_file))?;
                write_json_artifact(&dest, &meta, &m)?;
            } else {
                let mut bytes = meta.csv_comment().into_bytes();
                bytes.extend(fs::read(f)?);
                write_atomic(&dest, &bytes)?;
            }
        }
        Ok(())
    })();
    let _ = fs::remove_dir_all(&staging);
    result?;
    info!("generated scenario into {}", a.out.display());
    Ok(())
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let cfg = load_run_config(a.config.as_deref())?;
    let manifests = find_manifests(&a.input).with_context(|| format!("listing {}", a.input.display()))?;
    if manifests.is_empty() {
        bail!("no *{MANIFEST_SUFFIX} files in {}", a.input.display());
    }
    let traces = manifests
        .par_iter()
        .map(|m| read_trace(m).with_context(|| format!("trace {}", m.display())))
        .collect::<Result<Vec<_>>>()?;
    let frames = traces
        .par_iter()
        .map(|t| match t.manifest.record_kind {
            RecordKind::Iq => spectralize(t, a.dft_size, a.keep_center),
            RecordKind::Powers => power_frames(t),
        })
        .collect::<rem_core::Result<Vec<_>>>()?
        .concat();
    let batches = batch_by_location(&frames, &cfg.platoon)?;
    let mut inputs: Vec<PathBuf> = Vec::new();
    for (m, t) in manifests.iter().zip(&traces) {
        inputs.push(m.clone());
        inputs.push(m.parent().unwrap_or(Path::new(".")).join(&t.manifest.data_file));
    }
    if let Some(c) = &a.config {
        inputs.push(c.clone());
    }
    let meta = Meta::new(
        "ingest",
        None,
        &inputs,
        json!({"dft_size": a.dft_size, "keep_center": a.keep_center}),
    )?;
    write_atomic(&a.out, &csv_with_meta(&meta, |b| write_chi_csv(b, &batches))?)?;
    let mp = a
        .mean_power
        .clone()
        .unwrap_or_else(|| a.out.with_file_name("mean_power.csv"));
    write_atomic(&mp, &csv_with_meta(&meta, |b| write_mean_power_csv(b, &batches))?)?;
    info!("{} frames -> {} batches", frames.len(), batches.len());
    Ok(())
}

/// Writes a REM and its sample sidecar through temporaries.
pub fn write_rem_atomic(path: &Path, file: &RemFile) -> Result<()> {
    let side = sidecar_path(path);
    with_temp(path, |tmp| {
        write_rem(tmp, file)?;
        let tmp_side = sidecar_path(tmp);
        if tmp_side.exists() {
            fs::rename(&tmp_side, &side)?;
        } else if side.exists() {
            fs::remove_file(&side)?;
        }
        Ok(())
    })
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let mut batches = read_chi_csv(fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?)?;
    let mut inputs = vec![a.input.clone()];
    if let Some(mp) = &a.mean_power {
        read_mean_power_csv(fs::File::open(mp)?, &mut batches)?;
        inputs.push(mp.clone());
    }
    let opts = FitOptions {
        components: match a.select_max {
            Some(j) => ComponentChoice::Select(j),
            None => ComponentChoice::Fixed(a.components),
        },
        restarts: a.restarts,
        seed: a.seed,
        max_iter: a.max_iter,
        tol: a.tol,
        retain_samples: !a.no_samples,
    };
    let entries = build_rem(&batches, &opts)?;
    let meta = Meta::new("fit", Some(a.seed), &inputs, serde_json::to_value(&opts)?)?;
    write_rem_atomic(
        &a.out,
        &RemFile {
            meta: Some(meta.to_value()),
            entries,
        },
    )?;
    info!("fitted {} batches", batches.len());
    Ok(())
}

fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--sweep-geo-radius {s:?} is not a:b:step"))?;
    let [a, b, step] = parts[..] else {
        bail!("--sweep-geo-radius {s:?} is not a:b:step");
    };
    if !(a > 0.0 && b >= a && step > 0.0) {
        bail!("--sweep-geo-radius needs 0 < a <= b and step > 0");
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| a + i as f64 * step).collect())
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    if a.out.is_none() && a.sweep_out.is_none() {
        bail!("nothing to do: give --out and/or --sweep-geo-radius with --sweep-out");
    }
    let rem = read_rem(&a.input)?;
    let params = ClusteringParams {
        min_points: a.min_points,
        geo_radius_m: a.geo_radius_m,
        ks_alpha: a.ks_alpha,
        ks_radius: a.ks_radius,
    };
    params.validate()?;
    let meta = Meta::new(
        "cluster",
        Some(a.seed),
        std::slice::from_ref(&a.input),
        serde_json::to_value(&params)?,
    )?;
    if let Some(spec) = &a.sweep_geo_radius {
        let Some(out) = &a.sweep_out else {
            bail!("--sweep-geo-radius needs --sweep-out");
        };
        let curve = sweep_geo_radius(&rem.entries, &params, &parse_sweep(spec)?)?;
        let mut bytes = meta.csv_comment().into_bytes();
        bytes.extend_from_slice(b"eps_g,max_nn_m\n");
        for (e, nn) in curve {
            bytes.extend(format!("{e},{nn}\n").into_bytes());
        }
        write_atomic(out, &bytes)?;
    }
    if let Some(out) = &a.out {
        let merge = MergeOptions {
            seed: a.seed,
            ..MergeOptions::default()
        };
        let c = dbscan_compress(&rem.entries, &params, &merge)?;
        write_rem_atomic(
            out,
            &RemFile {
                meta: Some(meta.to_value()),
                entries: c.merged.clone(),
            },
        )?;
        if let Some(l) = &a.labeled {
            write_rem_atomic(
                l,
                &RemFile {
                    meta: Some(meta.to_value()),
                    entries: c.labeled.clone(),
                },
            )?;
        }
        println!(
            "entries {} -> {} ({} clusters, {:.1}% reduction)",
            c.labeled.len(),
            c.merged.len(),
            c.clusters,
            100.0 * c.size_reduction()
        );
    }
    Ok(())
}

pub fn build_plan(a: &PlanArgs) -> Result<(ChannelPlan, Vec<PathBuf>)> {
    let mut run = load_run_config(a.config.as_deref())?;
    if let Some(p) = a.p_max {
        run.platoon.max_outage = p;
        validate_config(run.platoon.clone())?;
    }
    let cfg = &run.platoon;
    let p_max = cfg.max_outage;
    let rem = read_rem(&a.rem)?;
    let (_, route): (_, Route) = read_json_artifact(&a.route)?;
    let table = OutageTable::build(&route, &rem.entries, cfg, &run.propagation, a.geo_radius_m)?;
    let bits = (a.packet_bytes * 8) as f64;
    let mut inputs = vec![a.rem.clone(), a.route.clone()];
    inputs.extend(a.config.clone());
    let plan = match a.algorithm {
        Algorithm::Greedy => assign_greedy(&table, cfg, bits),
        Algorithm::GreedyConstrained => assign_greedy_constrained(&table, cfg, p_max, bits)?,
        Algorithm::Dijkstra => assign_dijkstra(&table, cfg, p_max, bits)?,
        Algorithm::Bumblebee => {
            let means = mean_power_table(&table, &rem.entries, cfg)?;
            let initial = match a.initial_channel {
                Some(c) => c,
                None => {
                    let row = &means[0];
                    let best = (0..row.len()).fold(0, |b, i| if row[i] < row[b] { i } else { b });
                    table.channels[best]
                }
            };
            assign_bumblebee(&table, &means, initial, cfg, bits)?
        }
        Algorithm::Learning => {
            let passes = match &a.training {
                Some(t) => {
                    inputs.push(t.clone());
                    let train = read_rem(t)?;
                    let tt = OutageTable::build(&route, &train.entries, cfg, &run.propagation, a.geo_radius_m)?;
                    if tt.channels != table.channels {
                        bail!("training REM channel set differs from the planning REM");
                    }
                    training_passes(&tt, &train.entries, cfg, &run.propagation, p_max, a.training_passes)?
                }
                None => training_passes(&table, &rem.entries, cfg, &run.propagation, p_max, a.training_passes)?,
            };
            let params = LearningParams {
                reward_free: a.reward_free,
                reward_busy: a.reward_busy,
                alpha: a.learning_alpha,
            };
            assign_learning(&table, &passes, &params, cfg, bits)?
        }
    };
    Ok((plan, inputs))
}

pub fn plan(a: &PlanArgs) -> Result<()> {
    let (plan, inputs) = build_plan(a)?;
    let meta = Meta::new(
        "plan",
        None,
        &inputs,
        json!({
            "algorithm": a.algorithm.name(),
            "p_max": plan.p_max,
            "packet_bytes": a.packet_bytes,
            "geo_radius_m": a.geo_radius_m,
        }),
    )?;
    write_json_artifact(&a.out, &meta, &plan)?;
    println!(
        "{}: {} switches, {} locations above p_max",
        plan.algorithm,
        plan.switches,
        plan.violations()
    );
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let mut files = a.plan.clone();
    files.extend(
        a.compare
            .iter()
            .map(|alg| a.plans_dir.join(format!("plan_{}.json", alg.trim()))),
    );
    let mut plans = Vec::new();
    for f in &files {
        let (_, p): (_, ChannelPlan) = read_json_artifact(f).with_context(|| format!("plan {}", f.display()))?;
        plans.push(p);
    }
    let meta = Meta::new("report", None, &files, serde_json::Value::Null)?;
    let mut rows = meta.csv_comment();
    rows.push_str("algorithm,distance_m,channel,outage,latency_lb\n");
    let mut summary = meta.csv_comment();
    summary.push_str("algorithm,switches,violations,locations,mean_latency_lb_s\n");
    let mut line = Vec::new();
    for p in &plans {
        for s in &p.locations {
            rows.push_str(&format!(
                "{},{},{},{},{}\n",
                p.algorithm,
                s.distance_m,
                s.channel,
                s.outage,
                s.latency_lb_s.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        let lat: Vec<f64> = p.locations.iter().filter_map(|s| s.latency_lb_s).collect();
        let mean = if lat.is_empty() { f64::NAN } else { lat.iter().sum::<f64>() / lat.len() as f64 };
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            p.algorithm,
            p.switches,
            p.violations(),
            p.locations.len(),
            mean
        ));
        line.push(format!("{}={}", p.algorithm, p.switches));
    }
    write_atomic(&a.out, rows.as_bytes())?;
    let sp = a.summary.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".summary.csv");
        PathBuf::from(s)
    });
    write_atomic(&sp, summary.as_bytes())?;
    println!("switches: {}", line.join(" "));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parsing() {
        assert_eq!(parse_sweep("100:400:100").unwrap(), vec![100.0, 200.0, 300.0, 400.0]);
        assert_eq!(parse_sweep("50:50:10").unwrap(), vec![50.0]);
        assert!(parse_sweep("1:2").is_err());
        assert!(parse_sweep("0:2:1").is_err());
    }
}
