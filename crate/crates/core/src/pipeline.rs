//! End-to-end runs: generate, mask, learn subspaces, train the flow, sample,
//! evaluate against held-out samples, and optionally run the baselines.
//!
//! Repeat `k` offsets every seed (data, mask, Stage I, flow, sampling) by `k`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::baselines::{pcaflow_generate, pcaflow_train, smg_core_generate, NiwPrior};
use crate::batch::MatrixBatch;
use crate::error::{Error, Result};
use crate::flow::{decode, extract_cores, sample_cores, train_flow, FlowOutput};
use crate::io::{self, Config};
use crate::metrics::{evaluate, MetricsReport};
use crate::patch::{crop, patchify_batch, plan, unpatchify_batch, PatchSpec};
use crate::stage1::{train_stage1, Stage1Output};
use crate::stiefel::StiefelPair;
use crate::synth::{apply_mask, generate_range, SynthConfig};

pub const COREFLOW: &str = "coreflow";
pub const SMG_CORE: &str = "smg_core";
pub const PCAFLOW: &str = "pcaflow";

/// Everything produced by one repeat.
pub struct RepeatOutput {
    pub observed: MatrixBatch,
    pub holdout: MatrixBatch,
    pub truth: StiefelPair,
    pub stage1: Stage1Output,
    pub flow: FlowOutput,
    pub generated: MatrixBatch,
    /// Reports keyed by method name; CoreFlow is always present.
    pub reports: BTreeMap<String, MetricsReport>,
    pub baseline_batches: BTreeMap<String, MatrixBatch>,
}

fn offset(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

/// The config actually used for repeat `k`.
pub fn repeat_config(cfg: &Config, k: usize) -> Config {
    let mut c = cfg.clone();
    c.data.seed = offset(cfg.data.seed, k);
    c.stage1.seed = offset(cfg.stage1.seed, k);
    c.flow.seed = offset(cfg.flow.seed, k);
    c.eval.sample_seed = offset(cfg.eval.sample_seed, k);
    c
}

fn niw_prior(cfg: &Config, d: usize) -> NiwPrior {
    let mut p = NiwPrior::default_for(d);
    if let Some(k) = cfg.baseline.kappa0 {
        p.kappa = k;
    }
    if let Some(nu) = cfg.baseline.nu0 {
        p.nu = nu;
    }
    p
}

/// Maps a batch in the working representation back to the evaluation domain.
fn to_eval_domain(batch: MatrixBatch, patched: bool) -> Result<MatrixBatch> {
    if patched {
        unpatchify_batch(&batch)
    } else {
        Ok(batch)
    }
}

fn with_spec(mut batch: MatrixBatch, spec: Option<&PatchSpec>) -> MatrixBatch {
    if let Some(s) = spec {
        let mut meta = batch.metadata.take().unwrap_or_default();
        meta.extend(s.to_metadata());
        batch.metadata = Some(meta);
    }
    batch
}

/// Runs one repeat of the configured experiment (seeds already offset).
pub fn run_repeat(cfg: &Config, baselines: bool) -> Result<RepeatOutput> {
    let d = &cfg.data;
    let synth = SynthConfig {
        case: d.case,
        m1: d.m1,
        m2: d.m2,
        rank: d.rank,
        n: d.n + d.holdout,
        seed: d.seed,
    };
    let all = generate_range(&synth, 0, d.n + d.holdout)?;
    let (train, holdout) = all.batch.split_at(d.n);
    if holdout.len() < 2 {
        return Err(Error::InvalidConfig(
            "evaluation needs a holdout of at least 2 samples".into(),
        ));
    }
    let observed = apply_mask(&train, d.p_miss, d.seed)?;

    let spec = if d.patch {
        Some(plan(d.m1, d.m2)?)
    } else {
        None
    };
    let working = match &spec {
        Some(s) => patchify_batch(&observed, s)?,
        None => observed.clone(),
    };
    let holdout_eval = match &spec {
        Some(s) => MatrixBatch::new(
            s.cropped().0,
            s.cropped().1,
            holdout
                .matrices()
                .iter()
                .map(|m| crop(m, s))
                .collect::<Result<_>>()?,
        )?,
        None => holdout.clone(),
    };

    let stage1 = train_stage1(&working, &cfg.stage1)?;
    let filled = stage1.filled.clone().into_batch()?;
    let cores = extract_cores(&filled, &stage1.pair)?;
    let flow = train_flow(&cores, &cfg.flow)?;
    let n_gen = cfg.eval.n_generate;
    let sampled = sample_cores(&flow.net, n_gen, &cfg.flow, cfg.eval.sample_seed)?;
    let generated = to_eval_domain(
        with_spec(decode(&sampled, &stage1.pair)?, spec.as_ref()),
        spec.is_some(),
    )?;

    let mut report = evaluate(&holdout_eval, &generated)?;
    if spec.is_none() {
        report = report.with_angles(&stage1.pair, &all.truth)?;
    }
    let mut reports = BTreeMap::from([(COREFLOW.to_string(), report)]);
    let mut baseline_batches = BTreeMap::new();

    if baselines {
        let prior = niw_prior(cfg, cores.dim());
        let smg = smg_core_generate(
            &filled,
            &stage1.pair,
            n_gen,
            Some(&prior),
            cfg.eval.sample_seed,
        )?;
        let smg = to_eval_domain(with_spec(smg, spec.as_ref()), spec.is_some())?;
        reports.insert(SMG_CORE.into(), evaluate(&holdout_eval, &smg)?);
        baseline_batches.insert(SMG_CORE.into(), smg);

        if working.is_complete() {
            let cap = cfg
                .baseline
                .pca_dim_cap
                .unwrap_or(cfg.stage1.rank * cfg.stage1.rank);
            let (model, pflow) = pcaflow_train(&working, cap, &cfg.flow)?;
            let pgen = pcaflow_generate(
                &model,
                &pflow.net,
                n_gen,
                cfg.flow.ode_steps,
                cfg.eval.sample_seed,
            )?;
            let pgen = to_eval_domain(with_spec(pgen, spec.as_ref()), spec.is_some())?;
            reports.insert(PCAFLOW.into(), evaluate(&holdout_eval, &pgen)?);
            baseline_batches.insert(PCAFLOW.into(), pgen);
        } else {
            log::warn!("skipping PCA-Flow: it needs fully observed training data");
        }
    }

    Ok(RepeatOutput {
        observed,
        holdout,
        truth: all.truth,
        stage1,
        flow,
        generated,
        reports,
        baseline_batches,
    })
}

/// Mean and population std of each metric across repeats.
pub fn aggregate(reports: &[&MetricsReport]) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in r.fields() {
            values.entry(k.to_string()).or_default().push(v);
        }
    }
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    for (k, vs) in values {
        let n = vs.len() as f64;
        let m = vs.iter().sum::<f64>() / n;
        let s = (vs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        mean.insert(k.clone(), m);
        std.insert(k, s);
    }
    (mean, std)
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineSummary {
    pub repeats: usize,
    /// Per method, per repeat.
    pub reports: BTreeMap<String, Vec<MetricsReport>>,
    pub mean: BTreeMap<String, BTreeMap<String, f64>>,
    pub std: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Runs all repeats and writes their artifacts under `out_dir`:
///
/// * `repeat_k/` with the observed batch and masks, subspaces, flow
///   checkpoint, loss traces, generated batch(es) and `report.json`
/// * `report.json` / `report_std.json`: CoreFlow mean and std across repeats
/// * `report_<baseline>.json` / `report_<baseline>_std.json` when baselines run
pub fn run_pipeline(cfg: &Config, baselines: bool, out_dir: &Path) -> Result<PipelineSummary> {
    if cfg.eval.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut per_method: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for k in 0..cfg.eval.repeats {
        let rc = repeat_config(cfg, k);
        log::info!(
            "repeat {k}: seeds data={} stage1={} flow={}",
            rc.data.seed,
            rc.stage1.seed,
            rc.flow.seed
        );
        let out = run_repeat(&rc, baselines)?;
        let dir = out_dir.join(format!("repeat_{k}"));
        std::fs::create_dir_all(&dir)?;
        write_repeat(&dir, &rc, &out)?;
        for (name, r) in out.reports {
            per_method.entry(name).or_default().push(r);
        }
    }
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    for (name, reports) in &per_method {
        let (m, s) = aggregate(&reports.iter().collect::<Vec<_>>());
        let (mean_file, std_file) = if name == COREFLOW {
            ("report.json".to_string(), "report_std.json".to_string())
        } else {
            (
                format!("report_{name}.json"),
                format!("report_{name}_std.json"),
            )
        };
        io::write_json(&out_dir.join(mean_file), &m)?;
        io::write_json(&out_dir.join(std_file), &s)?;
        mean.insert(name.clone(), m);
        std.insert(name.clone(), s);
    }
    Ok(PipelineSummary {
        repeats: cfg.eval.repeats,
        reports: per_method,
        mean,
        std,
    })
}

fn write_repeat(dir: &Path, cfg: &Config, out: &RepeatOutput) -> Result<()> {
    io::write_json(&dir.join("config.json"), cfg)?;
    io::write_batch(&dir.join("observed.cfmb"), &out.observed)?;
    if let Some(masks) = out.observed.masks() {
        io::write_masks(&dir.join("observed.cfmk"), masks, out.observed.shape())?;
    }
    io::write_batch(&dir.join("holdout.cfmb"), &out.holdout)?;
    io::write_subspaces(&dir.join("truth.cfss"), &out.truth)?;
    io::write_subspaces(&dir.join("subspaces.cfss"), &out.stage1.pair)?;
    io::write_trace(&dir.join("stage1_trace.csv"), &out.stage1.trace)?;
    io::write_flow(&dir.join("flow.cfnn"), &out.flow.net)?;
    io::write_trace(&dir.join("flow_trace.csv"), &out.flow.trace)?;
    io::write_batch(&dir.join("generated.cfmb"), &out.generated)?;
    for (name, b) in &out.baseline_batches {
        io::write_batch(&dir.join(format!("generated_{name}.cfmb")), b)?;
    }
    io::write_json(&dir.join("report.json"), &out.reports)?;
    Ok(())
}
