//! `coreflow`: command-line front end for the two-stage low-rank matrix
//! generator. Every subcommand writes its outputs plus a replay manifest.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coreflow::baselines::{pcaflow_generate, pcaflow_train, smg_core_generate, NiwPrior};
use coreflow::flow::{decode, extract_cores, sample_cores, train_flow};
use coreflow::io::{self, Config};
use coreflow::metrics::evaluate;
use coreflow::patch::{patchify_batch, plan, unpatchify_batch, PatchSpec};
use coreflow::pipeline::{repeat_config, run_pipeline};
use coreflow::stage1::train_stage1;
use coreflow::synth::{apply_mask, generate, Case, SynthConfig};
use coreflow::{Error, MatrixBatch, Result};

use manifest::{beside, Recorder};

#[derive(Parser, Debug)]
#[command(
    name = "coreflow",
    version,
    about = "Low-rank matrix generation with learned subspaces and a core flow"
)]
struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, env = "COREFLOW_THREADS", default_value_t = 1)]
    threads: usize,

    /// Omit wall-clock timings from manifests (for byte comparisons).
    #[arg(long, global = true)]
    no_manifest_timing: bool,

    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic batch and its true subspaces.
    GenData {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Where to write the true subspaces.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Hide entries uniformly at random.
    Mask {
        #[arg(long)]
        input: PathBuf,
        /// Missing probability per entry [config: data.p_miss, default 0].
        #[arg(long)]
        p_miss: Option<f64>,
        /// Mask seed [config: data.seed, default 0].
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: PathBuf,
    },
    /// Stage I: learn the shared subspaces.
    TrainSubspaces {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[command(flatten)]
        stage1: Stage1Args,
        #[arg(long)]
        out: PathBuf,
        /// Completed batch (missing entries filled by the low-rank fit).
        #[arg(long)]
        filled_out: Option<PathBuf>,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Stage II: train the velocity field on extracted cores.
    TrainFlow {
        /// Complete (or filled) batch.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        subspaces: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Integrate the flow backward from noise and decode matrices.
    Sample {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        subspaces: PathBuf,
        /// Samples to draw [config: eval.n_generate, default 500].
        #[arg(long)]
        n: Option<usize>,
        /// Sampling seed [config: eval.sample_seed, default 0].
        #[arg(long)]
        seed: Option<u64>,
        /// RK4 grid points [config: flow.ode_steps, default 101].
        #[arg(long)]
        ode_steps: Option<usize>,
        /// Copy metadata (e.g. a patch spec) from this batch.
        #[arg(long)]
        meta_from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a generated batch against a reference batch.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// Learned subspaces; with --truth-subspaces adds principal angles.
        #[arg(long, requires = "truth_subspaces")]
        subspaces: Option<PathBuf>,
        #[arg(long)]
        truth_subspaces: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SMG-Core baseline: NIW posterior over cores under fixed subspaces.
    BaselineSmg {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        subspaces: PathBuf,
        /// Samples to draw [config: eval.n_generate, default 500].
        #[arg(long)]
        n: Option<usize>,
        /// Sampling seed [config: eval.sample_seed, default 0].
        #[arg(long)]
        seed: Option<u64>,
        /// Prior strength [config: baseline.kappa0, default 1].
        #[arg(long)]
        kappa0: Option<f64>,
        /// Prior degrees of freedom [config: baseline.nu0, default d + 2].
        #[arg(long)]
        nu0: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCA-Flow ablation: flattened PCA plus the same flow (complete data only).
    BaselinePcaflow {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        /// PCA dimension cap [config: baseline.pca_dim_cap, default R^2].
        #[arg(long)]
        dim_cap: Option<usize>,
        /// Samples to draw [config: eval.n_generate, default 500].
        #[arg(long)]
        n: Option<usize>,
        /// Sampling seed [config: eval.sample_seed, default 0].
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rearrange p x p tiles into rows.
    Patchify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Patch side; default round((H W)^(1/4)).
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
    /// Invert `patchify` using the patch spec stored in the batch.
    Unpatchify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, mask, train both stages, sample and evaluate.
    Pipeline {
        #[command(flatten)]
        data: DataArgs,
        /// Missing probability per entry [config: data.p_miss, default 0].
        #[arg(long)]
        p_miss: Option<f64>,
        /// Patchify before Stage I [config: data.patch].
        #[arg(long)]
        patch: bool,
        /// Held-out reference samples [config: data.holdout, default 500].
        #[arg(long)]
        holdout: Option<usize>,
        /// Generated samples per repeat [config: eval.n_generate, default 500].
        #[arg(long)]
        n_generate: Option<usize>,
        /// Seeded repeats; repeat k offsets every seed by k [config: eval.repeats, default 3].
        #[arg(long)]
        repeats: Option<usize>,
        /// Also run SMG-Core and PCA-Flow.
        #[arg(long)]
        baselines: bool,
        #[command(flatten)]
        stage1: Stage1Args,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// blobs, bands, waves or crosshatch [config: data.case, default blobs].
    #[arg(long)]
    case: Option<Case>,
    /// Square size; sets both m1 and m2 [config default 200].
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    m1: Option<usize>,
    #[arg(long)]
    m2: Option<usize>,
    /// Rank of the generator; also the fitted rank unless --fit-rank is given [config default 24].
    #[arg(long)]
    rank: Option<usize>,
    /// Training samples [config: data.n, default 1000].
    #[arg(long)]
    n: Option<usize>,
    /// Seed for data; in `pipeline` every stage uses it [config: data.seed, default 0].
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct Stage1Args {
    /// Fitted rank [config: stage1.rank, default 8].
    #[arg(long)]
    fit_rank: Option<usize>,
    /// Subspace steps per epoch [config: stage1.steps, default 200].
    #[arg(long)]
    sub_steps: Option<usize>,
    /// [config: stage1.lr_u, default 0.05].
    #[arg(long)]
    lr_u: Option<f64>,
    /// [config: stage1.lr_v, default 0.05].
    #[arg(long)]
    lr_v: Option<f64>,
    /// Stage I mini-batch size [config: stage1.batch_size, default 64].
    #[arg(long)]
    sub_batch_size: Option<usize>,
    /// Outer epochs with missing data [config: stage1.epochs, default 20].
    #[arg(long)]
    epochs: Option<usize>,
    /// [config: stage1.seed, default 0].
    #[arg(long)]
    stage1_seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct FlowArgs {
    /// Flow training steps [config: flow.steps, default 5000].
    #[arg(long)]
    flow_steps: Option<usize>,
    /// Adam learning rate [config: flow.lr, default 3e-4].
    #[arg(long)]
    flow_lr: Option<f64>,
    /// [config: flow.batch_size, default 128].
    #[arg(long)]
    flow_batch_size: Option<usize>,
    /// Hidden widths, comma separated [config: flow.hidden, default 128,128].
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Time-embedding width [config: flow.embed_width, default 32].
    #[arg(long)]
    embed_width: Option<usize>,
    /// [config: flow.seed, default 0].
    #[arg(long)]
    flow_seed: Option<u64>,
    /// RK4 grid points [config: flow.ode_steps, default 101].
    #[arg(long)]
    ode_steps: Option<usize>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, cfg: &mut Config) {
        let d = &mut cfg.data;
        set(&mut d.case, self.case);
        set(&mut d.m1, self.m);
        set(&mut d.m2, self.m);
        set(&mut d.m1, self.m1);
        set(&mut d.m2, self.m2);
        set(&mut d.rank, self.rank);
        set(&mut cfg.stage1.rank, self.rank);
        set(&mut d.n, self.n);
        set(&mut d.seed, self.seed);
    }
}

impl Stage1Args {
    fn apply(self, cfg: &mut Config) {
        let s = &mut cfg.stage1;
        set(&mut s.rank, self.fit_rank);
        set(&mut s.steps, self.sub_steps);
        set(&mut s.lr_u, self.lr_u);
        set(&mut s.lr_v, self.lr_v);
        set(&mut s.batch_size, self.sub_batch_size);
        set(&mut s.epochs, self.epochs);
        set(&mut s.seed, self.stage1_seed);
    }
}

impl FlowArgs {
    fn apply(self, cfg: &mut Config) {
        let f = &mut cfg.flow;
        set(&mut f.steps, self.flow_steps);
        set(&mut f.lr, self.flow_lr);
        set(&mut f.batch_size, self.flow_batch_size);
        set(&mut f.hidden, self.hidden);
        set(&mut f.embed_width, self.embed_width);
        set(&mut f.seed, self.flow_seed);
        set(&mut f.ode_steps, self.ode_steps);
    }
}

struct Ctx {
    cfg: Config,
    timing: bool,
}

impl Ctx {
    fn recorder(&self, command: &str) -> Recorder {
        Recorder::new(command, &self.cfg, self.timing)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn write_batch(rec: &mut Recorder, name: &str, path: &Path, batch: &MatrixBatch) -> Result<()> {
    ensure_parent(path)?;
    io::write_batch(path, batch)?;
    rec.output(name, path);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let timing = !cli.no_manifest_timing;
    match cli.command {
        Command::GenData {
            data,
            out,
            truth_out,
        } => {
            data.apply(&mut cfg);
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("gen-data");
            let d = &ctx.cfg.data;
            rec.seed("data", d.seed);
            let synth = generate(&SynthConfig {
                case: d.case,
                m1: d.m1,
                m2: d.m2,
                rank: d.rank,
                n: d.n,
                seed: d.seed,
            })?;
            rec.phase("generate");
            write_batch(&mut rec, "batch", &out, &synth.batch)?;
            if let Some(t) = &truth_out {
                ensure_parent(t)?;
                io::write_subspaces(t, &synth.truth)?;
                rec.output("truth", t);
            }
            rec.finish(&beside(&out))
        }
        Command::Mask {
            input,
            p_miss,
            seed,
            out,
            mask_out,
        } => {
            set(&mut cfg.data.p_miss, p_miss);
            set(&mut cfg.data.seed, seed);
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("mask");
            rec.seed("mask", ctx.cfg.data.seed);
            rec.input("batch", &input);
            let batch = io::read_batch(&input)?;
            let masked = apply_mask(&batch, ctx.cfg.data.p_miss, ctx.cfg.data.seed)?;
            write_batch(&mut rec, "batch", &out, &masked)?;
            ensure_parent(&mask_out)?;
            io::write_masks(
                &mask_out,
                masked.masks().expect("masked batch"),
                masked.shape(),
            )?;
            rec.output("masks", &mask_out);
            rec.finish(&beside(&out))
        }
        Command::TrainSubspaces {
            input,
            masks,
            stage1,
            out,
            filled_out,
            trace_out,
        } => {
            stage1.apply(&mut cfg);
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("train-subspaces");
            rec.seed("stage1", ctx.cfg.stage1.seed);
            rec.input("batch", &input);
            if let Some(m) = &masks {
                rec.input("masks", m);
            }
            let batch = io::read_batch_with_masks(&input, masks.as_deref())?;
            let fit = train_stage1(&batch, &ctx.cfg.stage1)?;
            rec.phase("stage1");
            ensure_parent(&out)?;
            io::write_subspaces(&out, &fit.pair)?;
            rec.output("subspaces", &out);
            if let Some(p) = &filled_out {
                let mut filled = fit.filled.clone().into_batch()?;
                filled.metadata = batch.metadata.clone();
                write_batch(&mut rec, "filled", p, &filled)?;
            }
            if let Some(p) = &trace_out {
                ensure_parent(p)?;
                io::write_trace(p, &fit.trace)?;
                rec.output("trace", p);
            }
            rec.finish(&beside(&out))
        }
        Command::TrainFlow {
            input,
            subspaces,
            flow,
            out,
            trace_out,
        } => {
            flow.apply(&mut cfg);
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("train-flow");
            rec.seed("flow", ctx.cfg.flow.seed);
            rec.input("batch", &input);
            rec.input("subspaces", &subspaces);
            let batch = io::read_batch(&input)?;
            if !batch.is_complete() {
                return Err(Error::IncompleteData(
                    "train-flow needs a complete or filled batch".into(),
                ));
            }
            let pair = io::read_subspaces(&subspaces)?;
            let cores = extract_cores(&batch, &pair)?;
            let trained = train_flow(&cores, &ctx.cfg.flow)?;
            rec.phase("flow");
            ensure_parent(&out)?;
            io::write_flow(&out, &trained.net)?;
            rec.output("flow", &out);
            if let Some(p) = &trace_out {
                ensure_parent(p)?;
                io::write_trace(p, &trained.trace)?;
                rec.output("trace", p);
            }
            rec.finish(&beside(&out))
        }
        Command::Sample {
            flow,
            subspaces,
            n,
            seed,
            ode_steps,
            meta_from,
            out,
        } => {
            set(&mut cfg.eval.n_generate, n);
            set(&mut cfg.eval.sample_seed, seed);
            set(&mut cfg.flow.ode_steps, ode_steps);
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("sample");
            rec.seed("sample", ctx.cfg.eval.sample_seed);
            rec.input("flow", &flow);
            rec.input("subspaces", &subspaces);
            let net = io::read_flow(&flow)?;
            let pair = io::read_subspaces(&subspaces)?;
            let cores = sample_cores(
                &net,
                ctx.cfg.eval.n_generate,
                &ctx.cfg.flow,
                ctx.cfg.eval.sample_seed,
            )?;
            let mut batch = decode(&cores, &pair)?;
            if let Some(src) = &meta_from {
                rec.input("meta_from", src);
                batch.metadata = io::read_batch(src)?.metadata;
            }
            rec.phase("sample");
            write_batch(&mut rec, "batch", &out, &batch)?;
            rec.finish(&beside(&out))
        }
        Command::Evaluate {
            truth,
            generated,
            subspaces,
            truth_subspaces,
            out,
        } => {
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("evaluate");
            rec.input("truth", &truth);
            rec.input("generated", &generated);
            let mut report = evaluate(&io::read_batch(&truth)?, &io::read_batch(&generated)?)?;
            if let (Some(s), Some(t)) = (&subspaces, &truth_subspaces) {
                rec.input("subspaces", s);
                rec.input("truth_subspaces", t);
                report = report.with_angles(&io::read_subspaces(s)?, &io::read_subspaces(t)?)?;
            }
            rec.phase("evaluate");
            ensure_parent(&out)?;
            io::write_json(&out, &report)?;
            rec.output("report", &out);
            rec.finish(&beside(&out))
        }
        Command::BaselineSmg {
            input,
            subspaces,
            n,
            seed,
            kappa0,
            nu0,
            out,
        } => {
            set(&mut cfg.eval.n_generate, n);
            set(&mut cfg.eval.sample_seed, seed);
            if kappa0.is_some() {
                cfg.baseline.kappa0 = kappa0;
            }
            if nu0.is_some() {
                cfg.baseline.nu0 = nu0;
            }
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("baseline-smg");
            rec.seed("sample", ctx.cfg.eval.sample_seed);
            rec.input("batch", &input);
            rec.input("subspaces", &subspaces);
            let batch = io::read_batch(&input)?;
            if !batch.is_complete() {
                return Err(Error::IncompleteData(
                    "baseline-smg needs a complete or filled batch".into(),
                ));
            }
            let pair = io::read_subspaces(&subspaces)?;
            let mut prior = NiwPrior::default_for(pair.rank() * pair.rank());
            set(&mut prior.kappa, ctx.cfg.baseline.kappa0);
            set(&mut prior.nu, ctx.cfg.baseline.nu0);
            let mut gen = smg_core_generate(
                &batch,
                &pair,
                ctx.cfg.eval.n_generate,
                Some(&prior),
                ctx.cfg.eval.sample_seed,
            )?;
            gen.metadata = batch.metadata.clone();
            rec.phase("smg");
            write_batch(&mut rec, "batch", &out, &gen)?;
            rec.finish(&beside(&out))
        }
        Command::BaselinePcaflow {
            input,
            masks,
            dim_cap,
            n,
            seed,
            flow,
            out,
        } => {
            flow.apply(&mut cfg);
            set(&mut cfg.eval.n_generate, n);
            set(&mut cfg.eval.sample_seed, seed);
            if dim_cap.is_some() {
                cfg.baseline.pca_dim_cap = dim_cap;
            }
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("baseline-pcaflow");
            rec.seed("flow", ctx.cfg.flow.seed);
            rec.seed("sample", ctx.cfg.eval.sample_seed);
            rec.input("batch", &input);
            let batch = io::read_batch_with_masks(&input, masks.as_deref())?;
            let cap = ctx
                .cfg
                .baseline
                .pca_dim_cap
                .unwrap_or(ctx.cfg.stage1.rank * ctx.cfg.stage1.rank);
            let (model, trained) = pcaflow_train(&batch, cap, &ctx.cfg.flow)?;
            rec.phase("train");
            let mut gen = pcaflow_generate(
                &model,
                &trained.net,
                ctx.cfg.eval.n_generate,
                ctx.cfg.flow.ode_steps,
                ctx.cfg.eval.sample_seed,
            )?;
            gen.metadata = batch.metadata.clone();
            rec.phase("sample");
            write_batch(&mut rec, "batch", &out, &gen)?;
            rec.finish(&beside(&out))
        }
        Command::Patchify {
            input,
            masks,
            p,
            out,
            mask_out,
        } => {
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("patchify");
            rec.input("batch", &input);
            let batch = io::read_batch_with_masks(&input, masks.as_deref())?;
            let (h, w) = batch.shape();
            let spec = match p {
                Some(p) => PatchSpec::with_side(h, w, p)?,
                None => plan(h, w)?,
            };
            let patched = patchify_batch(&batch, &spec)?;
            let plain = patched.clone().without_masks();
            write_batch(&mut rec, "batch", &out, &plain)?;
            if let (Some(mp), Some(ms)) = (&mask_out, patched.masks()) {
                ensure_parent(mp)?;
                io::write_masks(mp, ms, patched.shape())?;
                rec.output("masks", mp);
            }
            rec.finish(&beside(&out))
        }
        Command::Unpatchify { input, out } => {
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("unpatchify");
            rec.input("batch", &input);
            let batch = unpatchify_batch(&io::read_batch(&input)?)?;
            write_batch(&mut rec, "batch", &out, &batch)?;
            rec.finish(&beside(&out))
        }
        Command::Pipeline {
            data,
            p_miss,
            patch,
            holdout,
            n_generate,
            repeats,
            baselines,
            stage1,
            flow,
            out_dir,
        } => {
            let seed = data.seed;
            data.apply(&mut cfg);
            if let Some(s) = seed {
                cfg.stage1.seed = s;
                cfg.flow.seed = s;
                cfg.eval.sample_seed = s;
            }
            stage1.apply(&mut cfg);
            flow.apply(&mut cfg);
            set(&mut cfg.data.p_miss, p_miss);
            cfg.data.patch |= patch;
            set(&mut cfg.data.holdout, holdout);
            set(&mut cfg.eval.n_generate, n_generate);
            set(&mut cfg.eval.repeats, repeats);
            let ctx = Ctx { cfg, timing };
            let mut rec = ctx.recorder("pipeline");
            for k in 0..ctx.cfg.eval.repeats {
                let rc = repeat_config(&ctx.cfg, k);
                rec.seed(&format!("repeat_{k}.data"), rc.data.seed);
                rec.seed(&format!("repeat_{k}.stage1"), rc.stage1.seed);
                rec.seed(&format!("repeat_{k}.flow"), rc.flow.seed);
                rec.seed(&format!("repeat_{k}.sample"), rc.eval.sample_seed);
            }
            std::fs::create_dir_all(&out_dir)?;
            let summary = run_pipeline(&ctx.cfg, baselines, &out_dir)?;
            rec.phase("pipeline");
            io::write_json(&out_dir.join("summary.json"), &summary)?;
            rec.output("report", &out_dir.join("report.json"));
            rec.output("summary", &out_dir.join("summary.json"));
            rec.finish(&out_dir.join("manifest.json"))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        4
    } else if matches!(err, Error::InvalidConfig(_) | Error::PriorInvalid(_)) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
    {
        log::warn!("could not configure the thread pool: {e}");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
