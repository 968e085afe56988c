use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sqparse::fit::{AdamConfig, AlphaBounds, FitConfig};
use sqparse::loss::LossConfig;
use sqparse::metrics::EvalConfig;
use sqparse::sampler::SamplingMode;

#[derive(Debug, Parser)]
#[command(name = "sqparse", version, about = "Fit superquadric ensembles to point clouds and meshes")]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "SQPARSE_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an ensemble to a mesh (.obj, .ply) or point cloud (.xyz, vertex-only .obj/.ply).
    Fit(FitArgs),
    /// Chamfer distance, volumetric IoU and active count of a saved ensemble.
    Eval(EvalArgs),
    /// Compare analytic and central-difference gradients on random problems.
    CheckGrad(CheckGradArgs),
    /// Compare the sorted expectation against exhaustive enumeration.
    CheckLoss(CheckLossArgs),
    /// Write the active primitives of an ensemble as an OBJ mesh.
    Export(ExportArgs),
    /// Sample surface points from a mesh or a saved ensemble.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub input: PathBuf,
    /// Ensemble JSON to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Trace CSV to write (default: the output path with a `.trace.csv` suffix).
    #[arg(long, conflicts_with = "no_trace")]
    pub trace: Option<PathBuf>,
    /// Do not write a trace file.
    #[arg(long)]
    pub no_trace: bool,

    #[arg(long, default_value_t = 1)]
    pub max_prims: usize,
    #[arg(long, default_value_t = 2000)]
    pub iters_main: usize,
    #[arg(long, default_value_t = 500)]
    pub iters_gamma: usize,
    #[arg(long, default_value_t = AdamConfig::default().lr)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Jitter the angle grids every iteration.
    #[arg(long)]
    pub resample_each_iter: bool,
    /// Draw a fresh subset of the input every iteration.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub redraw_target: bool,
    /// Surface samples per primitive.
    #[arg(long, default_value_t = 200)]
    pub k: usize,
    /// Target points per iteration.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = AlphaBounds::default().min)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = AlphaBounds::default().max)]
    pub alpha_max: f64,
    #[arg(long, default_value_t = 10)]
    pub trace_every: usize,
    /// uniform_arc or uniform_angle.
    #[arg(long, default_value = "uniform_arc", value_parser = parse_mode)]
    pub sampling_mode: SamplingMode,

    #[command(flatten)]
    pub loss: LossArgs,

    /// Points drawn from a mesh input before fitting.
    #[arg(long, default_value_t = 100_000)]
    pub pool_size: usize,
    /// Surface samples per primitive for the reported Chamfer distance.
    #[arg(long, default_value_t = 100_000)]
    pub eval_k: usize,
    /// Target points for the reported Chamfer distance (mesh inputs).
    #[arg(long, default_value_t = 100_000)]
    pub eval_n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub gamma_threshold: f64,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long, default_value_t = LossConfig::default().w_px)]
    pub w_px: f64,
    #[arg(long, default_value_t = LossConfig::default().w_xp)]
    pub w_xp: f64,
    /// Weight of the "at least one primitive" hinge.
    #[arg(long, default_value_t = LossConfig::default().alpha)]
    pub parsimony_alpha: f64,
    /// Weight of the square-root sparsity term.
    #[arg(long, default_value_t = LossConfig::default().beta)]
    pub parsimony_beta: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub normalize_by_counts: bool,
}

impl LossArgs {
    pub fn config(&self) -> LossConfig {
        LossConfig {
            w_px: self.w_px,
            w_xp: self.w_xp,
            alpha: self.parsimony_alpha,
            beta: self.parsimony_beta,
            normalize_by_counts: self.normalize_by_counts,
        }
    }
}

impl FitArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            max_prims: self.max_prims,
            iters_main: self.iters_main,
            iters_gamma: self.iters_gamma,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            restarts: self.restarts,
            seed: self.seed,
            resample_each_iter: self.resample_each_iter,
            redraw_target: self.redraw_target,
            k: self.k,
            n: self.n,
            loss: self.loss.config(),
            alpha_bounds: AlphaBounds {
                min: self.alpha_min,
                max: self.alpha_max,
            },
            trace_every: self.trace_every,
            sampling_mode: self.sampling_mode,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            gamma_threshold: self.gamma_threshold,
            eval_k: self.eval_k,
            eval_n: self.eval_n,
            seed: self.seed,
            ..EvalConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub ensemble: PathBuf,
    /// Mesh or point cloud in the original (un-normalised) coordinates.
    pub target: PathBuf,
    #[arg(long, default_value_t = EvalConfig::default().gamma_threshold)]
    pub gamma_threshold: f64,
    #[arg(long, default_value_t = EvalConfig::default().iou_samples)]
    pub iou_samples: usize,
    #[arg(long, default_value_t = EvalConfig::default().eval_k)]
    pub eval_k: usize,
    #[arg(long, default_value_t = EvalConfig::default().eval_n)]
    pub eval_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EvalArgs {
    pub fn config(&self) -> EvalConfig {
        EvalConfig {
            gamma_threshold: self.gamma_threshold,
            iou_samples: self.iou_samples,
            eval_k: self.eval_k,
            eval_n: self.eval_n,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub max_prims: usize,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value_t = sqparse::grad::DEFAULT_FD_STEP)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct CheckLossArgs {
    #[arg(long, default_value_t = 12)]
    pub max_prims: usize,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = 50)]
    pub max_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    /// Perturb the fast evaluator (exercises the failure path).
    #[arg(long, hide = true)]
    pub corrupt_expectation: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    pub ensemble: PathBuf,
    pub output: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Keep the unit-cube frame instead of mapping back to input coordinates.
    #[arg(long)]
    pub normalized: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Mesh (.obj, .ply) or ensemble (.json).
    pub input: PathBuf,
    /// Output point file (.xyz or .ply).
    pub output: PathBuf,
    /// Points in total for a mesh, per active primitive for an ensemble.
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma_threshold: f64,
    /// Keep ensemble samples in the unit-cube frame.
    #[arg(long)]
    pub normalized: bool,
}

fn parse_mode(s: &str) -> Result<SamplingMode, String> {
    s.parse().map_err(|e: sqparse::Error| e.to_string())
}
