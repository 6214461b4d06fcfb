//! Command-line driver: JSON configuration, subcommands and their artifacts.

use crate::data::{checkerboard_sample, load_points_csv, save_points_csv, CheckerboardSpec, Parity, Point2};
use crate::denoiser::{
    held_out_mse, train_denoiser, Denoise, Denoiser, OracleDenoiser, PredictionMode, TrainOptions, DEFAULT_EPOCHS,
    DEFAULT_LR,
};
use crate::error::{Error, Result};
use crate::ldsb::{ipf_optimize_reporting, IpfConfig};
use crate::metrics::{evaluate, in_support_fraction, sliced_wasserstein, MetricsReport, DEFAULT_PROJECTIONS};
use crate::sampler::reverse_sample;
use crate::schedule::{init_linear, init_vp, perturb, PathSchedule, SubsampleMap};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub squares_per_side: usize,
    pub extent: f64,
    pub occupied: Parity,
    /// Training set size, shared by denoiser training and path optimization.
    pub n_train: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let board = CheckerboardSpec::default();
        Self {
            squares_per_side: board.squares_per_side,
            extent: board.extent,
            occupied: board.occupied,
            n_train: 20_000,
            seed: 1,
        }
    }
}

impl DataConfig {
    pub fn spec(&self) -> Result<CheckerboardSpec> {
        CheckerboardSpec::new(self.squares_per_side, self.extent, self.occupied)
    }

    pub fn sample(&self) -> Result<Vec<Point2>> {
        checkerboard_sample(&self.spec()?, self.n_train, self.seed)
    }
}

/// Sampler family: variance-preserving noise prediction or linear-path
/// direction prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vp,
    Fm,
}

impl Family {
    pub fn mode(self) -> PredictionMode {
        match self {
            Family::Vp => PredictionMode::NoisePrediction,
            Family::Fm => PredictionMode::DirectionPrediction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub family: Family,
    pub nfe: usize,
    pub base_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            family: Family::Vp,
            nfe: 20,
            base_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    fn build(&self, map: SubsampleMap) -> Result<PathSchedule> {
        match self.family {
            Family::Vp => init_vp(self.beta_start, self.beta_end, map),
            Family::Fm => init_linear(map),
        }
    }

    /// Initial path at `nfe` steps.
    pub fn init_path(&self) -> Result<PathSchedule> {
        self.build(SubsampleMap::uniform(self.base_steps, self.nfe)?)
    }

    /// The same family on every base step, used to train the denoiser.
    pub fn training_path(&self) -> Result<PathSchedule> {
        self.build(SubsampleMap::identity(self.base_steps)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        let opts = TrainOptions::default();
        Self {
            epochs: DEFAULT_EPOCHS,
            lr: DEFAULT_LR,
            hidden: opts.hidden,
            batch_size: opts.batch_size,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n: usize,
    pub seed: u64,
    /// Rescale direction-prediction weights to unit sum.
    pub rescale: bool,
    pub perturb_sigma: f64,
    pub perturb_draws: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            seed: 7,
            rescale: true,
            perturb_sigma: 0.05,
            perturb_draws: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub n_reference: usize,
    pub reference_seed: u64,
    pub n_proj: usize,
    /// Seed of the projection directions, shared by every compared sample set.
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            n_reference: 10_000,
            reference_seed: 99,
            n_proj: DEFAULT_PROJECTIONS,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
    pub ipf: IpfConfig,
    pub sampling: SamplingConfig,
    pub metrics: MetricsConfig,
}

impl Config {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(s)?;
        cfg.data.spec()?;
        cfg.ipf.validate()?;
        if cfg.schedule.nfe < 2 || cfg.sampling.n == 0 || cfg.data.n_train == 0 {
            return Err(Error::Contract("nfe must be at least 2 and sample counts positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Held-out board sample the metrics compare against.
    pub fn reference(&self) -> Result<Vec<Point2>> {
        checkerboard_sample(&self.data.spec()?, self.metrics.n_reference, self.metrics.reference_seed)
    }
}

/// Samples from `path` scored against `reference`.
pub fn evaluate_path<D: Denoise + ?Sized>(
    net: &D,
    path: &PathSchedule,
    reference: &[Point2],
    cfg: &Config,
) -> Result<MetricsReport> {
    let (samples, _) = reverse_sample(path, net, cfg.sampling.n, cfg.sampling.seed, cfg.sampling.rescale)?;
    evaluate(&samples, reference, &cfg.data.spec()?, cfg.metrics.n_proj, cfg.metrics.seed)
}

/// One row of the perturbation table; `draw` is `None` for the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbRow {
    pub sigma: f64,
    pub draw: Option<usize>,
    pub sliced_wasserstein: f64,
    pub in_support_fraction: f64,
}

/// Baseline row for `init`, then one row per random multiplicative
/// perturbation of its factors. Every row uses the same prior draws and
/// projection directions.
pub fn perturb_demo<D: Denoise + ?Sized>(
    net: &D,
    init: &PathSchedule,
    reference: &[Point2],
    cfg: &Config,
) -> Result<Vec<PerturbRow>> {
    let spec = cfg.data.spec()?;
    let s = &cfg.sampling;
    let row = |path: &PathSchedule, sigma: f64, draw: Option<usize>| -> Result<PerturbRow> {
        let (samples, _) = reverse_sample(path, net, s.n, s.seed, s.rescale)?;
        Ok(PerturbRow {
            sigma,
            draw,
            sliced_wasserstein: sliced_wasserstein(&samples, reference, cfg.metrics.n_proj, cfg.metrics.seed)?,
            in_support_fraction: in_support_fraction(&samples, &spec),
        })
    };
    let mut rows = vec![row(init, 0.0, None)?];
    for d in 0..s.perturb_draws {
        let path = perturb(init, s.perturb_sigma, s.seed.wrapping_add(1 + d as u64))?;
        rows.push(row(&path, s.perturb_sigma, Some(d))?);
    }
    Ok(rows)
}

pub fn write_perturb_csv<W: Write>(mut w: W, rows: &[PerturbRow]) -> Result<()> {
    writeln!(w, "sigma,draw,sliced_wasserstein,in_support_fraction")?;
    for r in rows {
        let draw = r.draw.map_or("baseline".to_string(), |d| d.to_string());
        writeln!(w, "{},{draw},{},{}", r.sigma, r.sliced_wasserstein, r.in_support_fraction)?;
    }
    Ok(())
}

/// Scatter plot of `points` over the board, occupied squares shaded.
pub fn scatter_svg(points: &[Point2], spec: &CheckerboardSpec) -> String {
    const SIZE: f64 = 480.0;
    let half = 1.25 * spec.extent;
    let px = |v: f64| (v + half) / (2.0 * half) * SIZE;
    let py = |v: f64| SIZE - px(v);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let side = spec.side() / (2.0 * half) * SIZE;
    for (c, r) in spec.occupied_squares() {
        let corner = spec.center(c, r);
        let (x, y) = (px(corner.x - spec.side() / 2.0), py(corner.y + spec.side() / 2.0));
        let _ = writeln!(svg, r##"<rect x="{x:.2}" y="{y:.2}" width="{side:.2}" height="{side:.2}" fill="#e6e6e6"/>"##);
    }
    let (lo, span) = (px(-spec.extent), px(spec.extent) - px(-spec.extent));
    let _ = writeln!(
        svg,
        r#"<rect x="{lo:.2}" y="{lo:.2}" width="{span:.2}" height="{span:.2}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let _ = writeln!(svg, r##"<g fill="#1f4e9c" fill-opacity="0.5">"##);
    for p in points.iter().filter(|p| p.x.abs() <= half && p.y.abs() <= half) {
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="0.9"/>"#, px(p.x), py(p.y));
    }
    svg.push_str("</g>\n</svg>\n");
    svg
}

/// Process exit code for an error: 2 bad input, 3 divergence, 4 IPF abort.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged(_) | Error::NonFiniteGradient { .. } | Error::NonFinite(_) => 3,
        Error::IpfAbort { .. } => 4,
        Error::Step { source, .. } => exit_code(source),
        _ => 2,
    }
}

#[derive(Debug, Parser)]
#[command(name = "ldsb", version, about = "Diffusion path optimization on a 2D checkerboard")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration; `{}` selects every default.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Overrides the seed of the stage the subcommand runs.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a denoiser; writes the checkpoint and `train_loss.csv`.
    TrainDenoiser(Common),
    /// Optimize the configured path; writes `path_iter{k}.csv`, `path_final.csv`, `diagnostics.json`.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Replace the denoiser by an exact one for a single data point.
        #[arg(long)]
        oracle: bool,
    },
    /// Sample along a path; writes `samples.csv` and `samples.svg`.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Path CSV; the configured initial path when absent.
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score a sample CSV; writes `metrics.json`.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
        /// Reference CSV; a fresh board sample when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Score random perturbations of the initial path; writes `perturb.csv`.
    PerturbDemo(Common),
}

fn load_checkpoint(common: &Common, cfg: &Config) -> Result<Denoiser> {
    let path = common
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Contract("--checkpoint is required".into()))?;
    let net = Denoiser::load(path)?;
    if net.mode() != cfg.schedule.family.mode() {
        return Err(Error::Contract(format!(
            "checkpoint predicts {:?} but the configured family needs {:?}",
            net.mode(),
            cfg.schedule.family.mode()
        )));
    }
    Ok(net)
}

fn prepare(common: &Common) -> Result<Config> {
    let cfg = Config::load(&common.config)?;
    std::fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

/// Run one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainDenoiser(common) => {
            let mut cfg = prepare(&common)?;
            if let Some(seed) = common.seed {
                cfg.denoiser.seed = seed;
            }
            let d = &cfg.denoiser;
            let data = cfg.data.sample()?;
            let path = cfg.schedule.training_path()?;
            let opts = TrainOptions {
                hidden: d.hidden,
                batch_size: d.batch_size,
            };
            let trained = train_denoiser(&data, &path, cfg.schedule.family.mode(), d.epochs, d.lr, d.seed, opts)?;
            let ck = common.checkpoint.clone().unwrap_or_else(|| common.out.join("denoiser.json"));
            trained.denoiser.save(&ck)?;
            let mut csv = std::io::BufWriter::new(std::fs::File::create(common.out.join("train_loss.csv"))?);
            writeln!(csv, "epoch,loss")?;
            for (e, l) in trained.epoch_losses.iter().enumerate() {
                writeln!(csv, "{e},{l}")?;
            }
            csv.flush()?;
            let eval_path = cfg.schedule.init_path()?;
            let mse = held_out_mse(&trained.denoiser, &data[..data.len().min(2000)], &eval_path, d.seed ^ 0xe7a1)?;
            println!(
                "final loss {:.5}, held-out mse {mse:.5}, checkpoint {}",
                trained.epoch_losses.last().copied().unwrap_or(f64::NAN),
                ck.display()
            );
        }
        Command::Optimize { common, oracle } => {
            let mut cfg = prepare(&common)?;
            if let Some(seed) = common.seed {
                cfg.ipf.seed = seed;
            }
            let init = cfg.schedule.init_path()?;
            let data = cfg.data.sample()?;
            let out = common.out.clone();
            init.save_csv(&out.join("path_iter0.csv"))?;
            let mut io_err = None;
            let mut on_phase = |p: &PathSchedule, r: &crate::ldsb::PhaseReport| {
                if let Err(e) = p.save_csv(&out.join(format!("path_iter{}.csv", r.path_index))) {
                    io_err.get_or_insert(e);
                }
                println!(
                    "phase {} ({:?}): {} epochs, B loss {:.3e}, A loss {:.3e}",
                    r.path_index,
                    r.direction,
                    r.b_loss.len(),
                    r.b_loss.last().copied().unwrap_or(f64::NAN),
                    r.a_loss.last().copied().unwrap_or(f64::NAN)
                );
            };
            let (path, diag) = if oracle {
                let net = OracleDenoiser::new(cfg.schedule.family.mode(), init.clone(), data[0]);
                ipf_optimize_reporting(&net, &init, &data[..1], &cfg.ipf, &mut on_phase)?
            } else {
                let net = load_checkpoint(&common, &cfg)?;
                ipf_optimize_reporting(&net, &init, &data, &cfg.ipf, &mut on_phase)?
            };
            if let Some(e) = io_err {
                return Err(e);
            }
            path.save_csv(&out.join("path_final.csv"))?;
            std::fs::write(out.join("diagnostics.json"), serde_json::to_string_pretty(&diag)?)?;
            println!("done in {:.1}s, guard skip fraction {:.4}", diag.wall_seconds, diag.skip_fraction());
        }
        Command::Sample { common, path, n } => {
            let mut cfg = prepare(&common)?;
            if let Some(seed) = common.seed {
                cfg.sampling.seed = seed;
            }
            let net = load_checkpoint(&common, &cfg)?;
            let schedule = match path {
                Some(p) => PathSchedule::load_csv(&p)?,
                None => cfg.schedule.init_path()?,
            };
            let n = n.unwrap_or(cfg.sampling.n);
            let (samples, _) = reverse_sample(&schedule, &net, n, cfg.sampling.seed, cfg.sampling.rescale)?;
            save_points_csv(&common.out.join("samples.csv"), &samples)?;
            std::fs::write(common.out.join("samples.svg"), scatter_svg(&samples, &cfg.data.spec()?))?;
            println!("{} samples written to {}", samples.len(), common.out.display());
        }
        Command::Eval {
            common,
            samples,
            reference,
        } => {
            let mut cfg = prepare(&common)?;
            if let Some(seed) = common.seed {
                cfg.metrics.seed = seed;
            }
            let samples = load_points_csv(&samples)?;
            let reference = match reference {
                Some(r) => load_points_csv(&r)?,
                None => cfg.reference()?,
            };
            let report = evaluate(&samples, &reference, &cfg.data.spec()?, cfg.metrics.n_proj, cfg.metrics.seed)?;
            let json = serde_json::to_string_pretty(&report)?;
            std::fs::write(common.out.join("metrics.json"), &json)?;
            println!("{json}");
        }
        Command::PerturbDemo(common) => {
            let mut cfg = prepare(&common)?;
            if let Some(seed) = common.seed {
                cfg.sampling.seed = seed;
            }
            let net = load_checkpoint(&common, &cfg)?;
            let rows = perturb_demo(&net, &cfg.schedule.init_path()?, &cfg.reference()?, &cfg)?;
            write_perturb_csv(std::fs::File::create(common.out.join("perturb.csv"))?, &rows)?;
            let better = rows[1..].iter().filter(|r| r.sliced_wasserstein < rows[0].sliced_wasserstein).count();
            println!(
                "baseline SW {:.4}; {better} of {} draws beat it",
                rows[0].sliced_wasserstein,
                rows.len() - 1
            );
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.ipf.iterations, 3);
        assert_eq!(cfg.schedule.nfe, 20);
        assert_eq!(cfg.schedule.init_path().unwrap().steps(), 20);
    }

    #[test]
    fn sections_reject_unknown_keys_and_bad_values() {
        assert!(Config::from_json(r#"{"schedule": {"nfe": 5, "bogus": 1}}"#).is_err());
        assert!(Config::from_json(r#"{"data": {"squares_per_side": 3}}"#).is_err());
        assert!(Config::from_json(r#"{"ipf": {"L": 0}}"#).is_err());
        let cfg = Config::from_json(r#"{"schedule": {"family": "fm", "nfe": 10}, "ipf": {"L": 1}}"#).unwrap();
        assert_eq!(cfg.schedule.family.mode(), PredictionMode::DirectionPrediction);
        assert_eq!(cfg.schedule.init_path().unwrap().fa()[10], 0.0);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Parse("x".into())), 2);
        assert_eq!(exit_code(&Error::Diverged("x".into())), 3);
        let abort = Error::IpfAbort {
            phase: "p".into(),
            skipped: 1,
            total: 1,
        };
        assert_eq!(exit_code(&abort), 4);
        let nested = Error::Step {
            step: 3,
            source: Box::new(Error::NonFinite("x".into())),
        };
        assert_eq!(exit_code(&nested), 3);
    }

    #[test]
    fn svg_draws_board_and_points() {
        let spec = CheckerboardSpec::default();
        let svg = scatter_svg(&[Point2::new(0.5, 0.5), Point2::new(9.0, 0.0)], &spec);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("fill=\"#e6e6e6\"").count(), 8);
    }

    #[test]
    fn perturb_table_layout() {
        let rows = vec![
            PerturbRow {
                sigma: 0.0,
                draw: None,
                sliced_wasserstein: 0.1,
                in_support_fraction: 0.8,
            },
            PerturbRow {
                sigma: 0.05,
                draw: Some(0),
                sliced_wasserstein: 0.09,
                in_support_fraction: 0.81,
            },
        ];
        let mut buf = Vec::new();
        write_perturb_csv(&mut buf, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "sigma,draw,sliced_wasserstein,in_support_fraction\n0,baseline,0.1,0.8\n0.05,0,0.09,0.81\n"
        );
    }
}
