//! Command-line pipelines. Every subcommand writes its outputs into a run
//! directory together with `invocation.txt`; config-driven subcommands also
//! write the fully resolved `manifest.cfg`, which reproduces the run when
//! passed back as `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{rmse, rmspe_pearson, FitReport};
use crate::error::{Error, Result};
use crate::io::{
    fmt_f64, load_dataset, read_draws, read_matrix_csv, read_tensor, read_values, save_dataset, write_atomic,
    write_draws, write_tensor, write_values, DataPaths, HyperOverrides, RunConfig, COVARIATE_NAME, TENSOR_NAME,
};
use crate::model::{dic, fit, posterior_predict};
use crate::selection::{default_gap, rank_search_fits, sequential_2means};
use crate::tensor::DenseTensor;
use crate::{glm, par, simgen};

/// Relative `--out` directories are placed under this directory when set.
pub const RUN_ROOT_ENV: &str = "BTRT_RUN_ROOT";

#[derive(Parser, Debug)]
#[command(name = "btrt", version, about = "Bayesian tensor regression with a Tucker-decomposed coefficient")]
struct Cli {
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding X.btrt, y.txt and optionally eta.csv; overrides [data].
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset and its ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Gibbs sampler and store the posterior draws.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ranks; overrides [model] ranks.
        #[arg(long)]
        ranks: Option<String>,
    },
    /// Greedy DIC search over Tucker ranks.
    RankSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_rank: Option<usize>,
    },
    /// Sequential 2-means point estimate of B from stored draws.
    Select {
        #[arg(long)]
        draws: PathBuf,
        /// Gap threshold; defaults to the relative rule.
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior predictive medians and quantiles for new subjects.
    Predict {
        #[arg(long)]
        draws: PathBuf,
        /// Directory holding X.btrt and optionally eta.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "0.025,0.975")]
        levels: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelwise GLM with Benjamini–Hochberg control.
    Glm {
        #[command(flatten)]
        common: Common,
        /// Target false discovery rate; overrides [selection] fdr_q.
        #[arg(long)]
        q: Option<f64>,
    },
    /// ESS, trace and accuracy report for stored draws.
    Diagnose {
        #[arg(long)]
        draws: PathBuf,
        /// True coefficient tensor, for RMSE.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Point estimate to score; defaults to the posterior mean.
        #[arg(long)]
        estimate: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMSPE and Pearson correlation of two value files.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        actual: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the exit code: 0 success, 1 user error, 2 numerical failure.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let invocation: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let threads = cli.threads;
    match par::with_threads(threads, || run(cli, &invocation)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn out_dir(out: &Path) -> PathBuf {
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if out.is_relative() => Path::new(&root).join(out),
        _ => out.to_path_buf(),
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("invalid {what} '{s}'"))))
        .collect()
}

struct Run {
    dir: PathBuf,
}

impl Run {
    fn start(out: &Path, invocation: &[String]) -> Result<Self> {
        let dir = out_dir(out);
        write_atomic(&dir.join("invocation.txt"), (invocation.join(" ") + "\n").as_bytes())?;
        Ok(Self { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn text(&self, name: &str, s: &str) -> Result<()> {
        write_atomic(&self.path(name), s.as_bytes())
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.model.seed = s;
        cfg.simulate.seed = s;
    }
    Ok(cfg)
}

/// Config with its data paths made absolute, so the manifest is usable
/// from any working directory.
fn config_with_data(common: &Common, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = load_config(common.config.as_deref(), seed)?;
    if let Some(d) = &common.data {
        cfg.data = Some(DataPaths::discover(&absolute(d)));
    }
    let d = cfg
        .data
        .as_mut()
        .ok_or_else(|| Error::Config("no data: pass --data or a [data] section".into()))?;
    d.tensor = absolute(&d.tensor);
    d.response = absolute(&d.response);
    d.covariates = d.covariates.as_deref().map(absolute);
    Ok(cfg)
}

fn run(cli: Cli, invocation: &[String]) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { config, out } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            let run = Run::start(&out, invocation)?;
            let (data, truth) = simgen::simulate(&cfg.simulate)?;
            let paths = save_dataset(&run.dir, &data)?;
            write_tensor(&truth.b, &run.path("B_true.btrt"))?;
            let gamma: Vec<String> = truth.gamma.iter().map(|v| fmt_f64(*v)).collect();
            run.text("truth.txt", &format!("gamma = {}\nsigma2 = {}\n", gamma.join(","), fmt_f64(truth.sigma2)))?;
            cfg.data = Some(DataPaths {
                tensor: absolute(&paths.tensor),
                response: absolute(&paths.response),
                covariates: paths.covariates.as_deref().map(absolute),
            });
            run.text("manifest.cfg", &cfg.to_text())
        }
        Command::Fit { common, ranks } => {
            let mut cfg = config_with_data(&common, seed)?;
            // The sampler runs the collinearity preflight itself.
            let (data, _) = load_dataset(cfg.data.as_ref().unwrap(), cfg.model.seed)?;
            let ranks = ranks.map(|r| parse_list("ranks", &r)).transpose()?;
            let fc = cfg.fit_config(ranks.as_deref(), data.order(), data.q())?;
            let run = Run::start(&common.out, invocation)?;
            let out = fit(&data, &fc)?;
            // Record what was actually fitted, resolved hyperparameters included.
            cfg.model.ranks = Some(fc.ranks.clone());
            cfg.hyper = HyperOverrides::from_resolved(&out.draws.manifest.hyper);
            let warnings = out.warnings;
            warn_all(&warnings);
            write_draws(&out.draws, &run.path("draws.bin"))?;
            write_tensor(&out.draws.b_mean(), &run.path("b_mean.btrt"))?;
            let d = dic(&out.draws, &data)?;
            run.text(
                "dic.txt",
                &format!(
                    "dic = {}\nmean_deviance = {}\ndeviance_at_mean = {}\np_d = {}\n",
                    fmt_f64(d.dic),
                    fmt_f64(d.mean_deviance),
                    fmt_f64(d.deviance_at_mean),
                    fmt_f64(d.p_d)
                ),
            )?;
            run.text("report.txt", &FitReport::from_draws(&out.draws, warnings).to_text())?;
            run.text("manifest.cfg", &cfg.to_text())
        }
        Command::RankSearch { common, max_rank } => {
            let mut cfg = config_with_data(&common, seed)?;
            if let Some(m) = max_rank {
                cfg.model.max_rank = m;
            }
            let (data, warnings) = load_dataset(cfg.data.as_ref().unwrap(), cfg.model.seed)?;
            warn_all(&warnings);
            let base = cfg.fit_config(Some(&vec![1; data.order()]), data.order(), data.q())?;
            let run = Run::start(&common.out, invocation)?;
            let trace = rank_search_fits(&data, &base, cfg.model.max_rank)?;
            let mut csv = String::from("ranks,dic,error\n");
            for v in &trace.visited {
                let ranks: Vec<String> = v.ranks.iter().map(ToString::to_string).collect();
                let _ = writeln!(csv, "{},{},{}", ranks.join("x"), fmt_f64(v.dic), v.error.as_deref().unwrap_or("").replace(',', ";"));
            }
            run.text("rank_search.csv", &csv)?;
            let sel: Vec<String> = trace.selected.iter().map(ToString::to_string).collect();
            run.text("selected.txt", &format!("ranks = {}\n", sel.join(",")))?;
            run.text("manifest.cfg", &cfg.to_text())
        }
        Command::Select { draws, b, out } => {
            let d = read_draws(&draws)?;
            let run = Run::start(&out, invocation)?;
            let v = d.voxels();
            let b = b.unwrap_or_else(|| default_gap(&d.b, v));
            let s = sequential_2means(&d.b, v, b)?;
            write_tensor(&DenseTensor::new(d.manifest.dims.clone(), s.estimate)?, &run.path("estimate.btrt"))?;
            run.text("selection.txt", &format!("b = {}\nn_z = {}\nvoxels = {v}\n", fmt_f64(s.b), s.n_z))
        }
        Command::Predict { draws, data, levels, out } => {
            let d = read_draws(&draws)?;
            let levels: Vec<f64> = parse_list("levels", &levels)?;
            let x = read_tensor(&data.join(TENSOR_NAME))?;
            let n = *x.dims().last().unwrap_or(&0);
            let cov = data.join(COVARIATE_NAME);
            let eta = if cov.exists() { read_matrix_csv(&cov)? } else { nalgebra::DMatrix::zeros(n, 0) };
            let run = Run::start(&out, invocation)?;
            let p = posterior_predict(&d, &x, &eta, &levels)?;
            write_values(&run.path("predictions.txt"), &p.median)?;
            let mut csv: String = p.levels.iter().map(|l| format!("q{}", fmt_f64(*l))).collect::<Vec<_>>().join(",");
            csv.push('\n');
            for i in 0..p.median.len() {
                let row: Vec<String> = p.quantiles.iter().map(|q| fmt_f64(q[i])).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            run.text("quantiles.csv", &csv)
        }
        Command::Glm { common, q } => {
            let mut cfg = config_with_data(&common, seed)?;
            if let Some(q) = q {
                cfg.selection.fdr_q = q;
            }
            let (data, warnings) = load_dataset(cfg.data.as_ref().unwrap(), cfg.model.seed)?;
            warn_all(&warnings);
            let run = Run::start(&common.out, invocation)?;
            let g = glm::glm_coefficient_map(&data, cfg.selection.fdr_q)?;
            write_tensor(&g.map, &run.path("glm_map.btrt"))?;
            let order = data.order();
            let mut csv: String = (0..order).map(|k| format!("i{k},")).collect();
            csv.push_str("estimate,se,p_value,rejected,zero_variance\n");
            for r in &g.results {
                for i in &r.index {
                    let _ = write!(csv, "{i},");
                }
                let _ = writeln!(csv, "{},{},{},{},{}", fmt_f64(r.estimate), fmt_f64(r.se), fmt_f64(r.p_value), r.rejected, r.zero_variance);
            }
            run.text("glm_voxels.csv", &csv)?;
            run.text("manifest.cfg", &cfg.to_text())
        }
        Command::Diagnose { draws, truth, estimate, out } => {
            let d = read_draws(&draws)?;
            let run = Run::start(&out, invocation)?;
            let mut report = FitReport::from_draws(&d, Vec::new());
            if let Some(t) = truth {
                let truth = read_tensor(&t)?;
                let est = match estimate {
                    Some(e) => read_tensor(&e)?,
                    None => d.b_mean(),
                };
                report.rmse_b = Some(rmse(&est, &truth)?);
            }
            run.text("report.txt", &report.to_text())
        }
        Command::Metrics { pred, actual, out } => {
            let (e, r) = rmspe_pearson(&read_values(&pred)?, &read_values(&actual)?)?;
            let text = format!("rmspe = {}\npearson = {}\n", fmt_f64(e), r.map_or("NA".into(), fmt_f64));
            print!("{text}");
            if let Some(o) = out {
                Run::start(&o, invocation)?.text("metrics.txt", &text)?;
            }
            Ok(())
        }
    }
}
