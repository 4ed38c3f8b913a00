//! `msmetr`: simulate data, fit the Markov-switching tensor regression,
//! summarize draws and score baselines.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msmetr::baselines::{evaluate_linear, evaluate_msmetr, reports_csv, LinearMethod, PointModel};
use msmetr::diagnostics::summarize;
use msmetr::io::{load_dataset, load_draws, load_truth, save_dataset, save_draws, save_truth, write_fit_outputs, write_text};
use msmetr::sampler::BetaPrior;
use msmetr::simulation::{gen_dataset, CovariateKind};
use msmetr::{run_chains, ChainConfig, Dataset, Hyperparameters, IdentRule, PosteriorDraws, SimSetting, Truth};

use config::RunConfig;

const OUT_ENV: &str = "MSMETR_OUT";
const DEFAULT_OUT: &str = "msmetr-out";

#[derive(Parser, Debug)]
#[command(name = "msmetr", version, about = "Markov-switching multiple-equation tensor regression")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Sectioned key-value config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory [env: MSMETR_OUT, default: ./msmetr-out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset and its ground truth into <out>/data.
    Simulate(SimulateArgs),
    /// Run the Gibbs sampler and write draws, summaries and plot data.
    Fit(FitArgs),
    /// Summarize stored draws.
    Diagnose(DiagnoseArgs),
    /// Score the OLS and LASSO baselines.
    Baseline(BaselineArgs),
    /// Score fitted draws next to the baselines.
    Forecast(ForecastArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// s1, s2, s3, s4, s1ms or s2ms.
    #[arg(long)]
    setting: Option<String>,
    /// Perturb the coefficient pattern with small noise.
    #[arg(long)]
    noisy: bool,
    /// iid, ar1 or ar1(rho).
    #[arg(long)]
    covariates: Option<String>,
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset directory [default: <out>/data].
    #[arg(long)]
    data: Option<PathBuf>,
    /// Ground truth directory [default: the dataset directory if it holds truth.json].
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Number of regimes.
    #[arg(long = "K")]
    k: Option<usize>,
    /// PARAFAC rank.
    #[arg(long = "D")]
    d: Option<usize>,
    /// Use only the first T observations.
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    scan_fraction: Option<f64>,
    /// trace, frobenius or none.
    #[arg(long)]
    ident: Option<String>,
    #[arg(long)]
    ident_equation: Option<usize>,
    /// collapsed or isotropic.
    #[arg(long)]
    prior: Option<String>,
    /// Opening sweeps with the regime path held fixed.
    #[arg(long)]
    path_warmup: Option<usize>,
    /// Independent starts; the most likely one becomes the chain.
    #[arg(long)]
    starts: Option<usize>,
    /// Free sweeps each start runs after the warm-up before selection.
    #[arg(long)]
    start_sweeps: Option<usize>,
    /// Elicit the rates from targets, e.g. `--elicit V=1 AV=0.10`.
    #[arg(long, num_args = 1..=2, value_delimiter = ',')]
    elicit: Option<Vec<String>>,
    #[arg(long)]
    b_tau: Option<f64>,
    #[arg(long)]
    b_sigma: Option<f64>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    /// Directory holding draws.bin and draws.json.
    #[arg(long)]
    draws: Option<PathBuf>,
    /// Directory holding truth.json.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Observations used for fitting; the rest are scored out of sample.
    #[arg(long)]
    train: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// Fixed LASSO penalty instead of cross-validation.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Draws of the switching model fitted on the training rows.
    #[arg(long)]
    draws: Option<PathBuf>,
    /// Draws of the single-regime model, reported as `Tensor`.
    #[arg(long)]
    tensor_draws: Option<PathBuf>,
    #[arg(long)]
    train: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    #[arg(long)]
    lambda: Option<f64>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<msmetr::Error> for Failure {
    fn from(e: msmetr::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone().or_else(|| cfg.paths.out.clone()).unwrap_or_else(default_out);
    match cli.command {
        Command::Simulate(a) => simulate(a, &cfg, &out),
        Command::Fit(a) => fit(a, &cfg, &out),
        Command::Diagnose(a) => diagnose(a, &cfg, &out),
        Command::Baseline(a) => baseline(a, &cfg, &out),
        Command::Forecast(a) => forecast(a, &cfg, &out),
    }
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn data_dir(flag: Option<PathBuf>, cfg: &RunConfig, out: &Path) -> PathBuf {
    flag.or_else(|| cfg.paths.data.clone()).unwrap_or_else(|| out.join("data"))
}

fn existing_dir(p: &Path, what: &str) -> Outcome<()> {
    if p.is_dir() {
        Ok(())
    } else {
        usage(format!("{what} directory {} does not exist", p.display()))
    }
}

fn parse_setting(name: &str, covariates: CovariateKind, noisy: bool) -> Outcome<SimSetting> {
    let lower = name.to_ascii_lowercase();
    let setting = match lower.as_str() {
        "s1" | "s2" | "s3" | "s4" => SimSetting::simple(lower[1..].parse().unwrap(), covariates, noisy),
        "s1ms" | "s2ms" => {
            if noisy {
                return usage("--noisy applies to s1..s4 only");
            }
            SimSetting::markov_switching(lower[1..2].parse().unwrap(), covariates)
        }
        _ => return usage(format!("unknown setting `{name}`; expected s1..s4, s1ms or s2ms")),
    };
    setting.map_err(|e| Failure::Usage(e.to_string()))
}

fn simulate(a: SimulateArgs, cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let s = &cfg.simulate;
    let Some(name) = a.setting.or_else(|| s.setting.clone()) else {
        return usage("simulate needs --setting");
    };
    let cov = a.covariates.or_else(|| s.covariates.clone()).unwrap_or_else(|| "iid".into());
    let cov: CovariateKind = cov.parse().map_err(|e: msmetr::Error| Failure::Usage(e.to_string()))?;
    let mut setting = parse_setting(&name, cov, a.noisy || s.noisy.unwrap_or(false))?;
    if let Some(t) = a.t.or(s.t) {
        if t < 2 {
            return usage("--T must be at least 2");
        }
        setting.t = t;
    }
    let seed = a.seed.or(s.seed).unwrap_or(0);
    let (data, truth) = gen_dataset(&setting, seed)?;
    let dir = out.join("data");
    save_dataset(&dir, &data)?;
    save_truth(&dir, &truth)?;
    eprintln!("simulated {} (T = {}, seed {seed}) into {}", setting.name, setting.t, dir.display());
    Ok(())
}

fn parse_elicit(items: &[String]) -> Outcome<(f64, f64)> {
    let (mut v, mut av) = (None, None);
    for item in items {
        let Some((key, val)) = item.split_once('=') else {
            return usage(format!("--elicit expects KEY=VALUE, got `{item}`"));
        };
        let val: f64 = val.trim().parse().map_err(|_| Failure::Usage(format!("bad number in `{item}`")))?;
        match key.trim().to_ascii_uppercase().as_str() {
            "V" => v = Some(val),
            "AV" => av = Some(val),
            _ => return usage(format!("--elicit keys are V and AV, got `{key}`")),
        }
    }
    match (v, av) {
        (Some(v), Some(av)) => Ok((v, av)),
        _ => usage("--elicit needs both V=... and AV=..."),
    }
}

fn check_dims(cfg: &RunConfig, data: &Dataset) -> Outcome<()> {
    let m = &cfg.model;
    if let Some(n) = m.n {
        if n != data.n() {
            return usage(format!("config says N = {n}, data has {}", data.n()));
        }
    }
    if let Some(order) = m.m {
        if (0..data.n()).any(|l| data.shape(l).len() != order) {
            return usage(format!("config says M = {order}, data disagrees"));
        }
    }
    if let Some(shapes) = &m.shapes {
        let actual: Vec<Vec<usize>> = (0..data.n()).map(|l| data.shape(l).to_vec()).collect();
        let matches = if shapes.len() == 1 { actual.iter().all(|s| s == &shapes[0]) } else { shapes == &actual };
        if !matches {
            return usage(format!("config shapes {shapes:?} do not match data shapes {actual:?}"));
        }
    }
    Ok(())
}

fn hyperparameters(a: &FitArgs, cfg: &RunConfig, d: usize, m: usize, k: usize) -> Outcome<Hyperparameters> {
    let p = &cfg.prior;
    let elicit = match &a.elicit {
        Some(items) => Some(parse_elicit(items)?),
        None => match (p.elicit_v, p.elicit_av) {
            (Some(v), Some(av)) => Some((v, av)),
            (None, None) => None,
            _ => return usage("[prior] needs both elicit_v and elicit_av"),
        },
    };
    let b_tau = a.b_tau.or(p.b_tau);
    let b_sigma = a.b_sigma.or(p.b_sigma);
    if elicit.is_some() && (b_tau.is_some() || b_sigma.is_some()) {
        return usage("give either elicitation targets or b_tau/b_sigma, not both");
    }
    let mut h = Hyperparameters::defaults(d, m, k)?;
    if let Some(v) = p.alpha {
        h.alpha = v;
    }
    if let Some(v) = p.a_tau {
        h.a_tau = v;
    }
    if let Some(v) = p.a_sigma {
        h.a_sigma = v;
    }
    if let Some(v) = p.a_lambda {
        h.a_lambda = v;
    }
    if let Some(v) = p.b_lambda {
        h.b_lambda = v;
    }
    if let Some(v) = &p.nu {
        h.nu = v.clone();
    }
    if let Some(v) = p.sigma_mu_sq {
        h.sigma_mu_sq = v;
    }
    if let Some(v) = p.a_noise {
        h.a_noise = v;
    }
    if let Some(v) = p.b_noise {
        h.b_noise = v;
    }
    if let Some((v, av)) = elicit {
        let e = msmetr::prior::elicit(v, av, &h)?;
        if !e.b_sigma.is_finite() {
            return usage("AV = 0 gives an infinite b_sigma");
        }
        h.b_tau = e.b_tau;
        h.b_sigma = e.b_sigma;
        h.provenance = msmetr::prior::Provenance::Elicited { v, av };
        eprintln!("elicited V* = {v}, AV* = {av}: b_tau = {:.6}, b_sigma = {:.6}", h.b_tau, h.b_sigma);
    } else if b_tau.is_some() || b_sigma.is_some() {
        h.b_tau = b_tau.unwrap_or(h.b_tau);
        h.b_sigma = b_sigma.unwrap_or(h.b_sigma);
        h.provenance = msmetr::prior::Provenance::Explicit;
    }
    h.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(h)
}

fn chain_config(a: &FitArgs, cfg: &RunConfig) -> Outcome<ChainConfig> {
    let c = &cfg.chain;
    let mut cc = ChainConfig::default();
    cc.iterations = a.iterations.or(c.iterations).unwrap_or(cc.iterations);
    cc.burn_in = a.burn_in.or(c.burn_in).unwrap_or(cc.iterations / 2);
    cc.thin = a.thin.or(c.thin).unwrap_or(cc.thin);
    cc.seed = a.seed.or(c.seed).unwrap_or(cc.seed);
    cc.scan_fraction = a.scan_fraction.or(c.scan_fraction).unwrap_or(cc.scan_fraction);
    if let Some(rule) = a.ident.clone().or_else(|| c.ident.clone()) {
        cc.ident_rule = rule.parse::<IdentRule>().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    cc.ident_equation = a.ident_equation.or(c.ident_equation).unwrap_or(cc.ident_equation);
    if let Some(bp) = a.prior.clone().or_else(|| c.beta_prior.clone()) {
        cc.beta_prior = match bp.as_str() {
            "collapsed" => BetaPrior::Collapsed,
            "isotropic" => BetaPrior::Isotropic,
            _ => return usage(format!("unknown prior `{bp}`; expected collapsed or isotropic")),
        };
    }
    cc.path_warmup = a.path_warmup.or(c.path_warmup).unwrap_or(cc.path_warmup);
    cc.starts = a.starts.or(c.starts).unwrap_or(cc.starts);
    cc.start_sweeps = a.start_sweeps.or(c.start_sweeps).unwrap_or(cc.start_sweeps);
    cc.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cc)
}

fn resolve_truth(flag: Option<PathBuf>, cfg: &RunConfig, fallback: Option<&Path>) -> Outcome<Option<Truth>> {
    match flag.or_else(|| cfg.paths.truth.clone()) {
        Some(dir) => {
            existing_dir(&dir, "truth")?;
            Ok(Some(load_truth(&dir)?))
        }
        None => match fallback {
            Some(dir) if dir.join("truth.json").exists() => Ok(Some(load_truth(dir)?)),
            _ => Ok(None),
        },
    }
}

/// Truncates the truth path to the first `t` observations.
fn clip_truth(truth: Option<Truth>, t: usize) -> Option<Truth> {
    truth.map(|mut tr| {
        tr.path.truncate(t);
        tr
    })
}

fn fit(a: FitArgs, cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let dir = data_dir(a.data.clone(), cfg, out);
    existing_dir(&dir, "data")?;
    let mut data = load_dataset(&dir)?;
    check_dims(cfg, &data)?;
    if let Some(t) = a.t.or(cfg.model.t) {
        if t < 2 || t > data.t() {
            return usage(format!("--T {t} outside 2..={}", data.t()));
        }
        data = data.slice(0..t)?;
    }
    let truth = clip_truth(resolve_truth(a.truth.clone(), cfg, Some(&dir))?, data.t());
    let m = data.shape(0).len();
    if (0..data.n()).any(|l| data.shape(l).len() != m) {
        return Err(Failure::Runtime("every equation needs covariates of the same order".into()));
    }
    let k = a.k.or(cfg.model.k).or_else(|| truth.as_ref().map(|t| t.setting.k())).unwrap_or(1);
    let d = a.d.or(cfg.model.d).unwrap_or(3);
    let hyper = hyperparameters(&a, cfg, d, m, k)?;
    let cc = chain_config(&a, cfg)?;
    let chains = a.chains.or(cfg.chain.chains).unwrap_or(1);
    if chains == 0 {
        return usage("--chains must be at least 1");
    }
    eprintln!(
        "fitting N = {}, T = {}, K = {k}, D = {d}, b_tau = {:.6}, b_sigma = {:.6}, {} chain(s) x {} iterations",
        data.n(),
        data.t(),
        hyper.b_tau,
        hyper.b_sigma,
        chains,
        cc.iterations
    );
    let runs = run_chains(&data, &hyper, &cc, chains)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write_text(&out.join("hyperparameters.json"), &serde_json::to_string_pretty(&hyper).map_err(msmetr::Error::from)?)?;
    for (c, draws) in runs.iter().enumerate() {
        let target = if chains == 1 { out.to_path_buf() } else { out.join(format!("chain{c}")) };
        emit(&target, draws, truth.as_ref())?;
    }
    Ok(())
}

fn emit(dir: &Path, draws: &PosteriorDraws, truth: Option<&Truth>) -> Outcome<()> {
    let summary = summarize(draws, truth)?;
    save_draws(dir, draws)?;
    let files = write_fit_outputs(dir, draws, &summary, truth)?;
    let mut line = format!("{}: {} draws, {} files", dir.display(), draws.len(), files.len() + 2);
    if let Some(mse) = summary.coefficient_mse {
        line.push_str(&format!(", coefficient MSE {mse:.5}"));
    }
    if let Some(s) = &summary.states {
        line.push_str(&format!(", state hit rate {:.4}", s.hit_rate));
    }
    eprintln!("{line}");
    Ok(())
}

fn diagnose(a: DiagnoseArgs, cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let Some(dir) = a.draws.or_else(|| cfg.paths.draws.clone()) else {
        return usage("diagnose needs --draws");
    };
    existing_dir(&dir, "draws")?;
    let draws = load_draws(&dir)?;
    let truth = clip_truth(resolve_truth(a.truth, cfg, None)?, draws.t);
    let summary = summarize(&draws, truth.as_ref())?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write_fit_outputs(out, &draws, &summary, truth.as_ref())?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(msmetr::Error::from)?);
    Ok(())
}

fn split(train: Option<usize>, horizons: Option<Vec<usize>>, cfg: &RunConfig, data: &Dataset) -> Outcome<(usize, Vec<usize>)> {
    let Some(train) = train.or(cfg.baseline.train) else {
        return usage("need --train");
    };
    if train < 2 || train >= data.t() {
        return usage(format!("--train {train} outside 2..{}", data.t()));
    }
    let horizons = horizons.or_else(|| cfg.baseline.horizons.clone()).unwrap_or_else(|| vec![1, 5]);
    if horizons.is_empty() {
        return usage("need at least one horizon");
    }
    Ok((train, horizons))
}

fn linear_reports(data: &Dataset, train: usize, horizons: &[usize], lambda: Option<f64>) -> Outcome<Vec<msmetr::baselines::FitReport>> {
    let mut reports = Vec::new();
    for method in [LinearMethod::Ols, LinearMethod::Lasso] {
        let r = evaluate_linear(method, data, train, horizons, lambda)?;
        if let Some(note) = &r.note {
            eprintln!("{}: {note}", r.method);
        }
        reports.push(r);
    }
    Ok(reports)
}

fn baseline(a: BaselineArgs, cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let dir = data_dir(a.data, cfg, out);
    existing_dir(&dir, "data")?;
    let data = load_dataset(&dir)?;
    let (train, horizons) = split(a.train, a.horizons, cfg, &data)?;
    let reports = linear_reports(&data, train, &horizons, a.lambda.or(cfg.baseline.lambda))?;
    finish_reports(out, "baselines.csv", &reports)
}

fn forecast(a: ForecastArgs, cfg: &RunConfig, out: &Path) -> Outcome<()> {
    let dir = data_dir(a.data, cfg, out);
    existing_dir(&dir, "data")?;
    let data = load_dataset(&dir)?;
    let (train, horizons) = split(a.train, a.horizons, cfg, &data)?;
    let Some(draws_dir) = a.draws.or_else(|| cfg.paths.draws.clone()) else {
        return usage("forecast needs --draws");
    };
    existing_dir(&draws_dir, "draws")?;
    let mut reports = Vec::new();
    let model = PointModel::from_draws(&load_draws(&draws_dir)?)?;
    reports.push(evaluate_msmetr("MSMETR", &model, &data, train, &horizons)?);
    if let Some(td) = a.tensor_draws {
        existing_dir(&td, "tensor draws")?;
        let model = PointModel::from_draws(&load_draws(&td)?)?;
        if model.k() != 1 {
            return usage("--tensor-draws must come from a single-regime fit");
        }
        reports.push(evaluate_msmetr("Tensor", &model, &data, train, &horizons)?);
    }
    reports.extend(linear_reports(&data, train, &horizons, a.lambda.or(cfg.baseline.lambda))?);
    finish_reports(out, "forecast.csv", &reports)
}

fn finish_reports(out: &Path, name: &str, reports: &[msmetr::baselines::FitReport]) -> Outcome<()> {
    let csv = reports_csv(reports)?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    write_text(&out.join(name), &csv)?;
    print!("{csv}");
    Ok(())
}
