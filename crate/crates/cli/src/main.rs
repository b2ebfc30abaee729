mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use demand_forge::counterfactual::{ad_equivalence_tau, simulate, Pricing, Scenario, TauOptions};
use demand_forge::elasticity::{group_mean_elasticities, Averaging};
use demand_forge::equilibrium::recover_costs;
use demand_forge::panel::{write_markets_csv, write_panel_csv};
use demand_forge::synth::{generate, SynthConfig};
use demand_forge::{
    attach_scores, compute_shares, estimate, first_stage_report, load_panel, DemandEstimate, DemandSpec, Error,
    ErrorKind, ModelKind, PanelDataset, ScoreConfig,
};

use output::{num, opt_num, Manifest, Outputs};

#[derive(Parser)]
#[command(name = "demand-forge", version, about = "Nested-logit demand estimation and counterfactual pricing")]
struct Cli {
    /// Worker threads (default: all cores). DEMAND_FORGE_THREADS overrides.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic panel from known parameters.
    SimulateData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Observation CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Markets CSV to write (default: next to --out).
        #[arg(long)]
        markets_out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Generate constant-expenditure data (log price, revenue shares).
        #[arg(long)]
        cenl: bool,
    },
    /// Image-score and cumulative-advertising series.
    BuildScores(DataArgs),
    /// Estimate demand by two-step GMM.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Own and cross price elasticities averaged by product group.
    Elasticities {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Weight observations by market share.
        #[arg(long)]
        share_weighted: bool,
    },
    /// Marginal costs implied by observed prices.
    RecoverCosts {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Simulate an image-score scenario.
    Counterfactual {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        pricing: Option<Pricing>,
    },
    /// Advertising multiplier that restores the target firm's revenue.
    AdEquivalence {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        pricing: Option<Pricing>,
        /// Revenue to match (default: observed revenue of the target firm).
        #[arg(long)]
        target_revenue: Option<f64>,
        #[arg(long)]
        tau_max: Option<f64>,
    },
    /// Descriptive statistics of a panel.
    Summarize(DataArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    markets: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct FitArgs {
    /// Reuse an `estimate.json` instead of estimating again.
    #[arg(long)]
    estimate: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Paths {
    panel: Option<PathBuf>,
    markets: Option<PathBuf>,
    scenario: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    #[serde(flatten)]
    scores: ScoreConfig,
    demand: DemandSpec,
    pricing: Pricing,
    tau: TauOptions,
    averaging: Averaging,
    paths: Paths,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Failure::Usage(format!("missing --{} (or paths.{name} in the config)", name.replace('_', "-"))))
}

/// Resolved inputs shared by the analysis subcommands.
struct Context {
    cfg: RunConfig,
    ds: PanelDataset,
    out: Outputs,
    manifest: Manifest,
}

impl Context {
    fn load(command: &str, data: DataArgs, tweak: impl FnOnce(&mut RunConfig)) -> CliResult<Context> {
        let mut cfg: RunConfig = match &data.config {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        cfg.paths.panel = Some(required(data.panel, &cfg.paths.panel, "panel")?);
        cfg.paths.markets = Some(required(data.markets, &cfg.paths.markets, "markets")?);
        cfg.paths.out_dir = Some(required(data.out_dir, &cfg.paths.out_dir, "out_dir")?);
        tweak(&mut cfg);
        let config_json = serde_json::to_string(&cfg).map_err(Error::from)?;
        let mut manifest = Manifest::new(command, &config_json);
        let panel = cfg.paths.panel.clone().expect("resolved");
        let markets = cfg.paths.markets.clone().expect("resolved");
        manifest.input("panel", &panel)?;
        manifest.input("markets", &markets)?;
        if let Some(s) = &cfg.paths.scenario {
            manifest.input("scenario", s)?;
        }
        let ds = attach_scores(compute_shares(load_panel(&panel, &markets)?)?, &cfg.scores)?;
        let out = Outputs::new(cfg.paths.out_dir.as_ref().expect("resolved"))?;
        Ok(Context { cfg, ds, out, manifest })
    }

    fn fit(&mut self, fit: &FitArgs) -> CliResult<DemandEstimate> {
        match &fit.estimate {
            Some(path) => {
                self.manifest.input("estimate", path)?;
                read_json(path)
            }
            None => Ok(estimate(&self.ds, &self.cfg.demand)?),
        }
    }

    fn scenario(&self) -> CliResult<Scenario> {
        let path = self
            .cfg
            .paths
            .scenario
            .as_ref()
            .ok_or_else(|| Failure::Usage("missing --scenario (or paths.scenario in the config)".into()))?;
        let mut s: Scenario = read_json(path)?;
        s.pricing = self.cfg.pricing;
        Ok(s)
    }

    fn finish(self) -> CliResult<()> {
        Ok(self.out.finish(self.manifest)?)
    }
}

fn simulate_data(
    config: Option<PathBuf>,
    out: PathBuf,
    markets_out: Option<PathBuf>,
    seed: Option<u64>,
    cenl: bool,
) -> CliResult<()> {
    let mut cfg: SynthConfig = match &config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cenl {
        cfg.params.model = ModelKind::Cenl;
    }
    let panel = generate(&cfg)?;
    let markets_out = markets_out.unwrap_or_else(|| out.with_file_name("markets.csv"));
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut outputs = Outputs::new(dir)?;
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let panel_path = outputs.register(&name(&out));
    let file = fs::File::create(&panel_path).map_err(|e| Error::io(panel_path.display().to_string(), e))?;
    write_panel_csv(&panel.dataset, std::io::BufWriter::new(file))?;
    let file = fs::File::create(&markets_out).map_err(|e| Error::io(markets_out.display().to_string(), e))?;
    write_markets_csv(&panel.dataset, std::io::BufWriter::new(file))?;
    if markets_out.parent() == out.parent() {
        outputs.register(&name(&markets_out));
    }
    let config_json = serde_json::to_string(&cfg).map_err(Error::from)?;
    let mut manifest = Manifest::new("simulate-data", &config_json);
    if let Some(p) = &config {
        manifest.input("config", p)?;
    }
    manifest.seed = Some(cfg.seed);
    Ok(outputs.finish(manifest)?)
}

fn build_scores(data: DataArgs) -> CliResult<()> {
    let mut ctx = Context::load("build-scores", data, |_| {})?;
    let scores = ctx.ds.scores()?.clone();
    let periods = ctx.ds.periods();
    for (file, series) in [("image_scores.csv", &scores.firm_image), ("cumadv.csv", &scores.brand_adv)] {
        let mut header = vec!["period"];
        header.extend(series.iter().map(|s| s.entity_id.as_str()));
        let rows = periods
            .iter()
            .map(|&t| std::iter::once(t.to_string()).chain(series.iter().map(|s| num(s.at(t)))).collect())
            .collect();
        ctx.out.csv(file, &header, rows)?;
    }
    let rows = scores
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let k = ctx.ds.key(i);
            vec![k.product_id, k.region_id, k.period.to_string(), num(r.imgscore), num(r.cumadv)]
        })
        .collect();
    ctx.out.csv(
        "observation_scores.csv",
        &["product_id", "region_id", "period", "imgscore", "cumadv"],
        rows,
    )?;
    ctx.finish()
}

fn run_estimate(data: DataArgs, model: Option<ModelKind>) -> CliResult<()> {
    let mut ctx = Context::load("estimate", data, |cfg| {
        if let Some(m) = model {
            cfg.demand.model = m;
        }
    })?;
    let est = estimate(&ctx.ds, &ctx.cfg.demand)?;
    let first = first_stage_report(&ctx.ds, &ctx.cfg.demand)?;
    let rows = est
        .coefficients
        .iter()
        .map(|c| vec![c.name.clone(), num(c.estimate), num(c.se), opt_num(c.sw_f)])
        .collect();
    ctx.out.csv("coefficients.csv", &["name", "estimate", "se", "sw_f"], rows)?;
    ctx.out.json("coefficients.json", &est.coefficients)?;
    let rows = first
        .iter()
        .flat_map(|f| {
            f.terms.iter().map(move |t| {
                vec![f.variable.clone(), t.name.clone(), num(t.estimate), num(t.se), num(f.sw_f)]
            })
        })
        .collect();
    ctx.out.csv("first_stage.csv", &["variable", "term", "estimate", "se", "sw_f"], rows)?;
    let rows = est
        .fitted
        .iter()
        .map(|f| {
            vec![
                f.key.product_id.clone(),
                f.key.region_id.clone(),
                f.key.period.to_string(),
                num(f.mean_utility),
                opt_num(f.xi),
            ]
        })
        .collect();
    ctx.out.csv(
        "residuals.csv",
        &["product_id", "region_id", "period", "mean_utility", "xi"],
        rows,
    )?;
    ctx.out.json("estimate.json", &est)?;
    for w in &est.warnings {
        eprintln!("warning: {w}");
    }
    ctx.finish()
}

fn run_elasticities(data: DataArgs, fit: FitArgs, share_weighted: bool) -> CliResult<()> {
    let mut ctx = Context::load("elasticities", data, |cfg| {
        if share_weighted {
            cfg.averaging = Averaging::ShareWeighted;
        }
    })?;
    let est = ctx.fit(&fit)?;
    let table = group_mean_elasticities(&ctx.ds, &est, ctx.cfg.averaging)?;
    let mut header = vec!["measure"];
    header.extend(table.columns.iter().map(|c| c.group.as_str()));
    let row = |label: &str, f: fn(&demand_forge::elasticity::GroupElasticity) -> f64| {
        std::iter::once(label.to_string())
            .chain(table.columns.iter().map(|c| num(f(c))))
            .collect::<Vec<_>>()
    };
    let rows = vec![
        row("own", |c| c.own),
        row("cross_same", |c| c.cross_same),
        row("cross_other", |c| c.cross_other),
    ];
    ctx.out.csv("elasticities.csv", &header, rows)?;
    ctx.out.json("elasticities.json", &table)?;
    ctx.finish()
}

fn run_recover_costs(data: DataArgs, fit: FitArgs) -> CliResult<()> {
    let mut ctx = Context::load("recover-costs", data, |_| {})?;
    let est = ctx.fit(&fit)?;
    let markets = est.snapshots(&ctx.ds)?;
    let per_market: Vec<Vec<Vec<String>>> = markets
        .par_iter()
        .map(|fm| -> demand_forge::Result<Vec<Vec<String>>> {
            if fm.rows.is_empty() {
                return Ok(Vec::new());
            }
            let c = recover_costs(&fm.snapshot, &est.params)?;
            Ok(fm
                .rows
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let key = ctx.ds.key(i);
                    let p = fm.snapshot.prices[k];
                    vec![
                        key.product_id,
                        key.region_id,
                        key.period.to_string(),
                        num(p),
                        num(c.mc[k]),
                        num(p - c.mc[k]),
                    ]
                })
                .collect())
        })
        .collect::<demand_forge::Result<_>>()?;
    let rows: Vec<Vec<String>> = per_market.into_iter().flatten().collect();
    let negative = rows.iter().filter(|r| r[4].starts_with('-')).count();
    if negative > 0 {
        eprintln!("warning: {negative} negative marginal costs");
    }
    ctx.out.csv(
        "costs.csv",
        &["product_id", "region_id", "period", "price", "mc", "markup"],
        rows,
    )?;
    ctx.finish()
}

fn outcome_row(o: &demand_forge::counterfactual::Outcome) -> Vec<String> {
    vec![
        o.firm_id.clone(),
        num(o.observed_volume),
        num(o.simulated_volume),
        num(o.volume_gap_pct),
        num(o.observed_revenue),
        num(o.simulated_revenue),
        num(o.revenue_gap_pct),
    ]
}

const OUTCOME_HEADER: [&str; 7] = [
    "firm_id",
    "observed_volume",
    "simulated_volume",
    "volume_gap_pct",
    "observed_revenue",
    "simulated_revenue",
    "revenue_gap_pct",
];

fn run_counterfactual(data: DataArgs, fit: FitArgs, scenario: Option<PathBuf>, pricing: Option<Pricing>) -> CliResult<()> {
    let mut ctx = Context::load("counterfactual", data, |cfg| {
        if scenario.is_some() {
            cfg.paths.scenario = scenario;
        }
        if let Some(p) = pricing {
            cfg.pricing = p;
        }
    })?;
    let sc = ctx.scenario()?;
    let est = ctx.fit(&fit)?;
    let report = simulate(&ctx.ds, &est, &sc)?;
    let rows = report
        .firms
        .iter()
        .chain(std::iter::once(&report.total))
        .map(outcome_row)
        .collect();
    ctx.out.csv("counterfactual.csv", &OUTCOME_HEADER, rows)?;
    let mut header = vec!["period"];
    header.extend(OUTCOME_HEADER);
    let rows = report
        .monthly
        .iter()
        .map(|m| std::iter::once(m.period.to_string()).chain(outcome_row(&m.outcome)).collect())
        .collect();
    ctx.out.csv("monthly_gaps.csv", &header, rows)?;
    let rows = report
        .image
        .iter()
        .map(|p| vec![p.period.to_string(), num(p.observed), num(p.counterfactual)])
        .collect();
    ctx.out.csv("image_series.csv", &["period", "observed", "counterfactual"], rows)?;
    let rows = report
        .prices
        .iter()
        .map(|p| vec![p.firm_id.clone(), num(p.observed_mean_price), num(p.simulated_mean_price)])
        .collect();
    ctx.out.csv(
        "prices.csv",
        &["firm_id", "observed_mean_price", "simulated_mean_price"],
        rows,
    )?;
    ctx.out.json("counterfactual.json", &report)?;
    ctx.finish()
}

fn run_ad_equivalence(
    data: DataArgs,
    fit: FitArgs,
    scenario: Option<PathBuf>,
    pricing: Option<Pricing>,
    target_revenue: Option<f64>,
    tau_max: Option<f64>,
) -> CliResult<()> {
    let mut ctx = Context::load("ad-equivalence", data, |cfg| {
        if scenario.is_some() {
            cfg.paths.scenario = scenario;
        }
        if let Some(p) = pricing {
            cfg.pricing = p;
        }
        if let Some(t) = tau_max {
            cfg.tau.tau_max = t;
        }
    })?;
    let sc = ctx.scenario()?;
    let est = ctx.fit(&fit)?;
    let res = ad_equivalence_tau(&ctx.ds, &est, &sc, target_revenue, ctx.cfg.tau)?;
    let rows = res
        .curve
        .iter()
        .map(|&(t, r)| vec![num(t), num(r), num((r - res.target_revenue) / res.target_revenue * 100.0)])
        .collect();
    ctx.out.csv("tau_curve.csv", &["tau", "revenue", "gap_to_target_pct"], rows)?;
    ctx.out.json("tau.json", &res)?;
    ctx.finish()
}

fn summarize(data: DataArgs) -> CliResult<()> {
    let mut ctx = Context::load("summarize", data, |_| {})?;
    let ds = &ctx.ds;
    let shares = ds.shares()?;
    // count, price sum, share sum, within-share sum, volume sum, revenue sum
    let mut groups = vec![[0.0; 6]; ds.groups().len()];
    let mut firms = vec![[0.0; 6]; ds.firms().len()];
    for (i, o) in ds.observations().iter().enumerate() {
        let s = &shares.rows[i];
        let vals = [1.0, o.price, s.share, s.within_share, o.volume, o.revenue()];
        for (acc, idx) in [(&mut groups, ds.group_of(o.product)), (&mut firms, ds.firm_of(o.product))] {
            for k in 0..6 {
                acc[idx][k] += vals[k];
            }
        }
    }
    let total_volume: f64 = firms.iter().map(|f| f[4]).sum();
    let total_revenue: f64 = firms.iter().map(|f| f[5]).sum();
    let count_products = |pred: &dyn Fn(usize) -> bool| (0..ds.products().len()).filter(|&p| pred(p)).count();
    let rows = ds
        .groups()
        .iter()
        .enumerate()
        .map(|(g, id)| {
            let a = groups[g];
            vec![
                id.clone(),
                count_products(&|p| ds.group_of(p) == g).to_string(),
                num(a[0]),
                num(a[1] / a[0]),
                num(a[2] / a[0]),
                num(a[3] / a[0]),
            ]
        })
        .collect();
    ctx.out.csv(
        "summary_groups.csv",
        &["group_id", "products", "observations", "mean_price", "mean_share", "mean_within_share"],
        rows,
    )?;
    let rows = ds
        .firms()
        .iter()
        .enumerate()
        .map(|(f, id)| {
            let a = firms[f];
            vec![
                id.clone(),
                count_products(&|p| ds.firm_of(p) == f).to_string(),
                num(a[0]),
                num(a[1] / a[0]),
                num(a[4] / total_volume),
                num(a[5] / total_revenue),
            ]
        })
        .collect();
    ctx.out.csv(
        "summary_firms.csv",
        &["firm_id", "products", "observations", "mean_price", "volume_share", "revenue_share"],
        rows,
    )?;
    let outside: Vec<f64> = shares.markets.iter().map(|m| m.outside).collect();
    let summary = serde_json::json!({
        "observations": ds.observations().len(),
        "markets": ds.markets().len(),
        "regions": ds.regions().len(),
        "periods": ds.periods().len(),
        "products": ds.products().len(),
        "firms": ds.firms().len(),
        "groups": ds.groups().len(),
        "mean_outside_share": outside.iter().sum::<f64>() / outside.len() as f64,
        "zero_volume_rows": ds.observations().iter().filter(|o| o.volume <= 0.0).count(),
    });
    ctx.out.json("summary.json", &summary)?;
    ctx.finish()
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SimulateData {
            config,
            out,
            markets_out,
            seed,
            cenl,
        } => simulate_data(config, out, markets_out, seed, cenl),
        Command::BuildScores(data) => build_scores(data),
        Command::Estimate { data, model } => run_estimate(data, model),
        Command::Elasticities {
            data,
            fit,
            share_weighted,
        } => run_elasticities(data, fit, share_weighted),
        Command::RecoverCosts { data, fit } => run_recover_costs(data, fit),
        Command::Counterfactual {
            data,
            fit,
            scenario,
            pricing,
        } => run_counterfactual(data, fit, scenario, pricing),
        Command::AdEquivalence {
            data,
            fit,
            scenario,
            pricing,
            target_revenue,
            tau_max,
        } => run_ad_equivalence(data, fit, scenario, pricing, target_revenue, tau_max),
        Command::Summarize(data) => summarize(data),
    }
}

fn error_record(code: &str, kind: &str, message: &str) {
    let rec = serde_json::json!({ "error": code, "kind": kind, "message": message });
    eprintln!("{rec}");
}

fn thread_count(flag: Option<usize>) -> Option<usize> {
    std::env::var("DEMAND_FORGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .or(flag)
        .filter(|&n| n > 0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            error_record("UsageError", "usage", e.kind().to_string().as_str());
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = thread_count(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            error_record("UsageError", "usage", &msg);
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            let msg = e.to_string();
            eprintln!("error: {msg}");
            let (kind, code) = match e.kind() {
                ErrorKind::Usage => ("usage", 2),
                ErrorKind::Data => ("data", 3),
                ErrorKind::Numerical => ("numerical", 4),
            };
            error_record(e.code(), kind, &msg);
            ExitCode::from(code)
        }
    }
}
