//! Command-line front end: read a JSON spec, run one analysis, write a JSON report.

use crate::arbitrage::{
    check_na1_with, construct_esmm, find_classical_arbitrage_with, ArbitrageCertificate, ArbitrageOptions, ArbitrageVerdict,
    Esmm, Na1Certificate,
};
use crate::error::{Error, Result};
use crate::factor::{
    arbitrage_line_csv, arbitrage_ray, max_arbitrage_strategy, na1_factor, symbolic_admissible_set, validate_positivity,
    FactorModel, PositivityReport,
};
use crate::hedging::{indifference_price, real_world_price, superhedge, Claim, ValuationReport};
use crate::market::{ConstraintSet, DiscreteMarket, MarketSpec};
use crate::portfolio::{deflator_from_numeraire, numeraire_portfolio_with, verify_numeraire, Deflator, OptimalPortfolio, UtilitySpec};
use crate::tree::{
    backward_induction, global_na1, numeraire_process, superhedge_tree, DpOptions, DpResult, NumeraireProcess, ScenarioTree,
    TreeHedge, TreeNa1Report, TreeSpec,
};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Analyze,
    Numeraire,
    Hedge,
    Factor,
    Tree,
}

impl std::str::FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "analyze" => Ok(Command::Analyze),
            "numeraire" => Ok(Command::Numeraire),
            "hedge" => Ok(Command::Hedge),
            "factor" => Ok(Command::Factor),
            "tree" => Ok(Command::Tree),
            other => Err(format!("unknown command '{other}'; expected analyze, numeraire, hedge, factor or tree")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub input: PathBuf,
    /// Report destination; standard output when absent.
    pub output: Option<PathBuf>,
    /// Positivity threshold of the arbitrage LPs.
    pub tol_lp: f64,
    /// Stopping tolerance of the utility optimiser.
    pub tol_opt: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(command: Command, input: impl Into<PathBuf>) -> Self {
        RunConfig { command, input: input.into(), output: None, tol_lp: 1e-9, tol_opt: 1e-10, seed: 0 }
    }
}

/// Market JSON with an optional claim and utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInput {
    #[serde(flatten)]
    pub market: MarketSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySpec>,
    /// Initial capital for the indifference price.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capital: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub arbitrage: ArbitrageCertificate,
    pub na1: Na1Certificate,
    pub esmm: Option<Esmm>,
    pub numeraire: Option<OptimalPortfolio>,
    pub superhedge: Option<ValuationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumeraireReport {
    pub portfolio: OptimalPortfolio,
    /// `max over allowed pi of E[V^pi / V^rho]`.
    pub certificate: f64,
    pub deflator: Deflator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeReport {
    pub superhedge: ValuationReport,
    pub real_world_price: f64,
    pub indifference_price: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorReport {
    pub positivity: PositivityReport,
    pub arbitrage_ray: Option<Vec<f64>>,
    pub na1: Option<bool>,
    pub max_arbitrage: Option<Vec<f64>>,
    pub admissible_set: ConstraintSet,
    /// Path of the plot data, written for two-asset triangular models.
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeInput {
    pub tree: TreeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilitySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeReport {
    pub na1: TreeNa1Report,
    pub policy: Option<DpResult>,
    pub numeraire: Option<NumeraireProcess>,
    pub superhedge: Option<TreeHedge>,
}

/// Failure of a run, already mapped to an exit code.
#[derive(Debug)]
pub struct RunError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError { code: e.exit_code(), message: e.to_string() }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError { code: 1, message: format!("{}: {e}", path.display()) }
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> std::result::Result<T, RunError> {
    serde_json::from_str(text).map_err(|e| RunError {
        code: 1,
        message: format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()),
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialise");
    s.push('\n');
    s
}

/// Runs one command and returns the process exit code: 0 on success, 1 for
/// unreadable input, 2 for domain or precondition errors, 3 for numerical
/// failures.
pub fn run(config: &RunConfig) -> i32 {
    match execute(config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Like [`run`], but returns the report text instead of writing it.
pub fn report(config: &RunConfig) -> std::result::Result<String, RunError> {
    if !(config.tol_lp > 0.0) || !(config.tol_opt > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()).into());
    }
    log::info!("running {:?} on {} (seed {})", config.command, config.input.display(), config.seed);
    let text = std::fs::read_to_string(&config.input).map_err(|e| io_err(&config.input, e))?;
    let arb = ArbitrageOptions { threshold: config.tol_lp, ..Default::default() };
    let out = match config.command {
        Command::Analyze => to_json(&analyze(parse(&config.input, &text)?, &arb, config.tol_opt)?),
        Command::Numeraire => to_json(&numeraire(parse(&config.input, &text)?, config.tol_opt)?),
        Command::Hedge => to_json(&hedge(parse(&config.input, &text)?)?),
        Command::Factor => {
            let model: FactorModel = parse(&config.input, &text)?;
            let csv_path = config
                .output
                .as_ref()
                .and_then(|p| p.parent().map(Path::to_path_buf))
                .unwrap_or_default()
                .join("arbitrage_line.csv");
            to_json(&factor(&model, Some(&csv_path))?)
        }
        Command::Tree => to_json(&tree(parse(&config.input, &text)?)?),
    };
    Ok(out)
}

fn execute(config: &RunConfig) -> std::result::Result<(), RunError> {
    let out = report(config)?;
    match &config.output {
        Some(p) => std::fs::write(p, out).map_err(|e| io_err(p, e))?,
        None => print!("{out}"),
    }
    Ok(())
}

fn build_market(spec: MarketSpec) -> Result<DiscreteMarket> {
    DiscreteMarket::try_from(spec)
}

pub fn analyze(input: MarketInput, arb: &ArbitrageOptions, tol_opt: f64) -> Result<AnalyzeReport> {
    let market = build_market(input.market)?;
    let arbitrage = find_classical_arbitrage_with(&market, arb)?;
    let na1 = check_na1_with(&market, arb)?;
    let esmm = match arbitrage.verdict {
        ArbitrageVerdict::NoArbitrage => Some(construct_esmm(&market)?),
        ArbitrageVerdict::ArbitrageFound => None,
    };
    let numeraire = if na1.holds() { Some(numeraire_portfolio_with(&market, tol_opt)?) } else { None };
    let superhedge = match (&input.claim, na1.holds()) {
        (Some(c), true) => Some(superhedge(&market, &Claim::new(c.clone())?)?),
        _ => None,
    };
    Ok(AnalyzeReport { arbitrage, na1, esmm, numeraire, superhedge })
}

pub fn numeraire(input: MarketInput, tol_opt: f64) -> Result<NumeraireReport> {
    let market = build_market(input.market)?;
    let portfolio = numeraire_portfolio_with(&market, tol_opt)?;
    let certificate = verify_numeraire(&market, &portfolio.strategy)?;
    let deflator = deflator_from_numeraire(&market, &portfolio.strategy)?;
    Ok(NumeraireReport { portfolio, certificate, deflator })
}

pub fn hedge(input: MarketInput) -> Result<HedgeReport> {
    let market = build_market(input.market)?;
    let claim = Claim::new(input.claim.ok_or_else(|| Error::InvalidParameter("hedge needs a 'claim'".into()))?)?;
    let sh = superhedge(&market, &claim)?;
    let rw = real_world_price(&market, &claim)?;
    let indiff = match input.utility {
        Some(u) => Some(indifference_price(&market, &claim, &u, input.capital.unwrap_or(1.0))?),
        None => None,
    };
    Ok(HedgeReport { superhedge: sh, real_world_price: rw, indifference_price: indiff })
}

/// Factor-model report; for `Q = [[1, gamma], [0, 1]]` also writes the plot data to `csv`.
pub fn factor(model: &FactorModel, csv: Option<&Path>) -> Result<FactorReport> {
    model.validate()?;
    let ray = arbitrage_ray(model);
    let na1 = if ray.is_some() { Some(na1_factor(model)?) } else { None };
    let max_arbitrage = if na1 == Some(true) { Some(max_arbitrage_strategy(model)?) } else { None };
    let two_dim = model.num_assets() == 2 && model.num_factors() == 2 && model.q[0][0] == 1.0 && model.q[1] == [0.0, 1.0];
    let csv = match (two_dim, csv) {
        (true, Some(path)) => {
            std::fs::write(path, arbitrage_line_csv(model.q[0][1], model.c))
                .map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))?;
            Some(path.display().to_string())
        }
        _ => None,
    };
    Ok(FactorReport {
        positivity: validate_positivity(model),
        arbitrage_ray: ray,
        na1,
        max_arbitrage,
        admissible_set: symbolic_admissible_set(model)?,
        csv,
    })
}

/// Tree report. Optimisation and hedging are skipped when NA1 fails.
pub fn tree(input: TreeInput) -> Result<TreeReport> {
    let tree = ScenarioTree::new(input.tree)?;
    let na1 = global_na1(&tree)?;
    if !na1.holds {
        return Ok(TreeReport { na1, policy: None, numeraire: None, superhedge: None });
    }
    let u = input.utility.unwrap_or(UtilitySpec::Log);
    let policy = Some(backward_induction(&tree, &u, &input.dp.unwrap_or_default())?);
    let numeraire = Some(numeraire_process(&tree)?);
    let superhedge = match &input.claim {
        Some(c) => Some(superhedge_tree(&tree, c)?),
        None => None,
    };
    Ok(TreeReport { na1, policy, numeraire, superhedge })
}
