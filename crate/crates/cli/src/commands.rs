//! The six subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use probscale::calibration::{
    calibrate_conditioned, calibrate_conditioned_member, calibrate_family,
    calibrate_family_with_selection, calibrate_fixed, evaluate_violation,
    ScaleEstimator,
};
use probscale::sample_complexity::{
    binomial_tail, explicit_spec, lemma_constant_exact, min_samples_exact, min_samples_family,
    ProbabilityLevels, SampleSpec, SpecRule,
};
use probscale::synthetic::{
    self, exact_sigma, run_coverage_experiment, sample_example_stream, CoverageConfig,
    CoverageMode, ExampleConfig,
};
use probscale::Dataset;

use crate::config::{
    build_model, BoundEvaluator, BuiltModel, BuiltSigma, DataSource, ExperimentFile,
    KernelSettings, PredictorSpec, ResidualModeArg, SigmaSpec,
};
use crate::error::{CliError, CliResult};
use crate::io::{read_dataset, write_bounds, write_dataset, BoundRow};
use crate::report::{write_json, CalibrationReport, RunConfig, ValidationReport};

#[derive(Subcommand)]
pub enum Command {
    /// Compute the calibration sample size N and discard rank r for given
    /// probability levels.
    SampleSize(SampleSizeArgs),
    /// Generate synthetic benchmark data as a dataset CSV.
    SynthData(SynthDataArgs),
    /// Calibrate a fixed or conditioned error bound for a predictor.
    Calibrate(CalibrateArgs),
    /// Calibrate a lambda-indexed kernel family and select the sharpest
    /// member.
    Family(FamilyArgs),
    /// Measure violations of a saved calibration on fresh data.
    Validate(ValidateArgs),
    /// Monte-Carlo check of the coverage guarantee.
    Coverage(CoverageArgs),
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::SampleSize(args) => cmd_sample_size(args),
        Command::SynthData(args) => cmd_synth_data(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Family(args) => cmd_family(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Coverage(args) => cmd_coverage(args),
    }
}

fn parse_levels(epsilon: f64, delta: f64) -> CliResult<ProbabilityLevels> {
    Ok(ProbabilityLevels::new(epsilon, delta)?)
}

/// `--constant` accepts a number or the word `exact` for (1 + sqrt(3))^2.
fn parse_constant(text: &str) -> CliResult<f64> {
    if text.eq_ignore_ascii_case("exact") {
        return Ok(lemma_constant_exact());
    }
    text.parse::<f64>()
        .map_err(|_| CliError::Usage(format!("--constant must be a number or `exact`, got {text:?}")))
}

fn rule_name(rule: SpecRule) -> &'static str {
    match rule {
        SpecRule::ExplicitConstant => "explicit-constant",
        SpecRule::ExactBinomial => "exact-binomial",
        SpecRule::Family => "family",
        SpecRule::Manual => "manual",
    }
}

// ---------------------------------------------------------------- sample-size

#[derive(Args)]
pub struct SampleSizeArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    /// Caller-chosen discard rank; by default r = floor(eps N / 2).
    #[arg(long)]
    pub r: Option<usize>,
    /// Split delta across this many family members.
    #[arg(long, default_value_t = 1)]
    pub n_family: usize,
    /// Rule constant: a number, or `exact` for (1 + sqrt(3))^2.
    #[arg(long, default_value = "7.47")]
    pub constant: String,
    /// Additionally solve the binomial inequality for the minimal N.
    #[arg(long)]
    pub exact: bool,
    /// Write the JSON summary here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SampleSizeJson {
    epsilon: f64,
    delta: f64,
    n_family: usize,
    rule: &'static str,
    constant: f64,
    n_samples: usize,
    discard_rank: usize,
    achieved_tail: f64,
    tail_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<ExactJson>,
}

#[derive(Serialize)]
struct ExactJson {
    n_samples: usize,
    achieved_tail: f64,
}

fn cmd_sample_size(args: SampleSizeArgs) -> CliResult<()> {
    let levels = parse_levels(args.epsilon, args.delta)?;
    if args.n_family < 1 {
        return Err(CliError::Usage("--n-family must be at least 1".into()));
    }
    let constant = parse_constant(&args.constant)?;
    let split_levels = ProbabilityLevels::new(args.epsilon, args.delta / args.n_family as f64)?;

    let spec = match args.r {
        Some(r) => explicit_spec(split_levels, r)?,
        None => min_samples_family(levels, args.n_family, constant)?,
    };
    let (n, r) = (spec.n_samples(), spec.discard_rank());
    let achieved = binomial_tail((r - 1) as u64, n as u64, args.epsilon)?;
    let threshold = args.delta / args.n_family as f64;

    let exact = if args.exact {
        let n_exact = min_samples_exact(split_levels, r)?;
        Some(ExactJson {
            n_samples: n_exact,
            achieved_tail: binomial_tail((r - 1) as u64, n_exact as u64, args.epsilon)?,
        })
    } else {
        None
    };

    let json = SampleSizeJson {
        epsilon: args.epsilon,
        delta: args.delta,
        n_family: args.n_family,
        rule: rule_name(spec.rule()),
        constant,
        n_samples: n,
        discard_rank: r,
        achieved_tail: achieved,
        tail_threshold: threshold,
        exact,
    };

    println!("rule           {}", json.rule);
    println!("epsilon        {}", json.epsilon);
    println!("delta          {}", json.delta);
    if args.n_family > 1 {
        println!("n_family       {}", args.n_family);
    }
    println!("N              {n}");
    println!("r              {r}");
    println!(
        "B(r-1; N, eps) {achieved:.6e} <= {threshold:.6e}: {}",
        achieved <= threshold
    );
    if let Some(exact) = &json.exact {
        println!("exact N        {}", exact.n_samples);
        println!("exact tail     {:.6e}", exact.achieved_tail);
    }
    println!();
    println!("{}", serde_json::to_string_pretty(&json)?);
    if let Some(path) = &args.out {
        write_json(path, &json)?;
    }
    Ok(())
}

// ----------------------------------------------------------------- synth-data

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PurposeArg {
    Training,
    Calibration,
    Validation,
    Selection,
}

impl PurposeArg {
    fn stream(self) -> u64 {
        match self {
            PurposeArg::Training => synthetic::streams::TRAINING,
            PurposeArg::Calibration => synthetic::streams::CALIBRATION,
            PurposeArg::Validation => synthetic::streams::VALIDATION,
            PurposeArg::Selection => synthetic::streams::SELECTION,
        }
    }
}

#[derive(Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Which sub-stream of the seed to draw from; streams never overlap.
    #[arg(long, value_enum, default_value_t = PurposeArg::Training)]
    pub purpose: PurposeArg,
    /// Raw stream id (overrides --purpose).
    #[arg(long)]
    pub stream: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_synth_data(args: SynthDataArgs) -> CliResult<()> {
    if args.count < 1 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let stream = args.stream.unwrap_or_else(|| args.purpose.stream());
    let data = sample_example_stream(args.count, &ExampleConfig::new(args.seed), stream);
    write_dataset(&args.out, &data)?;
    println!(
        "wrote {} observations (seed {}, stream {stream}) to {}",
        data.len(),
        args.seed,
        args.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ calibrate

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    Oracle,
    Kernel,
}

#[derive(Args)]
pub struct KernelFlags {
    /// Experiment config JSON (kernel/weight/truncation/residual_mode).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub lengthscale_sq: Option<f64>,
    #[arg(long)]
    pub truncation_m: Option<usize>,
    #[arg(long, value_enum)]
    pub residual_mode: Option<ResidualModeArg>,
}

impl KernelFlags {
    /// defaults <- config file <- explicit flags; also returns the file's
    /// weight.lambda when present.
    fn resolve(&self) -> CliResult<(KernelSettings, Option<f64>)> {
        let mut settings = KernelSettings::default();
        let mut lambda = None;
        if let Some(path) = &self.config {
            let file = ExperimentFile::load(path)?;
            if let Some(kernel) = file.kernel {
                if let Some(a) = kernel.amplitude {
                    settings.amplitude = a;
                }
                if let Some(l) = kernel.lengthscale_sq {
                    settings.lengthscale_sq = l;
                }
            }
            if let Some(weight) = file.weight {
                lambda = weight.lambda;
            }
            if let Some(truncation) = file.truncation {
                if let Some(m) = truncation.m {
                    settings.truncation_m = m;
                }
            }
            if let Some(mode) = file.residual_mode {
                settings.residual_mode = mode;
            }
        }
        if let Some(a) = self.amplitude {
            settings.amplitude = a;
        }
        if let Some(l) = self.lengthscale_sq {
            settings.lengthscale_sq = l;
        }
        if let Some(m) = self.truncation_m {
            settings.truncation_m = m;
        }
        if let Some(mode) = self.residual_mode {
            settings.residual_mode = mode;
        }
        settings.kernel_config()?; // validate early
        Ok((settings, lambda))
    }
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    /// Rule constant: a number, or `exact`.
    #[arg(long, default_value = "7.47")]
    pub constant: String,
    /// Caller-chosen discard rank (uses the explicit rule for N).
    #[arg(long)]
    pub r: Option<usize>,

    /// Calibration dataset CSV (must hold exactly N rows).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Draw the calibration set synthetically with this seed instead.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, value_enum, default_value_t = PredictorArg::Oracle)]
    pub predictor: PredictorArg,
    /// Training dataset CSV for the kernel predictor or the parzen scale.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Draw the training set synthetically with this seed instead.
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long, default_value_t = 2065)]
    pub train_size: usize,
    /// Locality parameter of the kernel member / parzen scale.
    #[arg(long)]
    pub lambda: Option<f64>,

    #[command(flatten)]
    pub kernel: KernelFlags,

    /// Scale estimator: `none` (fixed bound), `constant:<v>`, `exact`, or
    /// `parzen`.
    #[arg(long, default_value = "none")]
    pub sigma: String,

    #[arg(long)]
    pub out: PathBuf,
    /// Also write a per-x bound table on a grid (scalar regressors only).
    #[arg(long)]
    pub emit_bounds: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub grid_points: usize,
}

fn resolve_spec(
    levels: ProbabilityLevels,
    r: Option<usize>,
    constant: f64,
    n_family: usize,
) -> CliResult<SampleSpec> {
    match r {
        Some(r) => {
            let split =
                ProbabilityLevels::new(levels.epsilon(), levels.delta() / n_family as f64)?;
            Ok(explicit_spec(split, r)?)
        }
        None => Ok(min_samples_family(levels, n_family, constant)?),
    }
}

fn calibration_source(
    data: &Option<PathBuf>,
    seed: Option<u64>,
    n_samples: usize,
) -> CliResult<DataSource> {
    match (data, seed) {
        (Some(path), None) => DataSource::from_csv_path(path),
        (None, Some(seed)) => Ok(DataSource::synthetic(
            seed,
            synthetic::streams::CALIBRATION,
            n_samples,
        )),
        _ => Err(CliError::Usage(
            "provide exactly one of --data <csv> or --seed <n> for the calibration set".into(),
        )),
    }
}

fn train_source(
    train: &Option<PathBuf>,
    train_seed: Option<u64>,
    train_size: usize,
) -> CliResult<DataSource> {
    match (train, train_seed) {
        (Some(path), None) => DataSource::from_csv_path(path),
        (None, Some(seed)) => Ok(DataSource::synthetic(
            seed,
            synthetic::streams::TRAINING,
            train_size,
        )),
        _ => Err(CliError::Usage(
            "provide exactly one of --train <csv> or --train-seed <n>".into(),
        )),
    }
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult<()> {
    let levels = parse_levels(args.epsilon, args.delta)?;
    let constant = parse_constant(&args.constant)?;
    let spec = resolve_spec(levels, args.r, constant, 1)?;
    let (settings, file_lambda) = args.kernel.resolve()?;
    let lambda = args.lambda.or(file_lambda).unwrap_or(1.0);

    let calibration_data = calibration_source(&args.data, args.seed, spec.n_samples())?;

    let predictor_spec = match args.predictor {
        PredictorArg::Oracle => PredictorSpec::Oracle,
        PredictorArg::Kernel => PredictorSpec::Kernel {
            train: train_source(&args.train, args.train_seed, args.train_size)?,
            settings: settings.clone(),
            lambda,
        },
    };

    let sigma_spec = match args.sigma.as_str() {
        "none" => SigmaSpec::None,
        "exact" => SigmaSpec::Exact,
        "parzen" => match args.predictor {
            PredictorArg::Kernel => SigmaSpec::Member,
            PredictorArg::Oracle => SigmaSpec::Parzen {
                train: train_source(&args.train, args.train_seed, args.train_size)?,
                lambda,
            },
        },
        other => match other.strip_prefix("constant:") {
            Some(value) => SigmaSpec::Constant {
                value: value.parse().map_err(|_| {
                    CliError::Usage(format!("bad --sigma constant value {value:?}"))
                })?,
            },
            None => {
                return Err(CliError::Usage(format!(
                    "--sigma must be none, constant:<v>, exact, or parzen; got {other:?}"
                )))
            }
        },
    };

    let data = calibration_data.load()?;
    if matches!(predictor_spec, PredictorSpec::Oracle) && data.dim() != 1 {
        return Err(CliError::Contract(format!(
            "the oracle predictor needs scalar regressors, dataset has dimension {}",
            data.dim()
        )));
    }
    let model = build_model(&predictor_spec, &sigma_spec)?;

    let (kind, rho, gamma_bar, scale_factor) = match (&model, &sigma_spec) {
        (BuiltModel::Oracle { sigma }, SigmaSpec::None) => {
            let _ = sigma;
            let bound = calibrate_fixed(&synthetic::oracle_predictor(), &data, &spec)?;
            ("fixed", Some(bound.rho()), None, bound.rho())
        }
        (BuiltModel::Kernel { member, .. }, SigmaSpec::None) => {
            let bound = calibrate_fixed(member, &data, &spec)?;
            ("fixed", Some(bound.rho()), None, bound.rho())
        }
        (BuiltModel::Kernel { member, .. }, SigmaSpec::Member) => {
            let bound = calibrate_conditioned_member(member, &data, &spec)?;
            ("conditioned", None, Some(bound.gamma_bar()), bound.gamma_bar())
        }
        (BuiltModel::Kernel { member, sigma }, _) => {
            let scale = sigma_closure(sigma)?;
            let bound = calibrate_conditioned(member, &scale, &data, &spec)?;
            ("conditioned", None, Some(bound.gamma_bar()), bound.gamma_bar())
        }
        (BuiltModel::Oracle { sigma }, _) => {
            let scale = sigma_closure(sigma)?;
            let bound =
                calibrate_conditioned(&synthetic::oracle_predictor(), &scale, &data, &spec)?;
            ("conditioned", None, Some(bound.gamma_bar()), bound.gamma_bar())
        }
        (BuiltModel::Family { .. }, _) => unreachable!("calibrate never builds a family"),
    };

    let config = RunConfig {
        predictor: predictor_spec,
        sigma: sigma_spec,
        calibration_data,
    };
    let report = CalibrationReport {
        kind: kind.to_string(),
        epsilon: args.epsilon,
        delta: args.delta,
        n_samples: spec.n_samples(),
        discard_rank: spec.discard_rank(),
        rule: rule_name(spec.rule()).to_string(),
        rho,
        gamma_bar,
        gamma_bars: None,
        criterion_values: None,
        selected_index: None,
        selected_lambda: None,
        config_hash: config.hash(),
        config,
    };
    report.write(&args.out)?;

    println!("kind           {kind}");
    println!("N              {}", spec.n_samples());
    println!("r              {}", spec.discard_rank());
    if let Some(rho) = rho {
        println!("rho            {rho:.6}");
    }
    if let Some(gamma) = gamma_bar {
        println!("gamma_bar      {gamma:.6}");
    }
    println!("report         {}", args.out.display());

    if let Some(path) = &args.emit_bounds {
        emit_bound_grid(
            path,
            &model,
            0,
            scale_factor,
            &data,
            args.grid_points,
            kind,
        )?;
        println!("bounds         {}", path.display());
    }
    Ok(())
}

type SigmaFn<'a> = Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>;

/// Materialize a non-member scale estimator as a closure.
fn sigma_closure(sigma: &BuiltSigma) -> CliResult<SigmaFn<'_>> {
    Ok(match sigma {
        BuiltSigma::Constant(c) => {
            let c = *c;
            Box::new(move |_: &[f64]| c)
        }
        BuiltSigma::Exact => Box::new(|x: &[f64]| exact_sigma(x[0])),
        BuiltSigma::Parzen(p) => Box::new(move |x: &[f64]| p.scale(x)),
        BuiltSigma::None | BuiltSigma::Member => {
            return Err(CliError::Usage(
                "internal: sigma closure requested for none/member".into(),
            ))
        }
    })
}

fn emit_bound_grid(
    path: &Path,
    model: &BuiltModel,
    member_index: usize,
    scale_factor: f64,
    data: &Dataset,
    grid_points: usize,
    method: &str,
) -> CliResult<()> {
    if data.dim() != 1 {
        return Err(CliError::Usage(
            "--emit-bounds requires scalar regressors".into(),
        ));
    }
    if grid_points < 2 {
        return Err(CliError::Usage("--grid-points must be at least 2".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..data.len() {
        lo = lo.min(data.x(i)[0]);
        hi = hi.max(data.x(i)[0]);
    }
    let evaluator = BoundEvaluator {
        model,
        member_index,
        scale_factor,
    };
    let predictor = model.predictor(member_index)?;
    let rows: Vec<BoundRow> = (0..grid_points)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (grid_points - 1) as f64;
            let q = [x];
            let center = predictor.predict(&q);
            let bound = evaluator.bound(&q);
            BoundRow {
                x,
                y: center,
                bound_lo: center - bound,
                bound_hi: center + bound,
            }
        })
        .collect();
    write_bounds(path, &rows, method)
}

// --------------------------------------------------------------------- family

#[derive(Args)]
pub struct FamilyArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long, default_value = "7.47")]
    pub constant: String,
    /// Comma-separated locality parameters, one family member each.
    #[arg(long, default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub lambdas: String,

    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long, default_value_t = 2065)]
    pub train_size: usize,

    /// Calibration dataset CSV (must hold exactly N rows for the family
    /// rule).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,

    /// Optional separate dataset for the selection criterion.
    #[arg(long)]
    pub selection_data: Option<PathBuf>,

    #[command(flatten)]
    pub kernel: KernelFlags,

    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub emit_bounds: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub grid_points: usize,
}

fn parse_lambdas(text: &str) -> CliResult<Vec<f64>> {
    let lambdas: Result<Vec<f64>, _> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect();
    lambdas.map_err(|_| CliError::Usage(format!("bad --lambdas list {text:?}")))
}

fn cmd_family(args: FamilyArgs) -> CliResult<()> {
    let levels = parse_levels(args.epsilon, args.delta)?;
    let constant = parse_constant(&args.constant)?;
    let lambdas = parse_lambdas(&args.lambdas)?;
    let spec = min_samples_family(levels, lambdas.len(), constant)?;
    let (settings, _) = args.kernel.resolve()?;

    let calibration_data = calibration_source(&args.data, args.seed, spec.n_samples())?;
    let predictor_spec = PredictorSpec::KernelFamily {
        train: train_source(&args.train, args.train_seed, args.train_size)?,
        settings,
        lambdas: lambdas.clone(),
    };

    let data = calibration_data.load()?;
    let model = build_model(&predictor_spec, &SigmaSpec::Member)?;
    let BuiltModel::Family { members, .. } = &model else {
        unreachable!("family spec builds a family");
    };

    let result = match &args.selection_data {
        None => calibrate_family(members, &data, levels, &spec)?,
        Some(path) => {
            let selection = read_dataset(path)?;
            calibrate_family_with_selection(members, &data, levels, &spec, &selection)?
        }
    };

    let selected = result.selected_index();
    let config = RunConfig {
        predictor: predictor_spec,
        sigma: SigmaSpec::Member,
        calibration_data,
    };
    let report = CalibrationReport {
        kind: "family".to_string(),
        epsilon: args.epsilon,
        delta: args.delta,
        n_samples: spec.n_samples(),
        discard_rank: spec.discard_rank(),
        rule: rule_name(spec.rule()).to_string(),
        rho: None,
        gamma_bar: None,
        gamma_bars: Some(result.gamma_bars().to_vec()),
        criterion_values: Some(result.criterion_values().to_vec()),
        selected_index: Some(selected),
        selected_lambda: Some(lambdas[selected]),
        config_hash: config.hash(),
        config,
    };
    report.write(&args.out)?;

    println!("N              {}", spec.n_samples());
    println!("r              {}", spec.discard_rank());
    println!("members        {}", lambdas.len());
    println!("selected       lambda = {}", lambdas[selected]);
    println!("gamma_bar      {:.6}", result.selected_gamma_bar());
    println!("report         {}", args.out.display());

    if let Some(path) = &args.emit_bounds {
        emit_bound_grid(
            path,
            &model,
            selected,
            result.selected_gamma_bar(),
            &data,
            args.grid_points,
            "family",
        )?;
        println!("bounds         {}", path.display());
    }
    Ok(())
}

// ------------------------------------------------------------------- validate

#[derive(Args)]
pub struct ValidateArgs {
    /// Calibration report JSON produced by `calibrate` or `family`.
    #[arg(long)]
    pub calibration: PathBuf,
    /// Fresh validation dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Draw the validation set synthetically with this seed instead
    /// (defaults to the calibration seed on its validation stream).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validation sample count for synthetic draws.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-point bound table.
    #[arg(long)]
    pub emit_bounds: Option<PathBuf>,
}

fn cmd_validate(args: ValidateArgs) -> CliResult<()> {
    let report = CalibrationReport::read(&args.calibration)?;

    let validation_source = match (&args.data, args.seed) {
        (Some(path), None) => DataSource::from_csv_path(path)?,
        (None, seed) => {
            let seed = seed.or(match &report.config.calibration_data {
                DataSource::Synthetic { seed, .. } => Some(*seed),
                DataSource::Csv { .. } => None,
            });
            let Some(seed) = seed else {
                return Err(CliError::Usage(
                    "calibration used a CSV dataset; provide --data or --seed for validation"
                        .into(),
                ));
            };
            DataSource::synthetic(
                seed,
                synthetic::streams::VALIDATION,
                args.size.unwrap_or(report.n_samples),
            )
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "provide at most one of --data and --seed".into(),
            ))
        }
    };

    if validation_source.same_draw(&report.config.calibration_data) {
        return Err(CliError::Contract(
            "validation data would be identical to the calibration data; \
             the guarantee requires disjoint samples"
                .into(),
        ));
    }

    let data = validation_source.load()?;
    let model = build_model(&report.config.predictor, &report.config.sigma)?;
    let member_index = report.selected_index.unwrap_or(0);
    let scale_factor = report.scale_factor()?;
    let evaluator = BoundEvaluator {
        model: &model,
        member_index,
        scale_factor,
    };
    let predictor = model.predictor(member_index)?;
    let violation = evaluate_violation(&|x: &[f64]| evaluator.bound(x), predictor, &data);

    let out = ValidationReport {
        epsilon: report.epsilon,
        delta: report.delta,
        total: violation.total,
        violations: violation.violations,
        violation_ratio: violation.ratio,
        mean_bound_width: violation.mean_bound_width,
        calibration_kind: report.kind.clone(),
        validation_data: validation_source,
    };
    write_json(&args.out, &out)?;

    println!("kind            {}", report.kind);
    println!("total           {}", out.total);
    println!("violations      {}", out.violations);
    println!("violation_ratio {:.6}", out.violation_ratio);
    println!("mean_width      {:.6}", out.mean_bound_width);
    println!("report          {}", args.out.display());

    if let Some(path) = &args.emit_bounds {
        if data.dim() != 1 {
            return Err(CliError::Usage(
                "--emit-bounds requires scalar regressors".into(),
            ));
        }
        let rows: Vec<BoundRow> = (0..data.len())
            .map(|i| {
                let x = data.x(i);
                let center = predictor.predict(x);
                let bound = evaluator.bound(x);
                BoundRow {
                    x: x[0],
                    y: data.y(i),
                    bound_lo: center - bound,
                    bound_hi: center + bound,
                }
            })
            .collect();
        write_bounds(path, &rows, &report.kind)?;
        println!("bounds          {}", path.display());
    }
    Ok(())
}

// ------------------------------------------------------------------- coverage

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CoverageModeArg {
    Fixed,
    Conditioned,
}

#[derive(Args)]
pub struct CoverageArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub reps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub validation_size: usize,
    #[arg(long, value_enum, default_value_t = CoverageModeArg::Fixed)]
    pub mode: CoverageModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "7.47")]
    pub constant: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CoverageJson {
    seed: u64,
    #[serde(flatten)]
    report: probscale::synthetic::CoverageReport,
}

fn cmd_coverage(args: CoverageArgs) -> CliResult<()> {
    let levels = parse_levels(args.epsilon, args.delta)?;
    let constant = parse_constant(&args.constant)?;
    let mode = match args.mode {
        CoverageModeArg::Fixed => CoverageMode::Fixed,
        CoverageModeArg::Conditioned => CoverageMode::Conditioned,
    };
    let cfg = CoverageConfig::new(args.reps, levels, args.validation_size, args.seed)?
        .with_mode(mode)
        .with_constant(constant);
    let report = run_coverage_experiment(&cfg)?;

    println!("N                {}", report.n_samples);
    println!("r                {}", report.discard_rank);
    println!("repetitions      {}", report.repetitions);
    println!("failure_fraction {:.4}", report.failure_fraction);
    println!("threshold        {:.4}", report.failure_threshold);
    println!("passed           {}", report.passed());

    let passed = report.passed();
    let json = CoverageJson {
        seed: args.seed,
        report,
    };
    if let Some(path) = &args.out {
        write_json(path, &json)?;
        println!("report           {}", path.display());
    }
    if !passed {
        return Err(CliError::CheckFailed(format!(
            "coverage failure fraction {:.4} exceeds threshold {:.4}",
            json.report.failure_fraction, json.report.failure_threshold
        )));
    }
    Ok(())
}
