//! Command-line surface: argument parsing and dispatch to the library.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use msclust::bands::band_domain;
use msclust::io::{plot_svg, save_transitions, write_transitions, CurveOutput};
use msclust::sim::study::{preset, run_study};
use msclust::sim::{simulate_trial, ArmDesign, SimConfig};
use msclust::{
    build_panel, estimate_target, ks_two_sample, landmark_restrict, read_transitions,
    simultaneous_band, target_influence, validate_two_sample, BandSpec, Error, LandmarkSpec,
    Method, SeedSpec, StateSpace, Target, TestSpec, Transform, WeightKind, Weighting,
};

#[derive(Parser, Debug)]
#[command(
    name = "msclust",
    version,
    about = "Population-averaged multi-state estimation for clustered event histories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Point estimate with influence-function standard errors and pointwise intervals.
    Estimate(EstimateArgs),
    /// Estimate with a simultaneous confidence band.
    Band(BandArgs),
    /// Two-sample Kolmogorov-Smirnov-type test between arms 1 and 2.
    Test(TestArgs),
    /// Simulate a clustered illness-death trial.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study preset.
    Study(StudyArgs),
    /// Draw a curve file as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightingArg {
    All,
    Typical,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Self {
        match w {
            WeightingArg::All => Weighting::AllMembers,
            WeightingArg::Typical => Weighting::TypicalMember,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransformArg {
    Loglog,
    Logit,
    Identity,
}

impl From<TransformArg> for Transform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Loglog => Transform::LogLog,
            TransformArg::Logit => Transform::Logit,
            TransformArg::Identity => Transform::Identity,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    If,
    Cb,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::If => Method::Influence,
            MethodArg::Cb => Method::ClusterBootstrap,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightArg {
    Indicator,
    Ratio,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn parse_target(s: &str) -> Result<Target<f64>, String> {
    let bad = || format!("expected 'transition:h,j,s' or 'occupation:j', got '{s}'");
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
    match (kind, parts.as_slice()) {
        ("occupation", [j]) => Ok(Target::Occupation {
            state: j.parse().map_err(|_| bad())?,
        }),
        ("transition", [h, j, origin]) => Ok(Target::Transition {
            from: h.parse().map_err(|_| bad())?,
            to: j.parse().map_err(|_| bad())?,
            origin: origin.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn parse_landmark(s: &str) -> Result<(f64, usize), String> {
    let bad = || format!("expected 's,h' (time, state), got '{s}'");
    let (t, h) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        t.trim().parse().map_err(|_| bad())?,
        h.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_pair<A: std::str::FromStr>(s: &str) -> Result<(A, A), String> {
    let bad = || format!("expected two comma-separated values, got '{s}'");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_move(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected 'h-j', got '{s}'");
    let (h, j) = s.split_once('-').ok_or_else(bad)?;
    Ok((
        h.trim().parse().map_err(|_| bad())?,
        j.trim().parse().map_err(|_| bad())?,
    ))
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Transitions file.
    input: PathBuf,
    /// Number of states.
    #[arg(long, default_value_t = 3)]
    states: usize,
    /// Absorbing states, comma separated.
    #[arg(long, default_value = "3", value_delimiter = ',')]
    absorbing: Vec<usize>,
    /// Allowed transitions as `h-j`, comma separated (default: illness-death).
    #[arg(long, value_parser = parse_move, value_delimiter = ',', default_value = "1-2,1-3,2-3")]
    transitions: Vec<(usize, usize)>,
}

impl DataArgs {
    fn space(&self) -> Result<StateSpace, Error> {
        StateSpace::with_allowed(
            self.states,
            self.absorbing.iter().copied(),
            self.transitions.iter().copied(),
        )
        .map_err(Error::InvalidArgument)
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "typical")]
    weighting: WeightingArg,
    /// `transition:h,j,s` or `occupation:j`.
    #[arg(long, value_parser = parse_target, default_value = "occupation:2")]
    target: Target<f64>,
    /// Landmark analysis conditioning on state h at time s: `s,h`.
    #[arg(long, value_parser = parse_landmark)]
    landmark: Option<(f64, usize)>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "loglog")]
    transform: TransformArg,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file (stdout when omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BandArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
    #[arg(long, value_enum, default_value = "if")]
    method: MethodArg,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Band domain as percentiles of the driving jump times.
    #[arg(long, value_parser = parse_pair::<f64>, default_value = "0.1,0.9")]
    domain: (f64, f64),
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "typical")]
    weighting: WeightingArg,
    #[arg(long, value_parser = parse_target, default_value = "occupation:2")]
    target: Target<f64>,
    #[arg(long, value_enum, default_value = "ratio")]
    weight: WeightArg,
    #[arg(long, value_enum, default_value = "if")]
    method: MethodArg,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Report (1 + #exceedances)/(B + 1).
    #[arg(long)]
    corrected: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 40)]
    clusters: usize,
    #[arg(long, value_parser = parse_pair::<usize>, default_value = "5,15")]
    sizes: (usize, usize),
    /// Two arms allocated 1:1 within clusters.
    #[arg(long)]
    two_arm: bool,
    /// Increase of the 1→2 rate in arm 2.
    #[arg(long, default_value_t = 0.0)]
    effect: f64,
    /// Full simulation config as JSON (overrides the flags above).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long, value_parser = ["table1", "table2", "table3", "table4"])]
    scenario: String,
    /// Multiplier sets or bootstrap replicates per dataset.
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Simulated datasets per design.
    #[arg(long, default_value_t = 1000)]
    datasets: usize,
    /// Cluster counts, comma separated (default 40; 20,40,80 for table4).
    #[arg(long, value_delimiter = ',')]
    clusters: Vec<usize>,
    #[arg(long, value_parser = parse_pair::<usize>, default_value = "5,15")]
    sizes: (usize, usize),
    #[arg(long)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Curve file written by `estimate` or `band` (CSV or JSON).
    input: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn emit(output: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<(), Error> {
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn render(curve: &CurveOutput, format: Format) -> Result<String, Error> {
    match format {
        Format::Csv => curve.to_csv(),
        Format::Json => curve.to_json(),
    }
}

fn point_curve(a: &EstimateArgs) -> Result<(msclust::Panel, msclust::Curve, CurveOutput), Error> {
    let space = a.data.space()?;
    let mut data = read_transitions(&a.data.input, space)?;
    if let Some((s, h)) = a.landmark {
        match a.target {
            Target::Transition { from, origin, .. } if from == h && origin == s => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "--landmark s,h requires --target transition:h,j,s with the same s and h"
                        .into(),
                ))
            }
        }
        data = landmark_restrict(&data, LandmarkSpec { time: s, state: h })?;
    }
    let panel = build_panel(&data, a.weighting.into());
    let point = estimate_target(&panel, a.target)?;
    let set = target_influence(&panel, a.target)?;
    let n = set.n() as f64;
    let se: Vec<Option<f64>> = (0..point.grid.len())
        .map(|g| point.valid[g].then(|| (set.covariance_index(g, g) / n).sqrt()))
        .collect();
    let out = CurveOutput::from_curve(&point, panel.n_clusters()).with_intervals(
        &se,
        a.transform.into(),
        a.alpha,
    );
    Ok((panel, point, out))
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Error> {
    match cli.command {
        Command::Estimate(a) => {
            let (_, _, curve) = point_curve(&a)?;
            emit(a.output.as_deref(), &render(&curve, a.format)?, out)
        }
        Command::Band(b) => {
            let a = &b.estimate;
            let (panel, point, curve) = point_curve(a)?;
            let spec = BandSpec {
                transform: a.transform.into(),
                alpha: a.alpha,
                lower_pct: b.domain.0,
                upper_pct: b.domain.1,
                reps: b.reps,
                method: b.method.into(),
            };
            // Surface an empty domain before spending time on replicates.
            band_domain(&panel, &point, spec.lower_pct, spec.upper_pct)?;
            let band = simultaneous_band(&panel, &point, &spec, SeedSpec::new(b.seed))?;
            let curve = curve.with_band(&band, b.domain);
            emit(a.output.as_deref(), &render(&curve, a.format)?, out)
        }
        Command::Test(t) => {
            let data = read_transitions(&t.data.input, t.data.space()?)?;
            validate_two_sample(&data).map_err(Error::Validation)?;
            let spec = TestSpec {
                target: t.target,
                weighting: t.weighting.into(),
                weight: match t.weight {
                    WeightArg::Indicator => WeightKind::IndicatorRiskSets,
                    WeightArg::Ratio => WeightKind::RiskRatio,
                },
                method: t.method.into(),
                reps: t.reps,
                corrected: t.corrected,
            };
            let result = ks_two_sample(&data, &spec, SeedSpec::new(t.seed))?;
            emit(
                t.output.as_deref(),
                &(serde_json::to_string_pretty(&result)? + "\n"),
                out,
            )
        }
        Command::Simulate(s) => {
            let cfg = match &s.config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None if s.two_arm => SimConfig::two_arm(s.clusters, s.sizes.0, s.sizes.1, s.effect),
                None => SimConfig {
                    arms: ArmDesign::None,
                    ..SimConfig::one_sample(s.clusters, s.sizes.0, s.sizes.1)
                },
            };
            cfg.validate().map_err(Error::InvalidArgument)?;
            let data = simulate_trial(&cfg, SeedSpec::new(s.seed));
            match &s.output {
                Some(p) => save_transitions(&data, p),
                None => write_transitions(&data, out),
            }
        }
        Command::Study(s) => {
            let clusters = match (s.clusters.is_empty(), s.scenario.as_str()) {
                (false, _) => s.clusters,
                (true, "table4") => vec![20, 40, 80],
                (true, _) => vec![40],
            };
            let scenarios = preset(&s.scenario, &clusters, s.sizes, s.datasets, s.reps, s.seed)?;
            let report = run_study(&scenarios)?;
            emit(
                s.output.as_deref(),
                &(serde_json::to_string_pretty(&report)? + "\n"),
                out,
            )
        }
        Command::Plot(p) => {
            let curve = CurveOutput::load(&p.input)?;
            emit(p.output.as_deref(), &plot_svg(&curve), out)
        }
    }
}

/// Runs the command line `argv` (including the program name), writing primary
/// output to `out` and diagnostics to `err`. Returns the process exit code:
/// 0 on success, 1 for data errors, 2 for usage errors.
pub fn dispatch<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(text.as_bytes());
            } else {
                let _ = err.write_all(text.as_bytes());
            }
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::InvalidArgument(_) => 2,
                _ => 1,
            }
        }
    }
}
