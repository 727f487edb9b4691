use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use wcca::cca::default_grid;
use wcca::format::fmt_float;
use wcca::io::{
    align_subjects, ingest_sample_lists, read_quantile_table, read_sample_lists, write_quantile_table,
    write_sample_lists, Dataset, IngestReport, TableMeta,
};
use wcca::simulation::{
    generate_dataset, raw_sample_lists, run_replicates, stream_rng, AggregateRow, Case, SimConfig, EXPORT_STREAM,
};
use wcca::{CcaData, CvOutcome, GridConfig, Method, Tuning};

use crate::config::{
    noise_scale, parse_interval, resolve_common, resolve_tuning, Common, CommonArgs, FileConfig, FormatArg, MethodArg,
    NoiseArg, TuningArgs, TuningChoice,
};
use crate::manifest::{digest, write_json, OutDir, RunManifest};
use crate::Failure;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// 1: truncated-normal scores, 2: uniform scores.
    #[arg(long)]
    case: Option<u8>,
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Subjects per replicate.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Scale of the noise in the coupled score.
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Number of sine basis fields.
    #[arg(long)]
    basis_size: Option<usize>,
    /// Also write replicate 0 as x_quantiles.csv and y_quantiles.csv.
    #[arg(long)]
    export_dataset: bool,
    /// With --export-dataset, also write this many raw draws per frame as sample lists.
    #[arg(long, requires = "export_dataset")]
    export_draws: Option<usize>,
}

/// Two input datasets.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Support `a,b` for files without a schema line.
    #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
    support: Option<[f64; 2]>,
    /// Time domain `t0,t1` for files without a schema line.
    #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
    time_domain: Option<[f64; 2]>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Canonical pairs to report.
    #[arg(long)]
    pairs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sample-lists file (JSON lines).
    #[arg(long)]
    input: PathBuf,
    /// Quantile table to write; defaults to quantiles.csv in the output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
    support: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
    time_domain: Option<[f64; 2]>,
}

fn table_meta(support: Option<[f64; 2]>, time_domain: Option<[f64; 2]>, file: &FileConfig) -> TableMeta {
    let s = support.or(file.support).unwrap_or([0.0, 1.0]);
    let t = time_domain.or(file.time_domain).unwrap_or([0.0, 1.0]);
    TableMeta { support: (s[0], s[1]), time_domain: (t[0], t[1]) }
}

fn is_sample_lists(path: &Path, format: FormatArg) -> bool {
    match format {
        FormatArg::Table => false,
        FormatArg::Samples => true,
        FormatArg::Auto => matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "json")),
    }
}

fn load_dataset(path: &Path, format: FormatArg, meta: TableMeta, grid_m: usize) -> Result<(Dataset, Option<IngestReport>), Failure> {
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("cannot open {}: {e}", path.display())))?;
    if is_sample_lists(path, format) {
        let lists = read_sample_lists(BufReader::new(file))?;
        let (data, report) = ingest_sample_lists(&lists, grid_m, meta)?;
        Ok((data, Some(report)))
    } else {
        Ok((read_quantile_table(BufReader::new(file), meta)?, None))
    }
}

fn create_buffered(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Serialize)]
struct SimulateSettings {
    common: Common,
    tuning: TuningChoice,
    simulation: SimConfig,
    export_dataset: bool,
    export_draws: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SimulationSummary<'a> {
    rho_truth: f64,
    rho_closed_form: f64,
    cells: &'a [AggregateRow],
}

pub fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let common = resolve_common(&args.common, &file)?;
    let tuning = resolve_tuning(&args.tuning, &file, MethodArg::Both)?;

    let case = Case::from_number(args.case.or(file.case).unwrap_or(1)).map_err(|e| Failure::Usage(e.to_string()))?;
    let sigma = args.sigma.or(file.sigma).unwrap_or(0.1);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Failure::Usage(format!("--sigma must be finite and nonnegative, got {sigma}")));
    }
    let n = args.n.or(file.n).unwrap_or(200);
    if n < 2 {
        return Err(Failure::Usage("--n must be at least 2".into()));
    }
    let replicates = args.replicates.or(file.replicates).unwrap_or(50);
    if replicates == 0 {
        return Err(Failure::Usage("--replicates must be at least 1".into()));
    }
    let basis_size = args.basis_size.or(file.basis_size).unwrap_or(20);
    if basis_size < 2 {
        return Err(Failure::Usage("--basis-size must be at least 2".into()));
    }
    let specs = tuning.specs()?;
    let grid = GridConfig::new(common.grid_m, common.grid_t, (0.0, 1.0))?;
    let sim = SimConfig {
        n,
        sigma,
        case,
        basis_size,
        grid,
        seed: common.seed,
        replicates,
        noise: noise_scale(args.noise.or(file.noise).unwrap_or(NoiseArg::Literal)),
    };

    let report = run_replicates(&sim, &specs)?;
    let mut out = OutDir::create(&common.out_dir)?;
    report.write_csv(create_buffered(&out.file("replicates.csv"))?)?;
    let (rho_truth, rho_closed_form) =
        report.aggregates.first().map_or((f64::NAN, f64::NAN), |a| (a.rho_truth, a.rho_closed_form));
    write_json(&out.file("summary.json"), &SimulationSummary { rho_truth, rho_closed_form, cells: &report.aggregates })?;

    if args.export_dataset {
        let (x, y, _) = generate_dataset(&sim, 0)?;
        let x = Dataset::numbered(x);
        let y = Dataset::numbered(y);
        write_quantile_table(create_buffered(&out.file("x_quantiles.csv"))?, &x)?;
        write_quantile_table(create_buffered(&out.file("y_quantiles.csv"))?, &y)?;
        if let Some(draws) = args.export_draws {
            let mut rng = stream_rng(sim.seed, 0, EXPORT_STREAM);
            let lx = raw_sample_lists(&x, draws, &mut rng);
            let ly = raw_sample_lists(&y, draws, &mut rng);
            write_sample_lists(create_buffered(&out.file("x_samples.jsonl"))?, &lx)?;
            write_sample_lists(create_buffered(&out.file("y_samples.jsonl"))?, &ly)?;
        }
    }

    let mut manifest = RunManifest::new(
        "simulate",
        common.seed,
        SimulateSettings {
            common: common.clone(),
            tuning,
            simulation: sim,
            export_dataset: args.export_dataset,
            export_draws: args.export_draws,
        },
    );
    manifest.outputs = out.written.clone();
    manifest.outputs.push("manifest.json".into());
    manifest.write(&out.root)?;

    for a in &report.aggregates {
        println!(
            "{} case {} sigma {} n {}: mean |rho_hat - rho| = {}, IMSE(U) = {}, IMSE(V) = {}",
            a.method,
            a.case,
            a.sigma,
            a.n,
            fmt_float(a.mean_abs_rho_err),
            fmt_float(a.imse_u),
            fmt_float(a.imse_v)
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct DataSettings {
    x: PathBuf,
    y: PathBuf,
    format: FormatArg,
    support: [f64; 2],
    time_domain: [f64; 2],
}

#[derive(Debug, Serialize)]
struct EstimateSettings {
    common: Common,
    tuning: TuningChoice,
    data: DataSettings,
    pairs: usize,
}

#[derive(Debug, Serialize)]
struct ScoreRow {
    tuning: Tuning,
    label: String,
    score: f64,
}

#[derive(Debug, Serialize)]
struct CvReport {
    chosen: Tuning,
    folds: usize,
    seed: u64,
    scores: Vec<ScoreRow>,
}

impl CvReport {
    fn new(outcome: &CvOutcome, folds: usize, seed: u64) -> Self {
        Self {
            chosen: outcome.chosen,
            folds,
            seed,
            scores: outcome
                .scores
                .iter()
                .map(|(t, s)| ScoreRow { tuning: *t, label: t.label(), score: *s })
                .collect(),
        }
    }

    fn write_csv(&self, path: &Path) -> Result<(), Failure> {
        let mut w = create_buffered(path)?;
        writeln!(w, "tuning,score")?;
        for r in &self.scores {
            writeln!(w, "{},{}", r.label, fmt_float(r.score))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    n: usize,
    method: Method,
    tuning: Tuning,
    rho: f64,
    rho_clipped: bool,
    correlations: Vec<f64>,
    grid: GridConfig,
    cv: Option<CvReport>,
}

struct Loaded {
    data: CcaData,
    settings: DataSettings,
    inputs: Vec<PathBuf>,
    ingests: Vec<(&'static str, IngestReport)>,
}

fn load_pair(args: &DataArgs, file: &FileConfig, common: &Common) -> Result<Loaded, Failure> {
    let meta = table_meta(args.support, args.time_domain, file);
    let format = args.format.or(file.format).unwrap_or(FormatArg::Auto);
    let (dx, rx) = load_dataset(&args.x, format, meta, common.grid_m)?;
    let (dy, ry) = load_dataset(&args.y, format, meta, common.grid_m)?;
    let (sx, sy, _) = align_subjects(&dx, &dy)?;
    let mut ingests = Vec::new();
    if let Some(r) = rx {
        ingests.push(("x", r));
    }
    if let Some(r) = ry {
        ingests.push(("y", r));
    }
    Ok(Loaded {
        data: CcaData::new(&sx, &sy)?,
        settings: DataSettings {
            x: args.x.clone(),
            y: args.y.clone(),
            format,
            support: [meta.support.0, meta.support.1],
            time_domain: [meta.time_domain.0, meta.time_domain.1],
        },
        inputs: vec![args.x.clone(), args.y.clone()],
        ingests,
    })
}

fn write_ingest_reports(out: &mut OutDir, ingests: &[(&'static str, IngestReport)]) -> Result<(), Failure> {
    for (side, report) in ingests {
        write_json(&out.file(&format!("ingest_{side}.json")), report)?;
    }
    Ok(())
}

pub fn estimate(args: EstimateArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let common = resolve_common(&args.common, &file)?;
    let tuning = resolve_tuning(&args.tuning, &file, MethodArg::Fpca)?;
    let method = tuning.single()?;
    let pairs = args.pairs.or(file.pairs).unwrap_or(5);
    if pairs == 0 {
        return Err(Failure::Usage("--pairs must be at least 1".into()));
    }
    // Resolve fixed tuning before reading any data.
    let fixed = if tuning.cv { None } else { Some(tuning.specs()?) };
    let loaded = load_pair(&args.data, &file, &common)?;
    let data = &loaded.data;

    let (chosen, cv) = match fixed {
        None => {
            let outcome = data.cross_validate(&default_grid(method), tuning.folds, common.seed)?;
            (outcome.chosen, Some(CvReport::new(&outcome, tuning.folds, common.seed)))
        }
        Some(specs) => match specs[0] {
            wcca::simulation::TuningSpec::Fixed(t) => (t, None),
            wcca::simulation::TuningSpec::CrossValidated { .. } => unreachable!("fixed tuning was requested"),
        },
    };
    let est = data.fit(&chosen, pairs)?;

    let mut out = OutDir::create(&common.out_dir)?;
    let report = EstimateReport {
        n: data.n(),
        method,
        tuning: chosen,
        rho: est.rho,
        rho_clipped: est.rho_clipped,
        correlations: est.correlations(),
        grid: *data.mean_x().grid(),
        cv,
    };
    write_json(&out.file("estimate.json"), &report)?;
    est.u_field.write_csv(create_buffered(&out.file("u_field.csv"))?)?;
    est.v_field.write_csv(create_buffered(&out.file("v_field.csv"))?)?;
    {
        let mut w = create_buffered(&out.file("correlations.csv"))?;
        writeln!(w, "pair,rho")?;
        for (i, r) in report.correlations.iter().enumerate() {
            writeln!(w, "{},{}", i + 1, fmt_float(*r))?;
        }
        w.flush()?;
    }
    if let Some(cv) = &report.cv {
        cv.write_csv(&out.file("cv_scores.csv"))?;
    }
    write_ingest_reports(&mut out, &loaded.ingests)?;

    let mut manifest = RunManifest::new(
        "estimate",
        common.seed,
        EstimateSettings { common: common.clone(), tuning, data: loaded.settings, pairs },
    );
    manifest.inputs = loaded.inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?;
    manifest.outputs = out.written.clone();
    manifest.outputs.push("manifest.json".into());
    manifest.write(&out.root)?;

    println!("{} ({}): rho = {}", method, chosen.label(), fmt_float(est.rho));
    Ok(())
}

#[derive(Debug, Serialize)]
struct CvSettings {
    common: Common,
    method: Method,
    folds: usize,
    data: DataSettings,
}

pub fn cv(args: CvArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let common = resolve_common(&args.common, &file)?;
    let tuning = resolve_tuning(&args.tuning, &file, MethodArg::Fpca)?;
    let method = tuning.single()?;
    let loaded = load_pair(&args.data, &file, &common)?;
    let outcome = loaded.data.cross_validate(&default_grid(method), tuning.folds, common.seed)?;
    let report = CvReport::new(&outcome, tuning.folds, common.seed);

    let mut out = OutDir::create(&common.out_dir)?;
    report.write_csv(&out.file("cv_scores.csv"))?;
    write_json(&out.file("cv.json"), &report)?;
    write_ingest_reports(&mut out, &loaded.ingests)?;

    let mut manifest = RunManifest::new(
        "cv",
        common.seed,
        CvSettings { common: common.clone(), method, folds: tuning.folds, data: loaded.settings },
    );
    manifest.inputs = loaded.inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?;
    manifest.outputs = out.written.clone();
    manifest.outputs.push("manifest.json".into());
    manifest.write(&out.root)?;

    println!("{}: chosen {}", method, outcome.chosen.label());
    Ok(())
}

#[derive(Debug, Serialize)]
struct IngestSettings {
    common: Common,
    input: PathBuf,
    output: PathBuf,
    support: [f64; 2],
    time_domain: [f64; 2],
}

pub fn ingest(args: IngestArgs) -> Result<(), Failure> {
    let file = FileConfig::load(args.common.config.as_deref())?;
    let common = resolve_common(&args.common, &file)?;
    let meta = table_meta(args.support, args.time_domain, &file);
    let (data, report) = load_dataset(&args.input, FormatArg::Samples, meta, common.grid_m)?;
    let report = report.expect("sample lists were ingested");

    let mut out = OutDir::create(&common.out_dir)?;
    let output = match &args.output {
        Some(p) => {
            out.written.push(p.display().to_string());
            p.clone()
        }
        None => out.file("quantiles.csv"),
    };
    let mut w = create_buffered(&output)?;
    write_quantile_table(&mut w, &data)?;
    w.flush()?;
    write_json(&out.file("ingest_report.json"), &report)?;

    let mut manifest = RunManifest::new(
        "ingest",
        common.seed,
        IngestSettings {
            common: common.clone(),
            input: args.input.clone(),
            output: output.clone(),
            support: [meta.support.0, meta.support.1],
            time_domain: [meta.time_domain.0, meta.time_domain.1],
        },
    );
    manifest.inputs = vec![digest(&args.input)?];
    manifest.outputs = out.written.clone();
    manifest.outputs.push("manifest.json".into());
    manifest.write(&out.root)?;

    println!(
        "{} subjects x {} frames, {} samples, {} clipped to the support",
        report.subjects, report.frames_per_subject, report.total_samples, report.total_clipped
    );
    Ok(())
}
