use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use dbanomaly::data::{load_metrics, write_metrics, MetricFrame, MetricKind, DEFAULT_SPLIT, DEFAULT_STRIDE, DEFAULT_WINDOW};
use dbanomaly::detector::{
    format_table, load_model, parse_architecture, prepare_windows, run_ablation, save_model, score_frame, train,
    write_ablation_csv, ArchitectureSpec, Autoencoder, ScoreSeries, TrainConfig, DEFAULT_ARCHITECTURE,
    REFERENCE_ARCHITECTURES,
};
use dbanomaly::report::{build_report, ReportInputs, DEFAULT_TOP_K};
use dbanomaly::similarity::{match_events, EventMatch, LocalCost, MatchConfig, NormalizeMode};
use dbanomaly::spc::{detect, ChartBaseline, DetectConfig, Detection, DEFAULT_SIGMA};
use dbanomaly::synth::{generate, ScenarioSpec};
use dbanomaly::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{pick, FileConfig};
use crate::{
    AblateArgs, Cli, Command, DetectArgs, DetectFlags, GenArgs, MatchArgs, MatchFlags, ReportArgs, ScoreArgs,
    TrainArgs, TrainingFlags,
};

pub const STATS_FILE: &str = "stats.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const LABELS_FILE: &str = "labels.json";
pub const SCENARIO_FILE: &str = "scenario.json";
const DEFAULT_MINUTES: usize = 10_080;

struct Context {
    file: FileConfig,
    seed: Option<u64>,
}

pub fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let ctx = Context { file, seed: cli.seed };
    match cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Score(a) => score_cmd(&ctx, a),
        Command::Detect(a) => detect_cmd(&ctx, a),
        Command::Match(a) => match_cmd(&ctx, a),
        Command::Report(a) => report_cmd(&ctx, a),
        Command::Ablate(a) => ablate_cmd(&ctx, a),
    }
}

impl Context {
    fn seed(&self) -> u64 {
        pick(self.seed, self.file.seed, 0)
    }

    fn train_config(&self, flags: &TrainingFlags) -> Result<TrainConfig> {
        let f = &self.file;
        let defaults = TrainConfig::default();
        let split = match (&flags.split, f.split) {
            (Some(v), _) => v
                .as_slice()
                .try_into()
                .map_err(|_| Error::Usage("--split takes three fractions".into()))?,
            (None, Some(s)) => s,
            (None, None) => DEFAULT_SPLIT,
        };
        let config = TrainConfig {
            learning_rate: pick(flags.learning_rate, f.learning_rate, defaults.learning_rate),
            l2_lambda: pick(flags.l2, f.l2, defaults.l2_lambda),
            batch_size: pick(flags.batch_size, f.batch_size, defaults.batch_size),
            max_epochs: pick(flags.epochs, f.epochs, defaults.max_epochs),
            patience: pick(flags.patience, f.patience, defaults.patience),
            seed: self.seed(),
            window_len: pick(flags.window, f.window, DEFAULT_WINDOW),
            stride: pick(flags.stride, f.stride, DEFAULT_STRIDE),
            split,
        };
        config.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(config)
    }

    fn architecture(&self, flags: &TrainingFlags) -> Result<ArchitectureSpec> {
        let text = pick(flags.arch.clone(), self.file.arch.clone(), DEFAULT_ARCHITECTURE.to_string());
        parse_architecture(&text)
    }

    fn stats(&self, path: &Path, flags: &TrainingFlags) -> Result<MetricFrame> {
        let frame = load_metrics(path, MetricKind::Stat)?;
        match pick(flags.features.clone(), self.file.features.clone(), Vec::new()) {
            names if names.is_empty() => Ok(frame),
            names => frame.select(&names),
        }
    }

    fn detect_config(&self, flags: &DetectFlags, window_len: usize) -> Result<(DetectConfig, serde_json::Value)> {
        let k = pick(flags.k, self.file.k, DEFAULT_SIGMA);
        if !(k > 0.0) {
            return Err(Error::Usage(format!("--k must be positive, got {k}")));
        }
        let gap_tolerance = pick(flags.gap_tolerance, self.file.gap_tolerance, 0);
        let baseline = match &flags.baseline_scores {
            Some(path) => ChartBaseline::Reference(read_scores(path, window_len)?),
            None => ChartBaseline::SelfFit,
        };
        let summary = serde_json::json!({
            "k": k,
            "gap_tolerance": gap_tolerance,
            "baseline": if flags.baseline_scores.is_some() { "reference" } else { "self" },
        });
        Ok((
            DetectConfig {
                k,
                gap_tolerance,
                baseline,
            },
            summary,
        ))
    }

    fn match_config(&self, flags: &MatchFlags) -> Result<(MatchConfig, usize)> {
        let normalize = match flags.normalize.as_deref() {
            Some("zscore") => NormalizeMode::ZScore,
            Some("raw") => NormalizeMode::Raw,
            Some(other) => return Err(Error::Usage(format!("--normalize must be zscore or raw, got {other:?}"))),
            None => self.file.normalize.unwrap_or_default(),
        };
        let cost = match flags.cost.as_deref() {
            Some("absolute") => LocalCost::Absolute,
            Some("squared") => LocalCost::Squared,
            Some(other) => return Err(Error::Usage(format!("--cost must be absolute or squared, got {other:?}"))),
            None => self.file.cost.unwrap_or_default(),
        };
        let config = MatchConfig {
            normalize,
            cost,
            margin_minutes: pick(flags.margin, self.file.margin, 0),
        };
        Ok((config, pick(flags.top_k, self.file.top_k, DEFAULT_TOP_K)))
    }
}

fn read_scores(path: &Path, window_len: usize) -> Result<ScoreSeries> {
    ScoreSeries::read_csv(File::open(path)?, path, window_len)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn gen(ctx: &Context, args: GenArgs) -> Result<()> {
    let spec = match &args.scenario {
        Some(path) => {
            let mut spec: ScenarioSpec = read_json(path)?;
            if let Some(seed) = ctx.seed.or(ctx.file.seed) {
                spec.seed = seed;
            }
            spec
        }
        None => {
            let minutes = pick(args.minutes, ctx.file.minutes, DEFAULT_MINUTES);
            if args.no_injections || ctx.file.no_injections == Some(true) {
                ScenarioSpec {
                    seed: ctx.seed(),
                    duration_minutes: minutes,
                    ..ScenarioSpec::default()
                }
            } else {
                ScenarioSpec::with_default_injections(ctx.seed(), minutes)
            }
        }
    };
    let scenario = generate(&spec)?;
    fs::create_dir_all(&args.out_dir)?;
    write_metrics(&scenario.stats, args.out_dir.join(STATS_FILE))?;
    write_metrics(&scenario.events, args.out_dir.join(EVENTS_FILE))?;
    scenario.truth.save(args.out_dir.join(LABELS_FILE))?;
    write_json(&args.out_dir.join(SCENARIO_FILE), &spec)?;
    log::info!(
        "wrote {} minutes, {} injections to {}",
        spec.duration_minutes,
        scenario.truth.intervals.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn train_cmd(ctx: &Context, args: TrainArgs) -> Result<()> {
    let config = ctx.train_config(&args.training)?;
    let arch = ctx.architecture(&args.training)?;
    let frame = ctx.stats(&args.data, &args.training)?;
    let (norm, windows) = prepare_windows(&frame, &config)?;
    let outcome = train(&windows, &norm, &arch, &config)?;
    save_model(&outcome.model, &args.model)?;
    if let Some(path) = &args.history {
        outcome.history.write_csv(BufWriter::new(File::create(path)?))?;
    }
    let best = outcome.history.best().expect("training ran");
    println!(
        "{arch}: best epoch {} of {}, validation MSE {:.6}, test MSE {:.6}",
        best.epoch,
        outcome.history.epochs.len(),
        best.val_loss,
        outcome.test_mse
    );
    Ok(())
}

fn score_cmd(ctx: &Context, args: ScoreArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let frame = load_metrics(&args.data, MetricKind::Stat)?;
    let stride = pick(args.stride, ctx.file.stride, DEFAULT_STRIDE);
    let series = score_frame(&model, &frame, stride)?;
    series.write_csv(BufWriter::new(File::create(&args.out)?))?;
    log::info!("scored {} windows", series.len());
    Ok(())
}

fn detect_cmd(ctx: &Context, args: DetectArgs) -> Result<()> {
    let window = pick(args.window, ctx.file.window, DEFAULT_WINDOW);
    let series = read_scores(&args.scores, window)?;
    let (config, _) = ctx.detect_config(&args.detect, window)?;
    let detection = detect(&series, &config)?;
    write_json(&args.out, &detection)?;
    for p in &detection.ranked {
        log::info!("#{} {} peak {:.4}", p.rank, p.feature, p.peak_score);
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PeriodMatches {
    rank: usize,
    feature: String,
    start_timestamp: i64,
    end_timestamp: i64,
    matches: Vec<EventMatch>,
}

fn match_cmd(ctx: &Context, args: MatchArgs) -> Result<()> {
    let detection: Detection = read_json(&args.detection)?;
    let stats = load_metrics(&args.data, MetricKind::Stat)?;
    let events = load_metrics(&args.events, MetricKind::Event)?;
    let (config, top_k) = ctx.match_config(&args.matching)?;
    let mut out = Vec::new();
    for p in detection.ranked.iter().take(top_k) {
        out.push(PeriodMatches {
            rank: p.rank,
            feature: p.feature.clone(),
            start_timestamp: p.start_timestamp,
            end_timestamp: p.end_timestamp,
            matches: match_events(&stats, &p.feature, &events, p, &config)?,
        });
    }
    write_json(&args.out, &out)?;
    if let Some(path) = &args.csv {
        let mut csv = csv::Writer::from_path(path).map_err(Error::Csv)?;
        csv.write_record(["period_rank", "feature", "event", "dtw_distance", "pearson", "rank_by_dtw", "rank_by_pearson"])?;
        for pm in &out {
            for m in &pm.matches {
                csv.write_record([
                    pm.rank.to_string(),
                    pm.feature.clone(),
                    m.event_name.clone(),
                    m.dtw_distance.to_string(),
                    m.pearson.map_or_else(String::new, |r| r.to_string()),
                    m.rank_by_dtw.to_string(),
                    m.rank_by_pearson.to_string(),
                ])?;
            }
        }
        csv.flush()?;
    }
    Ok(())
}

fn report_cmd(ctx: &Context, args: ReportArgs) -> Result<()> {
    let model: Autoencoder = load_model(&args.model)?;
    let stats = load_metrics(&args.data, MetricKind::Stat)?;
    let events = args
        .events
        .as_ref()
        .map(|p| load_metrics(p, MetricKind::Event))
        .transpose()?;
    let stride = pick(args.stride, ctx.file.stride, DEFAULT_STRIDE);
    let series = match &args.scores {
        Some(path) => {
            let series = read_scores(path, model.window_len)?;
            if series.feature_names != model.feature_names() {
                return Err(Error::FeatureMismatch {
                    expected: model.feature_names().to_vec(),
                    found: series.feature_names,
                });
            }
            series
        }
        None => score_frame(&model, &stats, stride)?,
    };
    let (detect_config, detect_summary) = ctx.detect_config(&args.detect, model.window_len)?;
    let detection = match &args.detection {
        Some(path) => read_json(path)?,
        None => detect(&series, &detect_config)?,
    };
    let (match_config, top_k) = ctx.match_config(&args.matching)?;
    let config = serde_json::json!({
        "window": model.window_len,
        "stride": stride,
        "detect": detect_summary,
        "match": match_config,
        "top_k": top_k,
    });
    let bundle = build_report(&ReportInputs {
        model_id: model.checksum()?,
        architecture: model.architecture.to_string(),
        stats: &stats,
        events: events.as_ref(),
        series: &series,
        detection: &detection,
        top_k,
        match_config,
        config,
    })?;
    bundle.write(&args.out_dir)?;
    print!("{}", bundle.report.to_text());
    Ok(())
}

fn ablate_cmd(ctx: &Context, args: AblateArgs) -> Result<()> {
    let config = ctx.train_config(&args.training)?;
    let names: Vec<String> = if !args.archs.is_empty() {
        args.archs.clone()
    } else if let Some(list) = &ctx.file.archs {
        list.clone()
    } else {
        REFERENCE_ARCHITECTURES.iter().map(|s| s.to_string()).collect()
    };
    let archs = names
        .iter()
        .map(|a| parse_architecture(a))
        .collect::<Result<Vec<_>>>()?;
    let frame = ctx.stats(&args.data, &args.training)?;
    let (norm, windows) = prepare_windows(&frame, &config)?;
    let rows = run_ablation(&windows, &norm, &archs, &config)?;
    print!("{}", format_table(&rows));
    if let Some(path) = &args.out {
        write_ablation_csv(&rows, BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}
