use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pcgseg::dp_labeler::{heart_rate, CycleDefinition};
use pcgseg::eval::{evaluate_dataset, MatchRule};
use pcgseg::events::{choose_events, dataset_events, pairs_csv, segment_events, EventSelection, EventSpans};
use pcgseg::filtering::{fft, spectrum_dump};
use pcgseg::pipeline::{prefilter, segment, ConfigError, PipelineConfig, Segmentation, CONFIG_KEYS};
use pcgseg::siamese::{
    classify_event, embed_exemplars, make_pairs, read_exemplars, read_model, train, write_exemplars, write_model,
    EventClass,
};
use pcgseg::signal_io::{read_wav, write_annotations, write_wav, PcgSignal};
use pcgseg::synth::{synthetic_pcg, SynthConfig};

/// Version of the JSON documents written by `segment` and `classify`.
const OUTPUT_VERSION: u32 = 1;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FLAGGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "pcgseg", version, about = "Heart sound segmentation and S1 classification")]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum CycleDef {
    S1s1,
    S1s2,
}

impl From<CycleDef> for CycleDefinition {
    fn from(c: CycleDef) -> Self {
        match c {
            CycleDef::S1s1 => CycleDefinition::S1ToS1,
            CycleDef::S1s2 => CycleDefinition::S1ToS2,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Match {
    Nearest,
    Index,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Spans {
    Annotated,
    Segmented,
}

impl From<Spans> for EventSpans {
    fn from(s: Spans) -> Self {
        match s {
            Spans::Annotated => EventSpans::Annotated,
            Spans::Segmented => EventSpans::Segmented,
        }
    }
}

#[derive(clap::Args, Debug)]
struct Selection {
    /// Events kept per class, drawn with the config seed.
    #[arg(long, default_value_t = 100)]
    max_events: usize,
    /// Train on this many annotated recordings, drawn with the config seed.
    #[arg(long, value_name = "N")]
    recordings: Option<usize>,
    /// Cut events between annotations or between segmented onsets.
    #[arg(long, value_enum, default_value = "segmented")]
    spans: Spans,
}

impl Selection {
    fn resolve(&self) -> EventSelection {
        EventSelection {
            spans: self.spans.into(),
            recordings: self.recordings,
            max_per_class: self.max_events,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bandpass and dominant-frequency filter a recording.
    Filter {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write `freq_hz,magnitude` of the bandpassed spectrum.
        #[arg(long, value_name = "FILE")]
        spectrum: Option<PathBuf>,
    },
    /// Label S1/S2 onsets.
    Segment {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Write `frame,time_s,strength` of the onset envelope.
        #[arg(long, value_name = "FILE")]
        dump_envelope: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "s1s1")]
        cycle_def: CycleDef,
    },
    /// Print the heart rate in beats per minute.
    HeartRate {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "s1s1")]
        cycle_def: CycleDef,
    },
    /// Write the training pair list built from an annotated directory.
    Pairs {
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        select: Selection,
    },
    /// Train the Siamese model on an annotated directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// S1 events used as exemplars by `classify`.
        #[arg(long)]
        exemplars: PathBuf,
        #[command(flatten)]
        select: Selection,
        /// Exemplars kept from the training S1 events; all when absent.
        #[arg(long, value_name = "N")]
        exemplar_count: Option<usize>,
        /// Write the per-epoch `epoch,loss,accuracy` trace.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
    },
    /// Classify each inter-onset event of a recording as S1 or not.
    Classify {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        exemplars: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Total error of the pipeline on an annotated directory.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long = "match", value_enum, default_value = "nearest")]
        rule: Match,
        /// Report file; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Print every config key with its current value.
    Config,
    /// Write a synthetic recording and its annotations.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        /// Annotation file (`time_samples,label`).
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        #[arg(long, default_value_t = 80.0)]
        bpm: f64,
        #[arg(long, default_value_t = 4000)]
        rate: u32,
        /// Signal-to-noise ratio in dB; omit for a noise-free signal.
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for o in &cli.overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(ConfigError::Syntax { line: 0, text: o.clone() }.into());
        };
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn load(path: &Path) -> Result<PcgSignal> {
    read_wav(path).with_context(|| format!("cannot read {}", path.display()))
}

#[derive(Serialize)]
struct OnsetRecord {
    time_s: f64,
    label: String,
    inserted: bool,
    dp_value: f64,
    parent_index: Option<usize>,
}

#[derive(Serialize)]
struct SegmentDoc {
    version: u32,
    recording: String,
    sample_rate: u32,
    onsets: Vec<OnsetRecord>,
    heart_rate_bpm: Option<f64>,
}

fn segment_doc(recording: String, sample_rate: u32, seg: &Segmentation, cycle: CycleDefinition) -> SegmentDoc {
    let hr = heart_rate(&seg.labeled, cycle);
    if let Err(e) = &hr {
        log::warn!("{recording}: {e}");
    }
    SegmentDoc {
        version: OUTPUT_VERSION,
        recording,
        sample_rate,
        onsets: seg
            .labeled
            .onsets
            .iter()
            .map(|o| OnsetRecord {
                time_s: o.time,
                label: o.label.to_string(),
                inserted: o.inserted,
                dp_value: o.dp_value,
                parent_index: o.parent,
            })
            .collect(),
        heart_rate_bpm: hr.ok(),
    }
}

fn segment_csv(doc: &SegmentDoc) -> String {
    let mut out = String::from("time_s,label,inserted,dp_value,parent_index\n");
    for o in &doc.onsets {
        let parent = o.parent_index.map_or_else(String::new, |p| p.to_string());
        out.push_str(&format!("{},{},{},{},{}\n", o.time_s, o.label, o.inserted, o.dp_value, parent));
    }
    out
}

#[derive(Serialize)]
struct EventRecord {
    onset_index: usize,
    start_s: f64,
    end_s: f64,
    dp_label: String,
    class: &'static str,
    mean_similarity: f64,
}

#[derive(Serialize)]
struct ClassifyDoc {
    version: u32,
    recording: String,
    events: Vec<EventRecord>,
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Config => {
            for (key, doc) in CONFIG_KEYS {
                println!("# {doc}");
                println!("{key} = {}", cfg.get(key).expect("listed keys resolve"));
            }
        }
        Command::Synth {
            output,
            annotations,
            duration,
            bpm,
            rate,
            snr,
            seed,
        } => {
            let sc = SynthConfig {
                duration_s: *duration,
                bpm: *bpm,
                sample_rate: *rate,
                snr_db: *snr,
                seed: *seed,
                ..Default::default()
            };
            let (signal, ann) = synthetic_pcg(&sc, &stem(output));
            write_wav(output, &signal).with_context(|| format!("cannot write {}", output.display()))?;
            if let Some(path) = annotations {
                write_annotations(path, &ann)?;
            }
        }
        Command::Filter { input, output, spectrum } => {
            let signal = load(input)?;
            let (filtered, peaks) = prefilter(&signal, &cfg)?;
            log::info!("kept peaks at {:?} Hz", peaks.frequencies);
            write_wav(output, &filtered).with_context(|| format!("cannot write {}", output.display()))?;
            if let Some(path) = spectrum {
                let band = pcgseg::filtering::butterworth_bandpass(
                    &pcgseg::signal_io::resample(&signal, cfg.sample_rate)?,
                    &cfg.bandpass,
                )?;
                let spec = fft(band.samples(), band.sample_rate() as f64);
                emit(Some(path), &spectrum_dump(&spec))?;
            }
        }
        Command::Segment {
            input,
            output,
            format,
            dump_envelope,
            cycle_def,
        } => {
            let signal = load(input)?;
            let seg = segment(&signal, &cfg)?;
            if let Some(path) = dump_envelope {
                emit(Some(path), &seg.envelope.dump())?;
            }
            let doc = segment_doc(stem(input), signal.sample_rate(), &seg, (*cycle_def).into());
            let text = match format {
                Format::Json => json(&doc),
                Format::Csv => segment_csv(&doc),
            };
            emit(output.as_deref(), &text)?;
        }
        Command::HeartRate { input, cycle_def } => {
            let seg = segment(&load(input)?, &cfg)?;
            let bpm = heart_rate(&seg.labeled, (*cycle_def).into())?;
            println!("{bpm:.2}");
        }
        Command::Pairs {
            data,
            output,
            select,
        } => {
            let (events, _) = dataset_events(data, &cfg, &select.resolve())?;
            let pairs = make_pairs(&events.s1, &events.other)?;
            log::info!(
                "{} S1 and {} other events, {} pairs",
                events.s1.len(),
                events.other.len(),
                pairs.len()
            );
            emit(output.as_deref(), &pairs_csv(&pairs))?;
        }
        Command::Train {
            data,
            model,
            exemplars,
            select,
            exemplar_count,
            trace,
        } => {
            let (events, ids) = dataset_events(data, &cfg, &select.resolve())?;
            log::info!("training recordings: {}", ids.join(", "));
            let pairs = make_pairs(&events.s1, &events.other)?;
            log::info!("training on {} pairs", pairs.len());
            let (fitted, stats) = train(&pairs, cfg.siamese.hyper, &cfg.siamese.train_config(cfg.seed))?;
            write_model(model, &fitted)?;
            let chosen = match exemplar_count {
                Some(n) => choose_events(&events.s1, *n, cfg.seed),
                None => events.s1.clone(),
            };
            write_exemplars(exemplars, &chosen)?;
            let mut text = String::from("epoch,loss,accuracy\n");
            for s in &stats {
                text.push_str(&format!("{},{},{}\n", s.epoch, s.loss, s.accuracy));
            }
            if let Some(last) = stats.last() {
                log::info!("final loss {:.5}, pair accuracy {:.4}", last.loss, last.accuracy);
            }
            if let Some(path) = trace {
                emit(Some(path), &text)?;
            }
        }
        Command::Classify {
            input,
            model,
            exemplars,
            output,
            format,
        } => {
            let model = read_model(model)?;
            let ex = embed_exemplars(&model, &read_exemplars(exemplars)?)?;
            let signal = load(input)?;
            let seg = segment(&signal, &cfg)?;
            let rate = seg.filtered.sample_rate() as f64;
            let mut events = Vec::new();
            for (i, ev) in segment_events(&seg, &stem(input), model.hyper.event_len)? {
                let (class, mean) = classify_event(&model, &ev, &ex, cfg.siamese.threshold)?;
                events.push(EventRecord {
                    onset_index: i,
                    start_s: ev.source.start as f64 / rate,
                    end_s: ev.source.end as f64 / rate,
                    dp_label: seg.labeled.onsets[i].label.to_string(),
                    class: match class {
                        EventClass::S1 => "S1",
                        EventClass::NotS1 => "not-S1",
                    },
                    mean_similarity: mean,
                });
            }
            let doc = ClassifyDoc {
                version: OUTPUT_VERSION,
                recording: stem(input),
                events,
            };
            let text = match format {
                Format::Json => json(&doc),
                Format::Csv => {
                    let mut s = String::from("onset_index,start_s,end_s,dp_label,class,mean_similarity\n");
                    for e in &doc.events {
                        s.push_str(&format!(
                            "{},{},{},{},{},{}\n",
                            e.onset_index, e.start_s, e.end_s, e.dp_label, e.class, e.mean_similarity
                        ));
                    }
                    s
                }
            };
            emit(output.as_deref(), &text)?;
        }
        Command::Evaluate {
            data,
            jobs,
            rule,
            output,
            format,
        } => {
            if !data.is_dir() {
                bail!("{} is not a directory", data.display());
            }
            let rule = match rule {
                Match::Nearest => MatchRule::NearestSameLabel,
                Match::Index => MatchRule::IndexAligned,
            };
            let report = evaluate_dataset(data, &cfg, *jobs, rule)?;
            let text = match format {
                Format::Json => {
                    let mut s = report.to_json();
                    s.push('\n');
                    s
                }
                Format::Csv => report.to_csv(),
            };
            emit(output.as_deref(), &text)?;
            if report.any_flagged() {
                log::warn!("some recordings were flagged");
                return Ok(ExitCode::from(EXIT_FLAGGED));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ConfigError>() {
        Some(ConfigError::Io { .. }) | None => EXIT_FAILURE,
        Some(_) => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
