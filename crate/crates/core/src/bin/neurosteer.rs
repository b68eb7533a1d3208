use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use neurosteer::config::RunConfig;
use neurosteer::convnet::{load_model, save_model};
use neurosteer::dsp::{
    bandpass, baseline_correct, car, evoked_average, evoked_csv, extract_viz_epochs, psd_csv, psd_svg, topo_csv,
    topo_export, topo_svg, welch_psd, BandpassSpec, WelchParams,
};
use neurosteer::epoching::{load_epochs, save_epochs, WindowSpec};
use neurosteer::metrics::report_csv;
use neurosteer::pipeline;
use neurosteer::rtstream::{classify_stream, connect, events_csv, serve_listener, Pacing};
use neurosteer::signal_model::{load_recording, load_triggers, save_recording, save_triggers};
use neurosteer::{Class, Recording};

#[derive(Parser)]
#[command(name = "neurosteer", version, about = "EEG steering-intention pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a recording and its trigger file.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        trig: PathBuf,
    },
    /// Extract, prune and normalize epochs into an epoch database.
    Epochs {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        trig: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, balance and train; writes the checkpoint and per-epoch history.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Confusion matrix and per-class report of a checkpoint on an epoch database.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        epochs: PathBuf,
        /// Score only the validation part of the configured split.
        #[arg(long)]
        val_only: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Whole offline pipeline in one go, all artifacts into a directory.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Stream a recording to one TCP client.
    Serve {
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        trig: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        /// Pace samples at the recording's sample rate instead of as fast as possible.
        #[arg(long)]
        realtime: bool,
    },
    /// Connect to a server and classify every window as it completes.
    Classify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        out: PathBuf,
        /// Seconds to keep retrying the connection.
        #[arg(long, default_value_t = 10)]
        wait: u64,
    },
    /// Welch spectrum of one channel as CSV and SVG.
    Psd {
        #[arg(long)]
        rec: PathBuf,
        #[arg(long, default_value = "C4")]
        channel: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40.0)]
        fmax: f64,
        /// Skip the band-pass and common average reference.
        #[arg(long)]
        raw: bool,
    },
    /// Baseline-corrected class averages at one channel.
    Evoked {
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        trig: PathBuf,
        #[arg(long, default_value = "AF7")]
        channel: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class scalp maps of the mean signal over a post-trigger window.
    Topo {
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        trig: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 3.0)]
        to: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

const PRE_MS: f64 = 200.0;
const POST_S: f64 = 3.0;

fn config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn preprocess(rec: &Recording) -> Result<Recording> {
    Ok(car(&bandpass(rec, &BandpassSpec::default())?)?)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Generate { config: c, rec, trig } => {
            let cfg = config(&c)?;
            let (scenario, recording) = pipeline::generate(&cfg)?;
            save_recording(&recording, &rec)?;
            save_triggers(&scenario.triggers, &trig)?;
            println!(
                "{} samples × {} channels ({:.1} s), {} triggers",
                recording.n_samples(),
                recording.n_channels(),
                recording.duration_s(),
                scenario.triggers.len()
            );
        }
        Cmd::Epochs { config: c, rec, trig, out } => {
            let cfg = config(&c)?;
            let recording = load_recording(&rec)?;
            let triggers = load_triggers(&trig)?;
            let prepared = pipeline::prepare_epochs(&recording, &triggers, &cfg)?;
            save_epochs(&prepared.epochs, &out)?;
            println!(
                "{} extracted, {} kept {:?} (amplitude bounds {:.3}..{:.3})",
                prepared.extracted,
                prepared.epochs.len(),
                prepared.epochs.class_counts(),
                prepared.rejection.low,
                prepared.rejection.high
            );
        }
        Cmd::Train { config: c, epochs, model, history } => {
            let cfg = config(&c)?;
            let set = load_epochs(&epochs)?;
            let split = pipeline::split_and_balance(&set, &cfg)?;
            println!(
                "train {:?} → balanced {:?}, val {:?}",
                split.train_unbalanced.class_counts(),
                split.train.class_counts(),
                split.val.class_counts()
            );
            let (m, hist) = pipeline::train_model(&split, &cfg)?;
            save_model(&m, &model)?;
            if let Some(h) = history {
                write(&h, hist.to_csv())?;
            }
            if let Some(best) = hist.best() {
                println!("best epoch {}: val_acc {:.3} val_loss {:.4}", hist.best_epoch + 1, best.val_acc, best.val_loss);
            }
        }
        Cmd::Evaluate { model, epochs, val_only, config: c, report } => {
            let m = load_model(&model)?;
            let mut set = load_epochs(&epochs)?;
            if val_only {
                set = pipeline::split_and_balance(&set, &config(&c)?)?.val;
            }
            let ev = pipeline::evaluate(&m, &set)?;
            print!("{}", ev.confusion);
            let csv = report_csv(&ev.metrics);
            print!("{csv}");
            if let Some(r) = report {
                write(&r, csv)?;
            }
        }
        Cmd::Run { config: c, out_dir } => {
            let cfg = config(&c)?;
            fs::create_dir_all(&out_dir)?;
            let out = pipeline::run(&cfg)?;
            save_recording(&out.recording, out_dir.join("recording.eegr"))?;
            save_triggers(&out.scenario.triggers, out_dir.join("triggers.csv"))?;
            save_epochs(&out.prepared.epochs, out_dir.join("epochs.epdb"))?;
            save_model(&out.model, out_dir.join("model.nsmd"))?;
            write(&out_dir.join("history.csv"), out.history.to_csv())?;
            write(&out_dir.join("report.csv"), report_csv(&out.evaluation.metrics))?;
            print!("{}", out.evaluation.confusion);
            print!("{}", report_csv(&out.evaluation.metrics));
        }
        Cmd::Serve { rec, trig, addr, realtime } => {
            let recording = load_recording(&rec)?;
            let triggers = load_triggers(&trig)?;
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            println!("waiting for a client on {}", listener.local_addr()?);
            let pacing = if realtime { Pacing::RealTime } else { Pacing::Max };
            let stats = serve_listener(&listener, &recording, &triggers, pacing)?;
            println!("sent {} samples and {} triggers", stats.samples, stats.triggers);
        }
        Cmd::Classify { model, addr, out, wait } => {
            let m = load_model(&model)?;
            let addr = addr.parse::<std::net::SocketAddr>().with_context(|| format!("bad address {addr}"))?;
            let stream = connect(addr, Duration::from_secs(wait))?;
            let report = classify_stream(stream, &m, &WindowSpec::default(), |e| {
                println!("trigger {} window {}: {} (latency {:.2} ms)", e.trigger_index, e.window_index, e.label.name(), e.latency_ms);
            })?;
            write(&out, events_csv(&report.events))?;
            let s = &report.summary;
            println!(
                "{} events, {} truncated; latency mean {:.2} ms, p95 {:.2} ms, max {:.2} ms",
                s.events, s.truncated, s.mean_latency_ms, s.p95_latency_ms, s.max_latency_ms
            );
        }
        Cmd::Psd { rec, channel, out, fmax, raw } => {
            let mut recording = load_recording(&rec)?;
            if !raw {
                recording = preprocess(&recording)?;
            }
            let Some(x) = recording.channel_by_name(&channel) else { bail!("no channel named {channel}") };
            let psd = welch_psd(x, recording.sample_rate() as f64, WelchParams::default())?;
            write(&out.with_extension("csv"), psd_csv(&psd))?;
            write(&out.with_extension("svg"), psd_svg(&psd, fmax, &format!("{channel} power spectral density")))?;
            if let Some(p) = psd.peak_in(7.0, 14.0) {
                println!("alpha-band peak at {p:.2} Hz");
            }
        }
        Cmd::Evoked { rec, trig, channel, out } => {
            let recording = preprocess(&load_recording(&rec)?)?;
            let triggers = load_triggers(&trig)?;
            let viz = baseline_correct(&extract_viz_epochs(&recording, &triggers, PRE_MS, POST_S)?, PRE_MS)?;
            let ev = evoked_average(&viz, &channel, &Class::ALL)?;
            write(&out, evoked_csv(&ev))?;
            println!("{} epochs averaged at {channel}", viz.epochs.len());
        }
        Cmd::Topo { rec, trig, from, to, out_dir } => {
            let recording = preprocess(&load_recording(&rec)?)?;
            let triggers = load_triggers(&trig)?;
            let viz = baseline_correct(&extract_viz_epochs(&recording, &triggers, PRE_MS, POST_S)?, PRE_MS)?;
            fs::create_dir_all(&out_dir)?;
            for map in topo_export(&viz, (from, to))? {
                let name = map.class.name().to_ascii_lowercase();
                write(&out_dir.join(format!("topo_{name}.csv")), topo_csv(&map))?;
                write(&out_dir.join(format!("topo_{name}.svg")), topo_svg(&map))?;
                println!("{}: peak at {}", map.class.name(), map.peak_channel());
            }
        }
    }
    Ok(())
}
