//! Command-line front end. [`run`] is what the `tvlm` binary calls; tests
//! drive [`run_with`] directly.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::{EvalMode, RunConfig, Workspace};
use crate::encoder::{EncoderDescriptor, EncoderKind, RemoteEncoder};
use crate::error::{Error, Result};
use crate::metrics::{self, Report};
use crate::model::TimeVlm;
use crate::predictor;
use crate::tensor::Tensor;
use crate::val;

pub const BRIDGE_ENV: &str = "TVLM_BRIDGE_URL";

pub const CHECKPOINT_FILE: &str = "checkpoint.tvlm";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "tvlm", version, about = "Multimodal time-series forecaster")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_kind, value_name = "mock|remote")]
    pub encoder: Option<EncoderKind>,
    /// Bridge base URL; the TVLM_BRIDGE_URL environment variable wins.
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Output directory; defaults to `[output] dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit on the training split; writes checkpoint, history and config.
    Train,
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Forecast one window, or past the end of the data when no window is
    /// given.
    Forecast {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write the image and prompt of one window.
    Render {
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long, default_value = "test")]
        split: String,
        /// Use trained image-learner weights instead of the seeded init.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Probe a bridge's /health and /embed for protocol conformance.
    BridgeCheck,
}

fn parse_kind(s: &str) -> std::result::Result<EncoderKind, String> {
    match s {
        "mock" => Ok(EncoderKind::Mock),
        "remote" => Ok(EncoderKind::Remote),
        _ => Err(format!("unknown encoder {s:?}; expected mock or remote")),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics are single lines on `err`.
pub fn run_with<I, T>(args: I, bridge_env: Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(&cli, bridge_env.filter(|s| !s.is_empty()), out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    let env = std::env::var(BRIDGE_ENV).ok();
    run_with(std::env::args_os(), env, &mut std::io::stdout(), &mut std::io::stderr())
}

fn dispatch(cli: &Cli, bridge_env: Option<String>, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let endpoint = bridge_env.or_else(|| cli.endpoint.clone());
    if let Command::BridgeCheck = cli.command {
        return bridge_check(cli, endpoint, out);
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let cfg = RunConfig::load(path)?.with_overrides(cli.seed, cli.encoder, endpoint)?;
    let dir = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let ckpt_path = |given: &Option<PathBuf>| given.clone().unwrap_or_else(|| dir.join(CHECKPOINT_FILE));
    match &cli.command {
        Command::Train => train(&cfg, &dir, out, err),
        Command::Eval { checkpoint, split } => eval(&cfg, &ckpt_path(checkpoint), split, &dir, out),
        Command::Forecast { checkpoint, window, split } => forecast(&cfg, &ckpt_path(checkpoint), *window, split, &dir, out),
        Command::Render { window, split, checkpoint } => render(&cfg, *window, split, checkpoint.as_deref(), &dir, out),
        Command::BridgeCheck => unreachable!(),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_model(cfg: &RunConfig, ws: &Workspace, ckpt: &Path) -> Result<TimeVlm> {
    let mut model = cfg.build_model(ws.prepared.dataset.vars())?;
    Checkpoint::load(ckpt)?.restore(&mut model)?;
    Ok(model)
}

fn train(cfg: &RunConfig, dir: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let echoed = cfg.to_toml();
    let _ = writeln!(err, "effective config:\n{echoed}");
    let ws = cfg.workspace()?;
    let mut model = cfg.build_model(ws.prepared.dataset.vars())?;
    let frozen = model.encoder().checksum();
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_FILE), &echoed)?;
    let history = predictor::fit(&mut model, &ws.train, &ws.prepared.val, &cfg.train, cfg.seed)?;
    if model.encoder().checksum() != frozen {
        return Err(Error::Contract("encoder state changed during training".into()));
    }
    Checkpoint::from_model(&model).save(&dir.join(CHECKPOINT_FILE))?;
    write_file(&dir.join(HISTORY_FILE), history.to_csv())?;
    let _ = writeln!(
        out,
        "epochs={} steps={} best_epoch={} train_windows={}",
        history.records.len(),
        history.steps,
        history.best_epoch,
        ws.train.len()
    );
    let _ = writeln!(out, "initial_train_mse={:e}", history.initial_train_mse);
    let _ = writeln!(out, "final_train_mse={:e}", history.final_train_mse);
    if ws.prepared.val.is_empty() {
        let _ = writeln!(out, "val: no windows");
    } else {
        let (p, t) = predictor::evaluate(&model, &ws.prepared.val, cfg.train.eval_batch_size)?;
        let _ = writeln!(out, "val_mse={:e} val_mae={:e}", metrics::mse(&p, &t)?, metrics::mae(&p, &t)?);
    }
    let _ = writeln!(out, "checkpoint={}", dir.join(CHECKPOINT_FILE).display());
    Ok(0)
}

fn to_original(ws: &Workspace, t: &Tensor) -> Tensor {
    match &ws.prepared.scaler {
        Some(s) => s.inverse(t),
        None => t.clone(),
    }
}

/// Long mode: `mse`, `mae`. Short mode: `smape`, `mase`, `owa`.
pub fn score(cfg: &RunConfig, ws: &Workspace, model: &TimeVlm, split: &str) -> Result<Report> {
    let set = ws.windows(split)?;
    if set.is_empty() {
        return Err(Error::EmptyData(format!("{split} split has no windows")));
    }
    let bs = cfg.train.eval_batch_size;
    let (pred, truth) = predictor::evaluate(model, set, bs)?;
    match cfg.data.eval_mode {
        EvalMode::Long => Ok(Report::new(vec![
            ("mse".into(), metrics::mse(&pred, &truth)?),
            ("mae".into(), metrics::mae(&pred, &truth)?),
        ])),
        EvalMode::Short => {
            let (l, h, d) = (set.seq_len(), set.pred_len(), set.vars());
            let mut series = Vec::with_capacity(set.len() * d);
            for i in 0..set.len() {
                let (x, _) = set.sample(i)?;
                let x = to_original(ws, &x);
                let y = to_original(ws, &Tensor::new(&[h, d], truth.data()[i * h * d..(i + 1) * h * d].to_vec())?);
                let p = to_original(ws, &Tensor::new(&[h, d], pred.data()[i * h * d..(i + 1) * h * d].to_vec())?);
                for v in 0..d {
                    let col = |t: &Tensor, n: usize| (0..n).map(|r| t.data()[r * d + v]).collect::<Vec<_>>();
                    series.push((col(&x, l), col(&y, h), col(&p, h)));
                }
            }
            metrics::short_horizon(&series, cfg.data.periodicity)
        }
    }
}

fn eval(cfg: &RunConfig, ckpt: &Path, split: &str, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let ws = cfg.workspace()?;
    ws.windows(split)?;
    let model = load_model(cfg, &ws, ckpt)?;
    let report = score(cfg, &ws, &model, split)?;
    create_dir(dir)?;
    write_file(&dir.join(format!("metrics_{split}.csv")), report.to_csv())?;
    let _ = write!(out, "{}", report.to_table());
    Ok(0)
}

fn forecast(cfg: &RunConfig, ckpt: &Path, window: Option<usize>, split: &str, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let ws = cfg.workspace()?;
    let model = load_model(cfg, &ws, ckpt)?;
    let (l, d) = (cfg.model.seq_len, ws.prepared.dataset.vars());
    let (x, name) = match window {
        Some(i) => (ws.windows(split)?.sample(i)?.0, format!("forecast_{split}_{i}.csv")),
        None => {
            let all = ws.prepared.train.data();
            let rows = all.shape()[0];
            if rows < l {
                return Err(Error::EmptyData(format!("{rows} rows cannot fill a lookback of {l}")));
            }
            (Tensor::new(&[l, d], all.data()[(rows - l) * d..].to_vec())?, "forecast.csv".to_string())
        }
    };
    let pred = model.predict(&x.reshape(&[1, l, d])?)?;
    let pred = to_original(&ws, &pred.reshape(&[cfg.model.pred_len, d])?);
    let mut csv = format!("step,{}\n", ws.prepared.dataset.columns.join(","));
    for (h, row) in pred.data().chunks(d).enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        csv.push_str(&format!("{},{}\n", h + 1, cells.join(",")));
    }
    create_dir(dir)?;
    let path = dir.join(name);
    write_file(&path, csv)?;
    let _ = writeln!(out, "{}", path.display());
    Ok(0)
}

fn render(cfg: &RunConfig, window: usize, split: &str, ckpt: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Result<i32> {
    let ws = cfg.workspace()?;
    let model = match ckpt {
        Some(p) => load_model(cfg, &ws, p)?,
        None => cfg.build_model(ws.prepared.dataset.vars())?,
    };
    let (x, _) = ws.windows(split)?.sample(window)?;
    let r = model.render(&x)?;
    let ext = if r.image.shape()[0] == 1 { "pgm" } else { "ppm" };
    let stem = format!("render_{split}_{window}");
    create_dir(dir)?;
    let image = dir.join(format!("{stem}.{ext}"));
    val::render_image(&r.image, &image)?;
    let prompt = dir.join(format!("{stem}.txt"));
    write_file(&prompt, format!("{}\n", r.prompt))?;
    write_file(&dir.join(format!("{stem}.meta")), val::sidecar(r.raw_min, r.raw_max, &model.image_config()))?;
    let _ = writeln!(out, "{}\n{}", image.display(), prompt.display());
    Ok(0)
}

fn bridge_check(cli: &Cli, endpoint: Option<String>, out: &mut dyn Write) -> Result<i32> {
    let (mut desc, channels, size) = match &cli.config {
        Some(p) => {
            let c = RunConfig::load(p)?;
            (c.encoder, c.model.out_channels, c.model.image_size)
        }
        None => {
            let m = crate::model::ModelConfig::default();
            (EncoderDescriptor::default(), m.out_channels, m.image_size)
        }
    };
    desc.kind = EncoderKind::Remote;
    if endpoint.is_some() {
        desc.endpoint = endpoint;
    }
    let report = RemoteEncoder::new(desc)?.check(channels, size);
    let _ = writeln!(out, "{report}");
    Ok(if report.ok() {
        0
    } else if report.transport {
        3
    } else {
        1
    })
}
