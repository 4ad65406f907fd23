//! Run configuration: a TOML file with `[data]`, `[model]`, `[encoder]`,
//! `[train]` and `[output]` sections plus a top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Prepared, WindowSet};
use crate::encoder::{EncoderDescriptor, EncoderKind};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TimeVlm};
use crate::predictor::TrainConfig;
use crate::tal::{self, PromptContext};

/// Which metric family `eval` reports.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// MSE and MAE in model space.
    #[default]
    Long,
    /// SMAPE, MASE and OWA in original units against the seasonal-naive
    /// reference, using each window's lookback as in-sample context.
    Short,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub name: String,
    pub periodicity: usize,
    /// Train, validation and test rows; a 7:1:2 proportional split when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<[usize; 3]>,
    #[serde(default = "yes")]
    pub scale: bool,
    /// Keep only this leading fraction of the training windows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub few_shot: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// `name: text` file consulted when `description` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptions: Option<PathBuf>,
    #[serde(default)]
    pub eval_mode: EvalMode,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub encoder: EncoderDescriptor,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A prepared dataset with the windows each command works on.
#[derive(Debug)]
pub struct Workspace {
    pub prepared: Prepared,
    /// Training windows after few-shot subsetting.
    pub train: WindowSet,
}

impl Workspace {
    pub fn windows(&self, split: &str) -> Result<&WindowSet> {
        match split {
            "train" => Ok(&self.train),
            other => self.prepared.window_set(other),
        }
    }
}

impl RunConfig {
    /// Parses without touching the file system. Relative paths stay as
    /// written.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.path = data::resolve(base, &cfg.data.path);
        if let Some(d) = &cfg.data.descriptions {
            cfg.data.descriptions = Some(data::resolve(base, d));
        }
        cfg.output.dir = data::resolve(base, &cfg.output.dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.name.trim().is_empty() {
            return Err(Error::Config("data.name must not be empty".into()));
        }
        if d.periodicity == 0 {
            return Err(Error::Config("data.periodicity must be at least 1".into()));
        }
        if let Some(s) = d.split {
            if s.contains(&0) {
                return Err(Error::Config(format!("data.split {s:?} must be all positive")));
            }
        }
        if let Some(f) = d.few_shot {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("data.few_shot {f} must lie in (0, 1]")));
            }
        }
        if d.eval_mode == EvalMode::Short && self.model.seq_len <= d.periodicity {
            return Err(Error::Config(format!(
                "short-horizon evaluation needs seq_len {} above the periodicity {}",
                self.model.seq_len, d.periodicity
            )));
        }
        self.model.validate(d.periodicity)?;
        self.encoder.validate()?;
        self.train.validate()
    }

    /// Applies command-line overrides, then revalidates.
    pub fn with_overrides(mut self, seed: Option<u64>, encoder: Option<EncoderKind>, endpoint: Option<String>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(k) = encoder {
            self.encoder.kind = k;
        }
        if endpoint.is_some() {
            self.encoder.endpoint = endpoint;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn prompt_context(&self) -> Result<PromptContext> {
        let description = match (&self.data.description, &self.data.descriptions) {
            (Some(d), _) => Some(d.clone()),
            (None, Some(path)) => tal::load_descriptions(path)?.get(&self.data.name).cloned(),
            (None, None) => None,
        };
        Ok(PromptContext {
            dataset_name: self.data.name.clone(),
            description,
            input_len: self.model.seq_len,
            horizon: self.model.pred_len,
            periodicity: self.data.periodicity,
        })
    }

    pub fn workspace(&self) -> Result<Workspace> {
        let ds = data::load_csv(&self.data.path)?;
        let sizes = self.data.split.map(|[a, b, c]| (a, b, c));
        let prepared = data::prepare(ds, sizes, self.model.seq_len, self.model.pred_len, self.data.scale)?;
        let train = match self.data.few_shot {
            Some(f) => prepared.train.few_shot(f)?,
            None => prepared.train.clone(),
        };
        Ok(Workspace { prepared, train })
    }

    pub fn build_model(&self, vars: usize) -> Result<TimeVlm> {
        TimeVlm::with_encoder(self.model.clone(), vars, self.prompt_context()?, &self.encoder, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [data]
        path = "series.csv"
        name = "demo"
        periodicity = 24
    "#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.model.seq_len, 512);
        assert_eq!(c.model.d_fusion, 256);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.encoder.fused_len, 156);
        assert!(c.data.scale);
        assert_eq!(c.data.eval_mode, EvalMode::Long);
    }

    #[test]
    fn round_trips() {
        let text = format!(
            "seed = 9\n{MINIMAL}\nsplit = [100, 20, 30]\nfew_shot = 0.05\ndescription = \"hourly load\"\n\
             [model]\nseq_len = 96\npred_len = 16\nchannels = [\"raw\", \"freq\"]\ngate = \"single\"\n\
             [encoder]\nkind = \"remote\"\nendpoint = \"http://localhost:1\"\n[train]\nlr = 0.00025\nmax_steps = 7\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        let echoed = c.to_toml();
        assert_eq!(RunConfig::parse(&echoed).unwrap(), c);
        assert_eq!(RunConfig::parse(&RunConfig::parse(MINIMAL).unwrap().to_toml()).unwrap(), RunConfig::parse(MINIMAL).unwrap());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let unknown = format!("{MINIMAL}\nbogus = 1\n");
        let e = RunConfig::parse(&unknown).unwrap_err().to_string();
        assert!(e.contains("bogus"), "{e}");
        assert!(RunConfig::parse(&format!("{MINIMAL}\n[model]\nd_modle = 3\n")).is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("24", "0")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\nfew_shot = 1.5\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\n[model]\nhidden_dim = 5\n")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\n[encoder]\nkind = \"remote\"\n")).is_err());
        assert!(RunConfig::parse("[data]\nname = \"x\"\nperiodicity = 1\n").is_err());
    }

    #[test]
    fn overrides() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let o = c
            .clone()
            .with_overrides(Some(5), Some(EncoderKind::Remote), Some("http://h:1".into()))
            .unwrap();
        assert_eq!(o.seed, 5);
        assert_eq!(o.encoder.endpoint.as_deref(), Some("http://h:1"));
        assert!(c.with_overrides(None, Some(EncoderKind::Remote), None).is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, MINIMAL).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.data.path, dir.path().join("series.csv"));
        assert_eq!(c.output.dir, dir.path().join("runs"));
        assert!(matches!(RunConfig::load(&dir.path().join("nope.toml")), Err(Error::MissingFile(_))));
    }
}
