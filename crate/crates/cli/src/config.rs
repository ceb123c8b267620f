//! Settings resolution: built-in defaults, then the TOML file given with
//! `--config`, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use mcmma::decode::{DecodePolicy, EndOfInput, ForcedPosition};
use mcmma::toy::{ReferenceKind, SyntheticTask, TrainConfig, TrainMode};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mma,
    Mcmma,
    Gamma,
}

impl ModeArg {
    pub fn train_mode(self) -> TrainMode {
        match self {
            ModeArg::Mma => TrainMode::Mma,
            ModeArg::Mcmma => TrainMode::McmmaDelta,
            ModeArg::Gamma => TrainMode::McmmaGamma,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match TrainMode::from_name(s) {
            Some(TrainMode::Mma) => Ok(ModeArg::Mma),
            Some(TrainMode::McmmaDelta) => Ok(ModeArg::Mcmma),
            Some(TrainMode::McmmaGamma) => Ok(ModeArg::Gamma),
            None => bail!("unknown mode `{s}` (expected mma, mcmma or gamma)"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ForcedArg {
    Rightmost,
    Argmax,
    RightBound,
}

impl From<ForcedArg> for ForcedPosition {
    fn from(f: ForcedArg) -> Self {
        match f {
            ForcedArg::Rightmost => ForcedPosition::RightmostSelected,
            ForcedArg::Argmax => ForcedPosition::ArgmaxInWindow,
            ForcedArg::RightBound => ForcedPosition::RightBound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EndArg {
    Force,
    EmitEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    Unsync,
    Gold,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<String>,
    pub epsilon: Option<usize>,
    pub threshold: Option<f64>,
    pub seed: Option<u64>,
    pub input: Option<Vec<PathBuf>>,
    pub output: Option<PathBuf>,
    pub eps_list: Option<Vec<usize>>,
    pub forced_position: Option<String>,
    pub end_of_input: Option<String>,
    pub headdrop: Option<f64>,
    pub reference: Option<String>,
    pub eval_examples: Option<usize>,
    pub eval_seed: Option<u64>,
    pub task: Option<SyntheticTask>,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, col) = e
                .span()
                .map(|s| line_col(text, s.start))
                .unwrap_or((0, 0));
            anyhow::anyhow!("line {line}, column {col}: {}", e.message())
        })
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Flags shared by every command; `None` means "not given".
#[derive(Debug, Default, Clone, clap::Args)]
pub struct CommonArgs {
    /// Attention variant.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Waiting threshold in frames.
    #[arg(long)]
    pub epsilon: Option<usize>,
    /// Activation threshold for decoding (default 0.5).
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Input file(s); several may be given separated by commas.
    #[arg(long, value_delimiter = ',')]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Comma-separated decode waiting thresholds.
    #[arg(long, value_delimiter = ',')]
    pub eps_list: Option<Vec<usize>>,
    /// Where heads that did not activate are forced.
    #[arg(long, value_enum)]
    pub forced_position: Option<ForcedArg>,
    /// Behaviour when no head activates before the last frame.
    #[arg(long, value_enum)]
    pub end_of_input: Option<EndArg>,
    /// HeadDrop probability used in training.
    #[arg(long)]
    pub headdrop: Option<f64>,
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub mode: Option<ModeArg>,
    pub epsilon: Option<usize>,
    pub threshold: f64,
    pub seed: Option<u64>,
    pub input: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub eps_list: Option<Vec<usize>>,
    pub forced_position: ForcedPosition,
    pub end_of_input: EndOfInput,
    pub headdrop: Option<f64>,
    pub reference: ReferenceKind,
    pub eval_examples: usize,
    pub eval_seed: Option<u64>,
    pub task: SyntheticTask,
    pub train: TrainConfig,
}

fn forced_from_str(s: &str) -> Result<ForcedPosition> {
    ForcedArg::from_str(s, true)
        .map(Into::into)
        .map_err(|_| anyhow::anyhow!("unknown forced_position `{s}`"))
}

fn end_from_str(s: &str) -> Result<EndOfInput> {
    match EndArg::from_str(s, true) {
        Ok(EndArg::Force) => Ok(EndOfInput::ForceToT),
        Ok(EndArg::EmitEnd) => Ok(EndOfInput::EmitEnd),
        Err(_) => bail!("unknown end_of_input `{s}`"),
    }
}

pub fn reference_from_arg(r: ReferenceArg) -> ReferenceKind {
    match r {
        ReferenceArg::Unsync => ReferenceKind::Unsynchronized,
        ReferenceArg::Gold => ReferenceKind::Gold,
    }
}

impl Settings {
    pub fn resolve(file: FileConfig, flags: &CommonArgs) -> Result<Self> {
        let file_mode = file.mode.as_deref().map(ModeArg::parse).transpose()?;
        let file_forced = file.forced_position.as_deref().map(forced_from_str).transpose()?;
        let file_end = file.end_of_input.as_deref().map(end_from_str).transpose()?;
        let file_reference = match file.reference.as_deref() {
            None => None,
            Some(s) => Some(reference_from_arg(
                ReferenceArg::from_str(s, true).map_err(|_| anyhow::anyhow!("unknown reference `{s}`"))?,
            )),
        };
        let mode = flags.mode.or(file_mode);
        let epsilon = flags.epsilon.or(file.epsilon);
        let seed = flags.seed.or(file.seed);
        let headdrop = flags.headdrop.or(file.headdrop);

        let mut task = file.task.unwrap_or_default();
        let mut train = file.train.unwrap_or_default();
        if let Some(m) = mode {
            train.mode = m.train_mode();
        }
        if let Some(e) = epsilon {
            train.epsilon_train = e;
        }
        if let Some(s) = seed {
            train.seed = s;
            task.seed = s;
        }
        if let Some(h) = headdrop {
            train.headdrop_prob = h;
        }
        let settings = Settings {
            mode,
            epsilon,
            threshold: flags.threshold.or(file.threshold).unwrap_or(0.5),
            seed,
            input: if flags.input.is_empty() {
                file.input.unwrap_or_default()
            } else {
                flags.input.clone()
            },
            output: flags.output.clone().or(file.output),
            eps_list: flags.eps_list.clone().or(file.eps_list),
            forced_position: flags
                .forced_position
                .map(Into::into)
                .or(file_forced)
                .unwrap_or_default(),
            end_of_input: flags
                .end_of_input
                .map(|e| match e {
                    EndArg::Force => EndOfInput::ForceToT,
                    EndArg::EmitEnd => EndOfInput::EmitEnd,
                })
                .or(file_end)
                .unwrap_or_default(),
            headdrop,
            reference: file_reference.unwrap_or_default(),
            eval_examples: file.eval_examples.unwrap_or(128),
            eval_seed: file.eval_seed,
            task,
            train,
        };
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            bail!("--threshold must lie strictly between 0 and 1");
        }
        if let Some(h) = self.headdrop {
            if !(0.0..1.0).contains(&h) {
                bail!("--headdrop must lie in [0, 1)");
            }
        }
        if let Some(list) = &self.eps_list {
            if list.is_empty() {
                bail!("--eps-list is empty");
            }
        }
        if self.eval_examples == 0 {
            bail!("eval_examples must be at least 1");
        }
        Ok(())
    }

    /// Decode policy at waiting threshold `epsilon`.
    pub fn policy(&self, epsilon: usize) -> DecodePolicy {
        DecodePolicy {
            epsilon,
            threshold: self.threshold,
            forced_position: self.forced_position,
            end_of_input: self.end_of_input,
        }
    }

    pub fn single_input(&self, what: &str) -> Result<&Path> {
        match self.input.as_slice() {
            [one] => Ok(one),
            [] => bail!("--input is required ({what})"),
            _ => bail!("exactly one --input is expected ({what})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = FileConfig::parse("mode = \"mma\"\nepsilon = 3\nthreshold = 0.7\n[train]\nepochs = 5\n").unwrap();
        let flags = CommonArgs {
            epsilon: Some(6),
            ..CommonArgs::default()
        };
        let s = Settings::resolve(file, &flags).unwrap();
        assert_eq!(s.mode, Some(ModeArg::Mma));
        assert_eq!(s.epsilon, Some(6));
        assert_eq!(s.train.epsilon_train, 6);
        assert_eq!(s.train.epochs, 5);
        assert_eq!(s.threshold, 0.7);
    }

    #[test]
    fn unknown_key_reports_position() {
        let err = FileConfig::parse("mode = \"mma\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn bad_threshold_rejected() {
        let flags = CommonArgs {
            threshold: Some(1.5),
            ..CommonArgs::default()
        };
        assert!(Settings::resolve(FileConfig::default(), &flags).is_err());
    }
}
