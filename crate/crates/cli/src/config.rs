//! The run configuration embedded in every artifact, and parsing of the
//! user-facing group and null-vector syntax.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use hdinfer::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Fit,
    Test,
    Simulate,
    GlmTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Single,
    ThreeStep,
    Stepdown,
    Recover,
    Ex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SidedArg {
    One,
    #[default]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScreenArg {
    #[default]
    Marginal,
    Iterative,
}

/// Everything that determines a run's output. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub x: Option<PathBuf>,
    pub y: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub alpha: f64,
    pub group: String,
    pub beta_null: Option<String>,
    pub bootstrap_draws: usize,
    pub seed: Option<u64>,
    pub studentized: bool,
    pub sided: SidedArg,
    pub method: Method,
    pub screen: ScreenArg,
    pub c0: f64,
    pub tau: f64,
    pub nodewise_lambda: Option<f64>,
    pub loss: String,
    pub lambda: Option<f64>,
    pub intervals: bool,
    pub reps: Option<usize>,
    /// Not embedded in artifacts, so outputs do not depend on where they are written.
    #[serde(skip, default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let data = self.x.is_some() || self.y.is_some();
        match (self.command, data, self.scenario.is_some()) {
            (Command::Simulate, false, true) => {}
            (Command::Simulate, _, _) => {
                return Err(Error::InvalidArgument("simulate takes --scenario and no data paths".into()))
            }
            (_, _, true) => return Err(Error::InvalidArgument("--scenario only applies to simulate".into())),
            _ if self.x.is_none() || self.y.is_none() => {
                return Err(Error::InvalidArgument("both --x and --y are required".into()))
            }
            _ => {}
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if !(self.c0 > 0.0 && self.c0 < 1.0) {
            return Err(Error::InvalidArgument(format!("--c0 must lie in (0, 1), got {}", self.c0)));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn x_path(&self) -> &Path {
        self.x.as_deref().expect("validated")
    }

    pub fn y_path(&self) -> &Path {
        self.y.as_deref().expect("validated")
    }
}

fn parse_index(token: &str, p: usize) -> Result<Vec<usize>> {
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidArgument(format!("bad group index {s:?}")))
    };
    let (lo, hi) = match token.split_once('-') {
        Some((a, b)) => (num(a)?, num(b)?),
        None => {
            let v = num(token)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(Error::InvalidArgument(format!("empty range {token:?}")));
    }
    for v in [lo, hi] {
        if v == 0 || v > p {
            return Err(Error::GroupOutOfRange { index: v, p });
        }
    }
    Ok((lo - 1..hi).collect())
}

/// Parses `all`, a list like `1,4,7-9`, or `complement:<list>` into sorted
/// 0-based indices.
pub fn parse_group(spec: &str, p: usize) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if spec == "all" {
        return Ok((0..p).collect());
    }
    let (complement, list) = match spec.strip_prefix("complement:") {
        Some(rest) => (true, rest),
        None => (false, spec),
    };
    let mut listed = Vec::new();
    for token in list.split(',').filter(|t| !t.trim().is_empty()) {
        listed.extend(parse_index(token, p)?);
    }
    listed.sort_unstable();
    listed.dedup();
    let group = if complement {
        (0..p).filter(|j| listed.binary_search(j).is_err()).collect()
    } else {
        listed
    };
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    Ok(group)
}

/// `None` means zero; a single number is broadcast; otherwise a
/// comma-separated vector of length `p` or a path to a one-column CSV.
pub fn parse_beta_null(spec: Option<&str>, p: usize) -> Result<Vec<f64>> {
    let Some(spec) = spec else {
        return Ok(vec![0.0; p]);
    };
    let values: Vec<f64> = if Path::new(spec).is_file() {
        hdinfer::dataset::read_matrix_csv(Path::new(spec))?.iter().copied().collect()
    } else {
        spec.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad --beta-null entry {t:?}")))
            })
            .collect::<Result<_>>()?
    };
    match values.len() {
        1 => Ok(vec![values[0]; p]),
        len if len == p => Ok(values),
        len => Err(Error::DimensionMismatch(format!("--beta-null has {len} entries, expected 1 or {p}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_syntax() {
        assert_eq!(parse_group("all", 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_group("3,1,1", 5).unwrap(), vec![0, 2]);
        assert_eq!(parse_group("2-4", 5).unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_group("complement:1,2", 4).unwrap(), vec![2, 3]);
        assert_eq!(parse_group("6", 5).unwrap_err().kind(), "GroupOutOfRange");
        assert_eq!(parse_group("0", 5).unwrap_err().kind(), "GroupOutOfRange");
        assert_eq!(parse_group("complement:1-3", 3).unwrap_err().kind(), "EmptyGroup");
        assert_eq!(parse_group("a", 3).unwrap_err().kind(), "InvalidArgument");
    }

    #[test]
    fn beta_null_syntax() {
        assert_eq!(parse_beta_null(None, 2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(parse_beta_null(Some("1.5"), 3).unwrap(), vec![1.5; 3]);
        assert_eq!(parse_beta_null(Some("1,2"), 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(parse_beta_null(Some("1,2"), 3).unwrap_err().kind(), "DimensionMismatch");
    }
}
