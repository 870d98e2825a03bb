use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CartpoleTask, EnvError, RaceTask, Task};
use crate::dimensional::QuantitySet;
use crate::dynamics::Track;

/// Task file. Paths are relative to the file itself. Without a track file
/// the race car runs on the desk track sized to its length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Cartpole {
        system: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        episode_steps: Option<usize>,
    },
    Race {
        system: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        track: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_steps: Option<usize>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, EnvError> {
    let text = fs::read_to_string(path).map_err(|source| EnvError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| EnvError::Json { path: path.display().to_string(), source })
}

impl TaskSpec {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        read_json(path)
    }

    /// Input files named by the spec, resolved against `base`.
    pub fn inputs(&self, base: &Path) -> Vec<PathBuf> {
        match self {
            TaskSpec::Cartpole { system, .. } => vec![base.join(system)],
            TaskSpec::Race { system, track, .. } => {
                std::iter::once(base.join(system)).chain(track.iter().map(|t| base.join(t))).collect()
            }
        }
    }

    pub fn build(&self, base: &Path) -> Result<Task, EnvError> {
        let steps_ok = |s: Option<usize>| match s {
            Some(0) => Err(EnvError::Invalid("episode needs at least one step".into())),
            _ => Ok(()),
        };
        Ok(match self {
            TaskSpec::Cartpole { system, episode_steps } => {
                steps_ok(*episode_steps)?;
                let params: QuantitySet = read_json(&base.join(system))?;
                let mut t = CartpoleTask::new(params)?;
                if let Some(n) = episode_steps {
                    t.episode_steps = *n;
                }
                Task::Cartpole(t)
            }
            TaskSpec::Race { system, track, max_steps } => {
                steps_ok(*max_steps)?;
                let params: QuantitySet = read_json(&base.join(system))?;
                let track = match track {
                    Some(p) => read_json::<Track>(&base.join(p))?,
                    None => Track::desk(params.value("l")?),
                };
                let mut t = RaceTask::new(params, track)?;
                if let Some(n) = max_steps {
                    t.max_steps = *n;
                }
                Task::Race(t)
            }
        })
    }
}

pub fn load_task(path: &Path) -> Result<Task, EnvError> {
    let spec = TaskSpec::load(path)?;
    spec.build(path.parent().unwrap_or(Path::new(".")))
}
