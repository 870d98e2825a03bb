use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{lap_time, score, EnvError, Task};
use crate::mdp::EpisodeResult;

/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), EnvError> {
    let io = |source| EnvError::Io { path: path.display().to_string(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Dimensionless tunable weights with their names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl WeightsFile {
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = fs::read_to_string(path).map_err(|source| EnvError::Io { path: path.display().to_string(), source })?;
        let w: Self =
            serde_json::from_str(&text).map_err(|source| EnvError::Json { path: path.display().to_string(), source })?;
        if w.names.len() != w.values.len() {
            return Err(EnvError::Invalid(format!("{}: {} names for {} values", path.display(), w.names.len(), w.values.len())));
        }
        Ok(w)
    }

    /// Values ordered as the task's tunable weights.
    pub fn for_task(&self, task: &Task) -> Result<Vec<f64>, EnvError> {
        let expected = task.weight_names()?;
        if expected != self.names {
            return Err(EnvError::Invalid(format!("weights {:?} do not match {:?}", self.names, expected)));
        }
        Ok(self.values.clone())
    }
}

#[derive(Serialize)]
struct ResultFile<'a> {
    task: &'a str,
    scale: String,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lap_time: Option<f64>,
    /// Objective divided by the cost unit.
    objective_dimensionless: f64,
    time_unit: f64,
    #[serde(flatten)]
    episode: &'a EpisodeResult,
}

fn csv(rows_x: &[Vec<f64>], rows_u: &[Vec<f64>], dt: f64) -> String {
    let nx = rows_x.first().map_or(0, Vec::len);
    let nu = rows_u.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    (0..nx).for_each(|i| {
        let _ = write!(out, ",x{i}");
    });
    (0..nu).for_each(|i| {
        let _ = write!(out, ",u{i}");
    });
    out.push('\n');
    for (k, x) in rows_x.iter().enumerate() {
        let _ = write!(out, "{}", k as f64 * dt);
        x.iter().for_each(|v| {
            let _ = write!(out, ",{v}");
        });
        match rows_u.get(k) {
            Some(u) => u.iter().for_each(|v| {
                let _ = write!(out, ",{v}");
            }),
            None => out.push_str(&",".repeat(nu)),
        }
        out.push('\n');
    }
    out
}

/// Writes `trajectory.csv` (SI), `trajectory_dimensionless.csv` and
/// `result.json` into `dir` and returns the path of the result file.
pub fn write_episode(dir: &Path, task: &Task, res: &EpisodeResult) -> Result<PathBuf, EnvError> {
    let s = task.scaling()?;
    let xs: Vec<Vec<f64>> = res.states.iter().map(|x| s.to_dimensionless_state(x)).collect();
    let us: Vec<Vec<f64>> = res.actions.iter().map(|u| s.to_dimensionless_input(u)).collect();
    write_atomic(&dir.join("trajectory.csv"), csv(&res.states, &res.actions, res.dt).as_bytes())?;
    write_atomic(&dir.join("trajectory_dimensionless.csv"), csv(&xs, &us, res.dt / s.m_t).as_bytes())?;
    let mut episode = res.clone();
    episode.trajectory_file = Some("trajectory.csv".into());
    let file = ResultFile {
        task: task.name(),
        scale: task.scale_label(),
        score: score(res),
        lap_time: lap_time(task, res),
        objective_dimensionless: res.objective / s.m_cost,
        time_unit: s.m_t,
        episode: &episode,
    };
    let path = dir.join("result.json");
    let text = serde_json::to_string_pretty(&file).map_err(|source| EnvError::Json { path: path.display().to_string(), source })?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
