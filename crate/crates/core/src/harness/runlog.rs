//! Structured run records and their file formats.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ConfigError;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    /// Total environment steps at episode end.
    pub env_steps: u64,
    pub episode_return: f64,
    pub length: u64,
    /// "terminal" for MDP termination, "limit" for the step cap.
    pub termination: String,
}

/// One JSON object per learner step with a fixed key set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerRecord {
    pub step: u64,
    pub q_loss: f64,
    pub eta: f64,
    pub kl_c: f64,
    pub kl_d: f64,
    pub eta_c: f64,
    pub eta_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub env_step: u64,
    pub episodes: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub successes: u64,
    pub early_terminations: u64,
}

/// Everything a training run reports.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub episodes: Vec<EpisodeRecord>,
    pub learner: Vec<LearnerRecord>,
    pub evals: Vec<EvalRecord>,
}

pub fn write_episode_csv(log: &RunLog, path: &Path) -> Result<(), ConfigError> {
    let mut out = String::from("episode,steps,return,length,termination\n");
    for r in &log.episodes {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.episode, r.env_steps, r.episode_return, r.length, r.termination
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_episode_csv(path: &Path) -> Result<Vec<EpisodeRecord>, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("episode,steps,return,length,termination") => {}
        other => {
            return Err(ConfigError::Parse(format!(
                "bad episode csv header: {other:?}"
            )))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(ConfigError::Parse(format!("bad episode row: {line:?}")));
        }
        out.push(EpisodeRecord {
            episode: fields[0].parse().map_err(|_| bad(line))?,
            env_steps: fields[1].parse().map_err(|_| bad(line))?,
            episode_return: fields[2].parse().map_err(|_| bad(line))?,
            length: fields[3].parse().map_err(|_| bad(line))?,
            termination: fields[4].to_string(),
        });
    }
    Ok(out)
}

fn bad(line: &str) -> ConfigError {
    ConfigError::Parse(format!("bad episode row: {line:?}"))
}

pub fn write_learner_jsonl(log: &RunLog, path: &Path) -> Result<(), ConfigError> {
    let mut file = std::fs::File::create(path)?;
    for r in &log.learner {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn read_learner_jsonl(path: &Path) -> Result<Vec<LearnerRecord>, ConfigError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| ConfigError::Parse(format!("bad learner line: {e}")))?,
        );
    }
    Ok(out)
}

pub fn write_eval_csv(log: &RunLog, path: &Path) -> Result<(), ConfigError> {
    let mut out = String::from(
        "env_step,episodes,mean_return,std_return,successes,early_terminations\n",
    );
    for r in &log.evals {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.env_step, r.episodes, r.mean_return, r.std_return, r.successes,
            r.early_terminations
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
