//! Where scores come from: replayed record files, a remote scoring service,
//! and the sanitisation rules applied to raw scorer output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cost::TokenCounts;
use crate::scores::{normalize_scores, Labels, ScoreVector, ScoredInstance};
use crate::{Error, Result};

/// Step used to separate tied scores.
pub const TIE_STEP: f64 = 0.01;

/// On-disk form of one instance (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub actions: Vec<String>,
    pub primary_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guardian_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<TokenCounts>,
    /// Free-form string attributes, e.g. a subject used for stratified splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl From<&ScoredInstance> for ScoreRecord {
    fn from(inst: &ScoredInstance) -> Self {
        Self {
            id: inst.id().to_owned(),
            actions: inst.actions().to_vec(),
            primary_scores: inst.primary().values().to_vec(),
            guardian_scores: inst.guardian().map(|g| g.values().to_vec()),
            labels: (!inst.labels().is_empty()).then(|| inst.labels().clone()),
            tokens: inst.tokens().copied(),
            meta: (!inst.meta().is_empty()).then(|| inst.meta().clone()),
        }
    }
}

impl ScoreRecord {
    fn into_instance(self, line: usize) -> Result<ScoredInstance> {
        let schema = |field: &str, message: String| Error::Schema {
            line,
            field: field.to_owned(),
            message,
        };
        let primary = ScoreVector::new(self.primary_scores).map_err(|e| schema("primary_scores", e.to_string()))?;
        let guardian = self
            .guardian_scores
            .map(ScoreVector::new)
            .transpose()
            .map_err(|e| schema("guardian_scores", e.to_string()))?;
        let mut inst = ScoredInstance::new_unchecked(self.id, self.actions, primary, guardian);
        if let Some(labels) = self.labels {
            inst.set_labels(labels);
        }
        if let Some(tokens) = self.tokens {
            inst = inst.with_tokens(tokens);
        }
        for (k, v) in self.meta.unwrap_or_default() {
            inst = inst.with_meta(k, v);
        }
        inst.check().map_err(|(field, message)| schema(field, message))?;
        Ok(inst)
    }
}

fn field<T: DeserializeOwned>(obj: &mut serde_json::Map<String, Value>, name: &str, line: usize) -> Result<Option<T>> {
    match obj.remove(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v).map(Some).map_err(|e| Error::Schema {
            line,
            field: name.to_owned(),
            message: e.to_string(),
        }),
    }
}

fn required<T: DeserializeOwned>(obj: &mut serde_json::Map<String, Value>, name: &str, line: usize) -> Result<T> {
    field(obj, name, line)?.ok_or_else(|| Error::Schema {
        line,
        field: name.to_owned(),
        message: "missing required field".into(),
    })
}

/// Parses one record line; `line` is 1-based and used in error messages.
pub fn parse_record(text: &str, line: usize) -> Result<ScoredInstance> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Schema {
        line,
        field: "<record>".into(),
        message: e.to_string(),
    })?;
    let Value::Object(mut obj) = value else {
        return Err(Error::Schema {
            line,
            field: "<record>".into(),
            message: "expected a JSON object".into(),
        });
    };
    let record = ScoreRecord {
        id: required(&mut obj, "id", line)?,
        actions: required(&mut obj, "actions", line)?,
        primary_scores: required(&mut obj, "primary_scores", line)?,
        guardian_scores: field(&mut obj, "guardian_scores", line)?,
        labels: field(&mut obj, "labels", line)?,
        tokens: field(&mut obj, "tokens", line)?,
        meta: field(&mut obj, "meta", line)?,
    };
    record.into_instance(line)
}

pub fn to_record_line(instance: &ScoredInstance) -> String {
    serde_json::to_string(&ScoreRecord::from(instance)).expect("records serialize")
}

/// Reads a record file; blank lines are skipped.
pub fn load_records(path: &Path) -> Result<Vec<ScoredInstance>> {
    let io_err = |source| Error::Io {
        path: path.to_owned(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1)?);
    }
    if out.is_empty() {
        log::warn!("{}: no records found", path.display());
    }
    Ok(out)
}

pub fn save_records(path: &Path, instances: &[ScoredInstance]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for inst in instances {
        writeln!(w, "{}", to_record_line(inst)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Address and retry policy of a remote scorer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerEndpoint {
    pub url: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl ScorerEndpoint {
    pub fn new(url: impl Into<String>, timeout_ms: u64, retries: u32) -> Result<Self> {
        if timeout_ms == 0 {
            return Err(Error::invalid("scorer timeout must be > 0 ms"));
        }
        Ok(Self {
            url: url.into(),
            timeout_ms,
            retries,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreRequest<'a> {
    pub context: &'a str,
    pub actions: &'a [String],
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Turns a scorer reply into normalised scores. Anything unusable (bad JSON,
/// wrong length, negative or non-finite values) becomes the uniform vector,
/// which keeps calibration and test data exchangeable.
pub fn scores_from_response(body: &str, action_count: usize) -> Result<ScoreVector> {
    let parsed = serde_json::from_str::<ScoreResponse>(body)
        .ok()
        .filter(|r| r.scores.len() == action_count)
        .and_then(|r| normalize_scores(&r.scores).ok());
    match parsed {
        Some(v) => Ok(v),
        None => {
            log::debug!("unusable scorer reply, falling back to uniform: {body:.80}");
            ScoreVector::uniform(action_count)
        }
    }
}

/// Blocking client for a scoring service. Safe to share across threads;
/// each call keeps its own retry state.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    endpoint: ScorerEndpoint,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(endpoint: ScorerEndpoint) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { endpoint, agent }
    }

    pub fn endpoint(&self) -> &ScorerEndpoint {
        &self.endpoint
    }

    pub fn fetch_scores(&self, context: &str, actions: &[String]) -> Result<ScoreVector> {
        if actions.is_empty() {
            return Err(Error::invalid("cannot score an empty action list"));
        }
        let attempts = self.endpoint.retries + 1;
        let mut last_err = String::new();
        for attempt in 1..=attempts {
            match self.post(context, actions) {
                Ok(body) => return scores_from_response(&body, actions.len()),
                Err(msg) => {
                    log::debug!("scorer attempt {attempt}/{attempts} failed: {msg}");
                    last_err = msg;
                }
            }
        }
        Err(Error::Transport {
            attempts,
            message: last_err,
        })
    }

    fn post(&self, context: &str, actions: &[String]) -> std::result::Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint.url)
            .send_json(ScoreRequest { context, actions })
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP status {status}"));
        }
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

/// Something that can produce Guardian scores for an instance on demand.
pub trait GuardianSource {
    fn guardian_scores(&self, instance: &ScoredInstance) -> Result<ScoreVector>;
}

/// Uses the Guardian scores already stored on the instance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Replay;

impl GuardianSource for Replay {
    fn guardian_scores(&self, instance: &ScoredInstance) -> Result<ScoreVector> {
        instance.require_guardian().cloned()
    }
}

impl GuardianSource for RemoteScorer {
    /// The context sent is `meta.context` when present, otherwise the id.
    fn guardian_scores(&self, instance: &ScoredInstance) -> Result<ScoreVector> {
        let context = instance
            .meta()
            .get("context")
            .map(String::as_str)
            .unwrap_or(instance.id());
        self.fetch_scores(context, instance.actions())
    }
}

/// Separates exactly-equal scores. For each tied pair the lower-index entry
/// moves by `TIE_STEP` in a random direction, stepping further only when both
/// directions would create a new tie. Untied entries are left as they are.
pub fn perturb_ties<R: Rng + ?Sized>(scores: &ScoreVector, rng: &mut R) -> ScoreVector {
    let mut v = scores.values().to_vec();
    while let Some(i) = first_tied(&v) {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let base = v[i];
        let mut k = 1.0;
        'search: loop {
            for dir in [sign, -sign] {
                let candidate = base + dir * TIE_STEP * k;
                if v.iter().enumerate().all(|(j, &x)| j == i || x != candidate) {
                    v[i] = candidate;
                    break 'search;
                }
            }
            k += 1.0;
        }
    }
    ScoreVector::new(v).expect("perturbation keeps scores finite")
}

fn first_tied(v: &[f64]) -> Option<usize> {
    (0..v.len()).find(|&i| v[i + 1..].contains(&v[i]))
}
