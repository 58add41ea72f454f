use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crowdlabel::classify::{ClassifyResponse, ClassifyTask, ImageAnnotation};
use crowdlabel::contains::{GridResponse, GridTask};
use crowdlabel::io::read_jsonl;
use crowdlabel::ClassId;

use crate::ServiceError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Contains,
    Classify,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self, ServiceError> {
        match s {
            "contains" => Ok(Stage::Contains),
            "classify" => Ok(Stage::Classify),
            other => Err(ServiceError::BadRequest(format!("unknown stage {other:?}"))),
        }
    }
}

/// What a submission must be checked against.
#[derive(Clone, Debug)]
pub(crate) enum Allowed {
    Images(BTreeSet<String>),
    Labels { image: String, labels: BTreeSet<ClassId> },
}

#[derive(Clone, Debug)]
pub(crate) struct TaskEntry {
    pub payload: Value,
    pub allowed: Allowed,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct StageProgress {
    pub tasks: usize,
    pub closed: usize,
    pub responses: usize,
    pub active_leases: usize,
    pub target: usize,
}

/// Open tasks, leases and the append-only response log of one stage.
#[derive(Debug)]
pub struct StageState {
    pub(crate) stage: Stage,
    pub(crate) target: usize,
    pub(crate) tasks: BTreeMap<String, TaskEntry>,
    pub(crate) answered: BTreeMap<String, BTreeSet<String>>,
    pub(crate) leases: HashMap<(String, String), Instant>,
    /// Raw log lines in arrival order.
    pub(crate) log: Vec<String>,
    pub(crate) log_path: PathBuf,
}

impl StageState {
    pub fn contains(tasks: Vec<GridTask>, target: usize, log_path: PathBuf) -> Result<Self, ServiceError> {
        let entries = tasks
            .into_iter()
            .map(|t| {
                let allowed = Allowed::Images(t.shown.iter().cloned().collect());
                (t.task_id.clone(), TaskEntry { payload: serde_json::to_value(&t).expect("serializable"), allowed })
            })
            .collect();
        Self::open(Stage::Contains, entries, target, log_path)
    }

    pub fn classify(tasks: Vec<ClassifyTask>, target: usize, log_path: PathBuf) -> Result<Self, ServiceError> {
        let entries = tasks
            .into_iter()
            .map(|t| {
                let allowed = Allowed::Labels { image: t.image.clone(), labels: t.candidates.iter().copied().collect() };
                (t.task_id.clone(), TaskEntry { payload: serde_json::to_value(&t).expect("serializable"), allowed })
            })
            .collect();
        Self::open(Stage::Classify, entries, target, log_path)
    }

    /// Replays an existing log so restarts keep the answered sets.
    fn open(stage: Stage, tasks: BTreeMap<String, TaskEntry>, target: usize, log_path: PathBuf) -> Result<Self, ServiceError> {
        let mut s = StageState {
            stage,
            target,
            tasks,
            answered: BTreeMap::new(),
            leases: HashMap::new(),
            log: Vec::new(),
            log_path,
        };
        if s.log_path.exists() {
            let records: Vec<Value> = read_jsonl(&s.log_path)?;
            for r in records {
                let (task, worker) = ids(&r)?;
                s.answered.entry(task).or_default().insert(worker);
                s.log.push(serde_json::to_string(&r).expect("serializable"));
            }
        }
        Ok(s)
    }

    fn active_leases(&self, task: &str, now: Instant, timeout: Duration) -> usize {
        self.leases
            .iter()
            .filter(|((t, _), &at)| t == task && now.duration_since(at) < timeout)
            .count()
    }

    fn assigned(&self, task: &str, now: Instant, timeout: Duration) -> usize {
        self.answered.get(task).map_or(0, BTreeSet::len) + self.active_leases(task, now, timeout)
    }

    fn has_answered(&self, task: &str, worker: &str) -> bool {
        self.answered.get(task).is_some_and(|w| w.contains(worker))
    }

    /// Least-assigned open task the worker has not answered; a worker that
    /// already holds a live lease gets that task again.
    pub fn next_task(&mut self, worker: &str, now: Instant, timeout: Duration) -> Option<Value> {
        self.leases.retain(|_, at| now.duration_since(*at) < timeout);
        if let Some((task, _)) = self.leases.keys().filter(|(_, w)| w == worker).min() {
            return Some(self.tasks[task].payload.clone());
        }
        let best = self
            .tasks
            .keys()
            .filter(|t| !self.has_answered(t, worker))
            .map(|t| (self.assigned(t, now, timeout), t))
            .filter(|(n, _)| *n < self.target)
            .min()?
            .1
            .clone();
        self.leases.insert((best.clone(), worker.to_owned()), now);
        Some(self.tasks[&best].payload.clone())
    }

    /// Validates, appends to the log and releases the lease.
    pub fn submit(&mut self, response: Value, now: Instant, timeout: Duration) -> Result<(), ServiceError> {
        let (task, worker) = ids(&response)?;
        let entry = self
            .tasks
            .get(&task)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown task {task:?}")))?;
        if self.has_answered(&task, &worker) {
            return Err(ServiceError::Duplicate(format!("{worker} already answered {task}")));
        }
        let key = (task.clone(), worker.clone());
        match self.leases.get(&key) {
            Some(&at) if now.duration_since(at) < timeout => {}
            _ => return Err(ServiceError::NotFound(format!("no live lease for {worker} on {task}"))),
        }
        let record = match (&entry.allowed, self.stage) {
            (Allowed::Images(shown), Stage::Contains) => {
                let mut r: GridResponse = serde_json::from_value(response).map_err(bad)?;
                if let Some(i) = r.selected.iter().find(|i| !shown.contains(*i)) {
                    return Err(ServiceError::BadRequest(format!("image {i} is not on grid {task}")));
                }
                r.received_at = Some(self.log.len() as u64);
                serde_json::to_string(&r)
            }
            (Allowed::Labels { image, labels }, Stage::Classify) => {
                let mut r: ClassifyResponse = serde_json::from_value(response).map_err(bad)?;
                if &r.image != image {
                    return Err(ServiceError::BadRequest(format!("task {task} is for image {image}")));
                }
                let offered = |l: &ClassId| labels.contains(l);
                if !r.valid.iter().all(offered) || !r.main.iter().all(offered) {
                    return Err(ServiceError::BadRequest("label outside the task's candidates".into()));
                }
                r.qc_flag = r.sanity_flag();
                r.received_at = Some(self.log.len() as u64);
                serde_json::to_string(&r)
            }
            _ => unreachable!("stage and task kind always agree"),
        }
        .expect("serializable");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.log_path)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", self.log_path.display())))?;
        writeln!(f, "{record}").map_err(|e| ServiceError::Internal(e.to_string()))?;
        self.log.push(record);
        self.leases.remove(&key);
        self.answered.entry(task).or_default().insert(worker);
        Ok(())
    }

    pub fn progress(&self, now: Instant, timeout: Duration) -> StageProgress {
        StageProgress {
            tasks: self.tasks.len(),
            closed: self
                .tasks
                .keys()
                .filter(|t| self.answered.get(*t).map_or(0, BTreeSet::len) >= self.target)
                .count(),
            responses: self.log.len(),
            active_leases: self.leases.values().filter(|&&at| now.duration_since(at) < timeout).count(),
            target: self.target,
        }
    }

    pub fn log_text(&self) -> String {
        self.log.iter().map(|l| format!("{l}\n")).collect()
    }
}

fn bad(e: serde_json::Error) -> ServiceError {
    ServiceError::BadRequest(e.to_string())
}

fn ids(v: &Value) -> Result<(String, String), ServiceError> {
    let field = |k: &str| {
        v.get(k)
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| ServiceError::BadRequest(format!("missing string field {k:?}")))
    };
    Ok((field("task_id")?, field("worker")?))
}

/// Aggregated output kept in memory after `POST /v1/aggregate`.
#[derive(Debug, Default)]
pub struct Aggregated {
    pub annotations: BTreeMap<String, ImageAnnotation>,
    pub jsonl: String,
    pub qc: String,
}
