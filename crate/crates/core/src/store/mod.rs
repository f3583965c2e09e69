//! Event-sourced store.
//!
//! The store keeps an append-only log of learner events, intervention
//! decisions and host-reported dispositions. All derived state (timers,
//! working times, percentile tables, knowledge vectors, caps) is a fold over
//! that log, so replaying the log from empty must reproduce every snapshot.
//!
//! On disk a store is one directory:
//!
//! | file             | content                                           |
//! |------------------|---------------------------------------------------|
//! | `course.toml`    | course description                                |
//! | `store.json`     | salt, intervention policy, timestamp tolerance    |
//! | `log.jsonl`      | one [`LogEntry`] per line                         |
//! | `snapshot.jsonl` | one [`SnapshotRecord`] per line, see `checkpoint` |

pub mod api;
mod engine;

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CourseError, CoursePlan, GroupAssignment};
use crate::ids::{ExerciseId, Seconds, StudentId, Timestamp};
use crate::intervention::{Disposition, InterventionError, InterventionPolicy, InterventionRecord};
use crate::knowledge::KnowledgeVector;
use crate::recommender::{recommend, RecommendError, Recommendation};
use crate::working_time::{EventKind, PercentileTable, WorkEvent};

pub use engine::{CheckOutcome, Engine, ExerciseProgress, StudentRecord};

pub const COURSE_FILE: &str = "course.toml";
pub const CONFIG_FILE: &str = "store.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.jsonl";

/// Environment variable naming the default store directory.
pub const STORE_DIR_ENV: &str = "NUDGE_STORE";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid record at {file}:{line}: {source}")]
    Record {
        file: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Course(#[from] CourseError),
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("event for `{student}` at {got} is older than the last event at {last}")]
    TimestampRegression {
        student: StudentId,
        last: Timestamp,
        got: Timestamp,
    },
    #[error("unknown student `{0}`")]
    UnknownStudent(StudentId),
    #[error("unknown exercise `{0}`")]
    UnknownExercise(ExerciseId),
    #[error("student `{student}` has no activity on exercise `{exercise}`")]
    NoActivity {
        student: StudentId,
        exercise: ExerciseId,
    },
    #[error("unknown decision {0}")]
    UnknownDecision(u64),
    #[error("replay diverges at snapshot line {}: {}", .0.line, .0.label)]
    Divergence(Box<Divergence>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub salt: String,
    pub policy: InterventionPolicy,
    /// Events older than the student's latest event by more than this are rejected.
    pub timestamp_tolerance_seconds: Seconds,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            salt: "nudge".into(),
            policy: InterventionPolicy::default(),
            timestamp_tolerance_seconds: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum LogEntry {
    Event(WorkEvent),
    Decision(InterventionRecord),
    Disposition { decision_id: u64, disposition: Disposition },
}

/// One line of `snapshot.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum SnapshotRecord {
    Student { id: StudentId, state: Box<StudentRecord> },
    Table(PercentileTable),
    Decision(InterventionRecord),
}

impl SnapshotRecord {
    fn label(&self) -> String {
        match self {
            Self::Student { id, .. } => format!("student `{id}`"),
            Self::Table(t) => format!("percentile table `{}`", t.exercise),
            Self::Decision(d) => format!("decision {}", d.id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// 1-based line of the snapshot file.
    pub line: usize,
    pub label: String,
    pub stored: Option<String>,
    pub replayed: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ack {
    Stored,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimerStatus {
    #[serde(rename = "student_id")]
    pub student: StudentId,
    #[serde(rename = "exercise_id")]
    pub exercise: ExerciseId,
    pub session_active_seconds: Seconds,
    pub total_active_seconds: Seconds,
    pub working_seconds: Seconds,
    pub target_seconds: Seconds,
    pub focused: bool,
    pub solved: bool,
    pub sessions: u32,
    pub fired_this_session: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub log_entries: usize,
    pub snapshot_lines: usize,
}

struct Persistence {
    dir: PathBuf,
    log: BufWriter<File>,
}

pub struct Store {
    engine: Engine,
    log: Vec<LogEntry>,
    persistence: Option<Persistence>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("entries", &self.log.len())
            .field("dir", &self.persistence.as_ref().map(|p| &p.dir))
            .finish()
    }
}

impl Store {
    pub fn in_memory(plan: CoursePlan, config: StoreConfig) -> Result<Self, StoreError> {
        config.policy.validate()?;
        Ok(Self {
            engine: Engine::new(Arc::new(plan), config),
            log: Vec::new(),
            persistence: None,
        })
    }

    /// Creates a new store directory. Fails if a log already exists there.
    pub fn create(dir: &Path, plan: CoursePlan, config: StoreConfig) -> Result<Self, StoreError> {
        config.policy.validate()?;
        fs::create_dir_all(dir)?;
        if dir.join(LOG_FILE).exists() {
            return Err(StoreError::Malformed(format!("{} already holds a store", dir.display())));
        }
        fs::write(dir.join(COURSE_FILE), plan.to_toml())?;
        let config_json = serde_json::to_string_pretty(&config).expect("config serializes");
        fs::write(dir.join(CONFIG_FILE), config_json)?;
        let log = OpenOptions::new().create(true).append(true).open(dir.join(LOG_FILE))?;
        Ok(Self {
            engine: Engine::new(Arc::new(plan), config),
            log: Vec::new(),
            persistence: Some(Persistence {
                dir: dir.to_owned(),
                log: BufWriter::new(log),
            }),
        })
    }

    /// Opens an existing store and rebuilds its state from the log.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let plan = CoursePlan::from_toml(&fs::read_to_string(dir.join(COURSE_FILE))?)?;
        let config: StoreConfig =
            serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?).map_err(|source| {
                StoreError::Record {
                    file: CONFIG_FILE.into(),
                    line: 1,
                    source,
                }
            })?;
        config.policy.validate()?;
        let log = read_jsonl::<LogEntry>(&dir.join(LOG_FILE))?;
        let mut engine = Engine::new(Arc::new(plan), config);
        for entry in &log {
            engine.apply(entry)?;
        }
        let file = OpenOptions::new().append(true).open(dir.join(LOG_FILE))?;
        Ok(Self {
            engine,
            log,
            persistence: Some(Persistence {
                dir: dir.to_owned(),
                log: BufWriter::new(file),
            }),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn plan(&self) -> &CoursePlan {
        self.engine.plan()
    }

    pub fn config(&self) -> &StoreConfig {
        self.engine.config()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn dir(&self) -> Option<&Path> {
        self.persistence.as_ref().map(|p| p.dir.as_path())
    }

    fn append(&mut self, entry: LogEntry) -> Result<(), StoreError> {
        self.engine.apply(&entry)?;
        if let Some(p) = &mut self.persistence {
            serde_json::to_writer(&mut p.log, &entry).expect("log entries serialize");
            p.log.write_all(b"\n")?;
        }
        self.log.push(entry);
        Ok(())
    }

    pub fn ingest_event(&mut self, event: WorkEvent) -> Result<Ack, StoreError> {
        if self.engine.is_duplicate(&event) {
            return Ok(Ack::Duplicate);
        }
        self.engine.validate_event(&event)?;
        self.append(LogEntry::Event(event))?;
        Ok(Ack::Stored)
    }

    pub fn submit_outcome(
        &mut self,
        student: &StudentId,
        exercise: &ExerciseId,
        score_fraction: f64,
        at: Timestamp,
    ) -> Result<Ack, StoreError> {
        self.ingest_event(WorkEvent {
            student: student.clone(),
            exercise: exercise.clone(),
            timestamp: at,
            kind: EventKind::Submit,
            score_fraction: Some(score_fraction),
        })
    }

    fn progress(&self, student: &StudentId, exercise: &ExerciseId) -> Result<&ExerciseProgress, StoreError> {
        let record = self
            .engine
            .student(student)
            .ok_or_else(|| StoreError::UnknownStudent(student.clone()))?;
        record.exercises.get(exercise).ok_or_else(|| StoreError::NoActivity {
            student: student.clone(),
            exercise: exercise.clone(),
        })
    }

    pub fn timer_status(&self, student: &StudentId, exercise: &ExerciseId) -> Result<TimerStatus, StoreError> {
        let p = self.progress(student, exercise)?;
        Ok(TimerStatus {
            student: student.clone(),
            exercise: exercise.clone(),
            session_active_seconds: p.timer.accumulated_active_seconds,
            total_active_seconds: p.total_active_seconds(),
            working_seconds: p.working.active_seconds,
            target_seconds: p.timer.target_seconds,
            focused: p.timer.focused,
            solved: p.timer.solved,
            sessions: p.sessions,
            fired_this_session: p.timer.fired_this_session,
        })
    }

    /// Decides whether a prompt is due at `now` and records the decision.
    pub fn intervention_check(
        &mut self,
        student: &StudentId,
        exercise: &ExerciseId,
        now: Timestamp,
    ) -> Result<CheckOutcome, StoreError> {
        let Some(record) = self.engine.evaluate_check(student, exercise, now)? else {
            return Ok(CheckOutcome::None);
        };
        let shadow = record.kind.delivered().is_none();
        self.append(LogEntry::Decision(record.clone()))?;
        Ok(if shadow {
            CheckOutcome::Shadow(record)
        } else {
            CheckOutcome::Fired(record)
        })
    }

    pub fn record_disposition(&mut self, decision_id: u64, disposition: Disposition) -> Result<(), StoreError> {
        if self.engine.decisions().get(decision_id as usize).is_none() {
            return Err(StoreError::UnknownDecision(decision_id));
        }
        self.append(LogEntry::Disposition {
            decision_id,
            disposition,
        })
    }

    pub fn knowledge_snapshot(&self, student: &StudentId) -> Result<KnowledgeVector, StoreError> {
        self.engine
            .student(student)
            .map(|r| r.knowledge.vector().clone())
            .ok_or_else(|| StoreError::UnknownStudent(student.clone()))
    }

    pub fn groups(&self, student: &StudentId) -> Option<&GroupAssignment> {
        self.engine.student(student).map(|r| &r.state.groups)
    }

    /// Bonus exercise for `student` in `week`. Unknown students are treated
    /// as new students without history.
    pub fn recommend(&self, student: &StudentId, week: u32) -> Result<Recommendation, StoreError> {
        let salt = &self.config().salt;
        match self.engine.student(student) {
            Some(r) => Ok(recommend(
                week,
                &r.state,
                r.knowledge.history(),
                r.knowledge.vector(),
                self.plan(),
                salt,
            )?),
            None => {
                let state = crate::student::StudentState::new(crate::domain::assign_groups(student, salt));
                let knowledge = crate::knowledge::StudentKnowledge::new(student.clone());
                Ok(recommend(
                    week,
                    &state,
                    knowledge.history(),
                    knowledge.vector(),
                    self.plan(),
                    salt,
                )?)
            }
        }
    }

    pub fn events(&self) -> impl Iterator<Item = &WorkEvent> {
        self.log.iter().filter_map(|e| match e {
            LogEntry::Event(ev) => Some(ev),
            _ => None,
        })
    }

    pub fn decisions(&self) -> &[InterventionRecord] {
        self.engine.decisions()
    }

    pub fn snapshot(&self) -> Vec<SnapshotRecord> {
        snapshot_of(&self.engine)
    }

    pub fn snapshot_lines(&self) -> Vec<String> {
        self.snapshot().iter().map(to_line).collect()
    }

    /// Flushes the log and writes the current snapshot to disk.
    pub fn checkpoint(&mut self) -> Result<(), StoreError> {
        let lines = self.snapshot_lines();
        if let Some(p) = &mut self.persistence {
            p.log.flush()?;
            let mut out = BufWriter::new(File::create(p.dir.join(SNAPSHOT_FILE))?);
            for line in lines {
                out.write_all(line.as_bytes())?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        if let Some(p) = &mut self.persistence {
            p.log.flush()?;
        }
        Ok(())
    }

    /// Replays the log from empty and compares the result with `stored`.
    pub fn verify_against(&self, stored: &[String]) -> Result<VerifyReport, StoreError> {
        let mut replayed = Engine::new(Arc::new(self.plan().clone()), self.config().clone());
        for entry in &self.log {
            replayed.apply(entry)?;
        }
        let records = snapshot_of(&replayed);
        let lines: Vec<String> = records.iter().map(to_line).collect();
        for i in 0..lines.len().max(stored.len()) {
            let (s, r) = (stored.get(i), lines.get(i));
            if s != r {
                let label = match (r, s) {
                    (Some(_), _) => records[i].label(),
                    (None, Some(s)) => serde_json::from_str::<SnapshotRecord>(s)
                        .map(|rec| rec.label())
                        .unwrap_or_else(|_| "unparseable stored record".into()),
                    (None, None) => unreachable!(),
                };
                return Err(StoreError::Divergence(Box::new(Divergence {
                    line: i + 1,
                    label,
                    stored: s.cloned(),
                    replayed: r.cloned(),
                })));
            }
        }
        Ok(VerifyReport {
            log_entries: self.log.len(),
            snapshot_lines: lines.len(),
        })
    }

    /// Replays the log and compares it with the persisted snapshot, or with
    /// the live state for in-memory stores.
    pub fn verify(&self) -> Result<VerifyReport, StoreError> {
        let stored = match &self.persistence {
            Some(p) if p.dir.join(SNAPSHOT_FILE).exists() => read_lines(&p.dir.join(SNAPSHOT_FILE))?,
            _ => self.snapshot_lines(),
        };
        self.verify_against(&stored)
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        if let Some(p) = &mut self.persistence {
            let _ = p.log.flush();
        }
    }
}

fn snapshot_of(engine: &Engine) -> Vec<SnapshotRecord> {
    let students = engine.students().iter().map(|(id, r)| SnapshotRecord::Student {
        id: id.clone(),
        state: Box::new(r.clone()),
    });
    let tables = engine.tables().iter().cloned().map(SnapshotRecord::Table);
    let decisions = engine.decisions().iter().cloned().map(SnapshotRecord::Decision);
    students.chain(tables).chain(decisions).collect()
}

fn to_line(record: &SnapshotRecord) -> String {
    serde_json::to_string(record).expect("snapshot records serialize")
}

fn read_lines(path: &Path) -> Result<Vec<String>, StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok(lines)
}

/// Reads a line-delimited JSON file, skipping blank lines.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| StoreError::Record {
            file: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Writes one JSON record per line.
pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<(), StoreError> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut out, record).expect("records serialize");
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
