use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::cohort::AgentProfile;
use crate::domain::Pool;
use crate::ids::{ExerciseId, Seconds, Timestamp, SECONDS_PER_DAY};
use crate::intervention::{initial_target, DecisionKind, InterventionKind};
use crate::store::{Store, StoreError};
use crate::working_time::{EventKind, WorkEvent, IDLE_GAP_SECONDS};

const WEEK_SECONDS: Seconds = 7 * SECONDS_PER_DAY;

/// World and behaviour parameters that are not tied to a skill level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Start of week 1.
    pub start_at: Timestamp,
    /// Number of weeks to simulate. Defaults to the course length.
    pub weeks: Option<u32>,
    /// Median working time in minutes, indexed by difficulty - 1. The last
    /// entry is used for harder exercises.
    pub median_minutes_by_difficulty: Vec<f64>,
    /// Log-normal sigma of per-exercise working time.
    pub work_sigma: f64,
    pub event_gap_seconds: (Seconds, Seconds),
    /// Chance per work event of closing the session mid-exercise.
    pub leave_probability: f64,
    /// Chance of ending the session after completing an exercise.
    pub leave_after_exercise_probability: f64,
    pub away_hours: (f64, f64),
    /// Chance per work event of a short loss of focus.
    pub focus_blip_probability: f64,
    pub focus_blip_seconds: (Seconds, Seconds),
    /// Chance per work event of an unprompted help request at propensity 1.
    /// Scaled by the agent's propensity.
    pub spontaneous_rfc_probability: f64,
    /// Delay between deciding to ask for help and sending the request.
    pub rfc_delay_seconds: (Seconds, Seconds),
    /// Share of the remaining work removed by the answer to a request.
    pub rfc_help_fraction: f64,
    /// Chance of following a delivered break prompt.
    pub break_compliance: f64,
    /// Chance per work event of an unprompted break.
    pub spontaneous_break_probability: f64,
    pub break_minutes: (f64, f64),
    /// Chance of asking for a bonus exercise once the week is done.
    pub bonus_uptake: f64,
    pub max_bonus_per_week: u32,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            // Monday 2023-01-02 00:00 UTC.
            start_at: 1_672_617_600,
            weeks: None,
            median_minutes_by_difficulty: vec![8.0, 13.0, 20.0, 28.0],
            work_sigma: 0.6,
            event_gap_seconds: (40, 160),
            leave_probability: 0.015,
            leave_after_exercise_probability: 0.3,
            away_hours: (3.0, 30.0),
            focus_blip_probability: 0.03,
            focus_blip_seconds: (15, 180),
            spontaneous_rfc_probability: 0.02,
            rfc_delay_seconds: (30, 300),
            rfc_help_fraction: 0.5,
            break_compliance: 0.4,
            spontaneous_break_probability: 0.004,
            break_minutes: (5.0, 25.0),
            bonus_uptake: 0.5,
            max_bonus_per_week: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Next {
    Begin,
    Start,
    Work,
    Submit,
    Rfc,
    FocusLoss { back_after: Seconds },
    FocusGain,
}

#[derive(Debug)]
struct Task {
    exercise: ExerciseId,
    remaining: f64,
    threshold: Seconds,
    worked: Seconds,
    struggled: bool,
    score: f64,
}

struct Agent<'a> {
    profile: &'a AgentProfile,
    rng: ChaCha8Rng,
    week: u32,
    todo: VecDeque<ExerciseId>,
    bonus_this_week: u32,
    task: Option<Task>,
    next: Next,
    next_at: Timestamp,
    last_at: Option<Timestamp>,
    last_kind: Option<EventKind>,
}

struct World<'a> {
    config: &'a SimulationConfig,
    horizon: u32,
    work: Vec<LogNormal<f64>>,
}

impl World<'_> {
    fn week_start(&self, week: u32) -> Timestamp {
        self.config.start_at + u64::from(week - 1) * WEEK_SECONDS
    }

    fn work_distribution(&self, difficulty: u32) -> &LogNormal<f64> {
        let i = (difficulty.max(1) as usize - 1).min(self.work.len() - 1);
        &self.work[i]
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (Seconds, Seconds)) -> Seconds {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn uniform_f(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

impl<'a> Agent<'a> {
    fn new(profile: &'a AgentProfile, world: &World) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        let start = world.week_start(1) + rng.random_range(0..2 * SECONDS_PER_DAY);
        Self {
            profile,
            rng,
            week: 0,
            todo: VecDeque::new(),
            bonus_this_week: 0,
            task: None,
            next: Next::Begin,
            next_at: start,
            last_at: None,
            last_kind: None,
        }
    }

    fn emit(&mut self, store: &mut Store, kind: EventKind, score: Option<f64>) -> Result<(), StoreError> {
        let task = self.task.as_ref().expect("events need an exercise");
        store.ingest_event(WorkEvent {
            student: self.profile.student.clone(),
            exercise: task.exercise.clone(),
            timestamp: self.next_at,
            kind,
            score_fraction: score,
        })?;
        self.last_at = Some(self.next_at);
        self.last_kind = Some(kind);
        Ok(())
    }

    /// Seconds of progress since the previous event.
    fn credit(&self) -> Seconds {
        match (self.last_at, self.last_kind) {
            (Some(last), Some(kind)) if kind != EventKind::FocusLoss => {
                let gap = self.next_at - last;
                if gap < IDLE_GAP_SECONDS {
                    gap
                } else {
                    0
                }
            }
            _ => 0,
        }
    }

    fn away(&mut self, world: &World) -> Seconds {
        (uniform_f(&mut self.rng, world.config.away_hours) * 3600.0) as Seconds
    }

    fn start_task(&mut self, exercise: ExerciseId, store: &Store, world: &World) {
        let spec = store.plan().exercise(exercise.as_str()).expect("planned exercise");
        let z = world.work_distribution(spec.difficulty).sample(&mut self.rng);
        let mut remaining = z * 60.0 * self.profile.base_speed_multiplier;
        let score = if self.rng.random_bool(self.profile.give_up_probability) {
            remaining *= self.rng.random_range(0.3..0.8);
            self.rng.random_range(0.2..0.95)
        } else {
            1.0
        };
        let table = store.engine().tables().table_or_empty(&exercise);
        let threshold = initial_target(&table, &store.config().policy);
        self.task = Some(Task {
            exercise,
            remaining,
            threshold,
            worked: 0,
            struggled: false,
            score,
        });
    }

    /// Chooses the next exercise. Returns `false` when the agent is done.
    fn pick_exercise(&mut self, store: &Store, world: &World) -> Result<bool, StoreError> {
        loop {
            if let Some(exercise) = self.todo.pop_front() {
                self.start_task(exercise, store, world);
                return Ok(true);
            }
            if self.week > 0
                && self.bonus_this_week < world.config.max_bonus_per_week
                && self.rng.random_bool(world.config.bonus_uptake)
            {
                self.bonus_this_week += 1;
                let rec = store.recommend(&self.profile.student, self.week)?;
                if let Some(served) = rec.served() {
                    let exercise = served.exercise.clone();
                    self.start_task(exercise, store, world);
                    return Ok(true);
                }
            }
            if self.week >= world.horizon {
                return Ok(false);
            }
            self.week += 1;
            self.bonus_this_week = 0;
            self.todo = store
                .plan()
                .in_week(self.week, Pool::Standard)
                .map(|e| e.id.clone())
                .collect();
            let start = world.week_start(self.week);
            if self.next_at < start {
                self.next_at = start + self.rng.random_range(0..SECONDS_PER_DAY);
            }
        }
    }

    /// Emits one event and schedules the next. Returns `None` once the agent
    /// has left the course or finished it.
    fn step(&mut self, store: &mut Store, world: &World) -> Result<Option<Timestamp>, StoreError> {
        let cfg = world.config;
        match self.next {
            Next::Begin => {
                let due = self.next_at;
                if !self.pick_exercise(store, world)? {
                    return Ok(None);
                }
                self.next = Next::Start;
                if self.next_at != due {
                    // Waiting for the next week to open.
                    return Ok(Some(self.next_at));
                }
                return self.step(store, world);
            }
            Next::Start => {
                self.last_kind = None;
                self.emit(store, EventKind::Run, None)?;
            }
            Next::Work | Next::Submit | Next::Rfc => {
                let credit = self.credit();
                let task = self.task.as_mut().expect("active task");
                task.worked += credit;
                task.remaining -= credit as f64;
                match self.next {
                    Next::Submit => {
                        let score = task.score;
                        self.emit(store, EventKind::Submit, Some(score))?;
                        self.task = None;
                        self.next = Next::Begin;
                        self.next_at += if self.rng.random_bool(cfg.leave_after_exercise_probability) {
                            self.away(world)
                        } else {
                            uniform(&mut self.rng, (30, 120))
                        };
                        return Ok(Some(self.next_at));
                    }
                    Next::Rfc => {
                        task.remaining *= 1.0 - cfg.rfc_help_fraction;
                        self.emit(store, EventKind::Rfc, None)?;
                    }
                    _ => {
                        let r: f64 = self.rng.random();
                        if r < 0.1 && task.remaining > 0.0 {
                            let progress = task.worked as f64 / (task.worked as f64 + task.remaining);
                            let score = (progress * task.score).min(0.95);
                            self.emit(store, EventKind::Assess, Some(score))?;
                        } else {
                            let kind = if r < 0.55 { EventKind::Run } else { EventKind::Autosave };
                            self.emit(store, kind, None)?;
                        }
                    }
                }
            }
            Next::FocusLoss { back_after } => {
                self.emit(store, EventKind::FocusLoss, None)?;
                self.next = Next::FocusGain;
                self.next_at += back_after;
                return Ok(Some(self.next_at));
            }
            Next::FocusGain => {
                self.emit(store, EventKind::FocusGain, None)?;
            }
        }
        self.after_event(store, world)
    }

    fn after_event(&mut self, store: &mut Store, world: &World) -> Result<Option<Timestamp>, StoreError> {
        let cfg = world.config;
        let now = self.next_at;
        let profile = self.profile;
        let task = self.task.as_mut().expect("active task");

        if !task.struggled && task.worked >= task.threshold {
            task.struggled = true;
            if self.rng.random_bool(profile.dropout_hazard_per_struggle) {
                return Ok(None);
            }
        }

        let outcome = store.intervention_check(&profile.student, &task.exercise, now)?;
        let mut next = None;
        if let Some(record) = outcome.record() {
            let boost = match record.kind {
                DecisionKind::RfcPrompt => profile.intervention_responsiveness,
                _ => 0.0,
            };
            let p_rfc = (profile.rfc_propensity + boost).min(1.0);
            if self.rng.random_bool(p_rfc) {
                next = Some((Next::Rfc, uniform(&mut self.rng, cfg.rfc_delay_seconds)));
            } else if outcome.delivered().map(|(k, _)| k) == Some(InterventionKind::BreakPrompt)
                && self.rng.random_bool(cfg.break_compliance)
            {
                next = Some(self.break_step(world));
            }
        }
        let remaining = self.task.as_ref().expect("active task").remaining;
        let (next, delay) = match next {
            Some(n) => n,
            None if remaining <= 0.0 => (Next::Submit, uniform(&mut self.rng, (10, 60))),
            None => self.routine_step(world),
        };
        self.next = next;
        self.next_at = now + delay;
        Ok(Some(self.next_at))
    }

    /// Next step when no intervention is pending.
    fn routine_step(&mut self, world: &World) -> (Next, Seconds) {
        let cfg = world.config;
        let weights = [
            cfg.leave_probability,
            cfg.focus_blip_probability,
            cfg.spontaneous_break_probability,
            cfg.spontaneous_rfc_probability * self.profile.rfc_propensity,
        ];
        let r: f64 = self.rng.random();
        let mut edge = 0.0;
        let pick = weights.iter().position(|w| {
            edge += w;
            r < edge
        });
        match pick {
            Some(0) => (Next::Work, self.away(world)),
            Some(1) => {
                let back = uniform(&mut self.rng, cfg.focus_blip_seconds);
                (Next::FocusLoss { back_after: back }, uniform(&mut self.rng, (5, 60)))
            }
            Some(2) => self.break_step(world),
            Some(_) => (Next::Rfc, uniform(&mut self.rng, cfg.rfc_delay_seconds)),
            None => (Next::Work, uniform(&mut self.rng, cfg.event_gap_seconds)),
        }
    }

    fn break_step(&mut self, world: &World) -> (Next, Seconds) {
        let minutes = uniform_f(&mut self.rng, world.config.break_minutes);
        let back = ((minutes * 60.0) as Seconds).max(IDLE_GAP_SECONDS);
        (Next::FocusLoss { back_after: back }, uniform(&mut self.rng, (10, 60)))
    }
}

/// Runs the cohort through `store`. Agents are interleaved in timestamp
/// order, ties broken by cohort position, so the run is a pure function of
/// the cohort, the store's course and policy, and `config`.
pub fn simulate(store: &mut Store, cohort: &[AgentProfile], config: &SimulationConfig) -> Result<(), StoreError> {
    if config.median_minutes_by_difficulty.is_empty() {
        return Err(StoreError::Malformed("no working-time medians configured".into()));
    }
    let work = config
        .median_minutes_by_difficulty
        .iter()
        .map(|&m| LogNormal::new(m.max(f64::MIN_POSITIVE).ln(), config.work_sigma))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| StoreError::Malformed(format!("working-time distribution: {e}")))?;
    let world = World {
        config,
        horizon: config.weeks.unwrap_or(store.plan().weeks()).min(store.plan().weeks()),
        work,
    };
    let mut agents: Vec<Agent> = cohort.iter().map(|p| Agent::new(p, &world)).collect();
    let mut queue: BinaryHeap<Reverse<(Timestamp, usize)>> =
        agents.iter().enumerate().map(|(i, a)| Reverse((a.next_at, i))).collect();
    while let Some(Reverse((_, i))) = queue.pop() {
        if let Some(at) = agents[i].step(store, &world)? {
            queue.push(Reverse((at, i)));
        }
    }
    store.flush()
}
