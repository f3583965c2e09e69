//! Acceptance suite. Runs every criterion, prints one line per criterion
//! and exits non-zero if any fails.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::Entry;
use nudge_core::domain::{
    assign_groups, default_course, BonusGroup, CoursePlan, ExerciseSpec, GroupAssignment, InterventionGroup, Pool,
    Topic, TopicWeight,
};
use nudge_core::intervention::{
    initial_target, returning_target, ActionKind, DecisionKind, Disposition, FollowUpAction, InterventionPolicy,
    InterventionRecord,
};
use nudge_core::knowledge::{diminishing_phi, score_row, scoring_sigma, theta, StudentKnowledge, SubmissionOutcome};
use nudge_core::recommender::{recommend, Recommendation};
use nudge_core::simulator::{generate_cohort, report, simulate, AgentProfile, CohortConfig, SimulationConfig};
use nudge_core::store::{LogEntry, Store, StoreConfig};
use nudge_core::student::StudentState;
use nudge_core::working_time::{compute_working_time, EventKind, PercentileTable, TimeBand, WorkEvent};
use nudge_core::{ExerciseId, StudentId, TopicId};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

const BANDS: [TimeBand; 4] = TimeBand::ALL;

// 1. Scoring table.
fn sigma_table() -> Check {
    let rows = [0.2, 0.5, 0.7, 0.85, 1.0];
    for (r, &score) in rows.iter().enumerate() {
        for (c, &band) in BANDS.iter().enumerate() {
            let got = scoring_sigma(score, band);
            ensure(got.to_bits() == common::SIGMA[r][c].to_bits(), || {
                format!("cell ({r}, {c}): {got} != {}", common::SIGMA[r][c])
            })?;
        }
    }
    ensure(score_row(0.95) == 3, || "0.95 must fall into the >= 80% row".into())?;
    for band in BANDS {
        ensure(scoring_sigma(0.95, band) == common::sigma(0.85, band), || {
            format!("0.95 in {band:?} differs from the >= 80% row")
        })?;
    }
    Ok("20 cells bit-exact, 0.95 rounds down to >= 80%".into())
}

// 2. Knowledge score properties.
fn random_plan(rng: &mut ChaCha8Rng, scale: u32) -> (CoursePlan, Vec<TopicId>, Vec<(u32, Vec<(usize, f64)>)>) {
    let n_topics = rng.random_range(1..=4);
    let topics: Vec<TopicId> = (0..n_topics).map(|i| TopicId::new(format!("t{i}"))).collect();
    let n_ex = rng.random_range(1..=10);
    let shape: Vec<(u32, Vec<(usize, f64)>)> = (0..n_ex)
        .map(|_| {
            let mut picked: Vec<usize> = (0..n_topics).collect();
            picked.shuffle(rng);
            picked.truncate(rng.random_range(1..=n_topics.min(3)));
            let weights = picked.into_iter().map(|t| (t, rng.random_range(0.1..1.0))).collect();
            (rng.random_range(1..=4), weights)
        })
        .collect();
    (build_plan(&topics, &shape, scale), topics, shape)
}

fn build_plan(topics: &[TopicId], shape: &[(u32, Vec<(usize, f64)>)], scale: u32) -> CoursePlan {
    let exercises = shape
        .iter()
        .enumerate()
        .map(|(i, (difficulty, weights))| ExerciseSpec {
            id: ExerciseId::new(format!("e{i}")),
            title: format!("e{i}"),
            week: 1,
            difficulty: difficulty * scale,
            pool: Pool::Standard,
            topics: weights
                .iter()
                .map(|&(t, w)| TopicWeight {
                    topic: topics[t].clone(),
                    weight: w,
                })
                .collect(),
        })
        .collect();
    let topics = topics
        .iter()
        .map(|t| Topic {
            id: t.clone(),
            name: t.to_string(),
        })
        .collect();
    CoursePlan::new(1, topics, exercises).unwrap()
}

const SCORES: [f64; 8] = [0.0, 0.3, 0.45, 0.65, 0.85, 0.95, 0.99, 1.0];

fn outcomes(entries: &[Entry]) -> Vec<SubmissionOutcome> {
    entries
        .iter()
        .map(|e| SubmissionOutcome {
            student: "s".into(),
            exercise: e.exercise.clone(),
            best_score_fraction: e.score,
            working_time_band: e.band,
            position: e.position,
        })
        .collect()
}

fn theta_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut compared = 0;
    for case in 0..1000 {
        let (plan, topics, shape) = random_plan(&mut rng, 1);
        let mut order: Vec<usize> = (0..shape.len()).collect();
        order.shuffle(&mut rng);
        order.truncate(rng.random_range(1..=shape.len()));
        let entries: Vec<Entry> = order
            .iter()
            .enumerate()
            .map(|(i, &e)| Entry {
                exercise: ExerciseId::new(format!("e{e}")),
                score: *SCORES.choose(&mut rng).unwrap(),
                band: *BANDS.choose(&mut rng).unwrap(),
                position: i + 1,
            })
            .collect();
        let history = outcomes(&entries);
        let scale = rng.random_range(2..=5);
        let scaled = build_plan(&topics, &shape, scale);

        for topic in &topics {
            let got = theta(&history, topic, &plan);
            let want = common::theta(&entries, topic, &plan);
            match (got, want) {
                (None, None) => continue,
                (Some(g), Some(w)) => {
                    compared += 1;
                    ensure((g - w).abs() <= 1e-9, || format!("case {case}, {topic}: {g} vs oracle {w}"))?;
                    ensure((0.0..=1.0).contains(&g), || format!("case {case}: {g} out of range"))?;
                    let s = theta(&history, topic, &scaled).unwrap();
                    ensure((s - g).abs() <= 1e-12, || {
                        format!("case {case}: difficulty x{scale} changes {g} to {s}")
                    })?;
                }
                _ => return Err(format!("case {case}, {topic}: presence differs")),
            }

            // Raising one sigma never lowers the score.
            let touching: Vec<usize> = (0..entries.len())
                .filter(|&i| plan.exercise(entries[i].exercise.as_str()).unwrap().weight_of(topic) > 0.0)
                .collect();
            let &i = touching.choose(&mut rng).unwrap();
            let before = got.unwrap();
            let mut raised = history.clone();
            let (score, band) = (*SCORES.choose(&mut rng).unwrap(), *BANDS.choose(&mut rng).unwrap());
            if scoring_sigma(score, band) >= history[i].sigma() {
                raised[i].best_score_fraction = score;
                raised[i].working_time_band = band;
                let after = theta(&raised, topic, &plan).unwrap();
                ensure(after >= before - 1e-12, || format!("case {case}: raising sigma lowered {before} to {after}"))?;
            }

            // A single exercise reduces to its sigma.
            let single = vec![SubmissionOutcome {
                position: 1,
                ..history[i].clone()
            }];
            let one = theta(&single, topic, &plan).unwrap();
            ensure((one - history[i].sigma()).abs() <= 1e-12, || {
                format!("case {case}: single exercise gives {one}, sigma {}", history[i].sigma())
            })?;
        }
    }
    Ok(format!("1000 histories, {compared} topic scores match the oracle"))
}

// 3. Recency weight.
fn phi_checks() -> Check {
    for n in (2..=40).step_by(2) {
        let mid = diminishing_phi(n / 2, n).unwrap();
        ensure((mid - 0.5).abs() <= 1e-12, || format!("phi({}, {n}) = {mid}", n / 2))?;
    }
    for n in 1..=40 {
        let values: Vec<f64> = (1..=n).map(|i| diminishing_phi(i, n).unwrap()).collect();
        ensure(values.windows(2).all(|w| w[0] < w[1]), || format!("not strictly increasing for n = {n}"))?;
        for (i, v) in values.iter().enumerate() {
            let want = common::phi(i + 1, n);
            ensure((v - want).abs() <= 1e-12, || format!("phi({}, {n}) = {v}, oracle {want}", i + 1))?;
        }
        if n % 2 == 0 {
            let m = n / 2;
            for d in 1..m {
                let sum = diminishing_phi(m - d, n).unwrap() + diminishing_phi(m + d, n).unwrap();
                ensure((sum - 1.0).abs() <= 1e-9, || format!("phi({}) + phi({}) = {sum} for n = {n}", m - d, m + d))?;
            }
        }
    }
    let top = diminishing_phi(10, 10).unwrap();
    ensure((top - 0.9526).abs() < 5e-5, || format!("phi(10, 10) = {top}"))?;
    Ok(format!("midpoint, monotone, symmetric; phi(10, 10) = {top:.4}"))
}

// 4. Working time.
fn working_time_oracle() -> Check {
    let ev = |t: u64, score: Option<f64>| WorkEvent {
        student: "s".into(),
        exercise: "e".into(),
        timestamp: t,
        kind: EventKind::Run,
        score_fraction: score,
    };
    let worked = [
        (vec![ev(0, None), ev(180, None), ev(600, None)], 180, false),
        (vec![ev(0, None)], 0, false),
        (vec![ev(0, None), ev(100, Some(1.0)), ev(400, None)], 100, true),
    ];
    for (events, want, full) in &worked {
        let wt = compute_working_time(events).map_err(|e| e.to_string())?;
        ensure(wt.active_seconds == *want && wt.reached_full_score == *full, || {
            format!("worked example gives {wt:?}, expected {want}")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let kinds = [EventKind::Run, EventKind::Assess, EventKind::Submit, EventKind::Autosave, EventKind::FocusLoss];
    for case in 0..1000 {
        let n = rng.random_range(1..=50);
        let mut t = rng.random_range(0..10_000u64);
        let events: Vec<WorkEvent> = (0..n)
            .map(|_| {
                t += match rng.random_range(0..10) {
                    0 => rng.random_range(300..5_000),
                    1 => 299 + rng.random_range(0..3),
                    _ => rng.random_range(0..300),
                };
                let kind = *kinds.choose(&mut rng).unwrap();
                let score = match kind {
                    EventKind::Assess | EventKind::Submit => {
                        Some(if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.0..1.0) })
                    }
                    _ => None,
                };
                WorkEvent { kind, ..ev(t, score) }
            })
            .collect();
        let got = compute_working_time(&events).map_err(|e| e.to_string())?.active_seconds;
        let want = common::working_time(&events);
        ensure(got == want, || format!("stream {case}: {got} vs oracle {want}"))?;
    }
    Ok("3 worked examples, 1000 random streams match the oracle".into())
}

// 5. Intervention rules.
fn intervention_suite() -> Check {
    let policy = InterventionPolicy::default();
    let mut store = Store::in_memory(default_course(), StoreConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let exercises: Vec<ExerciseId> = store
        .plan()
        .exercises()
        .iter()
        .filter(|e| e.pool == Pool::Standard)
        .map(|e| e.id.clone())
        .collect();
    let kinds = [
        EventKind::Run,
        EventKind::Run,
        EventKind::Autosave,
        EventKind::Autosave,
        EventKind::Assess,
        EventKind::FocusLoss,
        EventKind::FocusGain,
        EventKind::Rfc,
    ];
    let (students, days) = (2_000, 5);
    for s in 0..students {
        let student = StudentId::new(format!("fuzz-{s}"));
        let mut t = 1_700_000_000 + rng.random_range(0..86_400);
        for day in 0..days {
            t = t.max(1_700_000_000 + day * 86_400 + rng.random_range(0..20_000));
            for _ in 0..rng.random_range(1..=3) {
                let exercise = exercises.choose(&mut rng).unwrap().clone();
                for _ in 0..rng.random_range(5..=45) {
                    t += match rng.random_range(0..20) {
                        0 => rng.random_range(300..2_000),
                        _ => rng.random_range(1..300),
                    };
                    let kind = *kinds.choose(&mut rng).unwrap();
                    let score = match kind {
                        EventKind::Assess if rng.random_bool(0.1) => Some(1.0),
                        EventKind::Assess => Some(rng.random_range(0.0..1.0)),
                        _ => None,
                    };
                    let event = WorkEvent {
                        student: student.clone(),
                        exercise: exercise.clone(),
                        timestamp: t,
                        kind,
                        score_fraction: score,
                    };
                    store.ingest_event(event).map_err(|e| e.to_string())?;
                    let now = t + if rng.random_bool(0.2) { rng.random_range(0..400) } else { 0 };
                    let outcome = store.intervention_check(&student, &exercise, now).map_err(|e| e.to_string())?;
                    if let Some(d) = outcome.record() {
                        if rng.random_bool(0.5) {
                            let disposition = *[Disposition::Acted, Disposition::Dismissed].choose(&mut rng).unwrap();
                            store.record_disposition(d.id, disposition).map_err(|e| e.to_string())?;
                        }
                    }
                    t = now;
                }
                t += rng.random_range(300..10_000);
            }
        }
    }
    let v = common::check_decisions(store.log(), &policy);
    ensure(v.decisions > 1_000, || format!("only {} decisions", v.decisions))?;
    ensure(v.total() == 0, || format!("{v:?}"))?;
    let delivered = store.decisions().iter().filter(|d| d.kind != DecisionKind::Shadow).count();

    // Returning students: the remaining time to the percentile, at least the floor.
    let table = PercentileTable::from_samples("e".into(), vec![1_000, 1_200, 1_500, 1_800]);
    for (prior, want) in [(0, 1_500), (300, 1_200), (899, 601), (900, 600), (1_200, 600), (5_000, 600)] {
        let got = returning_target(prior, &table, &policy);
        ensure(got == want, || format!("returning target after {prior}s: {got}, expected {want}"))?;
    }
    ensure(initial_target(&PercentileTable::new("e".into()), &policy) == 600, || "cold start target".into())?;

    // The same through the store: four solvers, then a returning student.
    let mut store = Store::in_memory(default_course(), StoreConfig::default()).map_err(|e| e.to_string())?;
    for (i, total) in [1_000u64, 1_200, 1_500, 1_800].into_iter().enumerate() {
        let s = format!("solver-{i}");
        let mut t = 0;
        while t < total {
            store.ingest_event(WorkEvent::new(&s, "w1-s1", t, EventKind::Run)).map_err(|e| e.to_string())?;
            t += 100;
        }
        let done = WorkEvent::new(&s, "w1-s1", total, EventKind::Submit).with_score(1.0);
        store.ingest_event(done).map_err(|e| e.to_string())?;
    }
    let r = "returner";
    for t in (0..=300).step_by(60) {
        store.ingest_event(WorkEvent::new(r, "w1-s1", t, EventKind::Run)).map_err(|e| e.to_string())?;
    }
    store.ingest_event(WorkEvent::new(r, "w1-s1", 5_000, EventKind::Run)).map_err(|e| e.to_string())?;
    let status = store.timer_status(&r.into(), &"w1-s1".into()).map_err(|e| e.to_string())?;
    ensure(status.target_seconds == 1_200, || format!("store returning target {}", status.target_seconds))?;

    // Attribution boundary.
    for (offset, want) in [(599, true), (600, false), (601, false)] {
        let mut record = InterventionRecord {
            id: 0,
            student: "s".into(),
            exercise: "e".into(),
            kind: DecisionKind::RfcPrompt,
            fired_at: 10_000,
            target_seconds: 600,
            session_active_seconds: 600,
            disposition: Disposition::Pending,
            attributed_action: None,
        };
        let action = FollowUpAction {
            kind: ActionKind::RfcSent,
            at: 10_000 + offset,
            duration_seconds: None,
        };
        let got = record.attribute_action(action, &policy).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("RFC {offset}s after the prompt: attributed = {got}"))?;
    }
    Ok(format!(
        "{} agent-days, {} decisions ({delivered} delivered), 0 violations; targets and window boundary hold",
        students * days,
        v.decisions
    ))
}

// 6. Recommender.
fn student_with(id: &str, bonus: BonusGroup) -> StudentState {
    StudentState::new(GroupAssignment {
        student: id.into(),
        intervention: InterventionGroup::Control,
        bonus,
    })
}

fn easiest<'a>(pool: impl Iterator<Item = &'a ExerciseSpec>) -> Option<&'a ExerciseId> {
    pool.min_by(|a, b| a.difficulty.cmp(&b.difficulty).then(a.id.cmp(&b.id)))
        .map(|e| &e.id)
}

fn recommender_suite() -> Check {
    let plan = default_course();
    let salt = "nudge";
    let mut walks = 0;
    // Exhaustive walks through every pool, for every group and several histories.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for week in 1..=plan.weeks() {
        let pool: BTreeSet<ExerciseId> = plan.bonus_pool(week).iter().map(|e| e.id.clone()).collect();
        for group in BonusGroup::ALL {
            for variant in 0..10 {
                let id = format!("walker-{week}-{variant}");
                let mut state = student_with(&id, group);
                let mut knowledge = StudentKnowledge::new(id.as_str().into());
                if variant > 0 {
                    for e in plan.exercises().iter().filter(|e| e.pool == Pool::Standard && e.week <= week) {
                        if rng.random_bool(0.7) {
                            state.touch(&e.id);
                            let score = *SCORES.choose(&mut rng).unwrap();
                            if score == 1.0 {
                                state.solved.insert(e.id.clone());
                            }
                            let access = state.accessed.clone();
                            let band = *BANDS.choose(&mut rng).unwrap();
                            knowledge.update_on_submission(
                                &e.id,
                                score,
                                band,
                                |x| access.iter().position(|a| a == x).unwrap_or(access.len()),
                                &plan,
                            );
                        }
                    }
                }
                let mut served = HashSet::new();
                loop {
                    let rec = recommend(week, &state, knowledge.history(), knowledge.vector(), &plan, salt)
                        .map_err(|e| e.to_string())?;
                    let Some(r) = rec.served() else { break };
                    ensure(served.insert(r.exercise.clone()), || format!("{} served twice", r.exercise))?;
                    ensure(!state.has_accessed(&r.exercise), || format!("{} already accessed", r.exercise))?;
                    state.touch(&r.exercise);
                    if rng.random_bool(0.5) {
                        state.solved.insert(r.exercise.clone());
                    }
                }
                let want = if group == BonusGroup::Dummy { 1 } else { pool.len() };
                ensure(served.len() == want, || format!("{group:?} week {week}: served {} of {want}", served.len()))?;
                walks += 1;
            }
        }
    }

    // Tailored picks maximize the benefit over the filtered pool.
    let mut maximized = 0;
    let mut fallbacks = 0;
    for case in 0..500 {
        let week = rng.random_range(1..=plan.weeks());
        let id = format!("tailored-{case}");
        let mut state = student_with(&id, BonusGroup::Tailored);
        let mut knowledge = StudentKnowledge::new(id.as_str().into());
        let mut entries: Vec<Entry> = Vec::new();
        let mut candidates: Vec<&ExerciseSpec> = plan
            .exercises()
            .iter()
            .filter(|e| e.week <= week && e.pool != Pool::Dummy)
            .collect();
        candidates.shuffle(&mut rng);
        candidates.truncate(rng.random_range(0..=12));
        for e in candidates {
            state.touch(&e.id);
            let score = *SCORES.choose(&mut rng).unwrap();
            let band = *BANDS.choose(&mut rng).unwrap();
            if score == 1.0 {
                state.solved.insert(e.id.clone());
            }
            let access = state.accessed.clone();
            knowledge.update_on_submission(&e.id, score, band, |x| access.iter().position(|a| a == x).unwrap(), &plan);
            entries.push(Entry {
                exercise: e.id.clone(),
                score,
                band,
                position: entries.len() + 1,
            });
        }
        // Oracle filters: unseen, every topic estimated, at most one level above the hardest solve.
        let covered: HashSet<&TopicId> = entries
            .iter()
            .flat_map(|e| plan.exercise(e.exercise.as_str()).unwrap().topics.iter().map(|t| &t.topic))
            .collect();
        let max_solved = state
            .solved
            .iter()
            .map(|e| plan.exercise(e.as_str()).unwrap().difficulty)
            .max()
            .unwrap_or(0);
        let pool = plan.bonus_pool(week);
        let eligible: Vec<&ExerciseSpec> = pool
            .iter()
            .copied()
            .filter(|e| !state.has_accessed(&e.id))
            .filter(|e| e.topics.iter().all(|t| covered.contains(&t.topic)))
            .filter(|e| e.difficulty <= max_solved + 1)
            .collect();
        let rec = recommend(week, &state, knowledge.history(), knowledge.vector(), &plan, salt)
            .map_err(|e| e.to_string())?;
        match rec {
            Recommendation::Served(r) if !r.fallback => {
                let best = eligible
                    .iter()
                    .map(|e| common::benefit(&entries, &e.id, &plan))
                    .fold(f64::NEG_INFINITY, f64::max);
                ensure(eligible.iter().any(|e| e.id == r.exercise), || {
                    format!("case {case}: {} not in the filtered set", r.exercise)
                })?;
                let got = common::benefit(&entries, &r.exercise, &plan);
                ensure(got >= best - 1e-12, || format!("case {case}: served benefit {got} < best {best}"))?;
                maximized += 1;
            }
            Recommendation::Served(r) => {
                ensure(eligible.is_empty(), || format!("case {case}: fallback with {} candidates", eligible.len()))?;
                let want = easiest(pool.iter().copied().filter(|e| !state.has_accessed(&e.id)));
                ensure(Some(&r.exercise) == want, || format!("case {case}: fallback {} vs {want:?}", r.exercise))?;
                fallbacks += 1;
            }
            Recommendation::Exhausted => {
                ensure(pool.iter().all(|e| state.has_accessed(&e.id)), || format!("case {case}: exhausted early"))?;
            }
        }
    }
    ensure(maximized >= 100 && fallbacks >= 10, || format!("{maximized} ranked, {fallbacks} fallbacks"))?;

    // New students get the easiest exercise of the pool.
    for week in 1..=plan.weeks() {
        let state = student_with("newcomer", BonusGroup::Tailored);
        let knowledge = StudentKnowledge::new("newcomer".into());
        let rec = recommend(week, &state, knowledge.history(), knowledge.vector(), &plan, salt)
            .map_err(|e| e.to_string())?;
        let want = easiest(plan.bonus_pool(week).into_iter());
        ensure(rec.served().map(|r| &r.exercise) == want, || format!("week {week}: new student got {rec:?}"))?;
    }
    Ok(format!(
        "{walks} pool walks without repeats; {maximized} ranked picks maximal, {fallbacks} fallbacks easiest"
    ))
}

// 7 and 8. Simulation harness and replay.
fn run_simulation(n: usize, seed: u64, responsiveness: f64) -> Result<(Store, Vec<AgentProfile>), String> {
    let config = CohortConfig {
        intervention_responsiveness: responsiveness,
        ..CohortConfig::default()
    };
    let cohort = generate_cohort(n, &config, seed).map_err(|e| e.to_string())?;
    let mut store = Store::in_memory(default_course(), StoreConfig::default()).map_err(|e| e.to_string())?;
    simulate(&mut store, &cohort, &SimulationConfig::default()).map_err(|e| e.to_string())?;
    Ok((store, cohort))
}

fn group_rates(store: &Store, group: InterventionGroup) -> Vec<f64> {
    let started = common::started(store.log());
    let counts = common::rfcs_per_student(store.log(), &started);
    counts
        .iter()
        .filter(|(s, _)| assign_groups(s, &store.config().salt).intervention == group)
        .map(|(_, &c)| c as f64)
        .collect()
}

fn harness(dir: &std::path::Path) -> Check {
    let seed = 2024;
    let started = Instant::now();
    let config = CohortConfig {
        intervention_responsiveness: 0.0,
        ..CohortConfig::default()
    };
    let cohort = generate_cohort(1_000, &config, seed).map_err(|e| e.to_string())?;
    let mut store = Store::create(dir, default_course(), StoreConfig::default()).map_err(|e| e.to_string())?;
    simulate(&mut store, &cohort, &SimulationConfig::default()).map_err(|e| e.to_string())?;
    store.checkpoint().map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("1000 agents took {elapsed:.2?}"))?;

    let mut shares = Vec::new();
    for group in InterventionGroup::ALL {
        let n = cohort
            .iter()
            .filter(|a| assign_groups(&a.student, &store.config().salt).intervention == group)
            .count();
        let share = n as f64 / cohort.len() as f64;
        ensure((share - group.share()).abs() <= 0.02, || format!("{group:?} share {share}"))?;
        shares.push(format!("{:.1}%", 100.0 * share));
    }

    let r = report(store.log(), &cohort, store.plan(), store.config()).map_err(|e| e.to_string())?;
    let json = serde_json::to_value(&r).map_err(|e| e.to_string())?;
    let columns = [
        "started",
        "finished",
        "dropout_rate",
        "dropout_rate_last_event",
        "score_all",
        "score_finishers",
        "rfcs_per_student",
        "rfcs_after_intervention",
        "mean_time_to_rfc_minutes",
        "mean_break_minutes",
    ];
    for g in json["groups"].as_array().ok_or("no groups")? {
        for c in columns {
            ensure(g.get(c).is_some(), || format!("report lacks {c}"))?;
        }
    }
    for g in &r.groups {
        ensure(g.finished <= g.started, || format!("{:?}: finished > started", g.group))?;
    }
    ensure(!r.rfcs_by_skill.is_empty() && !r.weakest_topics.is_empty(), || "missing per-skill tables".into())?;

    let v = common::check_decisions(store.log(), &store.config().policy);
    ensure(v.total() == 0, || format!("engine rules violated: {v:?}"))?;

    // Without a boost the two groups behave alike.
    let (rfc, control) = (
        group_rates(&store, InterventionGroup::Rfc),
        group_rates(&store, InterventionGroup::Control),
    );
    let ((m1, v1), (m0, v0)) = (common::mean_var(&rfc), common::mean_var(&control));
    let half_width = 2.576 * (v1 / rfc.len() as f64 + v0 / control.len() as f64).sqrt();
    ensure((m1 - m0).abs() <= half_width, || {
        format!("no-boost rates differ: rfc {m1:.3} vs control {m0:.3}, 99% half-width {half_width:.3}")
    })?;

    // With a boost for prompted students the RFC group asks more often.
    let mut wins = 0;
    for run in 0..100 {
        let (store, _) = run_simulation(1_000, 10_000 + run, 0.3)?;
        let rfc = common::mean_var(&group_rates(&store, InterventionGroup::Rfc)).0;
        let control = common::mean_var(&group_rates(&store, InterventionGroup::Control)).0;
        wins += usize::from(rfc > control);
    }
    ensure(wins >= 95, || format!("boosted RFC group ahead in only {wins} of 100 runs"))?;
    Ok(format!(
        "1000 agents in {elapsed:.2?}; groups {}; no boost {m1:.2} vs {m0:.2} RFCs/student (±{half_width:.2}); boosted ahead in {wins}/100",
        shares.join("/")
    ))
}

fn replay(dir: &std::path::Path) -> Check {
    let store = Store::open(dir).map_err(|e| e.to_string())?;
    let report = store.verify().map_err(|e| e.to_string())?;
    let decisions = store.log().iter().filter(|e| matches!(e, LogEntry::Decision(_))).count();
    ensure(decisions > 0, || "no decisions in the log".into())?;
    // The in-memory state after reopening equals the live snapshot file too.
    let live: Vec<String> = std::fs::read_to_string(dir.join(nudge_core::store::SNAPSHOT_FILE))
        .map_err(|e| e.to_string())?
        .lines()
        .map(String::from)
        .collect();
    ensure(store.snapshot_lines() == live, || "reopened state differs from the snapshot".into())?;
    Ok(format!(
        "{} log entries replayed, {} snapshot records identical",
        report.log_entries, report.snapshot_lines
    ))
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Duration, Box<dyn FnOnce() -> Check + '_>)> = vec![
        ("scoring table exactness", Duration::from_secs(1), Box::new(sigma_table)),
        ("knowledge score properties", Duration::from_secs(5), Box::new(theta_properties)),
        ("recency weight", Duration::from_secs(1), Box::new(phi_checks)),
        ("working-time oracle", Duration::from_secs(5), Box::new(working_time_oracle)),
        ("intervention rules", Duration::from_secs(10), Box::new(intervention_suite)),
        ("recommender", Duration::from_secs(5), Box::new(recommender_suite)),
        ("simulation harness", Duration::from_secs(600), Box::new(|| harness(dir.path()))),
        ("event-sourcing replay", Duration::from_secs(10), Box::new(|| replay(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let result = check();
        let elapsed = started.elapsed();
        let result = match result {
            Ok(detail) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?} ({detail})")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS [{}] {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name} ({elapsed:.2?}): {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
