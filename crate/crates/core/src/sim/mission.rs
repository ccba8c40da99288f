//! Event-driven mission execution.
//!
//! Robots leave the origin, visit their POIs in ascending index order, dwell
//! [`CAPTURE_SECONDS`] at each, and return home at base speed. Co-controlled
//! phases and remote classifications are jobs served FIFO by single-server
//! operators; a robot waiting for its operator stays put.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::context::{Difficulty, ImageQuality, MultiAttributeContext};
use crate::decision::{AllocationDecision, Classifier, Control};
use crate::error::Result;
use crate::rng::counter_f64;
use crate::sim::human::human_classification_prob;
use crate::sim::robot::{effective_speed_and_quality, min_task_duration, robot_classification_prob};

pub const CAPTURE_SECONDS: f64 = 10.0;
/// Trailing window over which operator utilization is measured.
pub const UTILIZATION_WINDOW: f64 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScoringMode {
    /// Each classification is a Bernoulli draw scored ±points.
    Stochastic,
    /// Each classification is scored at its expectation (2P − 1)·points.
    Expected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub poi: usize,
    pub difficulty: Difficulty,
    pub robot: usize,
    pub classifier: Classifier,
    pub quality: ImageQuality,
    pub p_success: f64,
    /// `None` in expected mode.
    pub correct: Option<bool>,
    pub points: f64,
    pub t_complete: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionOutcome {
    pub records: Vec<PoiRecord>,
    pub total_score: f64,
    pub mean_poi_score: f64,
    pub mission_duration: f64,
}

impl MissionOutcome {
    pub const CSV_HEADER: &'static str = "poi_id,difficulty,classifier,quality,p_success,correct,points,t_complete";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let classifier = match r.classifier {
                Classifier::Onboard => "onboard".to_string(),
                Classifier::Human(h) => format!("human{h}"),
            };
            let correct = r.correct.map_or("", |c| if c { "true" } else { "false" });
            let _ = writeln!(
                s,
                "{},{:?},{},{:?},{:?},{},{:?},{:?}",
                r.poi, r.difficulty, classifier, r.quality, r.p_success, correct, r.points, r.t_complete
            );
        }
        s
    }
}

pub fn mission_reward(outcome: &MissionOutcome) -> f64 {
    outcome.total_score
}

/// Runs one mission with mission id 0.
pub fn simulate_mission(
    ctx: &MultiAttributeContext,
    decision: &AllocationDecision,
    seed: u64,
    mode: ScoringMode,
) -> Result<MissionOutcome> {
    MissionSimulator::new().run(ctx, decision, seed, 0, mode)
}

pub fn simulate_mission_with_id(
    ctx: &MultiAttributeContext,
    decision: &AllocationDecision,
    seed: u64,
    mission_id: u64,
    mode: ScoringMode,
) -> Result<MissionOutcome> {
    MissionSimulator::new().run(ctx, decision, seed, mission_id, mode)
}

#[derive(Clone, Copy, Debug)]
enum Job {
    Travel { robot: usize, duration: f64 },
    Capture { robot: usize },
    Classify { poi: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Travel,
    Capture,
    AfterCapture,
    Return,
    Done,
}

#[derive(Clone, Copy, Debug)]
enum Actor {
    Robot(usize),
    Human(usize),
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    actor: Actor,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so that the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct Operator {
    queue: VecDeque<Job>,
    current: Option<Job>,
    busy_until: f64,
    work_start: Option<f64>,
    intervals: Vec<(f64, f64)>,
}

impl Operator {
    fn reset(&mut self) {
        self.queue.clear();
        self.current = None;
        self.busy_until = 0.0;
        self.work_start = None;
        self.intervals.clear();
    }

    /// Busy fraction of the window ending at `now`; the operator is idle at `now`.
    fn utilization(&self, now: f64) -> f64 {
        let from = now - UTILIZATION_WINDOW;
        let mut busy = 0.0;
        for &(b, e) in self.intervals.iter().rev() {
            if e <= from {
                break;
            }
            busy += e.min(now) - b.max(from);
        }
        (busy / UTILIZATION_WINDOW).clamp(0.0, 1.0)
    }
}

struct Rover {
    pos: [f64; 2],
    next: usize,
    step: Step,
    finish: f64,
}

/// Reusable buffers for running many missions without reallocating.
#[derive(Default)]
pub struct MissionSimulator {
    itineraries: Vec<Vec<usize>>,
    rovers: Vec<Rover>,
    operators: Vec<Operator>,
    events: BinaryHeap<Event>,
    seq: u64,
    quality: Vec<ImageQuality>,
    p_success: Vec<f64>,
    t_complete: Vec<f64>,
}

impl MissionSimulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn run(
        &mut self,
        ctx: &MultiAttributeContext,
        decision: &AllocationDecision,
        seed: u64,
        mission_id: u64,
        mode: ScoringMode,
    ) -> Result<MissionOutcome> {
        let duration = self.execute(ctx, decision)?;
        let mut records = Vec::with_capacity(ctx.j());
        let mut total = 0.0;
        for (p, task) in ctx.tasks.iter().enumerate() {
            let (points, correct) = self.score_poi(p, task.difficulty, seed, mission_id, mode);
            total += points;
            records.push(PoiRecord {
                poi: p,
                difficulty: task.difficulty,
                robot: decision.poi_to_robot[p],
                classifier: decision.classify[p],
                quality: self.quality[p],
                p_success: self.p_success[p],
                correct,
                points,
                t_complete: self.t_complete[p],
            });
        }
        Ok(MissionOutcome {
            records,
            total_score: total,
            mean_poi_score: mean_over(total, ctx.j()),
            mission_duration: duration,
        })
    }

    /// Total score only; identical to `run(..).total_score`.
    pub fn total_score(
        &mut self,
        ctx: &MultiAttributeContext,
        decision: &AllocationDecision,
        seed: u64,
        mission_id: u64,
        mode: ScoringMode,
    ) -> Result<f64> {
        self.execute(ctx, decision)?;
        Ok(ctx
            .tasks
            .iter()
            .enumerate()
            .map(|(p, t)| self.score_poi(p, t.difficulty, seed, mission_id, mode).0)
            .sum())
    }

    fn score_poi(
        &self,
        p: usize,
        difficulty: Difficulty,
        seed: u64,
        mission_id: u64,
        mode: ScoringMode,
    ) -> (f64, Option<bool>) {
        let pts = difficulty.points();
        let prob = self.p_success[p];
        match mode {
            ScoringMode::Expected => ((2.0 * prob - 1.0) * pts, None),
            ScoringMode::Stochastic => {
                let correct = counter_f64(seed, mission_id, p as u64) < prob;
                (if correct { pts } else { -pts }, Some(correct))
            }
        }
    }

    fn schedule(&mut self, time: f64, actor: Actor) {
        self.seq += 1;
        self.events.push(Event {
            time,
            seq: self.seq,
            actor,
        });
    }

    /// Runs the event loop, filling per-POI quality, success probability and
    /// completion time. Returns the mission duration.
    fn execute(&mut self, ctx: &MultiAttributeContext, decision: &AllocationDecision) -> Result<f64> {
        let (k, i, j) = (ctx.k(), ctx.i(), ctx.j());
        decision.validate(k, i, j)?;
        self.itineraries.resize_with(i, Vec::new);
        self.itineraries.iter_mut().for_each(Vec::clear);
        for (p, &r) in decision.poi_to_robot.iter().enumerate() {
            self.itineraries[r].push(p);
        }
        self.rovers.clear();
        self.rovers.extend((0..i).map(|_| Rover {
            pos: [0.0, 0.0],
            next: 0,
            step: Step::Travel,
            finish: 0.0,
        }));
        self.operators.resize_with(k, Operator::default);
        self.operators.iter_mut().for_each(Operator::reset);
        self.events.clear();
        self.seq = 0;
        self.quality.clear();
        self.quality.resize(j, ImageQuality::Low);
        self.p_success.clear();
        self.p_success.resize(j, 0.0);
        self.t_complete.clear();
        self.t_complete.resize(j, 0.0);

        for r in 0..i {
            if !self.itineraries[r].is_empty() {
                self.schedule(0.0, Actor::Robot(r));
            }
        }
        while let Some(ev) = self.events.pop() {
            match ev.actor {
                Actor::Robot(r) => self.advance_robot(ctx, decision, r, ev.time)?,
                Actor::Human(h) => self.finish_job(ctx, h, ev.time)?,
            }
        }
        let robots = self.rovers.iter().map(|r| r.finish).fold(0.0, f64::max);
        let humans = self.operators.iter().map(|o| o.busy_until).fold(0.0, f64::max);
        Ok(robots.max(humans))
    }

    fn advance_robot(
        &mut self,
        ctx: &MultiAttributeContext,
        decision: &AllocationDecision,
        r: usize,
        now: f64,
    ) -> Result<()> {
        let robot = &ctx.robots[r];
        loop {
            let rover = &mut self.rovers[r];
            let poi = self.itineraries[r].get(rover.next).copied();
            match rover.step {
                Step::Travel => {
                    let Some(p) = poi else {
                        rover.step = Step::Return;
                        continue;
                    };
                    let target = ctx.tasks[p].position;
                    let dist = distance(rover.pos, target);
                    rover.pos = target;
                    rover.step = Step::Capture;
                    let control = decision.nav_control[p];
                    let skill = control.operator().map(|h| ctx.humans[h].skill_tier());
                    let duration = dist / effective_speed_and_quality(robot, skill).0;
                    match control {
                        Control::Auto => self.schedule(now + duration, Actor::Robot(r)),
                        Control::CoControl(h) => {
                            self.enqueue(ctx, h, Job::Travel { robot: r, duration }, now)?
                        }
                    }
                    return Ok(());
                }
                Step::Capture => {
                    let p = poi.expect("capture without a POI");
                    rover.step = Step::AfterCapture;
                    let control = decision.capture_control[p];
                    let skill = control.operator().map(|h| ctx.humans[h].skill_tier());
                    self.quality[p] = effective_speed_and_quality(robot, skill).1;
                    match control {
                        Control::Auto => self.schedule(now + CAPTURE_SECONDS, Actor::Robot(r)),
                        Control::CoControl(h) => self.enqueue(ctx, h, Job::Capture { robot: r }, now)?,
                    }
                    return Ok(());
                }
                Step::AfterCapture => {
                    let p = poi.expect("classification without a POI");
                    rover.next += 1;
                    rover.step = Step::Travel;
                    match decision.classify[p] {
                        Classifier::Onboard => {
                            self.p_success[p] = robot_classification_prob(self.quality[p], ctx.tasks[p].difficulty);
                            self.t_complete[p] = now;
                        }
                        Classifier::Human(h) => self.enqueue(ctx, h, Job::Classify { poi: p }, now)?,
                    }
                }
                Step::Return => {
                    rover.finish = now + distance(rover.pos, [0.0, 0.0]) / robot.base_speed;
                    rover.pos = [0.0, 0.0];
                    rover.step = Step::Done;
                    return Ok(());
                }
                Step::Done => return Ok(()),
            }
        }
    }

    fn enqueue(&mut self, ctx: &MultiAttributeContext, h: usize, job: Job, now: f64) -> Result<()> {
        let op = &mut self.operators[h];
        if op.current.is_none() && op.queue.is_empty() {
            self.start_job(ctx, h, job, now)
        } else {
            op.queue.push_back(job);
            Ok(())
        }
    }

    fn start_job(&mut self, ctx: &MultiAttributeContext, h: usize, job: Job, now: f64) -> Result<()> {
        let op = &mut self.operators[h];
        let work_start = *op.work_start.get_or_insert(now);
        let duration = match job {
            Job::Travel { duration, .. } => duration,
            Job::Capture { .. } => CAPTURE_SECONDS,
            Job::Classify { poi } => {
                let t_bar = min_task_duration(self.quality[poi], ctx.tasks[poi].difficulty);
                let t_hat = (now - work_start) / 3600.0;
                let u = op.utilization(now);
                self.p_success[poi] = human_classification_prob(&ctx.humans[h], t_hat, u, t_bar)?;
                t_bar
            }
        };
        op.intervals.push((now, now + duration));
        op.busy_until = now + duration;
        op.current = Some(job);
        self.schedule(now + duration, Actor::Human(h));
        Ok(())
    }

    fn finish_job(&mut self, ctx: &MultiAttributeContext, h: usize, now: f64) -> Result<()> {
        let op = &mut self.operators[h];
        let done = op.current.take().expect("operator finished without a job");
        if let Some(next) = op.queue.pop_front() {
            self.start_job(ctx, h, next, now)?;
        }
        match done {
            Job::Travel { robot, .. } | Job::Capture { robot } => self.schedule(now, Actor::Robot(robot)),
            Job::Classify { poi } => self.t_complete[poi] = now,
        }
        Ok(())
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn mean_over(total: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}
