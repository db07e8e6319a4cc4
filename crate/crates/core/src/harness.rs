//! Kinematic 2D tabletop simulator for the plan-once, follow-many contract.
//!
//! An oracle planner produces a [`Path2D`] once per episode. A low-level
//! controller then pursues its waypoints at a fixed step per tick, applying
//! the gripper state of each waypoint on capture. Scoring replays the step
//! log through the same sub-action tracker the simulator uses to decide
//! completion, so a log is always self-consistent with its score.
//!
//! Coordinates live in the unit square with the image convention: `y`
//! grows downwards, so "above" means a smaller `y`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::{self, Path2D, PathError, PathPoint};

/// Distance moved per tick, normalized units.
pub const STEP_SIZE: f64 = 0.02;
/// Distance at which a waypoint counts as reached.
pub const CAPTURE_RADIUS: f64 = 0.03;
/// Episode length cap.
pub const MAX_TICKS: usize = 500;
/// Offset from a button to the hover point above it.
pub const HOVER_OFFSET: f64 = 0.08;
/// Credit zone around the hover point.
pub const HOVER_RADIUS: f64 = 2.0 * CAPTURE_RADIUS;
/// Stand-off distance before a knock-down target.
pub const APPROACH_DISTANCE: f64 = 0.12;
/// Distance travelled past a knock-down target's centre.
pub const FOLLOW_THROUGH: f64 = 0.08;
/// A knock-down target falls once the gripper gets this fraction of its
/// radius from the centre.
pub const KNOCK_FRACTION: f64 = 0.5;
/// Per-tick gripper toggle probability of the random baseline.
pub const RANDOM_TOGGLE_PROBABILITY: f64 = 0.1;

const OBJECT_RADIUS: f64 = 0.05;
const CONTAINER_RADIUS: f64 = 0.1;
const BUTTON_RADIUS: f64 = 0.04;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("episode count must be at least 1")]
    NoEpisodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Object,
    Container,
    Button,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: String,
    pub kind: ObjectKind,
    pub position: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub position: [f64; 2],
    pub open: bool,
    pub held: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub objects: Vec<WorldObject>,
    pub gripper: Gripper,
}

fn in_unit_square(p: [f64; 2]) -> bool {
    p.iter().all(|v| (0.0..=1.0).contains(v))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl World {
    pub fn validate(&self) -> Result<(), HarnessError> {
        for o in &self.objects {
            if !in_unit_square(o.position) {
                return Err(HarnessError::InvalidWorld(format!("object {} outside the unit square", o.id)));
            }
            if !(o.radius > 0.0) || !o.radius.is_finite() {
                return Err(HarnessError::InvalidWorld(format!("object {} has non-positive radius", o.id)));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if self.objects[..i].iter().any(|p| p.id == o.id) {
                return Err(HarnessError::InvalidWorld(format!("duplicate object id {}", o.id)));
            }
        }
        if !in_unit_square(self.gripper.position) {
            return Err(HarnessError::InvalidWorld("gripper outside the unit square".into()));
        }
        if let Some(h) = &self.gripper.held {
            if self.gripper.open {
                return Err(HarnessError::InvalidWorld("held object with an open gripper".into()));
            }
            if self.object(h).is_none() {
                return Err(HarnessError::InvalidWorld(format!("held object {h} does not exist")));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PickPlace,
    PressButton,
    KnockDown,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::PickPlace, TaskKind::PressButton, TaskKind::KnockDown];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub kind: TaskKind,
    pub subject: String,
    #[serde(default)]
    pub target: Option<String>,
    pub instruction: String,
}

impl Task {
    pub fn validate(&self, world: &World) -> Result<(), HarnessError> {
        let subject = world
            .object(&self.subject)
            .ok_or_else(|| HarnessError::InvalidTask(format!("unknown subject {}", self.subject)))?;
        let want = match self.kind {
            TaskKind::PickPlace | TaskKind::KnockDown => ObjectKind::Object,
            TaskKind::PressButton => ObjectKind::Button,
        };
        if subject.kind != want {
            return Err(HarnessError::InvalidTask(format!("subject {} is a {:?}", subject.id, subject.kind)));
        }
        match (self.kind, &self.target) {
            (TaskKind::PickPlace, Some(t)) => {
                let target = world.object(t).ok_or_else(|| HarnessError::InvalidTask(format!("unknown target {t}")))?;
                if target.kind != ObjectKind::Container {
                    return Err(HarnessError::InvalidTask(format!("target {t} is not a container")));
                }
            }
            (TaskKind::PickPlace, None) => return Err(HarnessError::InvalidTask("pick-place needs a target".into())),
            (_, Some(_)) => return Err(HarnessError::InvalidTask("only pick-place takes a target".into())),
            (_, None) => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Follower,
    Random,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Follower => "follower",
            Policy::Random => "random",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "follower" => Ok(Policy::Follower),
            "random" => Ok(Policy::Random),
            other => Err(format!("unknown policy {other:?} (expected follower or random)")),
        }
    }
}

/// Waypoint path for `task`, using exact scene positions.
pub fn oracle_plan(world: &World, task: &Task) -> Result<Path2D, HarnessError> {
    world.validate()?;
    task.validate(world)?;
    let start = world.gripper.position;
    let subject = world.object(&task.subject).expect("validated").position;
    let pts = match task.kind {
        TaskKind::PickPlace => {
            let target = world.object(task.target.as_deref().expect("validated")).expect("validated").position;
            vec![(start, true), (subject, false), (target, true)]
        }
        TaskKind::PressButton => {
            let hover = [subject[0], (subject[1] - HOVER_OFFSET).max(0.0)];
            vec![(start, world.gripper.open), (hover, false), (subject, false)]
        }
        TaskKind::KnockDown => {
            let d = dist(subject, start);
            let dir = if d > 1e-9 { [(subject[0] - start[0]) / d, (subject[1] - start[1]) / d] } else { [1.0, 0.0] };
            let at = |s: f64| [(subject[0] + dir[0] * s).clamp(0.0, 1.0), (subject[1] + dir[1] * s).clamp(0.0, 1.0)];
            vec![(start, world.gripper.open), (at(-APPROACH_DISTANCE), false), (at(FOLLOW_THROUGH), false)]
        }
    };
    Ok(Path2D::new(pts.into_iter().map(|(p, open)| PathPoint::new(p[0], p[1], open)).collect())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tick: usize,
    pub position: [f64; 2],
    pub open: bool,
    pub held: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubAction {
    Reach,
    Grasp,
    Transport,
    Release,
    Touch,
    Knock,
    Hover,
    Press,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEvent {
    pub tick: usize,
    pub action: SubAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub world: World,
    pub task: Task,
    pub policy: Policy,
    pub noise_sigma: f64,
    pub seed: u64,
    pub planner_calls: u32,
    pub plan: Path2D,
    /// Initial state at tick 0 followed by one record per tick.
    pub steps: Vec<StepRecord>,
    pub events: Vec<EpisodeEvent>,
    pub completed: bool,
}

impl EpisodeLog {
    pub fn ticks(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }
}

/// Ordered sub-action credit. Each credit is only considered once all
/// earlier ones are earned, which keeps scores monotone.
#[derive(Debug, Clone)]
struct Tracker<'a> {
    world: &'a World,
    task: &'a Task,
    earned: Vec<SubAction>,
    prev: Option<StepRecord>,
}

impl<'a> Tracker<'a> {
    fn new(world: &'a World, task: &'a Task) -> Self {
        Self { world, task, earned: Vec::new(), prev: None }
    }

    fn sequence(&self) -> &'static [SubAction] {
        match self.task.kind {
            TaskKind::PickPlace => &[SubAction::Reach, SubAction::Grasp, SubAction::Transport, SubAction::Release],
            TaskKind::KnockDown => &[SubAction::Touch, SubAction::Knock],
            TaskKind::PressButton => &[SubAction::Hover, SubAction::Press],
        }
    }

    fn complete(&self) -> bool {
        self.earned.len() == self.sequence().len()
    }

    fn score(&self) -> f64 {
        self.earned.len() as f64 / self.sequence().len() as f64
    }

    fn satisfied(&self, action: SubAction, s: &StepRecord) -> bool {
        let subject = self.world.object(&self.task.subject).expect("validated");
        let target = || self.world.object(self.task.target.as_deref().expect("validated")).expect("validated");
        let holds_subject = s.held.as_deref() == Some(subject.id.as_str());
        match action {
            SubAction::Reach | SubAction::Touch => dist(s.position, subject.position) <= subject.radius,
            SubAction::Grasp => holds_subject,
            SubAction::Transport => holds_subject && dist(s.position, target().position) <= target().radius,
            SubAction::Release => {
                let released = self.prev.as_ref().is_some_and(|p| p.held.as_deref() == Some(subject.id.as_str()))
                    && s.held.is_none();
                released && dist(s.position, target().position) <= target().radius
            }
            SubAction::Knock => dist(s.position, subject.position) <= KNOCK_FRACTION * subject.radius,
            SubAction::Hover => {
                let hover = [subject.position[0], (subject.position[1] - HOVER_OFFSET).max(0.0)];
                dist(s.position, hover) <= HOVER_RADIUS
            }
            SubAction::Press => !s.open && dist(s.position, subject.position) <= subject.radius,
        }
    }

    /// Feeds one step and returns the credits it earned.
    fn observe(&mut self, s: &StepRecord) -> Vec<SubAction> {
        let mut new = Vec::new();
        while let Some(&next) = self.sequence().get(self.earned.len()) {
            if !self.satisfied(next, s) {
                break;
            }
            self.earned.push(next);
            new.push(next);
        }
        self.prev = Some(s.clone());
        new
    }
}

/// Sub-action score of a finished episode: a multiple of 0.25 in `[0, 1]`.
pub fn success_score(log: &EpisodeLog, task: &Task) -> f64 {
    let mut tracker = Tracker::new(&log.world, task);
    for s in &log.steps {
        tracker.observe(s);
        if tracker.complete() {
            break;
        }
    }
    tracker.score()
}

struct Sim {
    objects: Vec<WorldObject>,
    position: [f64; 2],
    open: bool,
    held: Option<usize>,
}

impl Sim {
    fn new(world: &World) -> Self {
        let held = world.gripper.held.as_ref().and_then(|h| world.objects.iter().position(|o| &o.id == h));
        Self { objects: world.objects.clone(), position: world.gripper.position, open: world.gripper.open, held }
    }

    fn move_toward(&mut self, goal: [f64; 2]) {
        let d = dist(self.position, goal);
        if d <= STEP_SIZE {
            self.position = goal;
        } else {
            let s = STEP_SIZE / d;
            self.position = [
                self.position[0] + (goal[0] - self.position[0]) * s,
                self.position[1] + (goal[1] - self.position[1]) * s,
            ];
        }
        self.carry();
    }

    fn carry(&mut self) {
        if let Some(h) = self.held {
            self.objects[h].position = self.position;
        }
    }

    fn set_open(&mut self, open: bool) {
        if open == self.open {
            return;
        }
        self.open = open;
        if open {
            self.held = None;
        } else {
            let pos = self.position;
            self.held = self
                .objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.kind == ObjectKind::Object && dist(pos, o.position) <= o.radius)
                .min_by(|(_, a), (_, b)| dist(pos, a.position).total_cmp(&dist(pos, b.position)))
                .map(|(i, _)| i);
            self.carry();
        }
    }

    fn record(&self, tick: usize) -> StepRecord {
        StepRecord {
            tick,
            position: self.position,
            open: self.open,
            held: self.held.map(|h| self.objects[h].id.clone()),
        }
    }
}

fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Runs one episode. The planner is called exactly once, before the first
/// tick, and its output is perturbed with `N(0, noise_sigma)` noise.
pub fn run_episode(
    world: &World,
    task: &Task,
    policy: Policy,
    noise_sigma: f64,
    seed: u64,
) -> Result<EpisodeLog, HarnessError> {
    let mut planner_calls = 0;
    let plan = {
        planner_calls += 1;
        oracle_plan(world, task)?
    };
    let plan = path::add_noise(&plan, noise_sigma, noise_seed(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sim = Sim::new(world);
    let mut tracker = Tracker::new(world, task);
    let mut steps = vec![sim.record(0)];
    let mut events: Vec<EpisodeEvent> = tracker.observe(&steps[0]).into_iter().map(|a| EpisodeEvent { tick: 0, action: a }).collect();
    let mut waypoint = 0;
    for tick in 1..=MAX_TICKS {
        if tracker.complete() {
            break;
        }
        match policy {
            Policy::Follower => {
                if let Some(w) = plan.points().get(waypoint) {
                    sim.move_toward([w.x, w.y]);
                    if dist(sim.position, [w.x, w.y]) <= CAPTURE_RADIUS {
                        sim.set_open(w.gripper_open);
                        waypoint += 1;
                    }
                }
            }
            Policy::Random => {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let goal = [
                    (sim.position[0] + STEP_SIZE * angle.cos()).clamp(0.0, 1.0),
                    (sim.position[1] + STEP_SIZE * angle.sin()).clamp(0.0, 1.0),
                ];
                sim.move_toward(goal);
                if rng.random_bool(RANDOM_TOGGLE_PROBABILITY) {
                    sim.set_open(!sim.open);
                }
            }
        }
        let rec = sim.record(tick);
        events.extend(tracker.observe(&rec).into_iter().map(|a| EpisodeEvent { tick, action: a }));
        steps.push(rec);
    }
    Ok(EpisodeLog {
        world: world.clone(),
        task: task.clone(),
        policy,
        noise_sigma,
        seed,
        planner_calls,
        plan,
        steps,
        events,
        completed: tracker.complete(),
    })
}

fn sample_position(rng: &mut ChaCha8Rng, placed: &[[f64; 2]], min_sep: f64) -> [f64; 2] {
    loop {
        let p = [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)];
        if placed.iter().all(|q| dist(p, *q) >= min_sep) {
            return p;
        }
    }
}

/// Procedurally generated scene and task. Each world holds the task's
/// subject (and target), one or two distractors, and a gripper starting
/// open away from every object.
pub fn generate_episode(seed: u64) -> (World, Task) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = TaskKind::ALL[rng.random_range(0..TaskKind::ALL.len())];
    let mut placed = Vec::new();
    let mut objects = Vec::new();
    let mut add = |rng: &mut ChaCha8Rng, id: &str, kind: ObjectKind, radius: f64, placed: &mut Vec<[f64; 2]>| {
        let p = sample_position(rng, placed, 0.25);
        placed.push(p);
        objects.push(WorldObject { id: id.into(), kind, position: p, radius });
    };
    let (subject, target, instruction) = match kind {
        TaskKind::PickPlace => {
            add(&mut rng, "block", ObjectKind::Object, OBJECT_RADIUS, &mut placed);
            add(&mut rng, "bowl", ObjectKind::Container, CONTAINER_RADIUS, &mut placed);
            add(&mut rng, "cup", ObjectKind::Object, OBJECT_RADIUS, &mut placed);
            ("block", Some("bowl".to_string()), "put the block in the bowl")
        }
        TaskKind::PressButton => {
            add(&mut rng, "red_button", ObjectKind::Button, BUTTON_RADIUS, &mut placed);
            add(&mut rng, "blue_button", ObjectKind::Button, BUTTON_RADIUS, &mut placed);
            ("red_button", None, "press the red button")
        }
        TaskKind::KnockDown => {
            add(&mut rng, "bottle", ObjectKind::Object, OBJECT_RADIUS, &mut placed);
            add(&mut rng, "can", ObjectKind::Object, OBJECT_RADIUS, &mut placed);
            ("bottle", None, "knock down the bottle")
        }
    };
    let start = loop {
        let p = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
        if placed.iter().all(|q| dist(p, *q) >= 0.2) {
            break p;
        }
    };
    let world = World { objects, gripper: Gripper { position: start, open: true, held: None } };
    let task = Task { kind, subject: subject.into(), target, instruction: instruction.into() };
    (world, task)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub index: usize,
    pub seed: u64,
    pub task: TaskKind,
    pub score: f64,
    pub completed: bool,
    pub ticks: usize,
    pub planner_calls: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: Policy,
    pub episodes: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub mean_score: f64,
    pub completion_rate: f64,
    pub scores: Vec<EpisodeSummary>,
}

/// Per-episode seeds for a batch. They depend only on `seed`, so batches
/// with different noise levels or policies share worlds.
pub fn episode_seeds(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

pub fn run_eval(n_episodes: usize, policy: Policy, noise_sigma: f64, seed: u64) -> Result<EvalReport, HarnessError> {
    if n_episodes == 0 {
        return Err(HarnessError::NoEpisodes);
    }
    let scores = episode_seeds(n_episodes, seed)
        .into_par_iter()
        .enumerate()
        .map(|(index, s)| {
            let (world, task) = generate_episode(s);
            let log = run_episode(&world, &task, policy, noise_sigma, s)?;
            Ok(EpisodeSummary {
                index,
                seed: s,
                task: task.kind,
                score: success_score(&log, &task),
                completed: log.completed,
                ticks: log.ticks(),
                planner_calls: log.planner_calls,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let n = scores.len() as f64;
    Ok(EvalReport {
        policy,
        episodes: n_episodes,
        noise_sigma,
        seed,
        mean_score: scores.iter().map(|s| s.score).sum::<f64>() / n,
        completion_rate: scores.iter().filter(|s| s.completed).count() as f64 / n,
        scores,
    })
}
