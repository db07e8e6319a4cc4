//! Ranking sessions for human evaluation of candidate paths.
//!
//! Raters see the candidates of an item in a per-rater shuffled order under
//! opaque slot labels (`A`, `B`, ...), rank them from 1 (best) to K with ties
//! allowed, and the session aggregates mean ranks per hidden method id.
//!
//! Every state change is appended to a JSON Lines event log before it
//! becomes visible, so replaying the log reproduces the session. Writes are
//! serialized per session; readers take a snapshot and never wait on I/O.

pub mod http;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::path::Path2D;
use crate::render::{self, Image, OverlayStyle, RenderError};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown rater {0}")]
    UnknownRater(String),
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("missing ranks for {0:?}")]
    IncompleteRanks(Vec<String>),
    #[error("rank {rank} for {candidate} outside [1, {k}]")]
    OutOfRange { candidate: String, rank: u32, k: usize },
    #[error("item {item} already ranked differently by {rater}")]
    Conflict { item: String, rater: String },
    #[error("no rank records match")]
    NoData,
    #[error("session already exists: {0}")]
    Duplicate(String),
    #[error("invalid session: {0}")]
    Invalid(String),
    #[error("corrupt event log {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error(transparent)]
    Render(#[from] RenderError),
}

impl RankError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            RankError::UnknownSession(_) => "unknown_session",
            RankError::UnknownRater(_) => "unknown_rater",
            RankError::UnknownItem(_) => "unknown_item",
            RankError::UnknownCandidate(_) => "unknown_candidate",
            RankError::IncompleteRanks(_) => "incomplete_ranks",
            RankError::OutOfRange { .. } => "out_of_range",
            RankError::Conflict { .. } => "conflict",
            RankError::NoData => "no_data",
            RankError::Duplicate(_) => "duplicate_session",
            RankError::Invalid(_) => "invalid_session",
            RankError::Corrupt { .. } => "corrupt_log",
            RankError::Io(..) => "io",
            RankError::Render(_) => "render",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub method: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingItem {
    pub id: String,
    pub image_ref: String,
    pub candidates: Vec<Candidate>,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub items: Vec<RankingItem>,
    /// Allowed rater ids; `None` accepts any non-empty id.
    #[serde(default)]
    pub raters: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
}

impl SessionSpec {
    pub fn validate(&self) -> Result<(), RankError> {
        if self.items.is_empty() {
            return Err(RankError::Invalid("no items".into()));
        }
        for (i, item) in self.items.iter().enumerate() {
            if self.items[..i].iter().any(|o| o.id == item.id) {
                return Err(RankError::Invalid(format!("duplicate item id {}", item.id)));
            }
            if item.candidates.len() < 2 {
                return Err(RankError::Invalid(format!("item {} needs at least 2 candidates", item.id)));
            }
            if item.candidates.len() > 26 {
                return Err(RankError::Invalid(format!("item {} has more than 26 candidates", item.id)));
            }
            for (j, c) in item.candidates.iter().enumerate() {
                if item.candidates[..j].iter().any(|o| o.method == c.method) {
                    return Err(RankError::Invalid(format!("item {} repeats method {}", item.id, c.method)));
                }
            }
        }
        if let Some(id) = &self.id {
            check_session_id(id)?;
        }
        Ok(())
    }
}

fn check_session_id(id: &str) -> Result<(), RankError> {
    let ok = !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(RankError::Invalid(format!("session id {id:?} must be 1-64 of [A-Za-z0-9_-]")))
    }
}

/// Display label of slot `i`.
pub fn slot_label(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentedCandidate {
    pub slot: String,
    pub image_ref: String,
}

/// An item as shown to one rater. Method ids are withheld.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    pub index: usize,
    pub item: String,
    pub image_ref: String,
    pub candidates: Vec<PresentedCandidate>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item(Presentation),
    Done,
}

/// Ranks keyed by slot label as presented.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSubmission {
    pub rater: String,
    pub item: String,
    pub ranks: BTreeMap<String, u32>,
}

/// A stored record: ranks keyed by method id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub item: String,
    pub rater: String,
    pub ranks: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tag: Option<String>,
    pub records: usize,
    pub mean_ranks: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Created { id: String, spec: SessionSpec },
    Presented { rater: String, item: usize, permutation: Vec<usize> },
    Ranked { rater: String, item: usize, ranks: BTreeMap<String, u32> },
}

#[derive(Debug, Clone, Default)]
struct State {
    permutations: HashMap<(String, usize), Vec<usize>>,
    records: BTreeMap<(usize, String), BTreeMap<String, u32>>,
    /// Submission order, for listing.
    order: Vec<(usize, String)>,
}

impl State {
    fn apply(&mut self, e: &Event) {
        match e {
            Event::Created { .. } => {}
            Event::Presented { rater, item, permutation } => {
                self.permutations.insert((rater.clone(), *item), permutation.clone());
            }
            Event::Ranked { rater, item, ranks } => {
                if self.records.insert((*item, rater.clone()), ranks.clone()).is_none() {
                    self.order.push((*item, rater.clone()));
                }
            }
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Display order of `k` candidates for one rater and item. Slot `s` shows
/// candidate `permutation[s]`.
pub fn permutation(seed: u64, rater: &str, item: usize, k: usize) -> Vec<usize> {
    let mut key = rater.as_bytes().to_vec();
    key.push(0);
    key.extend_from_slice(&(item as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&key));
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(&mut rng);
    p
}

struct LogWriter {
    path: Option<PathBuf>,
    file: Option<File>,
}

impl LogWriter {
    fn append(&mut self, e: &Event) -> Result<(), RankError> {
        if let (Some(path), Some(file)) = (&self.path, &mut self.file) {
            let mut line = serde_json::to_vec(e).expect("events serialize");
            line.push(b'\n');
            file.write_all(&line).and_then(|_| file.flush()).map_err(|err| RankError::Io(path.clone(), err))?;
        }
        Ok(())
    }
}

/// One ranking session.
pub struct Session {
    id: String,
    spec: SessionSpec,
    writer: Mutex<LogWriter>,
    state: RwLock<Arc<State>>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn spec(&self) -> &SessionSpec {
        &self.spec
    }

    fn snapshot(&self) -> Arc<State> {
        self.state.read().expect("state lock").clone()
    }

    /// Validates against the latest state, logs, then publishes. Holding
    /// the writer lock serializes writers without blocking readers.
    fn commit<T>(&self, build: impl FnOnce(&State) -> Result<(Vec<Event>, T), RankError>) -> Result<T, RankError> {
        let mut writer = self.writer.lock().expect("writer lock");
        let current = self.snapshot();
        let (events, out) = build(&current)?;
        if events.is_empty() {
            return Ok(out);
        }
        for e in &events {
            writer.append(e)?;
        }
        let mut next = (*current).clone();
        for e in &events {
            next.apply(e);
        }
        *self.state.write().expect("state lock") = Arc::new(next);
        Ok(out)
    }

    fn check_rater(&self, rater: &str) -> Result<(), RankError> {
        let known = match &self.spec.raters {
            Some(list) => list.iter().any(|r| r == rater),
            None => !rater.is_empty(),
        };
        if known {
            Ok(())
        } else {
            Err(RankError::UnknownRater(rater.to_string()))
        }
    }

    fn item_index(&self, item: &str) -> Result<usize, RankError> {
        self.spec.items.iter().position(|i| i.id == item).ok_or_else(|| RankError::UnknownItem(item.to_string()))
    }

    fn permutation_for(&self, state: &State, rater: &str, index: usize) -> (Vec<usize>, Option<Event>) {
        match state.permutations.get(&(rater.to_string(), index)) {
            Some(p) => (p.clone(), None),
            None => {
                let p = permutation(self.spec.seed, rater, index, self.spec.items[index].candidates.len());
                let e = Event::Presented { rater: rater.to_string(), item: index, permutation: p.clone() };
                (p, Some(e))
            }
        }
    }

    fn present(&self, index: usize, perm: &[usize]) -> Presentation {
        let item = &self.spec.items[index];
        Presentation {
            index,
            item: item.id.clone(),
            image_ref: item.image_ref.clone(),
            candidates: perm
                .iter()
                .enumerate()
                .map(|(slot, &c)| PresentedCandidate { slot: slot_label(slot), image_ref: item.candidates[c].image_ref.clone() })
                .collect(),
            tags: item.tags.clone(),
        }
    }

    /// Lowest-index item the rater has not ranked, in that rater's order.
    pub fn next_item(&self, rater: &str) -> Result<NextItem, RankError> {
        self.check_rater(rater)?;
        let pending = {
            let state = self.snapshot();
            (0..self.spec.items.len()).find(|i| !state.records.contains_key(&(*i, rater.to_string())))
        };
        let Some(index) = pending else { return Ok(NextItem::Done) };
        self.commit(|state| {
            let (perm, event) = self.permutation_for(state, rater, index);
            Ok((event.into_iter().collect(), NextItem::Item(self.present(index, &perm))))
        })
    }

    /// Stores a rank record. Resubmitting the same ranks is acknowledged as a
    /// duplicate; different ranks for an already ranked item conflict.
    pub fn submit_ranks(&self, sub: &RankSubmission) -> Result<Ack, RankError> {
        self.check_rater(&sub.rater)?;
        let index = self.item_index(&sub.item)?;
        let item = &self.spec.items[index];
        let k = item.candidates.len();
        let labels: Vec<String> = (0..k).map(slot_label).collect();
        if let Some(extra) = sub.ranks.keys().find(|s| !labels.contains(s)) {
            return Err(RankError::UnknownCandidate(extra.clone()));
        }
        let missing: Vec<String> = labels.iter().filter(|l| !sub.ranks.contains_key(*l)).cloned().collect();
        if !missing.is_empty() {
            return Err(RankError::IncompleteRanks(missing));
        }
        if let Some((slot, &rank)) = sub.ranks.iter().find(|(_, &r)| r < 1 || r as usize > k) {
            return Err(RankError::OutOfRange { candidate: slot.clone(), rank, k });
        }
        self.commit(|state| {
            let (perm, presented) = self.permutation_for(state, &sub.rater, index);
            let by_method: BTreeMap<String, u32> = perm
                .iter()
                .enumerate()
                .map(|(slot, &c)| (item.candidates[c].method.clone(), sub.ranks[&slot_label(slot)]))
                .collect();
            if let Some(existing) = state.records.get(&(index, sub.rater.clone())) {
                return if *existing == by_method {
                    Ok((vec![], Ack { accepted: true, duplicate: true }))
                } else {
                    Err(RankError::Conflict { item: sub.item.clone(), rater: sub.rater.clone() })
                };
            }
            let mut events: Vec<Event> = presented.into_iter().collect();
            events.push(Event::Ranked { rater: sub.rater.clone(), item: index, ranks: by_method });
            Ok((events, Ack { accepted: true, duplicate: false }))
        })
    }

    /// Stored records in submission order.
    pub fn records(&self) -> Vec<RankRecord> {
        let state = self.snapshot();
        state
            .order
            .iter()
            .map(|(i, r)| RankRecord {
                item: self.spec.items[*i].id.clone(),
                rater: r.clone(),
                ranks: state.records[&(*i, r.clone())].clone(),
            })
            .collect()
    }

    /// Recorded display permutation for a rater and item, if presented.
    pub fn recorded_permutation(&self, rater: &str, item: &str) -> Option<Vec<usize>> {
        let index = self.item_index(item).ok()?;
        self.snapshot().permutations.get(&(rater.to_string(), index)).cloned()
    }

    /// Mean rank per method over records whose item carries `tag`.
    pub fn aggregate(&self, tag: Option<&str>) -> Result<Aggregate, RankError> {
        let state = self.snapshot();
        let mut sums: BTreeMap<String, (u64, usize)> = BTreeMap::new();
        let mut records = 0;
        for ((index, _), ranks) in &state.records {
            if let Some(t) = tag {
                if !self.spec.items[*index].tags.iter().any(|x| x == t) {
                    continue;
                }
            }
            records += 1;
            for (method, &r) in ranks {
                let e = sums.entry(method.clone()).or_default();
                e.0 += r as u64;
                e.1 += 1;
            }
        }
        if records == 0 {
            return Err(RankError::NoData);
        }
        Ok(Aggregate {
            tag: tag.map(String::from),
            records,
            mean_ranks: sums.iter().map(|(m, (s, n))| (m.clone(), *s as f64 / *n as f64)).collect(),
            counts: sums.iter().map(|(m, (_, n))| (m.clone(), *n)).collect(),
        })
    }
}

/// All sessions, optionally persisted under a directory as
/// `<session id>.jsonl`.
pub struct RankStore {
    dir: Option<PathBuf>,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    create: Mutex<()>,
}

impl RankStore {
    pub fn in_memory() -> Self {
        Self { dir: None, sessions: RwLock::new(BTreeMap::new()), create: Mutex::new(()) }
    }

    /// Opens a persistent store, replaying every session log in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, RankError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| RankError::Io(dir.clone(), e))?;
        let mut sessions = BTreeMap::new();
        let entries = fs::read_dir(&dir).map_err(|e| RankError::Io(dir.clone(), e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let s = replay(&path)?;
            sessions.insert(s.id.clone(), Arc::new(s));
        }
        Ok(Self { dir: Some(dir), sessions: RwLock::new(sessions), create: Mutex::new(()) })
    }

    pub fn create(&self, spec: SessionSpec) -> Result<Arc<Session>, RankError> {
        spec.validate()?;
        let _guard = self.create.lock().expect("create lock");
        let id = match &spec.id {
            Some(id) => {
                if self.sessions.read().expect("sessions lock").contains_key(id) {
                    return Err(RankError::Duplicate(id.clone()));
                }
                id.clone()
            }
            None => {
                let taken = self.sessions.read().expect("sessions lock");
                (taken.len() + 1..).map(|n| format!("session-{n:04}")).find(|c| !taken.contains_key(c)).expect("unbounded")
            }
        };
        let mut writer = LogWriter { path: None, file: None };
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{id}.jsonl"));
            let file = OpenOptions::new()
                .create_new(true)
                .append(true)
                .open(&path)
                .map_err(|e| RankError::Io(path.clone(), e))?;
            writer = LogWriter { path: Some(path), file: Some(file) };
        }
        writer.append(&Event::Created { id: id.clone(), spec: spec.clone() })?;
        let session = Arc::new(Session {
            id: id.clone(),
            spec,
            writer: Mutex::new(writer),
            state: RwLock::new(Arc::new(State::default())),
        });
        self.sessions.write().expect("sessions lock").insert(id, session.clone());
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, RankError> {
        self.sessions.read().expect("sessions lock").get(id).cloned().ok_or_else(|| RankError::UnknownSession(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.read().expect("sessions lock").keys().cloned().collect()
    }
}

/// Rebuilds a session from its event log. The returned session keeps
/// appending to the same file.
pub fn replay(path: &Path) -> Result<Session, RankError> {
    let corrupt = |message: String| RankError::Corrupt { path: path.to_path_buf(), message };
    let file = File::open(path).map_err(|e| RankError::Io(path.to_path_buf(), e))?;
    let mut header: Option<(String, SessionSpec)> = None;
    let mut state = State::default();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RankError::Io(path.to_path_buf(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", n + 1)))?;
        match (&header, &event) {
            (None, Event::Created { id, spec }) => header = Some((id.clone(), spec.clone())),
            (None, _) => return Err(corrupt("log does not start with a created event".into())),
            (Some(_), Event::Created { .. }) => return Err(corrupt(format!("line {}: second created event", n + 1))),
            (Some((_, spec)), Event::Presented { item, .. } | Event::Ranked { item, .. }) if *item >= spec.items.len() => {
                return Err(corrupt(format!("line {}: item index {item} out of range", n + 1)))
            }
            _ => state.apply(&event),
        }
    }
    let (id, spec) = header.ok_or_else(|| corrupt("empty log".into()))?;
    let file = OpenOptions::new().append(true).open(path).map_err(|e| RankError::Io(path.to_path_buf(), e))?;
    Ok(Session {
        id,
        spec,
        writer: Mutex::new(LogWriter { path: Some(path.to_path_buf()), file: Some(file) }),
        state: RwLock::new(Arc::new(state)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePath {
    pub method: String,
    pub path: Path2D,
}

/// Item description before rendering: a base image and one path per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSource {
    pub id: String,
    pub image: PathBuf,
    pub candidates: Vec<CandidatePath>,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// Renders every candidate overlay into `assets/<item>/<method>.png` using
/// the ranking style and returns items referring to them under `/assets/`.
pub fn render_items(sources: &[ItemSource], assets: &Path) -> Result<Vec<RankingItem>, RankError> {
    let style = OverlayStyle::ranking();
    sources
        .iter()
        .map(|src| {
            let base = Image::read_png(&src.image)?;
            let dir = assets.join(&src.id);
            fs::create_dir_all(&dir).map_err(|e| RankError::Io(dir.clone(), e))?;
            let base_name = "base.png";
            base.write_png(dir.join(base_name))?;
            let candidates = src
                .candidates
                .iter()
                .map(|c| {
                    let img = render::draw(&base, &c.path, &style)?;
                    img.write_png(dir.join(format!("{}.png", c.method)))?;
                    Ok(Candidate { method: c.method.clone(), image_ref: format!("/assets/{}/{}.png", src.id, c.method) })
                })
                .collect::<Result<Vec<_>, RankError>>()?;
            Ok(RankingItem {
                id: src.id.clone(),
                image_ref: format!("/assets/{}/{base_name}", src.id),
                candidates,
                tags: src.tags.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n_items: usize, k: usize) -> SessionSpec {
        SessionSpec {
            id: None,
            items: (0..n_items)
                .map(|i| RankingItem {
                    id: format!("item{i}"),
                    image_ref: format!("img{i}.png"),
                    candidates: (0..k)
                        .map(|m| Candidate { method: format!("m{m}"), image_ref: format!("item{i}-m{m}.png") })
                        .collect(),
                    tags: if i % 2 == 0 { vec!["even".into()] } else { vec![] },
                })
                .collect(),
            raters: None,
            seed: 3,
        }
    }

    fn by_method(session: &Session, rater: &str, item: &str, ranks: &[(&str, u32)]) -> RankSubmission {
        let index = session.item_index(item).unwrap();
        let perm = match session.next_item(rater).unwrap() {
            NextItem::Item(p) if p.item == item => session.recorded_permutation(rater, item).unwrap(),
            _ => permutation(session.spec.seed, rater, index, session.spec.items[index].candidates.len()),
        };
        let methods = &session.spec.items[index].candidates;
        RankSubmission {
            rater: rater.into(),
            item: item.into(),
            ranks: perm
                .iter()
                .enumerate()
                .map(|(slot, &c)| (slot_label(slot), ranks.iter().find(|(m, _)| *m == methods[c].method).unwrap().1))
                .collect(),
        }
    }

    #[test]
    fn fresh_rater_gets_first_item_then_done() {
        let store = RankStore::in_memory();
        let s = store.create(spec(2, 2)).unwrap();
        let NextItem::Item(p) = s.next_item("r1").unwrap() else { panic!() };
        assert_eq!(p.index, 0);
        s.submit_ranks(&RankSubmission { rater: "r1".into(), item: "item0".into(), ranks: [("A".into(), 1), ("B".into(), 2)].into() }).unwrap();
        let NextItem::Item(p) = s.next_item("r1").unwrap() else { panic!() };
        assert_eq!(p.index, 1);
        s.submit_ranks(&RankSubmission { rater: "r1".into(), item: "item1".into(), ranks: [("A".into(), 1), ("B".into(), 1)].into() }).unwrap();
        assert_eq!(s.next_item("r1").unwrap(), NextItem::Done);
    }

    #[test]
    fn permutations_are_per_rater_and_recorded() {
        let store = RankStore::in_memory();
        let s = store.create(spec(1, 8)).unwrap();
        s.next_item("alice").unwrap();
        s.next_item("bob").unwrap();
        let a = s.recorded_permutation("alice", "item0").unwrap();
        let b = s.recorded_permutation("bob", "item0").unwrap();
        assert_ne!(a, b);
        assert_eq!(a, permutation(3, "alice", 0, 8));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
        // a second request shows the same order
        let NextItem::Item(p) = s.next_item("alice").unwrap() else { panic!() };
        let refs: Vec<_> = a.iter().map(|&c| format!("item0-m{c}.png")).collect();
        assert_eq!(p.candidates.iter().map(|c| c.image_ref.clone()).collect::<Vec<_>>(), refs);
    }

    #[test]
    fn validation_errors() {
        let store = RankStore::in_memory();
        let mut sp = spec(1, 4);
        sp.raters = Some(vec!["r".into()]);
        let s = store.create(sp).unwrap();
        assert!(matches!(s.next_item("x"), Err(RankError::UnknownRater(_))));
        let sub = |ranks: &[(&str, u32)]| RankSubmission {
            rater: "r".into(),
            item: "item0".into(),
            ranks: ranks.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        assert!(matches!(s.submit_ranks(&sub(&[("A", 1), ("B", 2), ("C", 3), ("D", 5)])), Err(RankError::OutOfRange { rank: 5, k: 4, .. })));
        assert!(matches!(s.submit_ranks(&sub(&[("A", 1), ("B", 2), ("C", 3), ("D", 0)])), Err(RankError::OutOfRange { .. })));
        assert!(matches!(s.submit_ranks(&sub(&[("A", 1), ("B", 2)])), Err(RankError::IncompleteRanks(m)) if m == ["C", "D"]));
        assert!(matches!(s.submit_ranks(&sub(&[("A", 1), ("B", 2), ("C", 3), ("D", 4), ("E", 1)])), Err(RankError::UnknownCandidate(_))));
        let tie = sub(&[("A", 1), ("B", 1), ("C", 3), ("D", 4)]);
        assert_eq!(s.submit_ranks(&tie).unwrap(), Ack { accepted: true, duplicate: false });
        assert_eq!(s.submit_ranks(&tie).unwrap(), Ack { accepted: true, duplicate: true });
        assert!(matches!(s.submit_ranks(&sub(&[("A", 2), ("B", 1), ("C", 3), ("D", 4)])), Err(RankError::Conflict { .. })));
        assert_eq!(s.records().len(), 1);
        assert!(matches!(store.get("nope"), Err(RankError::UnknownSession(_))));
        let mut bad = RankingItem { id: "x".into(), image_ref: "".into(), candidates: vec![], tags: vec![] };
        bad.candidates.push(Candidate { method: "m".into(), image_ref: "".into() });
        assert!(matches!(store.create(SessionSpec { id: None, items: vec![bad], raters: None, seed: 0 }), Err(RankError::Invalid(_))));
    }

    #[test]
    fn symmetric_ranks_average_out() {
        let store = RankStore::in_memory();
        let s = store.create(spec(1, 2)).unwrap();
        assert!(matches!(s.aggregate(None), Err(RankError::NoData)));
        s.submit_ranks(&by_method(&s, "r1", "item0", &[("m0", 1), ("m1", 2)])).unwrap();
        let single = s.aggregate(None).unwrap();
        assert_eq!(single.mean_ranks, [("m0".to_string(), 1.0), ("m1".to_string(), 2.0)].into());
        s.submit_ranks(&by_method(&s, "r2", "item0", &[("m0", 2), ("m1", 1)])).unwrap();
        let agg = s.aggregate(None).unwrap();
        assert_eq!(agg.mean_ranks, [("m0".to_string(), 1.5), ("m1".to_string(), 1.5)].into());
        assert_eq!(agg.records, 2);
    }

    #[test]
    fn tag_filter_selects_items() {
        let store = RankStore::in_memory();
        let s = store.create(spec(2, 2)).unwrap();
        s.submit_ranks(&by_method(&s, "r", "item0", &[("m0", 1), ("m1", 2)])).unwrap();
        s.submit_ranks(&by_method(&s, "r", "item1", &[("m0", 2), ("m1", 1)])).unwrap();
        let even = s.aggregate(Some("even")).unwrap();
        assert_eq!(even.records, 1);
        assert_eq!(even.mean_ranks["m0"], 1.0);
        assert!(matches!(s.aggregate(Some("odd")), Err(RankError::NoData)));
    }

    #[test]
    fn log_replay_reproduces_state() {
        let dir = tempfile::tempdir().unwrap();
        let (id, before) = {
            let store = RankStore::open(dir.path()).unwrap();
            let s = store.create(spec(3, 3)).unwrap();
            for r in ["a", "b"] {
                for i in 0..3 {
                    s.submit_ranks(&by_method(&s, r, &format!("item{i}"), &[("m0", 1), ("m1", 3), ("m2", 2)])).unwrap();
                }
            }
            s.next_item("c").unwrap();
            (s.id().to_string(), s.aggregate(None).unwrap())
        };
        let store = RankStore::open(dir.path()).unwrap();
        let s = store.get(&id).unwrap();
        assert_eq!(s.aggregate(None).unwrap(), before);
        assert!(s.recorded_permutation("c", "item0").is_some());
        // the reopened session keeps appending
        s.submit_ranks(&by_method(&s, "c", "item0", &[("m0", 3), ("m1", 1), ("m2", 2)])).unwrap();
        let again = RankStore::open(dir.path()).unwrap();
        assert_eq!(again.get(&id).unwrap().records().len(), 7);
    }

    #[test]
    fn corrupt_logs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "{\"event\":\"ranked\",\"rater\":\"a\",\"item\":0,\"ranks\":{}}\n").unwrap();
        assert!(matches!(replay(&p), Err(RankError::Corrupt { .. })));
        fs::write(&p, "not json\n").unwrap();
        assert!(matches!(RankStore::open(dir.path()), Err(RankError::Corrupt { .. })));
    }

    #[test]
    fn concurrent_submissions_all_land() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(RankStore::open(dir.path()).unwrap());
        let s = store.create(spec(10, 3)).unwrap();
        std::thread::scope(|scope| {
            for r in 0..8 {
                let s = s.clone();
                scope.spawn(move || {
                    let rater = format!("r{r}");
                    while let NextItem::Item(p) = s.next_item(&rater).unwrap() {
                        let ranks = p.candidates.iter().enumerate().map(|(i, c)| (c.slot.clone(), i as u32 + 1)).collect();
                        s.submit_ranks(&RankSubmission { rater: rater.clone(), item: p.item, ranks }).unwrap();
                    }
                });
            }
        });
        assert_eq!(s.records().len(), 80);
        let replayed = RankStore::open(dir.path()).unwrap();
        assert_eq!(replayed.get(s.id()).unwrap().aggregate(None).unwrap(), s.aggregate(None).unwrap());
    }
}
