//! Manifest conversion into VQA shards, equal-weight mixing and statistics.
//!
//! Manifests and shards are JSON Lines, one record or sample per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, alignment_verdict, project_trajectory, solve_pnp, CameraExtrinsics, CameraIntrinsics, Correspondence,
    EEFrame, Trajectory,
};
use crate::path::{self, events, Path2D};
use crate::vqa::{self, ParseMode, Source, VqaSample};

pub const DEFAULT_SHARD_SIZE: usize = 10_000;
pub const REJECTIONS_FILE: &str = "rejections.jsonl";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("mix has no samples")]
    EmptyMix,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |e| DatasetError::Io(path.to_path_buf(), e)
}

fn default_source() -> Source {
    Source::Sim
}

/// One episode to convert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub trajectory: Trajectory,
    pub camera_id: String,
    pub intrinsics: CameraIntrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsics: Option<CameraExtrinsics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondences: Option<Vec<Correspondence>>,
    pub instructions: Vec<String>,
    pub image_ref: String,
    #[serde(default = "default_source")]
    pub source: Source,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.instructions.is_empty() || self.instructions.iter().any(|i| i.trim().is_empty()) {
            return Err("instructions must be a non-empty list of non-empty strings".into());
        }
        let corrs = self.correspondences.as_ref().map_or(0, Vec::len);
        if self.extrinsics.is_none() && corrs < geometry::PNP_MIN_POINTS {
            return Err(format!(
                "record needs extrinsics or at least {} correspondences",
                geometry::PNP_MIN_POINTS
            ));
        }
        Ok(())
    }

    /// Given extrinsics, or a PnP estimate from the correspondences.
    pub fn resolve_extrinsics(&self) -> Result<CameraExtrinsics, geometry::GeometryError> {
        match (&self.extrinsics, &self.correspondences) {
            (Some(e), _) => Ok(*e),
            (None, Some(c)) => solve_pnp(c, &self.intrinsics),
            (None, None) => Err(geometry::GeometryError::TooFewPoints(0)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("in-memory serialization");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

impl Manifest {
    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Ok(Self { records: read_jsonl(path.as_ref())? })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        write_jsonl(path.as_ref(), &self.records)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    #[serde(rename = "rdp")]
    Rdp,
    #[serde(rename = "fixed20")]
    Fixed20,
}

impl std::str::FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rdp" => Ok(Self::Rdp),
            "fixed20" => Ok(Self::Fixed20),
            other => Err(format!("unknown representation {other:?} (expected rdp or fixed20)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvertConfig {
    pub epsilon: f64,
    pub representation: Representation,
    pub min_visibility: f64,
    pub shard_size: usize,
}

impl Default for ConvertConfig {
    fn default() -> Self {
        Self {
            epsilon: path::DEFAULT_EPSILON,
            representation: Representation::Rdp,
            min_visibility: geometry::DEFAULT_MIN_VISIBILITY,
            shard_size: DEFAULT_SHARD_SIZE,
        }
    }
}

impl ConvertConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.epsilon > 0.0) {
            return Err(DatasetError::InvalidConfig("epsilon must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_visibility) {
            return Err(DatasetError::InvalidConfig("min_visibility must lie in [0, 1]".into()));
        }
        if self.shard_size == 0 {
            return Err(DatasetError::InvalidConfig("shard_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shard {
    pub source: Source,
    pub seq: usize,
    pub samples: Vec<VqaSample>,
}

impl Shard {
    pub fn file_name(&self) -> String {
        format!("shard-{}-{:05}.jsonl", self.source, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub record: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub reason: String,
    pub detail: String,
}

/// Simplified path of one accepted record.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvertedRecord {
    pub record: usize,
    pub path: Path2D,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertOutput {
    pub shards: Vec<Shard>,
    pub rejections: Vec<Rejection>,
    pub converted: Vec<ConvertedRecord>,
}

/// The answer path for a projected trajectory: simplified per the
/// representation, then clamped into the unit square.
pub fn answer_path(projected: &Path2D, config: &ConvertConfig) -> Result<Path2D, path::PathError> {
    let simplified = match config.representation {
        Representation::Rdp => path::rdp_simplify(projected, config.epsilon)?,
        Representation::Fixed20 => path::resample_fixed(projected, path::DEFAULT_RESAMPLE_COUNT)?,
    };
    Ok(simplified.clamped())
}

fn convert_record(
    index: usize,
    rec: &ManifestRecord,
    config: &ConvertConfig,
) -> Result<(ConvertedRecord, Vec<VqaSample>), Rejection> {
    let reject = |reason: &str, detail: String| Rejection { record: index, id: rec.id.clone(), reason: reason.into(), detail };
    rec.validate().map_err(|d| reject("invalid_record", d))?;
    let extr = rec.resolve_extrinsics().map_err(|e| reject("pnp", e.to_string()))?;
    let (projected, visibility) =
        project_trajectory(&rec.trajectory, &rec.intrinsics, &extr).map_err(|e| reject("projection", e.to_string()))?;
    if visibility < config.min_visibility {
        return Err(reject("visibility", format!("visibility {visibility} below {}", config.min_visibility)));
    }
    let path = answer_path(&projected, config).map_err(|e| reject("simplify", e.to_string()))?;
    let answer = vqa::serialize_answer(&path);
    let samples = rec
        .instructions
        .iter()
        .map(|instr| {
            let prompt = vqa::render_prompt(instr).map_err(|e| reject("prompt", e.to_string()))?;
            Ok(VqaSample { image_ref: rec.image_ref.clone(), prompt, answer: answer.clone(), source: rec.source })
        })
        .collect::<Result<Vec<_>, Rejection>>()?;
    Ok((ConvertedRecord { record: index, path, visibility }, samples))
}

/// Converts every record into one sample per instruction.
///
/// Records are processed in parallel, but shards are filled in manifest
/// order, one shard sequence per source. Failing records are reported in
/// `rejections` and never abort the batch.
pub fn convert(manifest: &Manifest, config: &ConvertConfig) -> Result<ConvertOutput, DatasetError> {
    config.validate()?;
    let results: Vec<_> = manifest
        .records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| convert_record(i, rec, config))
        .collect();

    let mut by_source: BTreeMap<Source, Vec<VqaSample>> = BTreeMap::new();
    let mut rejections = Vec::new();
    let mut converted = Vec::new();
    for r in results {
        match r {
            Ok((c, samples)) => {
                converted.push(c);
                for s in samples {
                    by_source.entry(s.source).or_default().push(s);
                }
            }
            Err(rej) => rejections.push(rej),
        }
    }
    let shards = by_source
        .into_iter()
        .flat_map(|(source, samples)| {
            samples
                .chunks(config.shard_size)
                .enumerate()
                .map(|(seq, chunk)| Shard { source, seq, samples: chunk.to_vec() })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(ConvertOutput { shards, rejections, converted })
}

/// Writes shard files plus `rejections.jsonl` into `dir`.
pub fn write_output(dir: impl AsRef<Path>, out: &ConvertOutput) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for shard in &out.shards {
        write_jsonl(&dir.join(shard.file_name()), &shard.samples)?;
    }
    write_jsonl(&dir.join(REJECTIONS_FILE), &out.rejections)
}

fn parse_shard_name(name: &str) -> Option<(Source, usize)> {
    let stem = name.strip_prefix("shard-")?.strip_suffix(".jsonl")?;
    let (src, seq) = stem.rsplit_once('-')?;
    Some((src.parse().ok()?, seq.parse().ok()?))
}

/// Reads every `shard-*.jsonl` in `dir`, ordered by source then sequence.
pub fn read_shards(dir: impl AsRef<Path>) -> Result<Vec<Shard>, DatasetError> {
    let dir = dir.as_ref();
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((source, seq)) = parse_shard_name(&name) {
            found.push((source, seq, entry.path()));
        }
    }
    found.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    found
        .into_iter()
        .map(|(source, seq, p)| Ok(Shard { source, seq, samples: read_jsonl(&p)? }))
        .collect()
}

pub fn read_rejections(dir: impl AsRef<Path>) -> Result<Vec<Rejection>, DatasetError> {
    let p = dir.as_ref().join(REJECTIONS_FILE);
    if p.exists() {
        read_jsonl(&p)
    } else {
        Ok(Vec::new())
    }
}

/// Samples from a shard directory or a single JSONL file.
pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<VqaSample>, DatasetError> {
    let path = path.as_ref();
    if path.is_dir() {
        Ok(read_shards(path)?.into_iter().flat_map(|s| s.samples).collect())
    } else {
        read_jsonl(path)
    }
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[VqaSample]) -> Result<(), DatasetError> {
    write_jsonl(path.as_ref(), samples)
}

/// Named sample pools and the seed for drawing from their union.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub sources: Vec<(String, Vec<VqaSample>)>,
    pub seed: u64,
}

/// On-disk form of a [`MixSpec`]: source name to shard dirs or JSONL files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpecFile {
    pub sources: BTreeMap<String, Vec<PathBuf>>,
    #[serde(default)]
    pub seed: u64,
}

impl MixSpecFile {
    /// Loads the referenced samples. Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<MixSpec, DatasetError> {
        let mut sources = Vec::new();
        for (name, paths) in &self.sources {
            let mut samples = Vec::new();
            for p in paths {
                let p = if p.is_absolute() { p.clone() } else { base.join(p) };
                samples.extend(read_samples(&p)?);
            }
            sources.push((name.clone(), samples));
        }
        Ok(MixSpec { sources, seed: self.seed })
    }
}

/// Endless with-replacement stream, uniform over the union of all samples.
pub struct Mixer<'a> {
    spec: &'a MixSpec,
    /// cumulative sample counts; `ends[i]` is one past the last index of source i
    ends: Vec<usize>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw<'a> {
    pub source: usize,
    pub index: usize,
    pub sample: &'a VqaSample,
}

impl<'a> Iterator for Mixer<'a> {
    type Item = Draw<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        let total = *self.ends.last()?;
        let k = self.rng.random_range(0..total);
        let source = self.ends.partition_point(|&e| e <= k);
        let start = if source == 0 { 0 } else { self.ends[source - 1] };
        let index = k - start;
        Some(Draw { source, index, sample: &self.spec.sources[source].1[index] })
    }
}

pub fn mix(spec: &MixSpec) -> Result<Mixer<'_>, DatasetError> {
    let mut acc = 0;
    let ends: Vec<usize> = spec
        .sources
        .iter()
        .map(|(_, s)| {
            acc += s.len();
            acc
        })
        .collect();
    if acc == 0 {
        return Err(DatasetError::EmptyMix);
    }
    Ok(Mixer { spec, ends, rng: ChaCha8Rng::seed_from_u64(spec.seed) })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total_samples: usize,
    pub per_source: BTreeMap<String, usize>,
    /// Samples whose answer parsed as a trajectory.
    pub path_samples: usize,
    pub mean_points_per_path: f64,
    /// Number of gripper events per path to sample count.
    pub event_histogram: BTreeMap<usize, usize>,
    pub rejection_reasons: BTreeMap<String, usize>,
}

pub fn stats(shards: &[Shard], rejections: &[Rejection]) -> StatsReport {
    let mut r = StatsReport::default();
    let mut points = 0usize;
    for shard in shards {
        for s in &shard.samples {
            r.total_samples += 1;
            *r.per_source.entry(s.source.to_string()).or_default() += 1;
            if let Ok(p) = vqa::parse_answer(&s.answer, ParseMode::Strict) {
                r.path_samples += 1;
                points += p.len();
                *r.event_histogram.entry(events(&p).len()).or_default() += 1;
            }
        }
    }
    if r.path_samples > 0 {
        r.mean_points_per_path = points as f64 / r.path_samples as f64;
    }
    for rej in rejections {
        *r.rejection_reasons.entry(rej.reason.clone()).or_default() += 1;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterEntry {
    pub record: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FilterReport {
    pub kept: Vec<usize>,
    pub rejected: Vec<FilterEntry>,
}

/// Reprojection check for every manifest record; records without
/// correspondences cannot be checked and are rejected.
pub fn filter_manifest(manifest: &Manifest, threshold: f64, min_visibility: f64) -> Result<FilterReport, DatasetError> {
    if !(threshold > 0.0) {
        return Err(DatasetError::InvalidConfig("threshold must be positive".into()));
    }
    let verdicts: Vec<Option<(String, String)>> = manifest
        .records
        .par_iter()
        .map(|rec| {
            let Some(corrs) = rec.correspondences.as_deref().filter(|c| !c.is_empty()) else {
                return Some(("no_correspondences".to_string(), "record has no correspondences".to_string()));
            };
            let extr = match rec.resolve_extrinsics() {
                Ok(e) => e,
                Err(e) => return Some(("pnp".to_string(), e.to_string())),
            };
            alignment_verdict(&rec.trajectory, corrs, &rec.intrinsics, &extr, threshold, min_visibility)
                .map(|r| (r.code().to_string(), serde_json::to_string(&r).expect("plain enum")))
        })
        .collect();
    let mut report = FilterReport::default();
    for (i, v) in verdicts.into_iter().enumerate() {
        match v {
            None => report.kept.push(i),
            Some((reason, detail)) => {
                report.rejected.push(FilterEntry { record: i, id: manifest.records[i].id.clone(), reason, detail })
            }
        }
    }
    Ok(report)
}

/// Synthetic pick-and-place episodes for demos and tests.
pub mod synthetic {
    use super::*;

    pub fn camera() -> (CameraIntrinsics, CameraExtrinsics) {
        let intr = CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).expect("valid intrinsics");
        let extr = CameraExtrinsics::look_at(Vector3::new(0.0, -1.2, 0.9), Vector3::new(0.0, 0.0, 0.0), Vector3::z())
            .expect("valid pose");
        (intr, extr)
    }

    fn smooth(s: f64) -> f64 {
        // minimum-jerk time scaling
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }

    fn arc(a: Vector3<f64>, b: Vector3<f64>, lift: f64, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let mut p = a + (b - a) * smooth(s);
                p.z += lift * (std::f64::consts::PI * s).sin();
                p
            })
            .collect()
    }

    /// A smooth two-segment reach-then-transport motion with `60..=150` frames.
    /// The gripper closes right after arrival at the object and opens on the
    /// final frame at the place location.
    pub fn pick_place_trajectory(rng: &mut ChaCha8Rng, instruction: &str) -> Trajectory {
        let total = rng.random_range(60..=150usize);
        let n1 = total / 2;
        let n2 = total - n1 - 1;
        let start = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.1), 0.35);
        let pick = Vector3::new(rng.random_range(-0.25..0.25), rng.random_range(-0.2..0.2), 0.02);
        let place = Vector3::new(rng.random_range(-0.25..0.25), rng.random_range(-0.2..0.2), 0.06);
        let mut positions: Vec<(Vector3<f64>, bool)> = arc(start, pick, 0.08, n1).into_iter().map(|p| (p, true)).collect();
        positions.extend(arc(pick, place, 0.15, n2 + 1).into_iter().skip(1).map(|p| (p, false)));
        positions.push((place, true));
        let frames = positions
            .into_iter()
            .enumerate()
            .map(|(i, (p, open))| EEFrame { step: i as u64, position: [p.x, p.y, p.z], gripper_open: open })
            .collect();
        Trajectory::new(frames, instruction, "front").expect("synthetic trajectory is valid")
    }

    const VERBS: [&str; 4] = ["put", "place", "move", "drop"];
    const OBJECTS: [&str; 5] = ["the red block", "the banana", "the blue cup", "the sponge", "the marker"];
    const TARGETS: [&str; 4] = ["in the bowl", "on the plate", "into the box", "on the towel"];

    /// Manifest of `n` pick-and-place records with four phrasings each.
    pub fn manifest(n: usize, seed: u64) -> Manifest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (intr, extr) = camera();
        let records = (0..n)
            .map(|i| {
                let obj = OBJECTS[rng.random_range(0..OBJECTS.len())];
                let tgt = TARGETS[rng.random_range(0..TARGETS.len())];
                let instructions: Vec<String> = VERBS.iter().map(|v| format!("{v} {obj} {tgt}")).collect();
                let trajectory = pick_place_trajectory(&mut rng, &instructions[0]);
                ManifestRecord {
                    id: Some(format!("synthetic-{i:05}")),
                    trajectory,
                    camera_id: "front".into(),
                    intrinsics: intr,
                    extrinsics: Some(extr),
                    correspondences: None,
                    instructions,
                    image_ref: format!("images/synthetic-{i:05}.png"),
                    source: Source::Sim,
                }
            })
            .collect();
        Manifest { records }
    }

    /// Exact 3D–2D correspondences of eight box corners under the given camera.
    pub fn correspondences(intr: &CameraIntrinsics, extr: &CameraExtrinsics) -> Vec<Correspondence> {
        let mut out = Vec::new();
        for x in [-0.2, 0.2] {
            for y in [-0.15, 0.15] {
                for z in [0.0, 0.25] {
                    let w = Vector3::new(x, y, z);
                    let px = geometry::project_point(&w, intr, extr).expect("corner in front of camera");
                    out.push(Correspondence { world: [x, y, z], pixel: [px.x, px.y] });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vqa::parse_answer;

    fn record_with(frames: Vec<EEFrame>, instructions: usize) -> ManifestRecord {
        let (intr, extr) = synthetic::camera();
        ManifestRecord {
            id: None,
            trajectory: Trajectory::new(frames, "x", "front").unwrap(),
            camera_id: "front".into(),
            intrinsics: intr,
            extrinsics: Some(extr),
            correspondences: None,
            instructions: (0..instructions).map(|i| format!("task variant {i}")).collect(),
            image_ref: "img.png".into(),
            source: Source::Sim,
        }
    }

    #[test]
    fn four_instructions_share_one_answer() {
        let m = synthetic::manifest(1, 3);
        let out = convert(&m, &ConvertConfig::default()).unwrap();
        assert_eq!(out.shards.len(), 1);
        let s = &out.shards[0].samples;
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|x| x.answer == s[0].answer));
        assert_eq!(s.iter().map(|x| &x.prompt).collect::<std::collections::HashSet<_>>().len(), 4);
    }

    #[test]
    fn behind_camera_record_is_rejected() {
        // camera looks from y = -1.2 toward the origin; y = -3 is behind it
        let frames = vec![EEFrame { step: 0, position: [0.0, -3.0, 0.9], gripper_open: true }];
        let m = Manifest { records: vec![record_with(frames, 2)] };
        let out = convert(&m, &ConvertConfig::default()).unwrap();
        assert!(out.shards.is_empty());
        assert_eq!(out.rejections.len(), 1);
        assert_eq!(out.rejections[0].reason, "projection");
    }

    #[test]
    fn invalid_and_low_visibility_records_are_rejected() {
        let inside = EEFrame { step: 0, position: [0.0, 0.0, 0.0], gripper_open: true };
        let outside = EEFrame { step: 1, position: [5.0, 0.0, 0.0], gripper_open: true };
        let mut no_instr = record_with(vec![inside], 0);
        no_instr.instructions.clear();
        let mut no_pose = record_with(vec![inside], 1);
        no_pose.extrinsics = None;
        let m = Manifest {
            records: vec![no_instr, record_with(vec![inside, outside], 1), no_pose, record_with(vec![inside], 1)],
        };
        let out = convert(&m, &ConvertConfig::default()).unwrap();
        let reasons: Vec<_> = out.rejections.iter().map(|r| (r.record, r.reason.as_str())).collect();
        assert_eq!(reasons, vec![(0, "invalid_record"), (1, "visibility"), (2, "invalid_record")]);
        assert_eq!(out.converted.len(), 1);
        assert_eq!(out.converted[0].record, 3);
    }

    #[test]
    fn pnp_resolves_missing_extrinsics() {
        let (intr, extr) = synthetic::camera();
        let mut rec = synthetic::manifest(1, 9).records.remove(0);
        rec.extrinsics = None;
        rec.correspondences = Some(synthetic::correspondences(&intr, &extr));
        let with_pnp = convert(&Manifest { records: vec![rec.clone()] }, &ConvertConfig::default()).unwrap();
        rec.extrinsics = Some(extr);
        let with_given = convert(&Manifest { records: vec![rec] }, &ConvertConfig::default()).unwrap();
        assert_eq!(with_pnp.shards, with_given.shards);
    }

    #[test]
    fn sharding_respects_size_and_order() {
        let m = synthetic::manifest(5, 1);
        let cfg = ConvertConfig { shard_size: 6, ..Default::default() };
        let out = convert(&m, &cfg).unwrap();
        let sizes: Vec<_> = out.shards.iter().map(|s| s.samples.len()).collect();
        assert_eq!(sizes, vec![6, 6, 6, 2]);
        assert_eq!(out.shards.iter().map(|s| s.seq).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        let refs: Vec<_> = out.shards.iter().flat_map(|s| &s.samples).map(|s| s.image_ref.clone()).collect();
        let mut sorted = refs.clone();
        sorted.sort();
        assert_eq!(refs, sorted);
    }

    #[test]
    fn fixed20_representation() {
        let m = synthetic::manifest(3, 2);
        let cfg = ConvertConfig { representation: Representation::Fixed20, ..Default::default() };
        let out = convert(&m, &cfg).unwrap();
        for c in &out.converted {
            assert!(c.path.len() >= 20 && c.path.len() <= 22, "{}", c.path.len());
        }
    }

    #[test]
    fn write_read_roundtrip_and_stats() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = synthetic::manifest(4, 5);
        m.records[1].instructions.clear();
        let out = convert(&m, &ConvertConfig::default()).unwrap();
        write_output(dir.path(), &out).unwrap();
        let shards = read_shards(dir.path()).unwrap();
        assert_eq!(shards, out.shards);
        let rej = read_rejections(dir.path()).unwrap();
        assert_eq!(rej, out.rejections);
        let report = stats(&shards, &rej);
        assert_eq!(report.total_samples, 12);
        assert_eq!(report.per_source["sim"], 12);
        assert_eq!(report.rejection_reasons["invalid_record"], 1);
        assert_eq!(report.event_histogram.values().sum::<usize>(), 12);
    }

    #[test]
    fn stats_empty_and_known_sizes() {
        assert_eq!(stats(&[], &[]), StatsReport::default());
        let five = Path2D::from_triples(&[
            (0.1, 0.1, true),
            (0.2, 0.3, true),
            (0.4, 0.2, false),
            (0.6, 0.6, false),
            (0.9, 0.5, true),
        ])
        .unwrap();
        let sample = VqaSample {
            image_ref: "a".into(),
            prompt: "p".into(),
            answer: vqa::serialize_answer(&five),
            source: Source::Real,
        };
        let text = VqaSample { answer: "a cat".into(), source: Source::CoTrain, ..sample.clone() };
        let shard = Shard { source: Source::Real, seq: 0, samples: vec![sample.clone(), sample, text] };
        let r = stats(&[shard], &[]);
        assert_eq!(r.mean_points_per_path, 5.0);
        assert_eq!(r.path_samples, 2);
        assert_eq!(r.event_histogram[&2], 2);
        assert_eq!(r.per_source["co_train"], 1);
    }

    #[test]
    fn rdp_on_synthetic_paths_is_compact() {
        let m = synthetic::manifest(20, 8);
        let out = convert(&m, &ConvertConfig::default()).unwrap();
        let r = stats(&out.shards, &out.rejections);
        assert!((2.0..=7.0).contains(&r.mean_points_per_path), "{}", r.mean_points_per_path);
        assert!(out.rejections.is_empty());
    }

    fn sample(tag: &str) -> VqaSample {
        VqaSample { image_ref: tag.into(), prompt: "p".into(), answer: "a".into(), source: Source::Sim }
    }

    #[test]
    fn mix_single_source_and_determinism() {
        let spec = MixSpec { sources: vec![("a".into(), vec![sample("x"), sample("y")])], seed: 4 };
        let draws: Vec<_> = mix(&spec).unwrap().take(50).map(|d| (d.source, d.index)).collect();
        assert!(draws.iter().all(|&(s, _)| s == 0));
        let again: Vec<_> = mix(&spec).unwrap().take(50).map(|d| (d.source, d.index)).collect();
        assert_eq!(draws, again);
        assert!(draws.iter().any(|d| d.1 == 0) && draws.iter().any(|d| d.1 == 1));
    }

    #[test]
    fn mix_rejects_empty() {
        let spec = MixSpec { sources: vec![("a".into(), vec![]), ("b".into(), vec![])], seed: 0 };
        assert!(matches!(mix(&spec), Err(DatasetError::EmptyMix)));
        assert!(matches!(mix(&MixSpec { sources: vec![], seed: 0 }), Err(DatasetError::EmptyMix)));
    }

    #[test]
    fn mix_skips_empty_sources() {
        let spec = MixSpec {
            sources: vec![("a".into(), vec![]), ("b".into(), vec![sample("x")]), ("c".into(), vec![])],
            seed: 1,
        };
        assert!(mix(&spec).unwrap().take(100).all(|d| d.source == 1 && d.sample.image_ref == "x"));
    }

    #[test]
    fn filter_manifest_partitions() {
        let (intr, extr) = synthetic::camera();
        let mut m = synthetic::manifest(3, 4);
        for r in &mut m.records {
            r.correspondences = Some(synthetic::correspondences(&intr, &extr));
        }
        // corrupt record 1: shift its pose by 5 cm
        let shifted = CameraExtrinsics::new(*extr.rotation(), extr.translation() + Vector3::new(0.05, 0.0, 0.0)).unwrap();
        m.records[1].extrinsics = Some(shifted);
        m.records[2].correspondences = None;
        let rep = filter_manifest(&m, 5.0, 0.9).unwrap();
        assert_eq!(rep.kept, vec![0]);
        assert_eq!(rep.rejected.iter().map(|e| e.reason.as_str()).collect::<Vec<_>>(), vec!["rmse", "no_correspondences"]);
    }

    #[test]
    fn answers_parse_back_close_to_paths() {
        let out = convert(&synthetic::manifest(10, 12), &ConvertConfig::default()).unwrap();
        let answers: Vec<_> = out.shards.iter().flat_map(|s| &s.samples).map(|s| &s.answer).collect();
        for (c, a) in out.converted.iter().zip(answers.iter().step_by(4)) {
            let p = parse_answer(a, ParseMode::Strict).unwrap();
            assert_eq!(p.len(), c.path.len());
            for (q, r) in p.points().iter().zip(c.path.points()) {
                assert!((q.x - r.x).abs() <= 0.005 + 1e-12 && (q.y - r.y).abs() <= 0.005 + 1e-12);
                assert_eq!(q.gripper_open, r.gripper_open);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ConvertConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        assert!(ConvertConfig { min_visibility: 1.5, ..Default::default() }.validate().is_err());
        assert!(ConvertConfig { shard_size: 0, ..Default::default() }.validate().is_err());
        assert_eq!("fixed20".parse::<Representation>().unwrap(), Representation::Fixed20);
    }

    #[test]
    fn shard_name_parsing() {
        assert_eq!(parse_shard_name("shard-point_pred-00012.jsonl"), Some((Source::PointPred, 12)));
        assert_eq!(parse_shard_name("shard-co_train-00000.jsonl"), Some((Source::CoTrain, 0)));
        assert_eq!(parse_shard_name("rejections.jsonl"), None);
    }
}
