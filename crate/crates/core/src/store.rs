//! Embedding dataset model and the EMBX on-disk format.
//!
//! A store is a contiguous block of embedding vectors plus per-observation
//! metadata. Vectors are kept at f32 precision (the on-disk precision) but
//! widened to f64 for all arithmetic, so `load(save(s)) == s` holds exactly.
//!
//! On disk a store is two sibling files:
//!
//! * `<name>.embx`: magic `EMBX`, u32 version, u32 dim, u64 count, then
//!   `count * dim` little-endian f32 values, row-major.
//! * `<name>.manifest.jsonl`: a header line `{encoder, dim, normalized}`
//!   followed by one JSON object per observation record.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMBX_MAGIC: &[u8; 4] = b"EMBX";
pub const EMBX_VERSION: u32 = 1;
pub const EMBX_HEADER_LEN: usize = 20;

const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderProfile {
    pub name: String,
    pub dim: usize,
    pub normalized: bool,
}

impl EncoderProfile {
    pub fn new(name: impl Into<String>, dim: usize, normalized: bool) -> Self {
        Self {
            name: name.into(),
            dim,
            normalized,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationRecord {
    pub id: String,
    pub trajectory_id: String,
    pub step_index: u32,
    pub viewpoint_id: u32,
    pub embedding_index: usize,
    /// Ground-truth goal indicator. `None` for unlabeled deployment data.
    pub goal_label: Option<bool>,
    pub task_tag: Option<String>,
    pub action_token: Option<String>,
    pub modality: Option<String>,
}

impl ObservationRecord {
    pub fn new(id: impl Into<String>, trajectory_id: impl Into<String>, step_index: u32, viewpoint_id: u32) -> Self {
        Self {
            id: id.into(),
            trajectory_id: trajectory_id.into(),
            step_index,
            viewpoint_id,
            embedding_index: 0,
            goal_label: None,
            task_tag: None,
            action_token: None,
            modality: None,
        }
    }

    pub fn with_goal_label(mut self, label: bool) -> Self {
        self.goal_label = Some(label);
        self
    }

    pub fn with_task(mut self, task: impl Into<String>) -> Self {
        self.task_tag = Some(task.into());
        self
    }

    pub fn with_action(mut self, action: impl Into<String>) -> Self {
        self.action_token = Some(action.into());
        self
    }
}

/// All records sharing one `(trajectory, step_index)`, one per viewpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub step_index: u32,
    /// Indices into the owning store's observation list, ordered by viewpoint.
    pub records: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trajectory {
    pub id: String,
    /// Steps in strictly increasing `step_index` order.
    pub steps: Vec<Step>,
    pub task_tag: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The step with `step_index == 0`, if present.
    pub fn initial_step(&self) -> Option<&Step> {
        self.steps.first().filter(|s| s.step_index == 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct VectorBlock {
    dim: usize,
    data: Vec<f64>,
}

/// An immutable, validated embedding dataset.
///
/// Cloning is cheap for the vector block, which is reference counted and
/// shared between a store and every view filtered from it.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStore {
    profile: EncoderProfile,
    vectors: Arc<VectorBlock>,
    observations: Vec<ObservationRecord>,
    trajectories: Vec<Trajectory>,
    provenance: BTreeMap<String, String>,
    // (trajectory index, step position) per observation
    locator: Vec<(usize, usize)>,
}

impl DatasetStore {
    /// Validates and assembles a store. `vectors` is a row-major block of
    /// `count * profile.dim` values; values are rounded to f32 precision.
    pub fn new(
        profile: EncoderProfile,
        vectors: Vec<f64>,
        observations: Vec<ObservationRecord>,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        if profile.dim == 0 {
            return Err(Error::Schema("encoder dim must be at least 1".into()));
        }
        if !vectors.len().is_multiple_of(profile.dim) {
            return Err(Error::Schema(format!(
                "vector block length {} is not a multiple of dim {}",
                vectors.len(),
                profile.dim
            )));
        }
        let count = vectors.len() / profile.dim;

        let mut ids = HashSet::with_capacity(observations.len());
        let mut keys = HashSet::with_capacity(observations.len());
        for rec in &observations {
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::Schema(format!("duplicate record id {:?}", rec.id)));
            }
            if !keys.insert((rec.trajectory_id.as_str(), rec.step_index, rec.viewpoint_id)) {
                return Err(Error::Schema(format!(
                    "duplicate (trajectory, step, viewpoint) ({:?}, {}, {}) at record {:?}",
                    rec.trajectory_id, rec.step_index, rec.viewpoint_id, rec.id
                )));
            }
            if rec.embedding_index >= count {
                return Err(Error::Schema(format!(
                    "record {:?} has embedding_index {} but only {count} vectors exist",
                    rec.id, rec.embedding_index
                )));
            }
        }

        let mut data = Vec::with_capacity(vectors.len());
        for (i, row) in vectors.chunks(profile.dim).enumerate() {
            let mut norm_sq = 0.0;
            for &x in row {
                let narrowed = x as f32;
                if !narrowed.is_finite() {
                    return Err(Error::Data(format!(
                        "non-finite value in {}",
                        describe_vector(&observations, i)
                    )));
                }
                let widened = f64::from(narrowed);
                norm_sq += widened * widened;
                data.push(widened);
            }
            if profile.normalized && (norm_sq.sqrt() - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Data(format!(
                    "{} has norm {:.6} but the encoder profile is normalized",
                    describe_vector(&observations, i),
                    norm_sq.sqrt()
                )));
            }
        }

        let block = Arc::new(VectorBlock { dim: profile.dim, data });
        Self::assemble(profile, block, observations, provenance)
    }

    fn assemble(
        profile: EncoderProfile,
        vectors: Arc<VectorBlock>,
        observations: Vec<ObservationRecord>,
        provenance: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut grouped: BTreeMap<&str, BTreeMap<u32, Vec<usize>>> = BTreeMap::new();
        for (i, rec) in observations.iter().enumerate() {
            grouped
                .entry(rec.trajectory_id.as_str())
                .or_default()
                .entry(rec.step_index)
                .or_default()
                .push(i);
        }

        let mut trajectories = Vec::with_capacity(grouped.len());
        let mut locator = vec![(0, 0); observations.len()];
        for (t, (traj_id, steps)) in grouped.into_iter().enumerate() {
            let mut task_tag: Option<&String> = None;
            let mut out_steps = Vec::with_capacity(steps.len());
            for (s, (step_index, mut records)) in steps.into_iter().enumerate() {
                records.sort_by_key(|&i| observations[i].viewpoint_id);
                for &i in &records {
                    locator[i] = (t, s);
                    if let Some(tag) = &observations[i].task_tag {
                        match task_tag {
                            None => task_tag = Some(tag),
                            Some(prev) if prev != tag => {
                                return Err(Error::Schema(format!(
                                    "trajectory {traj_id:?} mixes task tags {prev:?} and {tag:?}"
                                )))
                            }
                            _ => {}
                        }
                    }
                }
                out_steps.push(Step { step_index, records });
            }
            trajectories.push(Trajectory {
                id: traj_id.to_string(),
                steps: out_steps,
                task_tag: task_tag.cloned(),
            });
        }

        Ok(Self {
            profile,
            vectors,
            observations,
            trajectories,
            provenance,
            locator,
        })
    }

    pub fn profile(&self) -> &EncoderProfile {
        &self.profile
    }

    pub fn dim(&self) -> usize {
        self.profile.dim
    }

    pub fn observations(&self) -> &[ObservationRecord] {
        &self.observations
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Number of vectors in the (possibly shared) block.
    pub fn vector_count(&self) -> usize {
        self.vectors.data.len() / self.vectors.dim
    }

    pub fn vector(&self, embedding_index: usize) -> &[f64] {
        let d = self.vectors.dim;
        &self.vectors.data[embedding_index * d..(embedding_index + 1) * d]
    }

    /// Embedding of the observation at position `obs` in this store.
    pub fn embedding(&self, obs: usize) -> &[f64] {
        self.vector(self.observations[obs].embedding_index)
    }

    pub fn trajectory_of(&self, obs: usize) -> &Trajectory {
        &self.trajectories[self.locator[obs].0]
    }

    pub fn step_of(&self, obs: usize) -> &Step {
        let (t, s) = self.locator[obs];
        &self.trajectories[t].steps[s]
    }

    pub fn trajectory(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories
            .binary_search_by(|t| t.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.trajectories[i])
    }

    /// Distinct task tags, sorted.
    pub fn task_tags(&self) -> Vec<String> {
        let tags: BTreeSet<&String> = self.trajectories.iter().filter_map(|t| t.task_tag.as_ref()).collect();
        tags.into_iter().cloned().collect()
    }

    /// True when both stores reference the same vector allocation.
    pub fn shares_vectors_with(&self, other: &DatasetStore) -> bool {
        Arc::ptr_eq(&self.vectors, &other.vectors)
    }

    /// Restricts the store to matching trajectories and viewpoints. The vector
    /// block is shared with `self`.
    pub fn filter(&self, selector: &Selector) -> FilteredView {
        let keep: Vec<ObservationRecord> = self
            .observations
            .iter()
            .filter(|rec| {
                let traj = self.trajectory(&rec.trajectory_id).expect("record trajectory");
                selector.matches_trajectory(traj) && selector.matches_viewpoint(rec.viewpoint_id)
            })
            .cloned()
            .collect();
        let view = Self::assemble(
            self.profile.clone(),
            Arc::clone(&self.vectors),
            keep,
            self.provenance.clone(),
        )
        .expect("subset of a valid store is valid");
        let empty = view.trajectories.is_empty();
        if empty {
            log::warn!("dataset filter matched zero trajectories");
        }
        FilteredView { view, empty }
    }
}

fn describe_vector(observations: &[ObservationRecord], index: usize) -> String {
    match observations.iter().find(|r| r.embedding_index == index) {
        Some(rec) => format!("vector of record {:?}", rec.id),
        None => format!("vector #{index}"),
    }
}

/// Incrementally assembles a store, assigning embedding indices in push order.
#[derive(Debug)]
pub struct StoreBuilder {
    profile: EncoderProfile,
    vectors: Vec<f64>,
    observations: Vec<ObservationRecord>,
    provenance: BTreeMap<String, String>,
}

impl StoreBuilder {
    pub fn new(profile: EncoderProfile) -> Self {
        Self {
            profile,
            vectors: Vec::new(),
            observations: Vec::new(),
            provenance: BTreeMap::new(),
        }
    }

    pub fn provenance(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.provenance.insert(key.into(), value.into());
        self
    }

    pub fn push(&mut self, mut record: ObservationRecord, vector: &[f64]) -> Result<&mut Self> {
        if vector.len() != self.profile.dim {
            return Err(Error::Schema(format!(
                "record {:?} has a {}-dim vector, profile dim is {}",
                record.id,
                vector.len(),
                self.profile.dim
            )));
        }
        record.embedding_index = self.observations.len();
        self.vectors.extend_from_slice(vector);
        self.observations.push(record);
        Ok(self)
    }

    pub fn build(self) -> Result<DatasetStore> {
        DatasetStore::new(self.profile, self.vectors, self.observations, self.provenance)
    }
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

/// Conjunctive filter over task tag, trajectory id and viewpoint. An absent
/// field matches everything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tasks: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewpoints: Option<BTreeSet<u32>>,
}

impl Selector {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn task(tag: impl Into<String>) -> Self {
        Self {
            tasks: Some([tag.into()].into_iter().collect()),
            ..Self::default()
        }
    }

    pub fn matches_trajectory(&self, traj: &Trajectory) -> bool {
        let task_ok = match (&self.tasks, &traj.task_tag) {
            (None, _) => true,
            (Some(tags), Some(tag)) => tags.contains(tag),
            (Some(_), None) => false,
        };
        let id_ok = self.trajectories.as_ref().is_none_or(|ids| ids.contains(&traj.id));
        task_ok && id_ok
    }

    pub fn matches_viewpoint(&self, viewpoint: u32) -> bool {
        self.viewpoints.as_ref().is_none_or(|v| v.contains(&viewpoint))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilteredView {
    pub view: DatasetStore,
    /// Set when the selector matched no trajectory.
    pub empty: bool,
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    encoder: String,
    dim: usize,
    normalized: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ManifestRecord {
    id: String,
    trajectory: String,
    step: u32,
    viewpoint: u32,
    embedding_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    goal_label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    modality: Option<String>,
}

impl From<&ObservationRecord> for ManifestRecord {
    fn from(r: &ObservationRecord) -> Self {
        Self {
            id: r.id.clone(),
            trajectory: r.trajectory_id.clone(),
            step: r.step_index,
            viewpoint: r.viewpoint_id,
            embedding_index: r.embedding_index,
            goal_label: r.goal_label,
            task: r.task_tag.clone(),
            action: r.action_token.clone(),
            modality: r.modality.clone(),
        }
    }
}

impl From<ManifestRecord> for ObservationRecord {
    fn from(r: ManifestRecord) -> Self {
        Self {
            id: r.id,
            trajectory_id: r.trajectory,
            step_index: r.step,
            viewpoint_id: r.viewpoint,
            embedding_index: r.embedding_index,
            goal_label: r.goal_label,
            task_tag: r.task,
            action_token: r.action,
            modality: r.modality,
        }
    }
}

/// Sibling manifest path for an EMBX file: `x.embx` -> `x.manifest.jsonl`.
pub fn manifest_path(embx: &Path) -> PathBuf {
    embx.with_extension("manifest.jsonl")
}

/// Serializes one record as a manifest JSON object.
pub(crate) fn manifest_value(rec: &ObservationRecord) -> serde_json::Value {
    serde_json::to_value(ManifestRecord::from(rec)).expect("manifest record serializes")
}

/// Encodes the EMBX bytes for a store's vector block.
pub fn encode_embx(store: &DatasetStore) -> Vec<u8> {
    let block = &store.vectors;
    let count = store.vector_count() as u64;
    let mut out = Vec::with_capacity(EMBX_HEADER_LEN + block.data.len() * 4);
    out.extend_from_slice(EMBX_MAGIC);
    out.extend_from_slice(&EMBX_VERSION.to_le_bytes());
    out.extend_from_slice(&(block.dim as u32).to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for &x in &block.data {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

/// Parses EMBX bytes into `(dim, row-major values)`.
pub fn decode_embx(bytes: &[u8]) -> Result<(usize, Vec<f64>)> {
    if bytes.len() < EMBX_HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {EMBX_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != EMBX_MAGIC {
        return Err(Error::Format("bad magic, expected \"EMBX\"".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EMBX_VERSION {
        return Err(Error::Format(format!("unsupported EMBX version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(Error::Format("header dim is 0".into()));
    }
    let expected = (count as u128) * (dim as u128) * 4 + EMBX_HEADER_LEN as u128;
    if expected != bytes.len() as u128 {
        return Err(Error::Format(format!(
            "header declares {count} x {dim} vectors ({expected} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    let values = bytes[EMBX_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok((dim, values))
}

/// Writes the manifest text for a store.
pub fn encode_manifest(store: &DatasetStore) -> String {
    let header = ManifestHeader {
        encoder: store.profile.name.clone(),
        dim: store.profile.dim,
        normalized: store.profile.normalized,
        provenance: store.provenance.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for rec in &store.observations {
        out.push_str(&serde_json::to_string(&ManifestRecord::from(rec)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_store(store: &DatasetStore, path: &Path) -> Result<()> {
    fs::write(path, encode_embx(store)).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    let file = fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(encode_manifest(store).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&mpath, e))
}

pub fn load_store(path: &Path) -> Result<DatasetStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dim, values) = decode_embx(&bytes)?;

    let mpath = manifest_path(path);
    let file = fs::File::open(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Schema("manifest is empty, missing header line".into()))?
        .map_err(|e| Error::io(&mpath, e))?;
    let header: ManifestHeader =
        serde_json::from_str(&header_line).map_err(|e| Error::Schema(format!("manifest header: {e}")))?;
    if header.dim != dim {
        return Err(Error::Schema(format!(
            "EMBX header dim {dim} disagrees with manifest dim {}",
            header.dim
        )));
    }

    let mut observations = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(&mpath, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("manifest line {}: {e}", n + 2)))?;
        observations.push(rec.into());
    }

    DatasetStore::new(
        EncoderProfile::new(header.encoder, header.dim, header.normalized),
        values,
        observations,
        header.provenance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetStore {
        let mut b = StoreBuilder::new(EncoderProfile::new("test", 2, false));
        b.push(ObservationRecord::new("a0", "a", 0, 0).with_task("micro"), &[1.0, 2.0])
            .unwrap();
        b.push(ObservationRecord::new("a1", "a", 1, 0).with_task("micro"), &[0.5, 0.25])
            .unwrap();
        b.push(ObservationRecord::new("b0", "b", 0, 0).with_task("ldoor"), &[-1.0, 3.0])
            .unwrap();
        b.build().unwrap()
    }

    #[test]
    fn single_vector_has_eight_payload_bytes() {
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 2, false));
        b.push(ObservationRecord::new("x", "t", 0, 0), &[1.0, 2.0]).unwrap();
        let bytes = encode_embx(&b.build().unwrap());
        assert_eq!(bytes.len(), EMBX_HEADER_LEN + 8);
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[24..28], &2.0f32.to_le_bytes());
    }

    #[test]
    fn empty_store_round_trips() {
        let store = StoreBuilder::new(EncoderProfile::new("t", 4, false)).build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.embx");
        save_store(&store, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 0);
        assert_eq!(load_store(&p).unwrap(), store);
    }

    #[test]
    fn header_dim_mismatch_is_schema_error() {
        let store = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.embx");
        save_store(&store, &p).unwrap();
        let text = fs::read_to_string(manifest_path(&p)).unwrap();
        fs::write(manifest_path(&p), text.replacen("\"dim\":2", "\"dim\":768", 1)).unwrap();
        assert!(matches!(load_store(&p), Err(Error::Schema(_))));
    }

    #[test]
    fn bad_magic_and_version_are_format_errors() {
        let mut bytes = encode_embx(&tiny());
        bytes[0] = b'X';
        assert!(matches!(decode_embx(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_embx(&tiny());
        bytes[4] = 2;
        assert!(matches!(decode_embx(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn nan_vector_names_record() {
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 2, false));
        b.push(ObservationRecord::new("bad-one", "t", 0, 0), &[f64::NAN, 0.0])
            .unwrap();
        match b.build() {
            Err(Error::Data(msg)) => assert!(msg.contains("bad-one"), "{msg}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_step_viewpoint_rejected() {
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 1, false));
        b.push(ObservationRecord::new("x", "t", 0, 0), &[1.0]).unwrap();
        b.push(ObservationRecord::new("y", "t", 0, 0), &[1.0]).unwrap();
        assert!(matches!(b.build(), Err(Error::Schema(_))));
    }

    #[test]
    fn normalized_profile_checks_norms() {
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 2, true));
        b.push(ObservationRecord::new("x", "t", 0, 0), &[0.6, 0.8]).unwrap();
        assert!(b.build().is_ok());
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 2, true));
        b.push(ObservationRecord::new("x", "t", 0, 0), &[1.0, 1.0]).unwrap();
        assert!(matches!(b.build(), Err(Error::Data(_))));
    }

    #[test]
    fn trajectories_group_steps_in_order() {
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 1, false));
        b.push(ObservationRecord::new("s2", "t", 2, 0), &[2.0]).unwrap();
        b.push(ObservationRecord::new("s0v1", "t", 0, 1), &[0.5]).unwrap();
        b.push(ObservationRecord::new("s0v0", "t", 0, 0), &[0.0]).unwrap();
        let s = b.build().unwrap();
        let t = &s.trajectories()[0];
        assert_eq!(t.steps.iter().map(|s| s.step_index).collect::<Vec<_>>(), vec![0, 2]);
        let ids: Vec<&str> = t.steps[0]
            .records
            .iter()
            .map(|&i| s.observations()[i].id.as_str())
            .collect();
        assert_eq!(ids, vec!["s0v0", "s0v1"]);
    }

    #[test]
    fn filter_by_task_shares_vectors() {
        let store = tiny();
        let f = store.filter(&Selector::task("micro"));
        assert!(!f.empty);
        assert_eq!(f.view.trajectories().len(), 1);
        assert_eq!(f.view.len(), 2);
        assert!(f.view.shares_vectors_with(&store));
        assert_eq!(f.view.embedding(1), store.embedding(1));

        assert_eq!(store.filter(&Selector::all()).view, store);

        let none = store.filter(&Selector::task("nope"));
        assert!(none.empty);
        assert!(none.view.is_empty());
    }

    #[test]
    fn mixed_task_tags_rejected() {
        let mut b = StoreBuilder::new(EncoderProfile::new("t", 1, false));
        b.push(ObservationRecord::new("x", "t", 0, 0).with_task("a"), &[1.0])
            .unwrap();
        b.push(ObservationRecord::new("y", "t", 1, 0).with_task("b"), &[1.0])
            .unwrap();
        assert!(matches!(b.build(), Err(Error::Schema(_))));
    }
}
