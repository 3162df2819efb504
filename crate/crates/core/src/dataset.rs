//! Latin Hypercube sampling of the parametric space, ground-truth
//! generation, normalization, splits, and the bit-exact binary container.
//!
//! Container layout (little-endian):
//! `dataset.bin` — magic "IBMS", version u32 = 1, header {n_samples u32,
//! n_nodes u32, n_tets u32, n_edges u32, task u8, reserved 7B}; topology
//! block {tets 4xu32 each, edges 2xu32 each, fixed count u32 + ids,
//! load-face count u32 + 3xu32 each}; per-sample records {9 params f64,
//! load_type u8, load_dist u8, pad 6B, coords 3N f64, displacements 3N f64};
//! trailing CRC32 over everything after magic+version.
//! `manifest.json` — spec echo, splits, normalization stats, seed,
//! template hash, schema version.

use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    build_template, BeamParams, LoadDist, LoadType, MeshResolution, MeshTemplate, ParamRanges,
};
use crate::parallel::par_map;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const MAGIC: [u8; 4] = *b"IBMS";

/// Force regimes named by the task formulation.
pub const FORCE_LOW: (f64, f64) = (50e3, 100e3);
pub const FORCE_HIGH: (f64, f64) = (200e3, 250e3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Generalist,
    SpecialistLow,
    SpecialistHigh,
}

impl Task {
    pub fn code(self) -> u8 {
        match self {
            Task::Generalist => 0,
            Task::SpecialistLow => 1,
            Task::SpecialistHigh => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Task::Generalist),
            1 => Ok(Task::SpecialistLow),
            2 => Ok(Task::SpecialistHigh),
            _ => Err(Error::Other(format!("bad task code {c}"))),
        }
    }

    pub fn is_specialist(self) -> bool {
        !matches!(self, Task::Generalist)
    }

    /// Node feature width: pos(3) + 9 continuous + load-dist code, then
    /// one-hot(3) for Generalist or load-type code(1) for Specialist.
    pub fn feature_width(self) -> usize {
        if self.is_specialist() {
            14
        } else {
            16
        }
    }
}

/// Everything needed to produce a dataset deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub force_range: (f64, f64),
    pub allowed_load_types: Vec<LoadType>,
    pub allowed_dists: Vec<LoadDist>,
    pub task: Task,
    pub resolution: MeshResolution,
    pub seed: u64,
    pub ranges: ParamRanges,
}

impl DatasetSpec {
    pub fn preset(task: Task, n_samples: usize, resolution: MeshResolution, seed: u64) -> Self {
        let (force_range, allowed_load_types) = match task {
            Task::Generalist => (
                FORCE_LOW,
                vec![LoadType::BendingY, LoadType::BendingX, LoadType::Torsion],
            ),
            Task::SpecialistLow => (FORCE_LOW, vec![LoadType::BendingY]),
            Task::SpecialistHigh => (FORCE_HIGH, vec![LoadType::BendingY]),
        };
        DatasetSpec {
            n_samples,
            force_range,
            allowed_load_types,
            allowed_dists: vec![LoadDist::Uniform, LoadDist::LinearY],
            task,
            resolution,
            seed,
            ranges: ParamRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::InvalidParam {
                field: field.into(),
                message,
            })
        };
        if self.n_samples < 10 {
            return bad("n_samples", format!("must be >= 10, got {}", self.n_samples));
        }
        let (lo, hi) = self.force_range;
        let in_regime = |r: (f64, f64)| lo >= r.0 && hi <= r.1 && lo < hi;
        if !(in_regime(FORCE_LOW) || in_regime(FORCE_HIGH)) {
            return bad(
                "force_range",
                format!("({lo}, {hi}) not within the low or high regime"),
            );
        }
        if self.allowed_load_types.is_empty() || self.allowed_dists.is_empty() {
            return bad("allowed_load_types", "must be non-empty".into());
        }
        if self.task.is_specialist() && self.allowed_load_types != vec![LoadType::BendingY] {
            return bad(
                "allowed_load_types",
                "specialist tasks are BendingY-only".into(),
            );
        }
        self.ranges.validate()
    }

    /// Continuous ranges with the force dimension replaced by the regime.
    fn effective_ranges(&self) -> [(f64, f64); 9] {
        let mut r = self.ranges.as_array();
        r[8] = self.force_range;
        r
    }
}

/// Latin Hypercube Sampling: per continuous dimension, one sample in each of
/// `n` equal-width bins (independently permuted); categoricals uniform.
pub fn lhs_sample(spec: &DatasetSpec) -> Vec<BeamParams> {
    lhs_stream(spec, 0, spec.n_samples)
}

/// Deterministic LHS stream; `salt` = 0 is the main stream, larger salts
/// produce the reserve streams used to replace failed solves.
pub fn lhs_stream(spec: &DatasetSpec, salt: u64, n: usize) -> Vec<BeamParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (salt.wrapping_mul(0x9e3779b97f4a7c15)));
    let ranges = spec.effective_ranges();
    let mut coords = vec![[0.0f64; 9]; n];
    for (dim, (lo, hi)) in ranges.iter().enumerate() {
        let mut bins: Vec<usize> = (0..n).collect();
        bins.shuffle(&mut rng);
        for (i, &bin) in bins.iter().enumerate() {
            let u: f64 = rng.gen();
            coords[i][dim] = lo + (bin as f64 + u) / n as f64 * (hi - lo);
        }
    }
    coords
        .into_iter()
        .map(|c| {
            let lt = spec.allowed_load_types[rng.gen_range(0..spec.allowed_load_types.len())];
            let ld = spec.allowed_dists[rng.gen_range(0..spec.allowed_dists.len())];
            BeamParams::from_continuous(c, lt, ld)
        })
        .collect()
}

/// Disjoint, exhaustive 80/10/10 split (floor rule, remainder to train).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

pub fn split(n: usize, seed: u64) -> Splits {
    let mut idx: Vec<u32> = (0..n as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5354504c49545321);
    idx.shuffle(&mut rng);
    let n_val = n / 10;
    let n_test = n / 10;
    let test = idx.split_off(n - n_test);
    let val = idx.split_off(n - n_test - n_val);
    Splits {
        train: idx,
        val,
        test,
    }
}

/// Raw (unnormalized) node feature vector for one node of one sample.
pub fn feature_vector(task: Task, p: &BeamParams, pos: [f64; 3]) -> Vec<f64> {
    let mut f = Vec::with_capacity(task.feature_width());
    f.extend_from_slice(&pos);
    f.extend_from_slice(&p.continuous());
    f.push(p.load_dist.code() as f64);
    if task.is_specialist() {
        f.push(p.load_type.code() as f64);
    } else {
        for k in 0..3u8 {
            f.push(if p.load_type.code() == k { 1.0 } else { 0.0 });
        }
    }
    debug_assert_eq!(f.len(), task.feature_width());
    f
}

/// Min-max statistics, computed from the training split only. Constant
/// features are flagged and normalize to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
    pub constant_features: Vec<bool>,
    pub disp_min: [f64; 3],
    pub disp_max: [f64; 3],
    pub constant_disp: [bool; 3],
}

impl NormalizationStats {
    pub fn compute(ds: &Dataset, train: &[u32]) -> Self {
        let w = ds.spec.task.feature_width();
        let mut fmin = vec![f64::INFINITY; w];
        let mut fmax = vec![f64::NEG_INFINITY; w];
        let mut dmin = [f64::INFINITY; 3];
        let mut dmax = [f64::NEG_INFINITY; 3];
        for &s in train {
            let sample = &ds.samples[s as usize];
            for (node, &pos) in sample.coords.iter().enumerate() {
                let f = feature_vector(ds.spec.task, &sample.params, pos);
                for (k, &v) in f.iter().enumerate() {
                    fmin[k] = fmin[k].min(v);
                    fmax[k] = fmax[k].max(v);
                }
                for c in 0..3 {
                    dmin[c] = dmin[c].min(sample.disp[node][c]);
                    dmax[c] = dmax[c].max(sample.disp[node][c]);
                }
            }
        }
        let constant_features = fmin.iter().zip(&fmax).map(|(a, b)| a >= b).collect();
        let constant_disp = [dmin[0] >= dmax[0], dmin[1] >= dmax[1], dmin[2] >= dmax[2]];
        NormalizationStats {
            feature_min: fmin,
            feature_max: fmax,
            constant_features,
            disp_min: dmin,
            disp_max: dmax,
            constant_disp,
        }
    }

    pub fn normalize_feature(&self, k: usize, x: f64) -> f64 {
        if self.constant_features[k] {
            0.0
        } else {
            2.0 * (x - self.feature_min[k]) / (self.feature_max[k] - self.feature_min[k]) - 1.0
        }
    }

    pub fn normalize_disp(&self, c: usize, u: f64) -> f64 {
        if self.constant_disp[c] {
            0.0
        } else {
            2.0 * (u - self.disp_min[c]) / (self.disp_max[c] - self.disp_min[c]) - 1.0
        }
    }

    pub fn denormalize_disp(&self, c: usize, un: f64) -> f64 {
        if self.constant_disp[c] {
            0.0
        } else {
            self.disp_min[c] + (un + 1.0) / 2.0 * (self.disp_max[c] - self.disp_min[c])
        }
    }

    /// Half-range of displacement component `c` in mm (normalization scale).
    pub fn disp_half_range(&self, c: usize) -> f64 {
        (self.disp_max[c] - self.disp_min[c]) / 2.0
    }

    /// Half-range of position feature axis `k` (features 0..3) in mm.
    pub fn pos_half_range(&self, k: usize) -> f64 {
        (self.feature_max[k] - self.feature_min[k]) / 2.0
    }

    /// Fingerprint binding checkpoints to the stats they were trained with.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for v in self.feature_min.iter().chain(&self.feature_max) {
            bytes.extend(v.to_le_bytes());
        }
        for v in self.disp_min.iter().chain(&self.disp_max) {
            bytes.extend(v.to_le_bytes());
        }
        crate::geometry::fnv1a_bytes(&bytes)
    }
}

/// Shared topology block (identical for every sample of a dataset).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub n_nodes: usize,
    pub tets: Vec<[u32; 4]>,
    pub edges: Vec<[u32; 2]>,
    pub fixed_nodes: Vec<u32>,
    pub load_faces: Vec<[u32; 3]>,
}

impl Topology {
    pub fn from_template(t: &MeshTemplate) -> Self {
        Topology {
            n_nodes: t.n_nodes(),
            tets: t.tets.clone(),
            edges: t.edges.clone(),
            fixed_nodes: t.fixed_nodes.clone(),
            load_faces: t.load_faces.clone(),
        }
    }

    /// Directed edge list (both directions), sorted by destination then
    /// source — the canonical message-passing order.
    pub fn directed_edges(&self) -> Rc<Vec<[u32; 2]>> {
        let mut e: Vec<[u32; 2]> = Vec::with_capacity(2 * self.edges.len());
        for &[a, b] in &self.edges {
            e.push([a, b]);
            e.push([b, a]);
        }
        e.sort_unstable_by_key(|&[src, dst]| (dst, src));
        Rc::new(e)
    }
}

/// One solved sample: parameters, node coordinates, displacement field.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub params: BeamParams,
    pub coords: Vec<[f64; 3]>,
    pub disp: Vec<[f64; 3]>,
}

/// In-memory dataset: spec, shared topology, per-sample fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub topo: Topology,
    pub samples: Vec<Sample>,
    pub template_hash: u64,
}

/// Manifest persisted beside the binary container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub spec: DatasetSpec,
    pub splits: Splits,
    pub stats: NormalizationStats,
    pub seed: u64,
    pub template_hash: u64,
    /// Sample indices whose original draw failed and was replaced from the
    /// reserve stream.
    pub replaced_samples: Vec<usize>,
}

// --- binary encoding -----------------------------------------------------

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend(v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend(v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::TruncatedFile {
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

fn encode_record(sample: &Sample, buf: &mut Vec<u8>) {
    for v in sample.params.continuous() {
        put_f64(buf, v);
    }
    buf.push(sample.params.load_type.code());
    buf.push(sample.params.load_dist.code());
    buf.extend([0u8; 6]);
    for p in &sample.coords {
        for &v in p {
            put_f64(buf, v);
        }
    }
    for u in &sample.disp {
        for &v in u {
            put_f64(buf, v);
        }
    }
}

fn record_len(n_nodes: usize) -> usize {
    9 * 8 + 2 + 6 + 2 * 3 * n_nodes * 8
}

fn decode_record(r: &mut Reader, n_nodes: usize) -> Result<Sample> {
    let mut c = [0.0; 9];
    for v in c.iter_mut() {
        *v = r.f64()?;
    }
    let lt = LoadType::from_code(r.u8()?)?;
    let ld = LoadDist::from_code(r.u8()?)?;
    r.take(6)?;
    let params = BeamParams::from_continuous(c, lt, ld);
    let mut coords = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        coords.push([r.f64()?, r.f64()?, r.f64()?]);
    }
    let mut disp = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        disp.push([r.f64()?, r.f64()?, r.f64()?]);
    }
    Ok(Sample {
        params,
        coords,
        disp,
    })
}

fn encode_topology(topo: &Topology, buf: &mut Vec<u8>) {
    for t in &topo.tets {
        for &v in t {
            put_u32(buf, v);
        }
    }
    for e in &topo.edges {
        for &v in e {
            put_u32(buf, v);
        }
    }
    put_u32(buf, topo.fixed_nodes.len() as u32);
    for &v in &topo.fixed_nodes {
        put_u32(buf, v);
    }
    put_u32(buf, topo.load_faces.len() as u32);
    for f in &topo.load_faces {
        for &v in f {
            put_u32(buf, v);
        }
    }
}

/// Serialize the full container to bytes.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend(MAGIC);
    put_u32(&mut buf, SCHEMA_VERSION);
    let payload_start = buf.len();
    put_u32(&mut buf, ds.samples.len() as u32);
    put_u32(&mut buf, ds.topo.n_nodes as u32);
    put_u32(&mut buf, ds.topo.tets.len() as u32);
    put_u32(&mut buf, ds.topo.edges.len() as u32);
    buf.push(ds.spec.task.code());
    buf.extend([0u8; 7]);
    encode_topology(&ds.topo, &mut buf);
    for s in &ds.samples {
        encode_record(s, &mut buf);
    }
    let crc = crc32fast::hash(&buf[payload_start..]);
    put_u32(&mut buf, crc);
    buf
}

/// Parse a container; `spec` supplies the fields the binary does not carry.
pub fn decode_dataset(bytes: &[u8], spec: &DatasetSpec, template_hash: u64) -> Result<Dataset> {
    if bytes.len() < 8 {
        return Err(Error::TruncatedFile {
            needed: 8,
            available: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[0..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: SCHEMA_VERSION,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::TruncatedFile {
            needed: 12,
            available: bytes.len(),
        });
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let n_samples = r.u32()? as usize;
    let n_nodes = r.u32()? as usize;
    let n_tets = r.u32()? as usize;
    let n_edges = r.u32()? as usize;
    let task = Task::from_code(r.u8()?)?;
    r.take(7)?;
    if task != spec.task {
        return Err(Error::ConfigMismatch(format!(
            "container task {task:?} != spec task {:?}",
            spec.task
        )));
    }
    let mut tets = Vec::with_capacity(n_tets);
    for _ in 0..n_tets {
        tets.push([r.u32()?, r.u32()?, r.u32()?, r.u32()?]);
    }
    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        edges.push([r.u32()?, r.u32()?]);
    }
    let n_fixed = r.u32()? as usize;
    let mut fixed_nodes = Vec::with_capacity(n_fixed);
    for _ in 0..n_fixed {
        fixed_nodes.push(r.u32()?);
    }
    let n_faces = r.u32()? as usize;
    let mut load_faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        load_faces.push([r.u32()?, r.u32()?, r.u32()?]);
    }
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        samples.push(decode_record(&mut r, n_nodes)?);
    }
    Ok(Dataset {
        spec: spec.clone(),
        topo: Topology {
            n_nodes,
            tets,
            edges,
            fixed_nodes,
            load_faces,
        },
        samples,
        template_hash,
    })
}

pub fn write_dataset(dir: &Path, ds: &Dataset, manifest: &DatasetManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("dataset.bin"), encode_dataset(ds))?;
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let json = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let bytes = std::fs::read(dir.join("dataset.bin"))?;
    let ds = decode_dataset(&bytes, &manifest.spec, manifest.template_hash)?;
    Ok((ds, manifest))
}

// --- generation ----------------------------------------------------------

/// Outcome summary of a generation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSummary {
    pub n_samples: usize,
    pub n_replaced: usize,
    pub resumed_from: usize,
    pub wall_seconds: f64,
}

const PART_MAGIC: [u8; 4] = *b"IBPT";

/// Generate (or resume generating) a dataset into `dir`.
///
/// Partial progress is stored in `dataset.part` as a raw record stream; a
/// rerun skips the completed prefix and reproduces identical bytes. When all
/// samples exist the container and manifest are written and the part file
/// removed. More than 5% failed solves aborts the run.
pub fn generate(spec: &DatasetSpec, dir: &Path) -> Result<GenSummary> {
    generate_with_limit(spec, dir, usize::MAX)
}

/// Like [`generate`] but stops after producing `limit` new samples
/// (test hook for resumability).
pub fn generate_with_limit(spec: &DatasetSpec, dir: &Path, limit: usize) -> Result<GenSummary> {
    spec.validate()?;
    let t0 = std::time::Instant::now();
    std::fs::create_dir_all(dir)?;
    let template = build_template(spec.resolution);
    let topo = Topology::from_template(&template);
    let n_nodes = topo.n_nodes;

    if dir.join("dataset.bin").exists() && dir.join("manifest.json").exists() {
        // Complete output: no-op.
        let (ds, _) = read_dataset(dir)?;
        if ds.samples.len() == spec.n_samples {
            return Ok(GenSummary {
                n_samples: spec.n_samples,
                n_replaced: 0,
                resumed_from: spec.n_samples,
                wall_seconds: t0.elapsed().as_secs_f64(),
            });
        }
    }

    // Primary parameter stream plus a failure ledger re-derived on resume
    // (replacements are deterministic, so re-solving decisions replay).
    let params = lhs_sample(spec);
    let reserve = lhs_stream(spec, 1, spec.n_samples.max(16) / 4 + 8);

    // Load completed prefix from the part file.
    let part_path = dir.join("dataset.part");
    let rec_len = record_len(n_nodes);
    let mut done: Vec<Sample> = Vec::new();
    let mut replaced: Vec<usize> = Vec::new();
    if part_path.exists() {
        let bytes = std::fs::read(&part_path)?;
        if bytes.len() >= 8 && bytes[0..4] == PART_MAGIC {
            let n_complete = ((bytes.len() - 8) / rec_len).min(spec.n_samples);
            let mut r = Reader {
                buf: &bytes[8..8 + n_complete * rec_len],
                pos: 0,
            };
            for _ in 0..n_complete {
                done.push(decode_record(&mut r, n_nodes)?);
            }
        }
    }
    let resumed_from = done.len();

    // Re-derive which of the completed samples were replacements.
    let mut reserve_used = 0usize;
    for (i, s) in done.iter().enumerate() {
        if s.params != params[i] {
            replaced.push(i);
            reserve_used += 1;
        }
    }

    let mut part = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&part_path)?;
    if resumed_from == 0 {
        let mut header = Vec::new();
        header.extend(PART_MAGIC);
        put_u32(&mut header, SCHEMA_VERSION);
        part.write_all(&header)?;
    }

    let max_failures = spec.n_samples / 20 + 1;
    let mut produced = 0usize;
    let mut i = resumed_from;
    while i < spec.n_samples && produced < limit {
        // Solve a parallel chunk, preserving index order in the output.
        let chunk = (spec.n_samples - i).min(8).min(limit - produced);
        let results = par_map(chunk, |k| {
            let p = params[i + k];
            template.instantiate(&p).and_then(|mesh| {
                crate::fea::solve_on_mesh(&mesh, &p).map(|r| (mesh, r))
            })
        });
        for (k, res) in results.into_iter().enumerate() {
            let idx = i + k;
            let (mesh, sim) = match res {
                Ok(v) => v,
                Err(e) => {
                    // Replace from the reserve stream, deterministically.
                    if replaced.len() + 1 > max_failures {
                        return Err(Error::SampleFailed {
                            sample: idx,
                            source: Box::new(e),
                        });
                    }
                    let p = reserve[reserve_used];
                    reserve_used += 1;
                    replaced.push(idx);
                    let mesh = template.instantiate(&p)?;
                    let sim = crate::fea::solve_on_mesh(&mesh, &p)?;
                    (mesh, sim)
                }
            };
            let sample = Sample {
                params: sim.params,
                coords: mesh.nodes,
                disp: sim.displacements,
            };
            let mut buf = Vec::with_capacity(rec_len);
            encode_record(&sample, &mut buf);
            part.write_all(&buf)?;
            done.push(sample);
        }
        produced += chunk;
        i += chunk;
    }
    part.flush()?;
    drop(part);

    if done.len() < spec.n_samples {
        return Ok(GenSummary {
            n_samples: done.len(),
            n_replaced: replaced.len(),
            resumed_from,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
    }

    let ds = Dataset {
        spec: spec.clone(),
        topo,
        samples: done,
        template_hash: template.template_hash,
    };
    let splits = split(spec.n_samples, spec.seed);
    let stats = NormalizationStats::compute(&ds, &splits.train);
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        splits,
        stats,
        seed: spec.seed,
        template_hash: template.template_hash,
        replaced_samples: replaced.clone(),
    };
    write_dataset(dir, &ds, &manifest)?;
    std::fs::remove_file(&part_path).ok();
    Ok(GenSummary {
        n_samples: spec.n_samples,
        n_replaced: replaced.len(),
        resumed_from,
        wall_seconds: t0.elapsed().as_secs_f64(),
    })
}
