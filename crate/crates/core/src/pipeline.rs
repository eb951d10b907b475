//! End-to-end study pipeline: render the bank, extract descriptors,
//! aggregate ratings, scale, and correlate.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::StimulusBank;
use crate::descriptors::{extract_all, format_float, DescriptorConfig, FeatureTable, DESCRIPTOR_NAMES};
use crate::error::{Error, Result};
use crate::nmds::{scree_solutions, MdsConfig, MdsSolution, RSquared};
use crate::ratings::{aggregate, read_jsonl, ExclusionPolicy, ParticipantStatus};
use crate::stats::{
    collinearity_filter, correlation_table, feature_agglomeration, CorrelationReport, Dendrogram,
    Linkage, COLLINEARITY_THRESHOLD,
};
use crate::wav::write_wav;

pub const MANIFEST: &str = "manifest.json";
pub const MATRIX: &str = "matrix.csv";
pub const FEATURES: &str = "features.csv";
pub const SCREE: &str = "scree.csv";
pub const SOLUTION: &str = "solution.json";
pub const TABLE: &str = "table.csv";
pub const TREE: &str = "tree.json";
pub const FAILED: &str = "FAILED";
pub const STIMULI_DIR: &str = "stimuli";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdsSettings {
    pub dims: usize,
    pub max_iters: usize,
    pub stress_tol: f64,
    pub restarts: usize,
    pub r_squared: RSquared,
    /// Scree curve covers `1..=scree_max_dims`.
    pub scree_max_dims: usize,
}

impl Default for MdsSettings {
    fn default() -> Self {
        let d = MdsConfig::default();
        Self {
            dims: d.dims,
            max_iters: d.max_iters,
            stress_tol: d.stress_tol,
            restarts: d.restarts,
            r_squared: d.r_squared,
            scree_max_dims: 6,
        }
    }
}

impl MdsSettings {
    pub fn config(&self, seed: u64) -> MdsConfig {
        MdsConfig {
            dims: self.dims,
            max_iters: self.max_iters,
            stress_tol: self.stress_tol,
            restarts: self.restarts,
            seed,
            r_squared: self.r_squared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollinearitySettings {
    pub threshold: f64,
    /// Retention priority, most relevant first. Must name every descriptor.
    pub priority: Vec<String>,
}

impl Default for CollinearitySettings {
    fn default() -> Self {
        Self {
            threshold: COLLINEARITY_THRESHOLD,
            priority: DESCRIPTOR_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub bank: PathBuf,
    pub ratings: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub mds: MdsSettings,
    #[serde(default)]
    pub exclusion: ExclusionPolicy,
    #[serde(default)]
    pub collinearity: CollinearitySettings,
    #[serde(default)]
    pub descriptors: DescriptorConfig,
    #[serde(default)]
    pub linkage: Linkage,
    #[serde(default = "default_true")]
    pub write_wavs: bool,
}

fn default_true() -> bool {
    true
}

impl PipelineConfig {
    pub fn new(seed: u64, bank: PathBuf, ratings: PathBuf, out: PathBuf) -> Self {
        Self {
            seed,
            bank,
            ratings,
            out,
            mds: MdsSettings::default(),
            exclusion: ExclusionPolicy::default(),
            collinearity: CollinearitySettings::default(),
            descriptors: DescriptorConfig::default(),
            linkage: Linkage::default(),
            write_wavs: true,
        }
    }

    /// Parses TOML; relative paths are resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| Error::config(format!("pipeline config: {e}")))?;
        for path in [&mut cfg.bank, &mut cfg.ratings, &mut cfg.out] {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mds;
        if m.dims == 0 || m.scree_max_dims == 0 {
            return Err(Error::config("mds.dims and mds.scree_max_dims must be >= 1"));
        }
        self.mds.config(self.seed).validate(usize::MAX)?;
        if !(0.0..=1.0).contains(&self.collinearity.threshold) {
            return Err(Error::config(format!(
                "collinearity threshold must lie in [0, 1], got {}",
                self.collinearity.threshold
            )));
        }
        if let Some(name) = DESCRIPTOR_NAMES
            .iter()
            .find(|n| !self.collinearity.priority.iter().any(|p| p == *n))
        {
            return Err(Error::config(format!(
                "descriptor {name} is missing from collinearity.priority"
            )));
        }
        if let Some(name) = self
            .collinearity
            .priority
            .iter()
            .find(|p| !DESCRIPTOR_NAMES.contains(&p.as_str()))
        {
            return Err(Error::config(format!("unknown descriptor {name} in collinearity.priority")));
        }
        Ok(())
    }

    /// Hash of every analysis setting plus the bank and ratings contents.
    /// Paths do not contribute, so moving inputs or outputs keeps the hash.
    pub fn hash(&self, bank_bytes: &[u8], ratings_bytes: &[u8]) -> Result<String> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            for key in ["bank", "ratings", "out"] {
                map.remove(key);
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&value)?);
        hasher.update(Sha256::digest(bank_bytes));
        hasher.update(Sha256::digest(ratings_bytes));
        Ok(hex::encode(hasher.finalize()))
    }
}

/// JSON artifact body with the provenance stamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stimuli: usize,
    pub participants: usize,
    pub included_participants: usize,
    pub dims: usize,
    pub stress1: f64,
    pub r_squared: f64,
    pub retained_features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub created_at: String,
    pub config: PipelineConfig,
    pub summary: RunSummary,
    pub participants: Vec<ParticipantStatus>,
    pub artifacts: Vec<ArtifactEntry>,
}

/// In-memory results of a full run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub features: FeatureTable,
    pub scree: Vec<MdsSolution>,
    pub solution: MdsSolution,
    pub retained: Vec<String>,
    pub table: CorrelationReport,
    pub tree: Dendrogram,
    pub manifest: Manifest,
}

fn stage<T>(name: &'static str, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

/// Provenance lines written at the top of every CSV artifact.
pub fn csv_preamble(config_hash: &str, seed: u64) -> Vec<String> {
    vec![format!("config_hash={config_hash}"), format!("seed={seed}")]
}

pub fn write_scree_csv<W: std::io::Write>(out: W, rows: &[MdsSolution], preamble: &[String]) -> Result<()> {
    let mut out = out;
    for line in preamble {
        writeln!(out, "# {line}").map_err(|e| Error::io("<scree csv>", e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dims", "stress1", "r_squared", "r_squared_alternative", "restart_index"])?;
    for s in rows {
        w.write_record([
            s.dims.to_string(),
            format_float(s.stress1),
            format_float(s.r_squared),
            format_float(s.r_squared_alternative),
            s.restart_index.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<scree csv>", e))?;
    Ok(())
}

fn artifact_entries(out: &Path) -> Result<Vec<ArtifactEntry>> {
    let mut files = Vec::new();
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path);
            }
        }
    }
    let mut entries = Vec::new();
    for path in files {
        let rel = path
            .strip_prefix(out)
            .expect("path under output dir")
            .to_string_lossy()
            .replace('\\', "/");
        if rel == MANIFEST || rel == FAILED {
            continue;
        }
        let bytes = read_bytes(&path)?;
        entries.push(ArtifactEntry {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}

/// Runs every stage, writing artifacts into `config.out` as they complete.
/// On failure a `FAILED` marker naming the stage is left beside whatever
/// was written.
pub fn run_full(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let out = config.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let marker = out.join(FAILED);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    let result = run_stages(config, &out);
    if let Err(err) = &result {
        let stage = err.stage().unwrap_or("setup");
        let text = format!("stage: {stage}\nerror: {err}\n");
        // best effort: the original error matters more than the marker
        let _ = fs::write(&marker, text);
    }
    result
}

fn run_stages(config: &PipelineConfig, out: &Path) -> Result<RunReport> {
    let seed = config.seed;
    let bank_bytes = stage("bank", read_bytes(&config.bank))?;
    let ratings_bytes = stage("ratings", read_bytes(&config.ratings))?;
    let config_hash = config.hash(&bank_bytes, &ratings_bytes)?;
    let preamble = csv_preamble(&config_hash, seed);

    let bank: StimulusBank = stage(
        "bank",
        serde_json::from_slice(&bank_bytes)
            .map_err(Error::from)
            .and_then(|b: StimulusBank| b.validate().map(|_| b)),
    )?;
    let ids = bank.ids();
    let rendered = stage("render", bank.render_all())?;
    if config.write_wavs {
        stage("render", (|| {
            let dir = out.join(STIMULI_DIR);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (id, r) in ids.iter().zip(&rendered) {
                write_wav(&r.buffer, dir.join(format!("{id}.wav")))?;
            }
            Ok(())
        })())?;
    }

    let buffers: Vec<_> = rendered.iter().map(|r| r.buffer.clone()).collect();
    let features = stage("features", (|| {
        let vectors = extract_all(&buffers, &config.descriptors)?;
        let table = FeatureTable::from_vectors(ids.clone(), &vectors);
        let mut bytes = Vec::new();
        table.write_csv(&mut bytes, &preamble)?;
        write_file(&out.join(FEATURES), &bytes)?;
        Ok(table)
    })())?;

    let aggregate = stage("ratings", (|| {
        let records = read_jsonl(BufReader::new(ratings_bytes.as_slice()))?;
        let agg = aggregate(&records, &ids, &config.exclusion)?;
        let mut bytes = Vec::new();
        agg.matrix.write_csv(&mut bytes, &preamble)?;
        write_file(&out.join(MATRIX), &bytes)?;
        Ok(agg)
    })())?;

    let mds_cfg = config.mds.config(seed);
    let scree = stage("mds", (|| {
        let max_dims = config.mds.scree_max_dims.max(config.mds.dims);
        let rows = scree_solutions(&aggregate.matrix, max_dims, &mds_cfg)?;
        let mut bytes = Vec::new();
        write_scree_csv(&mut bytes, &rows, &preamble)?;
        write_file(&out.join(SCREE), &bytes)?;
        Ok(rows)
    })())?;
    let solution = scree[config.mds.dims - 1].clone();
    stage(
        "mds",
        write_json(
            &out.join(SOLUTION),
            &Stamped {
                config_hash: config_hash.clone(),
                seed,
                body: &solution,
            },
        ),
    )?;

    let columns: Vec<(String, Vec<f64>)> = features
        .names
        .iter()
        .map(|n| (n.clone(), features.column(n).expect("own column")))
        .collect();
    let retained = stage(
        "collinearity",
        collinearity_filter(&columns, config.collinearity.threshold, &config.collinearity.priority),
    )?;

    let table = stage("correlate", (|| {
        let kept: Vec<(String, Vec<f64>)> = retained
            .iter()
            .map(|n| (n.clone(), features.column(n).expect("retained column")))
            .collect();
        let table = correlation_table(&solution.coords, &kept)?;
        let mut bytes = Vec::new();
        table.write_csv(&mut bytes, &preamble)?;
        write_file(&out.join(TABLE), &bytes)?;
        Ok(table)
    })())?;

    let tree = stage("dendrogram", (|| {
        let tree = feature_agglomeration(&columns, config.linkage)?;
        write_json(
            &out.join(TREE),
            &Stamped {
                config_hash: config_hash.clone(),
                seed,
                body: &tree,
            },
        )?;
        Ok(tree)
    })())?;

    let manifest = stage("manifest", (|| {
        let manifest = Manifest {
            tool: "timbre".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.clone(),
            seed,
            created_at: Utc::now().to_rfc3339(),
            config: config.clone(),
            summary: RunSummary {
                stimuli: ids.len(),
                participants: aggregate.participants.len(),
                included_participants: aggregate.included(),
                dims: solution.dims,
                stress1: solution.stress1,
                r_squared: solution.r_squared,
                retained_features: retained.clone(),
            },
            participants: aggregate.participants.clone(),
            artifacts: artifact_entries(out)?,
        };
        write_json(&out.join(MANIFEST), &manifest)?;
        Ok(manifest)
    })())?;

    Ok(RunReport {
        out_dir: out.to_path_buf(),
        config_hash,
        features,
        scree,
        solution,
        retained,
        table,
        tree,
        manifest,
    })
}
