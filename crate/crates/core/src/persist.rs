//! Run-directory file formats.
//!
//! Everything is plain structured text so runs can be diffed and plotted
//! externally. Every emitted file opens with a `# config_hash=<hex>` line
//! tying it to the configuration that produced it. Archives are
//! line-delimited JSON records in cell order with a fixed field order
//! (cell, descriptor, fitness, embedding, params, eval_seeds); feature maps
//! persist only their seed, shape, bandwidth, and normalizer state, and are
//! resampled on load.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::archive::{ArchiveConfig, GridArchive, Occupant};
use crate::driver::{DescriptorMap, MetricsRow, RunState};
use crate::embedding::RffMap;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const RFF_FILE: &str = "rff.json";
pub const DESCRIPTOR_FILE: &str = "descriptor.json";
pub const SOFT_ARCHIVE_FILE: &str = "archive.jsonl";
pub const ELITIST_ARCHIVE_FILE: &str = "elitist.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

fn hash_header(config_hash: &str) -> String {
    format!("# config_hash={config_hash}\n")
}

/// One archive record; the serialization order of these fields is the file
/// format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchiveRecord<T: Real> {
    cell: Vec<usize>,
    descriptor: Vec<T>,
    fitness: T,
    embedding: Vec<T>,
    params: Vec<T>,
    eval_seeds: Vec<u64>,
}

pub fn write_archive<T: Real + Serialize>(
    path: &Path,
    archive: &GridArchive<T>,
    config_hash: &str,
) -> Result<()> {
    let mut out = String::new();
    out.push_str(&hash_header(config_hash));
    for (cell, occ) in archive.occupants() {
        let record = ArchiveRecord {
            cell: archive.config.unflatten(cell),
            descriptor: occ.descriptor.clone(),
            fitness: occ.fitness,
            embedding: occ.embedding.clone(),
            params: occ.params.clone(),
            eval_seeds: occ.eval_seeds.clone(),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Reads archive records back into a fresh archive with the given config.
/// Records re-insert through the elitist rule, which reproduces the stored
/// occupants exactly when cells are unique (they are, by construction).
pub fn read_archive<T: Real + DeserializeOwned>(
    path: &Path,
    config: ArchiveConfig<T>,
) -> Result<GridArchive<T>> {
    let text = fs::read_to_string(path)?;
    let mut archive = GridArchive::elitist(config)?;
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let record: ArchiveRecord<T> = serde_json::from_str(line)?;
        archive.insert(Occupant {
            params: record.params,
            fitness: record.fitness,
            descriptor: record.descriptor,
            embedding: record.embedding,
            eval_seeds: record.eval_seeds,
        });
    }
    Ok(archive)
}

pub fn write_rff<T: Real + Serialize>(
    path: &Path,
    rff: &RffMap<T>,
    config_hash: &str,
) -> Result<()> {
    let mut out = hash_header(config_hash);
    out.push_str(&serde_json::to_string_pretty(rff)?);
    out.push('\n');
    atomic_write(path, out.as_bytes())
}

pub fn read_rff<T: Real + DeserializeOwned>(path: &Path) -> Result<RffMap<T>> {
    let text = fs::read_to_string(path)?;
    let body: String =
        text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let mut rff: RffMap<T> = serde_json::from_str(&body)?;
    rff.resample_features();
    Ok(rff)
}

pub fn write_descriptor_map<T: Real + Serialize>(
    path: &Path,
    map: &DescriptorMap<T>,
    config_hash: &str,
) -> Result<()> {
    let mut out = hash_header(config_hash);
    out.push_str(&serde_json::to_string(map)?);
    out.push('\n');
    atomic_write(path, out.as_bytes())
}

pub fn read_descriptor_map<T: Real + DeserializeOwned>(path: &Path) -> Result<DescriptorMap<T>> {
    let text = fs::read_to_string(path)?;
    let body: String =
        text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    Ok(serde_json::from_str(&body)?)
}

/// Metrics CSV: one row per iteration.
pub fn write_metrics<T: Real>(
    path: &Path,
    rows: &[MetricsRow<T>],
    config_hash: &str,
) -> Result<()> {
    let mut out = hash_header(config_hash);
    out.push_str("iteration,evaluations,qd_score,coverage,best_fitness,mean_fitness\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.iteration,
            r.evaluations,
            r.qd_score.to_f64_lossy(),
            r.coverage.to_f64_lossy(),
            r.best_fitness.to_f64_lossy(),
            r.mean_fitness.to_f64_lossy()
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_checkpoint<T: Real + Serialize>(
    path: &Path,
    state: &RunState<T>,
    config_hash: &str,
) -> Result<()> {
    let mut out = hash_header(config_hash);
    out.push_str(&serde_json::to_string(state)?);
    out.push('\n');
    atomic_write(path, out.as_bytes())
}

pub fn read_checkpoint<T: Real + DeserializeOwned>(path: &Path) -> Result<RunState<T>> {
    let text = fs::read_to_string(path)?;
    let body: String =
        text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    let mut state: RunState<T> = serde_json::from_str(&body)?;
    state.rff.resample_features();
    for emitter in &mut state.emitters {
        emitter.cma.refresh_eigen();
    }
    Ok(state)
}

/// Writes the standard output set of a run into `dir`.
pub fn write_run_outputs<T: Real + Serialize>(
    dir: &Path,
    state: &RunState<T>,
    config_hash: &str,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rff(&dir.join(RFF_FILE), &state.rff, config_hash)?;
    write_descriptor_map(&dir.join(DESCRIPTOR_FILE), &state.descriptor_map, config_hash)?;
    write_archive(&dir.join(SOFT_ARCHIVE_FILE), &state.soft, config_hash)?;
    write_archive(&dir.join(ELITIST_ARCHIVE_FILE), &state.elitist, config_hash)?;
    write_metrics(&dir.join(METRICS_FILE), &state.metrics, config_hash)?;
    Ok(())
}

/// Generic CSV emitter with the hash header; rows are preformatted.
pub fn write_csv(path: &Path, header_row: &str, rows: &[String], config_hash: &str) -> Result<()> {
    let mut out = hash_header(config_hash);
    out.push_str(header_row);
    out.push('\n');
    for r in rows {
        out.push_str(r);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(Error::from)
}
