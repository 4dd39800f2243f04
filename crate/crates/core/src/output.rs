//! Manifest, CSV and JSON emission with atomic writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::RawParams;
use crate::sim::{PathRecord, SimConfig, StepRecord};
use crate::solver::{GSolution, SolverOptions};
use crate::value::{SolutionSummary, ValueRow};

/// Column order of the `g` grid file.
pub const G_COLUMNS: [&str; 4] = ["z", "g", "gp", "gpp"];
/// Column order of the value-function table.
pub const VALUE_COLUMNS: [&str; 7] = ["u", "f", "h", "hp", "hpp", "big_h", "residual"];

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub params: RawParams,
    pub solver: SolverOptions,
    pub table_points: usize,
    pub solution: SolutionSummary,
    pub simulation: Option<SimConfig>,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        params: RawParams,
        solver: SolverOptions,
        table_points: usize,
        solution: SolutionSummary,
        simulation: Option<SimConfig>,
    ) -> Self {
        let seed = simulation.as_ref().map(|s| s.seed);
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            params,
            solver,
            table_points,
            solution,
            simulation,
            seed,
        }
    }

    /// SHA-256 of the canonical JSON; the creation time is not part of it.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex(&Sha256::digest(&bytes))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    manifest_sha256: String,
    created_unix_s: u64,
    manifest: &'a RunManifest,
}

/// JSON document carrying the manifest hash next to its payload.
#[derive(Serialize)]
pub struct Tagged<'a, T: Serialize> {
    pub manifest_sha256: &'a str,
    #[serde(flatten)]
    pub body: &'a T,
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp: PathBuf = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(io)
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<String> {
    let hash = manifest.hash();
    let created_unix_s =
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let file = ManifestFile { manifest_sha256: hash.clone(), created_unix_s, manifest };
    write_atomic(&dir.join("manifest.json"), &to_json(&file))?;
    Ok(hash)
}

pub fn write_json<T: Serialize>(path: &Path, hash: &str, body: &T) -> Result<()> {
    write_atomic(path, &to_json(&Tagged { manifest_sha256: hash, body }))
}

/// CSV text: a `# manifest_sha256=...` line, the header, then rows.
pub fn csv<const N: usize>(
    hash: &str,
    columns: &[&str; N],
    rows: impl IntoIterator<Item = [f64; N]>,
) -> String {
    let mut s = format!("# manifest_sha256={hash}\n{}\n", columns.join(","));
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
    }
    s
}

pub fn g_grid_csv(hash: &str, sol: &GSolution) -> String {
    csv(hash, &G_COLUMNS, sol.nodes().iter().map(|n| [n.z, n.g, n.gp, n.gpp]))
}

pub fn value_table_csv(hash: &str, rows: &[ValueRow]) -> String {
    csv(hash, &VALUE_COLUMNS, rows.iter().map(|r| [r.u, r.f, r.h, r.hp, r.hpp, r.big_h, r.residual]))
}

/// Per-step path CSV with a leading `path` column.
pub fn paths_csv(hash: &str, paths: &[PathRecord]) -> String {
    let mut cols = [""; 18];
    cols[0] = "path";
    cols[1..].copy_from_slice(&StepRecord::COLUMNS);
    csv(
        hash,
        &cols,
        paths.iter().flat_map(|p| {
            p.steps.iter().map(move |r| {
                let mut row = [0.0; 18];
                row[0] = p.path as f64;
                row[1..].copy_from_slice(&r.values());
                row
            })
        }),
    )
}
