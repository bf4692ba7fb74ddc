//! Output files: hash-stamped CSV tables, JSON sidecars, manifests and
//! binary stage-history checkpoints.

use crate::error::{Error, Result};
use crate::forward::StageHistory;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const HASH_PREFIX: &str = "# config_hash=";
pub const MANIFEST_FILE: &str = "manifest.json";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), msg: msg.into() }
}

/// Numeric table whose first `integer_columns` columns hold integers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub config_hash: String,
    pub columns: Vec<String>,
    pub integer_columns: usize,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(config_hash: &str, columns: &[&str], integer_columns: usize) -> Table {
        Table {
            config_hash: config_hash.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            integer_columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "{HASH_PREFIX}{}", self.config_hash)?;
        let mut w = csv::Writer::from_writer(f);
        let csv_err = |e: csv::Error| parse_err(path, e.to_string());
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            let cells = row.iter().enumerate().map(|(j, v)| if j < self.integer_columns { format!("{}", *v as i64) } else { fmt_f64(*v) });
            w.write_record(cells).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Table> {
        let config_hash = read_hash_line(path)?;
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
        let columns: Vec<String> = r.headers().map_err(|e| parse_err(path, e.to_string()))?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        let mut integer_columns = columns.len();
        for (k, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
            let mut row = Vec::with_capacity(rec.len());
            for (j, cell) in rec.iter().enumerate() {
                if j < integer_columns && cell.parse::<i64>().is_err() {
                    integer_columns = j;
                }
                row.push(cell.parse::<f64>().map_err(|e| parse_err(path, format!("row {}: column {j}: {e}", k + 1)))?);
            }
            rows.push(row);
        }
        if rows.is_empty() {
            integer_columns = 0;
        }
        Ok(Table { config_hash, columns, integer_columns, rows })
    }
}

/// Hash from a leading `# config_hash=` line.
pub fn read_hash_line(path: &Path) -> Result<String> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    line.trim_end()
        .strip_prefix(HASH_PREFIX)
        .map(String::from)
        .ok_or_else(|| parse_err(path, "missing config hash line"))
}

/// Metadata stored next to a data file as `<file>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: String,
    pub kind: String,
    pub units: BTreeMap<String, String>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Sidecar {
    pub fn new(config_hash: &str, kind: &str, units: &[(&str, &str)], meta: serde_json::Value) -> Sidecar {
        Sidecar {
            config_hash: config_hash.to_string(),
            kind: kind.to_string(),
            units: units.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            meta,
        }
    }

    pub fn path_for(data: &Path) -> PathBuf {
        let mut s = data.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn write(&self, data: &Path) -> Result<PathBuf> {
        let p = Self::path_for(data);
        write_json(&p, self)?;
        Ok(p)
    }

    pub fn read(data: &Path) -> Result<Sidecar> {
        read_json(&Self::path_for(data))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| parse_err(path, e.to_string()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest directory.
    pub path: String,
    pub kind: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub created_by: String,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Manifest {
    pub fn new(config_hash: &str) -> Manifest {
        Manifest {
            config_hash: config_hash.to_string(),
            created_by: format!("rupture-core {}", env!("CARGO_PKG_VERSION")),
            entries: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }

    /// Records `dir/rel` with its current checksum.
    pub fn add(&mut self, dir: &Path, rel: &str, kind: &str) -> Result<()> {
        let sha256 = sha256_file(&dir.join(rel))?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ManifestEntry { path: rel.to_string(), kind: kind.to_string(), sha256 });
        Ok(())
    }

    pub fn entries_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_FILE);
        write_json(&p, self)?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let p = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        read_json(&p)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checked: usize,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks checksums and that every CSV, sidecar and checkpoint carries the manifest hash.
pub fn verify_manifest(path: &Path) -> Result<VerifyReport> {
    let m = Manifest::read(path)?;
    let dir = if path.is_dir() { path.to_path_buf() } else { path.parent().map(Path::to_path_buf).unwrap_or_default() };
    let mut rep = VerifyReport::default();
    for e in &m.entries {
        let p = dir.join(&e.path);
        rep.checked += 1;
        if !p.exists() {
            rep.problems.push(format!("{}: missing", e.path));
            continue;
        }
        let sha = sha256_file(&p)?;
        if sha != e.sha256 {
            rep.problems.push(format!("{}: checksum {} differs from manifest {}", e.path, sha, e.sha256));
        }
        let hash = if [".csv", ".toml", ".gp"].iter().any(|x| e.path.ends_with(x)) {
            read_hash_line(&p).ok()
        } else if e.path.ends_with(".json") {
            read_json::<serde_json::Value>(&p).ok().and_then(|v| v.get("config_hash").and_then(|h| h.as_str()).map(String::from))
        } else if e.path.ends_with(".bin") {
            read_checkpoint(&p).ok().map(|c| c.config_hash)
        } else {
            Some(m.config_hash.clone())
        };
        match hash {
            Some(h) if h == m.config_hash => {}
            Some(h) => rep.problems.push(format!("{}: config hash {h} differs from manifest {}", e.path, m.config_hash)),
            None => rep.problems.push(format!("{}: no config hash found", e.path)),
        }
    }
    Ok(rep)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RSTAGEH\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Stage history plus the hash of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub history: StageHistory,
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap_or([0; 8]))).collect())
}

/// Layout: 64-byte header (magic, version, flags, N, stage count, fault
/// points, receivers, t0, reserved), the 64-byte ASCII config hash, then
/// little-endian `f64` arrays: step sizes, `V*`, `psi`, measurements, residuals.
pub fn write_checkpoint(path: &Path, config_hash: &str, h: &StageHistory) -> Result<()> {
    if !h.is_complete() {
        return Err(Error::Checkpoint("history is incomplete".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = Vec::with_capacity(64);
    header.extend_from_slice(CHECKPOINT_MAGIC);
    header.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    header.extend_from_slice(&0u32.to_le_bytes());
    for n in [h.n_steps(), h.n_stages(), h.n_fault, h.measurements.len()] {
        header.extend_from_slice(&(n as u64).to_le_bytes());
    }
    header.extend_from_slice(&h.t0.to_le_bytes());
    header.extend_from_slice(&0u64.to_le_bytes());
    debug_assert_eq!(header.len(), 64);
    w.write_all(&header)?;
    let mut hash = [b' '; 64];
    let hb = config_hash.as_bytes();
    hash[..hb.len().min(64)].copy_from_slice(&hb[..hb.len().min(64)]);
    w.write_all(&hash)?;
    put_f64s(&mut w, &h.step_sizes)?;
    put_f64s(&mut w, &h.v_star)?;
    put_f64s(&mut w, &h.psi)?;
    for series in h.measurements.iter().chain(&h.residuals) {
        put_f64s(&mut w, series)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = [0u8; 64];
    r.read_exact(&mut header)?;
    if &header[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap_or([0; 4]));
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap_or([0; 8])) as usize;
    let version = u32_at(8);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("{}: unsupported version {version}", path.display())));
    }
    let (n, stages, m, nrec) = (u64_at(16), u64_at(24), u64_at(32), u64_at(40));
    if stages != 4 * n {
        return Err(Error::Checkpoint(format!("{}: {stages} stages for {n} steps", path.display())));
    }
    let t0 = f64::from_le_bytes(header[48..56].try_into().unwrap_or([0; 8]));
    let mut hash = [0u8; 64];
    r.read_exact(&mut hash)?;
    let config_hash = String::from_utf8_lossy(&hash).trim_end().to_string();
    let step_sizes = get_f64s(&mut r, n)?;
    let mut h = StageHistory::new(t0, step_sizes, m, nrec);
    h.v_star = get_f64s(&mut r, stages * m)?;
    h.psi = get_f64s(&mut r, stages * m)?;
    for k in 0..nrec {
        h.measurements[k] = get_f64s(&mut r, stages)?;
    }
    for k in 0..nrec {
        h.residuals[k] = get_f64s(&mut r, stages)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{}: {} trailing bytes", path.display(), rest.len())));
    }
    Ok(Checkpoint { config_hash, history: h })
}
