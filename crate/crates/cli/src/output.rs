use anyhow::{Context, Result};
use rupture_core::config::RunConfig;
use rupture_core::io::{write_checkpoint, Manifest, Sidecar, Table, HASH_PREFIX};
use rupture_core::forward::StageHistory;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

pub const UNITS: &[(&str, &str)] = &[
    ("x", "km"),
    ("y", "km"),
    ("time", "s"),
    ("displacement", "m"),
    ("velocity", "m/s"),
    ("slip", "m"),
    ("stress", "MPa"),
    ("misfit", "data units squared times s"),
];

/// Output directory whose files are all recorded in one manifest.
pub struct Output {
    pub dir: PathBuf,
    pub hash: String,
    manifest: Manifest,
}

impl Output {
    pub fn create(dir: &Path, cfg: &RunConfig) -> Result<Output> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let hash = cfg.hash();
        let mut out = Output { dir: dir.to_path_buf(), manifest: Manifest::new(&hash), hash };
        let text = format!("{HASH_PREFIX}{}\n{}", out.hash, cfg.to_toml()?);
        out.text("config.toml", &text, "config")?;
        Ok(out)
    }

    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn text(&mut self, rel: &str, text: &str, kind: &str) -> Result<()> {
        fs::write(self.path(rel)?, text)?;
        self.manifest.add(&self.dir, rel, kind)?;
        Ok(())
    }

    /// Records a file already written under the output directory.
    pub fn register(&mut self, rel: &str, kind: &str) -> Result<()> {
        self.manifest.add(&self.dir, rel, kind)?;
        Ok(())
    }

    pub fn table(&mut self, rel: &str, table: &Table, kind: &str, meta: serde_json::Value) -> Result<()> {
        let p = self.path(rel)?;
        table.write(&p)?;
        self.manifest.add(&self.dir, rel, kind)?;
        Sidecar::new(&self.hash, kind, UNITS, meta).write(&p)?;
        self.manifest.add(&self.dir, &format!("{rel}.json"), "sidecar")?;
        Ok(())
    }

    pub fn new_table(&self, columns: &[&str], integer_columns: usize) -> Table {
        Table::new(&self.hash, columns, integer_columns)
    }

    /// JSON object with the config hash and units added at the top level.
    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T, kind: &str) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("config_hash".into(), self.hash.clone().into());
            map.insert("units".into(), serde_json::to_value(UNITS.iter().copied().collect::<std::collections::BTreeMap<_, _>>())?);
        }
        rupture_core::io::write_json(&self.path(rel)?, &v)?;
        self.manifest.add(&self.dir, rel, kind)?;
        Ok(())
    }

    pub fn checkpoint(&mut self, rel: &str, history: &StageHistory) -> Result<()> {
        write_checkpoint(&self.path(rel)?, &self.hash, history)?;
        self.manifest.add(&self.dir, rel, "checkpoint")?;
        Ok(())
    }

    pub fn set_meta(&mut self, meta: serde_json::Value) {
        self.manifest.meta = meta;
    }

    pub fn finish(self) -> Result<PathBuf> {
        Ok(self.manifest.write(&self.dir)?)
    }
}
