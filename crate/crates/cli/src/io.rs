//! Input loading and single-shot output writing shared by the commands.

use std::path::{Path, PathBuf};

use anyhow::Context;

use arbitrage_core::cost::PriceSheet;
use arbitrage_core::providers::load_records;
use arbitrage_core::scores::{binarize_guardian, guardian_from_severities, ScoredInstance};

/// How Guardian scores are derived from the records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuardianView {
    #[default]
    AsRecorded,
    /// 1 on the Guardian's choice when it is correct, 0 elsewhere.
    Binarized,
    /// 1 on every lowest-severity action.
    FromSeverity,
}

impl GuardianView {
    pub fn from_flags(binarize: bool, from_severity: bool) -> Self {
        match (binarize, from_severity) {
            (true, _) => Self::Binarized,
            (_, true) => Self::FromSeverity,
            _ => Self::AsRecorded,
        }
    }
}

pub fn records(path: &Path, view: GuardianView) -> anyhow::Result<Vec<ScoredInstance>> {
    let raw = load_records(path).with_context(|| format!("loading {}", path.display()))?;
    let out = match view {
        GuardianView::AsRecorded => raw,
        GuardianView::Binarized => raw.iter().map(binarize_guardian).collect::<Result<_, _>>()?,
        GuardianView::FromSeverity => raw.iter().map(guardian_from_severities).collect::<Result<_, _>>()?,
    };
    anyhow::ensure!(!out.is_empty(), "{} holds no records", path.display());
    Ok(out)
}

pub fn prices(path: Option<&Path>) -> anyhow::Result<Option<PriceSheet>> {
    path.map(|p| PriceSheet::load(p).with_context(|| format!("loading price sheet {}", p.display())))
        .transpose()
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn json_pretty<T: serde::Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn csv_text<S: AsRef<str>>(header: &[&str], rows: &[Vec<S>]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(AsRef::as_ref))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// `<path>.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
