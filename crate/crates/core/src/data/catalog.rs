use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::record::{normalize, DataRecord, FormatHint};
use super::DataError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSourceRef {
    pub source_id: String,
    pub location: PathBuf,
    pub format_hint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_count: Option<u64>,
    #[serde(default)]
    pub quality_notes: String,
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub reference: DataSourceRef,
    pub format: FormatHint,
    pub records: Vec<DataRecord>,
    pub unparsable: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCount {
    pub records: usize,
    pub unparsable: usize,
    pub format_hint: String,
    #[serde(default)]
    pub quality_notes: String,
}

pub type CatalogSummary = BTreeMap<String, SourceCount>;

/// Read-only pool of normalized sources, keyed by `source_id`.
#[derive(Clone, Debug, Default)]
pub struct Catalog {
    entries: BTreeMap<String, CatalogEntry>,
}

#[derive(Debug, Deserialize)]
struct CatalogManifest {
    sources: Vec<DataSourceRef>,
}

impl Catalog {
    pub fn get(&self, source_id: &str) -> Option<&CatalogEntry> {
        self.entries.get(source_id)
    }

    pub fn contains(&self, source_id: &str) -> bool {
        self.entries.contains_key(source_id)
    }

    pub fn source_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }

    pub fn summary(&self) -> CatalogSummary {
        self.entries
            .iter()
            .map(|(id, e)| {
                (
                    id.clone(),
                    SourceCount {
                        records: e.records.len(),
                        unparsable: e.unparsable,
                        format_hint: e.format.to_string(),
                        quality_notes: e.reference.quality_notes.clone(),
                    },
                )
            })
            .collect()
    }

    /// `(file name, path)` pairs to expose inside workspaces.
    pub fn files(&self) -> Vec<(String, PathBuf)> {
        self.entries
            .values()
            .map(|e| {
                let ext = e
                    .reference
                    .location
                    .extension()
                    .and_then(|s| s.to_str())
                    .unwrap_or("dat");
                (format!("{}.{ext}", e.reference.source_id), e.reference.location.clone())
            })
            .collect()
    }

    /// Loads a `catalog.json` manifest (`{"sources": [...]}`); relative
    /// locations resolve against the manifest's directory.
    pub fn load_manifest(path: &Path) -> Result<Catalog, DataError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DataError::UnreadableSource(format!("{}: {e}", path.display())))?;
        let manifest: CatalogManifest = serde_json::from_str(&text)
            .map_err(|e| DataError::UnparsableFormat(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let refs = manifest
            .sources
            .into_iter()
            .map(|mut r| {
                if r.location.is_relative() {
                    r.location = base.join(&r.location);
                }
                r
            })
            .collect::<Vec<_>>();
        catalog_sources(&refs)
    }
}

/// Scans each source once, normalizing every record and counting the ones
/// that do not parse.
pub fn catalog_sources(refs: &[DataSourceRef]) -> Result<Catalog, DataError> {
    let mut entries = BTreeMap::new();
    for r in refs {
        if entries.contains_key(&r.source_id) {
            return Err(DataError::DuplicateSourceId(r.source_id.clone()));
        }
        let format: FormatHint = r.format_hint.parse()?;
        let (records, unparsable) = scan(&r.location, format)?;
        entries.insert(
            r.source_id.clone(),
            CatalogEntry {
                reference: r.clone(),
                format,
                records: records
                    .into_iter()
                    .map(|(index, rec)| tag(rec, &r.source_id, index))
                    .collect(),
                unparsable,
            },
        );
    }
    Ok(Catalog { entries })
}

fn tag(mut rec: DataRecord, source_id: &str, index: usize) -> DataRecord {
    rec.meta.insert("source_id".into(), source_id.to_string());
    rec.meta.insert("index".into(), index.to_string());
    rec
}

/// Returns `(original line/row index, record)` pairs plus the unparsable count.
fn scan(path: &Path, format: FormatHint) -> Result<(Vec<(usize, DataRecord)>, usize), DataError> {
    let file = File::open(path).map_err(|e| DataError::UnreadableSource(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    let mut unparsable = 0;
    match format {
        FormatHint::Alpaca | FormatHint::Qa => {
            let mut index = 0;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| DataError::UnreadableSource(format!("{}: {e}", path.display())))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| normalize(&v, format).ok());
                match parsed {
                    Some(r) => records.push((index, r)),
                    None => unparsable += 1,
                }
                index += 1;
            }
        }
        FormatHint::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| DataError::UnparsableFormat(format!("{}: {e}", path.display())))?
                .clone();
            for (index, row) in reader.records().enumerate() {
                let Ok(row) = row else {
                    unparsable += 1;
                    continue;
                };
                let obj: Map<String, Value> = headers
                    .iter()
                    .zip(row.iter())
                    .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                    .collect();
                match normalize(&Value::Object(obj), format) {
                    Ok(r) => records.push((index, r)),
                    Err(_) => unparsable += 1,
                }
            }
        }
    }
    Ok((records, unparsable))
}
