//! Dataset manifests, human scores, expert score tables and embedding tables.
//!
//! A manifest is line-delimited JSON: one header line carrying the native
//! score range and the assessment scenario, followed by one [`ImageRecord`]
//! per line. Loaded tables are immutable and can be shared across threads.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "FR")]
    FullReference,
    #[serde(rename = "NR")]
    NoReference,
}

impl Scenario {
    pub fn short(self) -> &'static str {
        match self {
            Scenario::FullReference => "fr",
            Scenario::NoReference => "nr",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fr" => Ok(Scenario::FullReference),
            "nr" => Ok(Scenario::NoReference),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Reference,
    Distorted,
    Standalone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub scale_min: f64,
    pub scale_max: f64,
    pub scenario: Scenario,
}

impl Default for ManifestHeader {
    fn default() -> Self {
        ManifestHeader {
            scale_min: 0.0,
            scale_max: 100.0,
            scenario: Scenario::NoReference,
        }
    }
}

impl ManifestHeader {
    /// Maps a native-scale score onto `[0, 100]`.
    pub fn to_percent(&self, score: f64) -> f64 {
        let span = self.scale_max - self.scale_min;
        if span == 0.0 {
            return score;
        }
        (score - self.scale_min) / span * 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub uri: String,
    pub role: Role,
    pub content_group: String,
    pub mos: f64,
    pub std: f64,
    pub dataset_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distortion_meta: Option<String>,
}

impl ImageRecord {
    fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::Record {
                id: "<empty>".into(),
                field: "image_id",
                message: "must not be empty".into(),
            });
        }
        if !self.mos.is_finite() {
            return Err(self.invalid("mos", format!("must be finite, got {}", self.mos)));
        }
        if !self.std.is_finite() || self.std < 0.0 {
            return Err(self.invalid("std", format!("must be finite and >= 0, got {}", self.std)));
        }
        if self.role == Role::Standalone && !self.content_group.is_empty() {
            return Err(self.invalid(
                "content_group",
                "must be empty for standalone images".into(),
            ));
        }
        if self.role != Role::Standalone && self.content_group.is_empty() {
            return Err(self.invalid("content_group", "must name a content group".into()));
        }
        Ok(())
    }

    fn invalid(&self, field: &'static str, message: String) -> Error {
        Error::Record {
            id: self.image_id.clone(),
            field,
            message,
        }
    }
}

/// A reference image together with the distorted images derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentGroup<'a> {
    pub id: String,
    pub reference: Option<&'a ImageRecord>,
    pub distorted: Vec<&'a ImageRecord>,
}

impl ContentGroup<'_> {
    pub fn len(&self) -> usize {
        self.distorted.len() + usize::from(self.reference.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Default, Clone)]
struct GroupIndex {
    reference: Option<usize>,
    distorted: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub header: ManifestHeader,
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
    groups: BTreeMap<String, GroupIndex>,
}

impl Dataset {
    pub fn new(header: ManifestHeader, records: Vec<ImageRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        let mut groups: BTreeMap<String, GroupIndex> = BTreeMap::new();
        for (pos, record) in records.iter().enumerate() {
            record.validate()?;
            if index.insert(record.image_id.clone(), pos).is_some() {
                return Err(record.invalid("image_id", "is duplicated in the manifest".into()));
            }
            if record.content_group.is_empty() {
                continue;
            }
            let group = groups.entry(record.content_group.clone()).or_default();
            match record.role {
                Role::Reference => {
                    if let Some(prev) = group.reference {
                        return Err(record.invalid(
                            "content_group",
                            format!(
                                "group `{}` already has reference `{}`",
                                record.content_group, records[prev].image_id
                            ),
                        ));
                    }
                    group.reference = Some(pos);
                }
                Role::Distorted => group.distorted.push(pos),
                Role::Standalone => unreachable!("validated above"),
            }
        }
        if header.scenario == Scenario::FullReference {
            for (name, group) in &groups {
                if group.reference.is_none() {
                    let child = &records[group.distorted[0]];
                    return Err(child.invalid(
                        "content_group",
                        format!("dangling group `{name}` has no reference record"),
                    ));
                }
            }
        }
        Ok(Dataset {
            header,
            records,
            index,
            groups,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scenario(&self) -> Scenario {
        self.header.scenario
    }

    pub fn get(&self, image_id: &str) -> Result<&ImageRecord> {
        self.index
            .get(image_id)
            .map(|&pos| &self.records[pos])
            .ok_or_else(|| Error::UnknownId(image_id.to_owned()))
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.index.contains_key(image_id)
    }

    /// Group ids in lexicographic order.
    pub fn group_ids(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn group(&self, group_id: &str) -> Result<ContentGroup<'_>> {
        let group = self
            .groups
            .get(group_id)
            .ok_or_else(|| Error::UnknownId(format!("group {group_id}")))?;
        Ok(ContentGroup {
            id: group_id.to_owned(),
            reference: group.reference.map(|pos| &self.records[pos]),
            distorted: group
                .distorted
                .iter()
                .map(|&pos| &self.records[pos])
                .collect(),
        })
    }

    /// The content group an image belongs to; standalone images form a singleton.
    pub fn group_of(&self, image_id: &str) -> Result<ContentGroup<'_>> {
        let record = self.get(image_id)?;
        if record.content_group.is_empty() {
            return Ok(ContentGroup {
                id: record.image_id.clone(),
                reference: None,
                distorted: vec![record],
            });
        }
        self.group(&record.content_group)
    }

    pub fn references(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.role == Role::Reference)
    }

    /// Images that are scored by humans as test stimuli (everything but references).
    pub fn test_images(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.role != Role::Reference)
    }

    /// Serializes the manifest in canonical form.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_jsonl()?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let schema = |line: usize, message: String| Error::Schema {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let header = match lines.next() {
            None => return Dataset::new(ManifestHeader::default(), Vec::new()),
            Some((n, line)) => serde_json::from_str::<ManifestHeader>(line)
                .map_err(|e| schema(n + 1, format!("invalid header: {e}")))?,
        };
        if !(header.scale_min.is_finite() && header.scale_max.is_finite())
            || header.scale_min >= header.scale_max
        {
            return Err(schema(1, "header scale_min must be below scale_max".into()));
        }
        let mut records = Vec::new();
        for (n, line) in lines {
            let record: ImageRecord = serde_json::from_str(line).map_err(|e| {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| {
                        v.get("image_id")
                            .and_then(|v| v.as_str())
                            .map(str::to_owned)
                    })
                    .unwrap_or_else(|| "<unknown>".into());
                schema(n + 1, format!("record `{id}`: {e}"))
            })?;
            records.push(record);
        }
        Dataset::new(header, records)
    }
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_jsonl(&text, path)
}

/// Feature vectors keyed by image id, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub encoder_tag: String,
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn from_rows(
        encoder_tag: impl Into<String>,
        rows: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut dim = 0;
        let mut vectors = HashMap::new();
        for (id, vector) in rows {
            if vector.is_empty() {
                return Err(Error::Embedding(format!("`{id}` has an empty vector")));
            }
            if dim == 0 {
                dim = vector.len();
            } else if vector.len() != dim {
                return Err(Error::Embedding(format!(
                    "`{id}` has dimension {} but the table has dimension {dim}",
                    vector.len()
                )));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Embedding(format!(
                    "`{id}` has a non-finite component"
                )));
            }
            if vectors.insert(id.clone(), vector).is_some() {
                return Err(Error::Embedding(format!("duplicate image id `{id}`")));
            }
        }
        Ok(EmbeddingTable {
            encoder_tag: encoder_tag.into(),
            dim,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Result<&[f64]> {
        self.vectors
            .get(image_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Embedding(format!("no embedding for `{image_id}`")))
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingTable {
            encoder_tag: self.encoder_tag.clone(),
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * factor).collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct EmbeddingSidecar {
    dim: usize,
    ids: Vec<String>,
    #[serde(default)]
    encoder_tag: Option<String>,
}

/// Loads embeddings from `image_id,v0,...` CSV, or from raw little-endian `f32`
/// blocks described by a JSON sidecar (`<stem>.json`, `{dim, ids}`).
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let is_csv = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("csv"));
    if is_csv {
        load_embeddings_csv(path)
    } else {
        load_embeddings_binary(path)
    }
}

fn load_embeddings_csv(path: &Path) -> Result<EmbeddingTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Embedding(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Embedding(format!("{}: {e}", path.display())))?;
        let Some(id) = row.get(0) else { continue };
        if line == 0 && id == "image_id" {
            continue;
        }
        let vector = row
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>().map_err(|e| {
                    Error::Embedding(format!("{}:{}: `{v}`: {e}", path.display(), line + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id.to_owned(), vector));
    }
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingTable::from_rows(tag, rows)
}

fn load_embeddings_binary(path: &Path) -> Result<EmbeddingTable> {
    let sidecar_path: PathBuf = path.with_extension("json");
    let sidecar_text =
        fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
    let sidecar: EmbeddingSidecar = serde_json::from_str(&sidecar_text)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = sidecar.dim * sidecar.ids.len() * 4;
    if sidecar.dim == 0 || bytes.len() != expected {
        return Err(Error::Embedding(format!(
            "{}: expected {expected} bytes for {} rows of dimension {}, found {}",
            path.display(),
            sidecar.ids.len(),
            sidecar.dim,
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let rows = sidecar
        .ids
        .into_iter()
        .zip(values.chunks_exact(sidecar.dim).map(<[f64]>::to_vec));
    EmbeddingTable::from_rows(sidecar.encoder_tag.unwrap_or_default(), rows)
}

/// Writes a table as raw `f32` blocks plus its JSON sidecar, rows sorted by id.
pub fn save_embeddings_binary(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut ids: Vec<&String> = table.vectors.keys().collect();
    ids.sort();
    let mut bytes = Vec::with_capacity(ids.len() * table.dim * 4);
    for id in &ids {
        for v in &table.vectors[*id] {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = serde_json::json!({
        "dim": table.dim,
        "ids": ids,
        "encoder_tag": table.encoder_tag,
    });
    let sidecar_path = path.with_extension("json");
    fs::write(&sidecar_path, serde_json::to_vec(&sidecar)?).map_err(|e| Error::io(&sidecar_path, e))
}

/// Raw expert predictions per image, plus the fused human-scale score once computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertScoreTable {
    pub raw: BTreeMap<String, Vec<(String, f64)>>,
    #[serde(default)]
    pub fused: BTreeMap<String, f64>,
}

impl ExpertScoreTable {
    pub fn insert(&mut self, image_id: impl Into<String>, expert: impl Into<String>, score: f64) {
        self.raw
            .entry(image_id.into())
            .or_default()
            .push((expert.into(), score));
    }

    /// Expert names in lexicographic order.
    pub fn experts(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .raw
            .values()
            .flat_map(|scores| scores.iter().map(|(name, _)| name.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn fused_score(&self, image_id: &str) -> Result<f64> {
        self.fused
            .get(image_id)
            .copied()
            .ok_or_else(|| Error::Sampler(format!("no fused expert score for `{image_id}`")))
    }
}

pub fn load_expert_scores(path: &Path) -> Result<ExpertScoreTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut table = ExpertScoreTable::default();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: line + 1,
            message: e.to_string(),
        })?;
        if line == 0 && row.get(0) == Some("image_id") {
            continue;
        }
        let schema = |message: String| Error::Schema {
            path: path.to_path_buf(),
            line: line + 1,
            message,
        };
        if row.len() != 3 {
            return Err(schema(format!("expected 3 columns, found {}", row.len())));
        }
        let score: f64 = row[2]
            .parse()
            .map_err(|e| schema(format!("raw_score `{}`: {e}", &row[2])))?;
        if !score.is_finite() {
            return Err(schema("raw_score must be finite".into()));
        }
        table.insert(&row[0], &row[1], score);
    }
    Ok(table)
}

pub fn save_expert_scores(table: &ExpertScoreTable, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("image_id,expert_name,raw_score\n");
    for (id, scores) in &table.raw {
        for (expert, score) in scores {
            text.push_str(&format!("{id},{expert},{score}\n"));
        }
    }
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}
