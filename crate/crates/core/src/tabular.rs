//! Tabular ingestion and prompt serialization.
//!
//! Rows become ordered lists of `key:value` fields. A coalition of fields is
//! rendered as a single space-delimited string and placed inside a fixed
//! prompt template; fields outside the coalition contribute no bytes at all.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value used for empty cells so every instance keeps its full field count.
pub const MISSING_VALUE: &str = "unknown";

/// How a column is treated during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

/// Column name to kind, as stored in a schema JSON file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub columns: IndexMap<String, ColumnKind>,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("schema lists no columns".into()));
        }
        let labels = self
            .columns
            .values()
            .filter(|k| **k == ColumnKind::Label)
            .count();
        if labels > 1 {
            return Err(Error::Schema(format!(
                "at most one label column is allowed, found {labels}"
            )));
        }
        if labels == self.columns.len() {
            return Err(Error::Schema("schema has no feature columns".into()));
        }
        let mut keys = HashSet::new();
        for name in self.columns.keys() {
            if !keys.insert(normalize_key(name)) {
                return Err(Error::Schema(format!(
                    "column `{name}` collides with another column after key normalization"
                )));
            }
        }
        Ok(())
    }
}

/// A single normalized `key:value` field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureField {
    pub key: String,
    pub value: String,
    /// Cell contents before normalization, kept for reporting.
    pub raw_value: String,
}

impl FeatureField {
    /// Builds a field from already-normalized parts, checking the key/value invariants.
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Result<Self> {
        let key = key.into();
        let value = value.into();
        if key.is_empty()
            || key.contains(':')
            || key.chars().any(char::is_whitespace)
            || key.chars().any(char::is_uppercase)
        {
            return Err(Error::Contract(format!("invalid feature key `{key}`")));
        }
        if value.is_empty() || value.chars().any(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "invalid value `{value}` for feature `{key}`"
            )));
        }
        Ok(Self {
            raw_value: value.clone(),
            key,
            value,
        })
    }

    /// The `key:value` token as it appears in a prompt.
    pub fn token(&self) -> String {
        format!("{}:{}", self.key, self.value)
    }
}

/// One dataset row: the unit of explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularInstance {
    pub index: usize,
    fields: Vec<FeatureField>,
    pub label: Option<String>,
}

impl TabularInstance {
    pub fn new(index: usize, fields: Vec<FeatureField>, label: Option<String>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Contract(format!(
                "instance {index} has no feature fields"
            )));
        }
        let mut seen = HashSet::with_capacity(fields.len());
        for f in &fields {
            if !seen.insert(f.key.as_str()) {
                return Err(Error::Contract(format!(
                    "instance {index} repeats feature key `{}`",
                    f.key
                )));
            }
        }
        Ok(Self {
            index,
            fields,
            label,
        })
    }

    pub fn fields(&self) -> &[FeatureField] {
        &self.fields
    }

    /// Number of features, M.
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.key.as_str())
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.key == key)
    }

    /// Fields whose position satisfies `keep`, in instance order.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> Vec<&FeatureField> {
        self.fields
            .iter()
            .enumerate()
            .filter(|(i, _)| keep(*i))
            .map(|(_, f)| f)
            .collect()
    }

    /// Returns a copy with fields reordered so that new position `i` holds old field `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.fields.len() {
            return Err(Error::Contract("permutation length mismatch".into()));
        }
        let fields = order
            .iter()
            .map(|&i| {
                self.fields
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Contract(format!("permutation index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.index, fields, self.label.clone())
    }
}

/// Normalizes a column name into a feature key: lowercase, no colon, no whitespace.
pub fn normalize_key(name: &str) -> String {
    let lowered = name.trim().to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_sep = false;
    for c in lowered.chars() {
        if c.is_whitespace() || c == '-' || c == ':' {
            pending_sep = true;
            continue;
        }
        if pending_sep && !out.is_empty() {
            out.push('_');
        }
        pending_sep = false;
        out.push(c);
    }
    out
}

/// Normalizes one raw cell.
///
/// Numeric cells are truncated toward zero and rendered as integers.
/// Categorical cells are lowercased with each whitespace run collapsed to one
/// underscore. Colons and underscores already present are kept as they are.
pub fn normalize_value(raw: &str, kind: ColumnKind, column: &str) -> Result<String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Normalization {
            column: column.to_string(),
            reason: "value is empty".into(),
        });
    }
    match kind {
        ColumnKind::Numeric => {
            let parsed: f64 = trimmed.parse().map_err(|_| Error::Normalization {
                column: column.to_string(),
                reason: format!("`{trimmed}` is not numeric"),
            })?;
            if !parsed.is_finite() {
                return Err(Error::Normalization {
                    column: column.to_string(),
                    reason: format!("`{trimmed}` is not finite"),
                });
            }
            let truncated = parsed.trunc();
            if truncated.abs() >= 9.0e15 {
                return Err(Error::Normalization {
                    column: column.to_string(),
                    reason: format!("`{trimmed}` is out of integer range"),
                });
            }
            Ok(format!("{}", truncated as i64))
        }
        ColumnKind::Categorical | ColumnKind::Label => Ok(trimmed
            .to_lowercase()
            .split_whitespace()
            .collect::<Vec<_>>()
            .join("_")),
    }
}

/// Renders fields as `k1:v1 k2:v2 ...` in the given order.
pub fn serialize_features<F: std::borrow::Borrow<FeatureField>>(fields: &[F]) -> Result<String> {
    if fields.is_empty() {
        return Err(Error::EmptyCoalition);
    }
    let mut out = String::new();
    for (i, f) in fields.iter().enumerate() {
        let f = f.borrow();
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&f.key);
        out.push(':');
        out.push_str(&f.value);
    }
    Ok(out)
}

/// Inverse of [`serialize_features`]: splits on single spaces, then each token at its first colon.
pub fn parse_feature_string(s: &str) -> Result<Vec<(String, String)>> {
    s.split(' ')
        .map(|tok| {
            tok.split_once(':')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Contract(format!("token `{tok}` has no colon")))
        })
        .collect()
}

pub const DEFAULT_INPUT_MARKER: &str = "### Input:";
pub const DEFAULT_RESPONSE_MARKER: &str = "### Response:";
pub const FEATURES_PLACEHOLDER: &str = "{features}";

pub const DEFAULT_INSTRUCTION: &str = "Below is an instruction that describes a task, paired with an input that provides further context. Write a response that appropriately completes the request.\n\n### Instruction:\nPredict the target class for the record described by the input fields. Answer with the class label only.";

/// Fixed prompt framing around the feature string.
///
/// A template is literal text with one `{features}` placeholder. The input
/// marker must occur exactly once before the placeholder and the response
/// marker exactly once after it, so everything outside the feature string is
/// byte-identical for every coalition of an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    before: String,
    after: String,
    input_marker: String,
    response_marker: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::with_instruction(DEFAULT_INSTRUCTION).expect("default template is valid")
    }
}

impl PromptTemplate {
    /// Standard layout with the default markers around a caller-provided instruction.
    pub fn with_instruction(instruction: &str) -> Result<Self> {
        let text = format!(
            "{instruction}\n\n{DEFAULT_INPUT_MARKER}\n{FEATURES_PLACEHOLDER}\n\n{DEFAULT_RESPONSE_MARKER}\n"
        );
        Self::parse(&text, DEFAULT_INPUT_MARKER, DEFAULT_RESPONSE_MARKER)
    }

    /// Parses literal template text containing `{features}` exactly once.
    pub fn parse(text: &str, input_marker: &str, response_marker: &str) -> Result<Self> {
        if input_marker.is_empty() || response_marker.is_empty() {
            return Err(Error::Template("markers must be non-empty".into()));
        }
        if text.matches(FEATURES_PLACEHOLDER).count() != 1 {
            return Err(Error::Template(format!(
                "template must contain `{FEATURES_PLACEHOLDER}` exactly once"
            )));
        }
        let (before, after) = text
            .split_once(FEATURES_PLACEHOLDER)
            .expect("placeholder counted above");
        let count = |hay: &str, needle: &str| hay.matches(needle).count();
        if count(before, input_marker) != 1 || count(after, input_marker) != 0 {
            return Err(Error::Template(format!(
                "input marker `{input_marker}` must appear exactly once, before the features"
            )));
        }
        if count(after, response_marker) != 1 || count(before, response_marker) != 0 {
            return Err(Error::Template(format!(
                "response marker `{response_marker}` must appear exactly once, after the features"
            )));
        }
        Ok(Self {
            before: before.to_string(),
            after: after.to_string(),
            input_marker: input_marker.to_string(),
            response_marker: response_marker.to_string(),
        })
    }

    pub fn from_file(path: &Path, input_marker: &str, response_marker: &str) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, input_marker, response_marker)
    }

    /// Text preceding the input marker.
    pub fn instruction(&self) -> &str {
        let at = self
            .before
            .find(&self.input_marker)
            .expect("validated at construction");
        &self.before[..at]
    }

    pub fn input_marker(&self) -> &str {
        &self.input_marker
    }

    pub fn response_marker(&self) -> &str {
        &self.response_marker
    }

    /// Recovers the feature string from a prompt built with this template.
    pub fn extract_features<'p>(&self, prompt: &'p str) -> Option<&'p str> {
        prompt
            .strip_prefix(self.before.as_str())?
            .strip_suffix(self.after.as_str())
    }
}

/// Embeds the serialized coalition into the template.
pub fn build_prompt<F: std::borrow::Borrow<FeatureField>>(
    template: &PromptTemplate,
    coalition_fields: &[F],
) -> Result<String> {
    let features = serialize_features(coalition_fields)?;
    let mut out =
        String::with_capacity(template.before.len() + features.len() + template.after.len());
    out.push_str(&template.before);
    out.push_str(&features);
    out.push_str(&template.after);
    Ok(out)
}

/// Reads a CSV with a header row into normalized instances.
///
/// Feature order follows the CSV column order. Columns absent from the schema
/// are skipped; schema columns absent from the header are an error. Empty
/// cells become [`MISSING_VALUE`].
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Vec<TabularInstance>> {
    schema.validate()?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            row: 0,
            reason: format!("unreadable header: {e}"),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    for name in schema.columns.keys() {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Dataset {
                path: path.to_path_buf(),
                row: 0,
                reason: format!("missing column `{name}`"),
            });
        }
    }

    // (csv position, key, kind) in header order
    let mut features = Vec::new();
    let mut label_col = None;
    for (pos, h) in headers.iter().enumerate() {
        match schema.columns.get(h) {
            Some(ColumnKind::Label) => label_col = Some(pos),
            Some(kind) => features.push((pos, h.as_str(), normalize_key(h), *kind)),
            None => {}
        }
    }

    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            row,
            reason: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Dataset {
                path: path.to_path_buf(),
                row,
                reason: format!(
                    "expected {} cells, found {}",
                    headers.len(),
                    record.len()
                ),
            });
        }
        let mut fields = Vec::with_capacity(features.len());
        for (pos, column, key, kind) in &features {
            let raw = &record[*pos];
            let value = if raw.trim().is_empty() {
                MISSING_VALUE.to_string()
            } else {
                normalize_value(raw, *kind, column).map_err(|e| Error::Dataset {
                    path: path.to_path_buf(),
                    row,
                    reason: e.to_string(),
                })?
            };
            fields.push(FeatureField {
                key: key.clone(),
                value,
                raw_value: raw.to_string(),
            });
        }
        let label = match label_col {
            Some(pos) if !record[pos].trim().is_empty() => Some(
                normalize_value(&record[pos], ColumnKind::Label, &headers[pos]).map_err(|e| {
                    Error::Dataset {
                        path: path.to_path_buf(),
                        row,
                        reason: e.to_string(),
                    }
                })?,
            ),
            _ => None,
        };
        out.push(TabularInstance::new(row, fields, label).map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            row,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
