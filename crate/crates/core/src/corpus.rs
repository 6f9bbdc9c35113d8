//! Relation instances, label spaces and the versioned JSONL dataset format.
//!
//! Every dataset file starts with a header record carrying the label space:
//!
//! ```text
//! {"type":"header","labels":["advise","effect"]}
//! {"type":"instance","id":"d1","sentence":"...","entity1":{...},"entity2":{...},"reference_relations":["effect"],"split":"train"}
//! ```
//!
//! Derived datasets (`D_rem`, `D_aug`, ...) reuse the same layout and add
//! their own fields next to the instance fields.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// Cutoff applied to each label score when deriving a predicted label set.
pub const PREDICTION_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub surface: String,
    /// 0-based character (Unicode scalar) offset.
    pub char_start: usize,
    /// Exclusive character offset.
    pub char_end: usize,
}

impl EntitySpan {
    pub fn new(surface: impl Into<String>, char_start: usize, char_end: usize) -> Self {
        Self {
            surface: surface.into(),
            char_start,
            char_end,
        }
    }

    /// Locates the first occurrence of `surface` in `sentence`.
    pub fn find(sentence: &str, surface: &str) -> Option<Self> {
        let byte = sentence.find(surface)?;
        let start = sentence[..byte].chars().count();
        Some(Self::new(surface, start, start + surface.chars().count()))
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.char_start < other.char_end && other.char_start < self.char_end
    }
}

fn same_letter(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

/// Case-insensitive whole-word occurrences of `surface` in `sentence`, as
/// character spans carrying the text found in the sentence.
pub fn find_mentions(sentence: &str, surface: &str) -> Vec<EntitySpan> {
    let text: Vec<char> = sentence.chars().collect();
    let needle: Vec<char> = surface.chars().collect();
    if needle.is_empty() || needle.len() > text.len() {
        return Vec::new();
    }
    let boundary = |i: Option<&char>| i.is_none_or(|c| !c.is_alphanumeric());
    let mut out = Vec::new();
    let mut start = 0;
    while start + needle.len() <= text.len() {
        let end = start + needle.len();
        let hit = text[start..end].iter().zip(&needle).all(|(a, b)| same_letter(*a, *b))
            && boundary(start.checked_sub(1).and_then(|i| text.get(i)))
            && boundary(text.get(end));
        if hit {
            out.push(EntitySpan::new(text[start..end].iter().collect::<String>(), start, end));
            start = end;
        } else {
            start += 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub sentence: String,
    pub entity1: EntitySpan,
    pub entity2: EntitySpan,
    /// May be empty for negative instances when the label space has no
    /// explicit "no relation" label.
    pub reference_relations: BTreeSet<String>,
    pub split: Split,
}

impl AsRef<RelationInstance> for RelationInstance {
    fn as_ref(&self) -> &RelationInstance {
        self
    }
}

/// Substring by character offsets, `None` when out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let from = indices.nth(start)?;
    let to = if end == start {
        from
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[from..to])
}

impl RelationInstance {
    pub fn validate(&self, labels: &LabelSpace) -> Result<()> {
        let fail = |message: String| Error::Validation {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        for (name, span) in [("entity1", &self.entity1), ("entity2", &self.entity2)] {
            if span.char_start >= span.char_end {
                return Err(fail(format!(
                    "{name}: char_start {} must be < char_end {}",
                    span.char_start, span.char_end
                )));
            }
            match char_slice(&self.sentence, span.char_start, span.char_end) {
                None => {
                    return Err(fail(format!(
                        "{name}: span {}..{} exceeds sentence length {}",
                        span.char_start,
                        span.char_end,
                        self.sentence.chars().count()
                    )))
                }
                Some(text) if text != span.surface => {
                    return Err(fail(format!(
                        "{name}: span text `{text}` does not match surface `{}`",
                        span.surface
                    )))
                }
                Some(_) => {}
            }
        }
        for label in &self.reference_relations {
            if !labels.contains(label) {
                return Err(Error::UnknownLabel(label.clone()));
            }
        }
        Ok(())
    }
}

/// Ordered relation labels; the order fixes the index of every loss vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    labels: Vec<String>,
}

impl LabelSpace {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(Error::invalid("label space contains an empty label"));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::invalid(format!("duplicate label `{label}`")));
            }
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Binary indicator vector `y` for a label set.
    pub fn indicator(&self, set: &BTreeSet<String>) -> Vec<bool> {
        self.labels.iter().map(|l| set.contains(l)).collect()
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        LabelSpace::new(labels)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.labels
    }
}

/// Model output for one instance, aligned to a [`LabelSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub scores: Vec<f64>,
}

impl Prediction {
    pub fn validate(&self, labels: &LabelSpace) -> Result<()> {
        if self.scores.len() != labels.len() {
            return Err(Error::Validation {
                id: self.instance_id.clone(),
                message: format!(
                    "prediction has {} scores, label space has {}",
                    self.scores.len(),
                    labels.len()
                ),
            });
        }
        if let Some(bad) = self.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Validation {
                id: self.instance_id.clone(),
                message: format!("score {bad} outside [0, 1]"),
            });
        }
        Ok(())
    }

    /// Labels whose score reaches [`PREDICTION_CUTOFF`].
    pub fn predicted_relations(&self, labels: &LabelSpace) -> BTreeSet<String> {
        labels
            .labels()
            .iter()
            .zip(&self.scores)
            .filter(|(_, s)| **s >= PREDICTION_CUTOFF)
            .map(|(l, _)| l.clone())
            .collect()
    }
}

pub fn load_predictions(path: &Path, labels: &LabelSpace) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (line, value) in jsonl::read_values(path)? {
        let prediction: Prediction = jsonl::from_value(path, line, value)?;
        prediction
            .validate(labels)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        out.push(prediction);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Header<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    labels: &'a [String],
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    #[serde(rename = "type")]
    kind: &'static str,
    #[serde(flatten)]
    record: &'a T,
}

/// Writes a dataset file: the header record followed by one line per record.
pub fn save_records<T: Serialize>(path: &Path, labels: &LabelSpace, records: &[T]) -> Result<()> {
    let mut w = jsonl::create(path)?;
    jsonl::write_line(
        &mut w,
        path,
        &Header {
            kind: "header",
            labels: labels.labels(),
        },
    )?;
    for record in records {
        jsonl::write_line(
            &mut w,
            path,
            &Tagged {
                kind: "instance",
                record,
            },
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads any dataset file whose records embed a [`RelationInstance`].
///
/// Returns the label space from the header (`None` for an empty file).
/// Every record is validated and ids must be unique.
pub fn load_records<T>(path: &Path) -> Result<(Option<LabelSpace>, Vec<T>)>
where
    T: DeserializeOwned + AsRef<RelationInstance>,
{
    let mut values = jsonl::read_values(path)?.into_iter();
    let Some((line, header)) = values.next() else {
        return Ok((None, Vec::new()));
    };
    if header.get("type").and_then(|t| t.as_str()) != Some("header") {
        return Err(Error::parse(path, line, "first record must be the header"));
    }
    let labels: LabelSpace = header
        .get("labels")
        .cloned()
        .ok_or_else(|| Error::parse(path, line, "header: missing field `labels`"))
        .and_then(|v| {
            serde_json::from_value(v).map_err(|e| Error::parse(path, line, format!("header: {e}")))
        })?;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, mut value) in values {
        let Some(obj) = value.as_object_mut() else {
            return Err(Error::parse(path, line, "record is not a JSON object"));
        };
        match obj.remove("type").as_ref().and_then(|t| t.as_str()) {
            Some("instance") => {}
            Some(other) => {
                return Err(Error::parse(path, line, format!("unexpected record type `{other}`")))
            }
            None => return Err(Error::parse(path, line, "missing field `type`")),
        }
        let record: T = jsonl::from_value(path, line, value)?;
        let instance = record.as_ref();
        instance.validate(&labels).map_err(|e| match e {
            Error::UnknownLabel(label) => {
                Error::parse(path, line, format!("unknown label `{label}` in instance {}", instance.id))
            }
            other => Error::parse(path, line, other.to_string()),
        })?;
        if !seen.insert(instance.id.clone()) {
            return Err(Error::parse(path, line, format!("duplicate id `{}`", instance.id)));
        }
        out.push(record);
    }
    Ok((Some(labels), out))
}

/// Loads a plain relation dataset and checks it against `labels`.
pub fn load_dataset(path: &Path, labels: &LabelSpace) -> Result<Vec<RelationInstance>> {
    let (header, instances) = load_records::<RelationInstance>(path)?;
    if let Some(header) = header {
        // A reordered header would silently permute loss vectors.
        if &header != labels {
            return Err(Error::invalid(format!(
                "{}: header labels {:?} differ from the expected label space {:?}",
                path.display(),
                header.labels(),
                labels.labels()
            )));
        }
    }
    Ok(instances)
}

pub fn save_dataset(instances: &[RelationInstance], labels: &LabelSpace, path: &Path) -> Result<()> {
    for instance in instances {
        instance.validate(labels)?;
    }
    save_records(path, labels, instances)
}

/// Reads only the header of a dataset file.
pub fn read_label_space(path: &Path) -> Result<LabelSpace> {
    let (labels, _) = load_records::<RelationInstance>(path)?;
    labels.ok_or_else(|| Error::parse(path, 1, "empty dataset file has no header"))
}
