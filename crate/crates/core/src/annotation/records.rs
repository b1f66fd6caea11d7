//! Annotation records and their JSON-lines form.
//!
//! ```text
//! {"sample_id":"s1","group":0,"set":3,"set_category":"Fear","prior_label":"Fear",
//!  "labels":["Fear","Fear","Sadness"],"leader_vote":null}
//! ```
//!
//! Categories may be given by name or by id; `prior_label` may also be
//! `"MORE"`.

use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::taxonomy::{category_id, EMOTIONS};

/// A category given by id or (case-insensitive) name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Category(pub usize);

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match EMOTIONS.get(self.0) {
            Some(name) => s.serialize_str(name),
            None => s.serialize_u64(self.0 as u64),
        }
    }
}

struct CategoryVisitor;

impl Visitor<'_> for CategoryVisitor {
    type Value = Category;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a category id or name")
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Category, E> {
        Ok(Category(v as usize))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Category, E> {
        category_id(v).map(Category).map_err(|e| match e {
            Error::Input(m) => E::custom(m),
            other => E::custom(other),
        })
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        d.deserialize_any(CategoryVisitor)
    }
}

/// The label a record carries from the previous stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PriorLabel {
    Category(usize),
    /// Unresolved: the previous stage's three labels were all distinct.
    More,
}

impl PriorLabel {
    pub fn matches(self, label: usize) -> bool {
        self == PriorLabel::Category(label)
    }
}

impl Serialize for PriorLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            PriorLabel::Category(c) => Category(*c).serialize(s),
            PriorLabel::More => s.serialize_str("MORE"),
        }
    }
}

impl<'de> Deserialize<'de> for PriorLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = PriorLabel;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a category id, a category name, or \"MORE\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<PriorLabel, E> {
                Ok(PriorLabel::Category(v as usize))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<PriorLabel, E> {
                if v.eq_ignore_ascii_case("more") {
                    Ok(PriorLabel::More)
                } else {
                    CategoryVisitor.visit_str(v).map(|c| PriorLabel::Category(c.0))
                }
            }
        }
        d.deserialize_any(V)
    }
}

fn cats<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    Ok(Vec::<Category>::deserialize(d)?.into_iter().map(|c| c.0).collect())
}

fn cat<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<usize, D::Error> {
    Ok(Category::deserialize(d)?.0)
}

fn opt_cat<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    Ok(Option::<Category>::deserialize(d)?.map(|c| c.0))
}

fn ser_cats<S: Serializer>(v: &[usize], s: S) -> std::result::Result<S::Ok, S::Error> {
    v.iter().map(|&c| Category(c)).collect::<Vec<_>>().serialize(s)
}

fn ser_cat<S: Serializer>(v: &usize, s: S) -> std::result::Result<S::Ok, S::Error> {
    Category(*v).serialize(s)
}

fn ser_opt_cat<S: Serializer>(v: &Option<usize>, s: S) -> std::result::Result<S::Ok, S::Error> {
    v.map(Category).serialize(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub group: usize,
    pub set: usize,
    #[serde(deserialize_with = "cat", serialize_with = "ser_cat")]
    pub set_category: usize,
    pub prior_label: PriorLabel,
    /// One label per group member, in member order.
    #[serde(deserialize_with = "cats", serialize_with = "ser_cats")]
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotators: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, deserialize_with = "opt_cat", serialize_with = "ser_opt_cat", skip_serializing_if = "Option::is_none")]
    pub leader_vote: Option<usize>,
    #[serde(default, deserialize_with = "opt_cat", serialize_with = "ser_opt_cat", skip_serializing_if = "Option::is_none")]
    pub leader2_vote: Option<usize>,
    #[serde(default, deserialize_with = "opt_cat", serialize_with = "ser_opt_cat", skip_serializing_if = "Option::is_none")]
    pub expert_vote: Option<usize>,
}

impl AnnotationRecord {
    /// Check label count and category ranges against a taxonomy size.
    pub fn validate(&self, num_categories: usize) -> Result<()> {
        if self.labels.len() != 3 {
            return Err(Error::Input(format!(
                "record `{}` has {} member labels, expected 3",
                self.sample_id,
                self.labels.len()
            )));
        }
        let votes = [self.leader_vote, self.leader2_vote, self.expert_vote];
        let prior = match self.prior_label {
            PriorLabel::Category(c) => Some(c),
            PriorLabel::More => None,
        };
        let all = self
            .labels
            .iter()
            .copied()
            .chain(votes.iter().flatten().copied())
            .chain(prior)
            .chain(Some(self.set_category));
        for c in all {
            if c >= num_categories {
                return Err(Error::Input(format!(
                    "record `{}`: category {c} outside the {num_categories}-category taxonomy",
                    self.sample_id
                )));
            }
        }
        if let Some(conf) = self.confidence {
            if !(0.0..=1.0).contains(&conf) {
                return Err(Error::Input(format!(
                    "record `{}`: confidence {conf} outside [0, 1]",
                    self.sample_id
                )));
            }
        }
        Ok(())
    }

    /// Number of member labels equal to the prior label.
    pub fn matches(&self) -> usize {
        self.labels.iter().filter(|&&l| self.prior_label.matches(l)).count()
    }

    /// Stage-one group label: the label held by at least two members.
    pub fn majority(&self) -> Option<usize> {
        self.labels
            .iter()
            .copied()
            .find(|&l| self.labels.iter().filter(|&&x| x == l).count() >= 2)
    }

    /// All member labels distinct.
    pub fn is_more(&self) -> bool {
        self.majority().is_none()
    }
}

/// Parse JSON-lines records; errors name the offending line.
pub fn parse_records(text: &str, num_categories: usize) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord =
            serde_json::from_str(line).map_err(|e| Error::Input(format!("line {}: {e}", n + 1)))?;
        rec.validate(num_categories).map_err(|e| match e {
            Error::Input(m) => Error::Input(format!("line {}: {m}", n + 1)),
            other => other,
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Input("no annotation records".into()));
    }
    Ok(out)
}

pub fn read_records(path: &Path, num_categories: usize) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, num_categories).map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn to_jsonl(records: &[AnnotationRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_ids_and_more_parse() {
        let line = r#"{"sample_id":"s","group":1,"set":2,"set_category":"fear","prior_label":"MORE","labels":[3,"Sadness","tension"],"leader_vote":"Fear"}"#;
        let r = parse_records(line, 6).unwrap().remove(0);
        assert_eq!(r.labels, vec![3, 4, 5]);
        assert_eq!(r.prior_label, PriorLabel::More);
        assert_eq!(r.leader_vote, Some(3));
        assert!(r.is_more());
        let back = parse_records(&to_jsonl(std::slice::from_ref(&r)), 6).unwrap();
        assert_eq!(back[0], r);
    }

    #[test]
    fn bad_line_is_named() {
        let text = "\n{\"sample_id\":\"s\"}\n";
        let err = parse_records(text, 6).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_records("", 6).is_err());
        let two = r#"{"sample_id":"s","group":0,"set":0,"set_category":0,"prior_label":0,"labels":[0,0]}"#;
        assert!(parse_records(two, 6).is_err());
    }
}
