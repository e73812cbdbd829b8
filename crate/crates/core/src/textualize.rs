//! Natural-language rendering of records and pairwise comparison prompts.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::CohortRecord;
use crate::error::{Error, Result};
use crate::seed;

pub const SLOT_A: &str = "{INSTANCE_A}";
pub const SLOT_B: &str = "{INSTANCE_B}";
pub const STATEMENT_SEPARATOR: &str = "; ";

const ICU_MORTALITY: &str = include_str!("../templates/icu_mortality.txt");
const FRACTURE: &str = include_str!("../templates/fracture.txt");

/// Render `record` as `"col is value"` statements joined by `"; "`.
pub fn serialize_record(record: &CohortRecord, columns: &[String]) -> Result<String> {
    let statements = columns
        .iter()
        .map(|c| {
            record
                .feature(c)
                .map(|v| format!("{c} is {v}"))
                .ok_or_else(|| Error::Argument(format!("record {} has no column {c:?}", record.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(statements.join(STATEMENT_SEPARATOR))
}

/// Render every feature of `record` in schema order.
pub fn serialize_all(record: &CohortRecord) -> String {
    record
        .features
        .iter()
        .map(|(c, v)| format!("{c} is {v}"))
        .collect::<Vec<_>>()
        .join(STATEMENT_SEPARATOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    A,
    B,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::A => "a",
            Label::B => "b",
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which subject is placed under label "a".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    /// Seeded fair coin.
    #[default]
    Shuffle,
    /// The anchor is always "a".
    FixFirst,
}

impl std::str::FromStr for OrderPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shuffle" => Ok(OrderPolicy::Shuffle),
            "fix_first" | "fix-first" | "fix_a" => Ok(OrderPolicy::FixFirst),
            _ => Err(Error::Argument(format!("unknown order policy {s:?}"))),
        }
    }
}

impl fmt::Display for OrderPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderPolicy::Shuffle => "shuffle",
            OrderPolicy::FixFirst => "fix_first",
        })
    }
}

/// A comparison prompt with exactly one `{INSTANCE_A}` and one `{INSTANCE_B}` slot.
///
/// The canonical layout puts the task description first, a blank line, the
/// two instances as `a. ...` and `b. ...` on consecutive lines, a blank line,
/// then the answer instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn from_text(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        for slot in [SLOT_A, SLOT_B] {
            let count = text.matches(slot).count();
            if count != 1 {
                return Err(Error::Argument(format!(
                    "template must contain {slot} exactly once, found {count}"
                )));
            }
        }
        Ok(Self { text })
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_text(std::fs::read_to_string(path)?)
    }

    pub fn icu_mortality() -> Self {
        Self { text: ICU_MORTALITY.to_string() }
    }

    pub fn fracture() -> Self {
        Self { text: FRACTURE.to_string() }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn render(&self, instance_a: &str, instance_b: &str) -> String {
        self.text.replace(SLOT_A, instance_a).replace(SLOT_B, instance_b)
    }
}

/// A rendered prompt plus the record-to-label mapping needed to decode an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPrompt {
    pub text: String,
    pub label_a_id: String,
    pub label_b_id: String,
    /// Label under which the subject (not the anchor) appears.
    pub subject_label: Label,
    pub order_policy: OrderPolicy,
}

impl PairPrompt {
    pub fn record_for(&self, label: Label) -> &str {
        match label {
            Label::A => &self.label_a_id,
            Label::B => &self.label_b_id,
        }
    }

    pub fn label_of(&self, id: &str) -> Option<Label> {
        if id == self.label_a_id {
            Some(Label::A)
        } else if id == self.label_b_id {
            Some(Label::B)
        } else {
            None
        }
    }
}

/// Build the prompt comparing `subject` against `anchor`.
pub fn build_pair_prompt(
    template: &PromptTemplate,
    subject: &CohortRecord,
    anchor: &CohortRecord,
    policy: OrderPolicy,
    seed: u64,
) -> Result<PairPrompt> {
    if subject.id == anchor.id {
        return Err(Error::Argument(format!(
            "cannot compare record {} with itself",
            subject.id
        )));
    }
    let subject_first = match policy {
        OrderPolicy::FixFirst => false,
        OrderPolicy::Shuffle => seed::rng(seed).random::<bool>(),
    };
    Ok(render_pair(template, subject, anchor, subject_first, policy))
}

/// Render a prompt with an explicit placement of the subject.
pub fn render_pair(
    template: &PromptTemplate,
    subject: &CohortRecord,
    anchor: &CohortRecord,
    subject_first: bool,
    policy: OrderPolicy,
) -> PairPrompt {
    let (a, b) = if subject_first { (subject, anchor) } else { (anchor, subject) };
    PairPrompt {
        text: template.render(&serialize_all(a), &serialize_all(b)),
        label_a_id: a.id.clone(),
        label_b_id: b.id.clone(),
        subject_label: if subject_first { Label::A } else { Label::B },
        order_policy: policy,
    }
}
