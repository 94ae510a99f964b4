//! Prompt assembly and structured-output parsing.
//!
//! The wording lives in a template file with three sections (`system`,
//! `schema`, `layout`); the layout holds `{{name}}` placeholders. Context
//! blocks are rendered here and fenced with fixed delimiters so that the
//! query can be recovered from a prompt (see [`extract_query`]).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::retrieval::{InstanceContext, HISTORY_WINDOW};
use crate::types::{ActivityLabel, DayOfWeek, Ontology};

pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/prompt_v1.txt");
pub const DEFAULT_PERSONA: &str = include_str!("../templates/persona_aruba.txt");
pub const DEFAULT_SPATIAL: &str = include_str!("../templates/spatial_aruba.txt");

pub const CONTEXT_OPEN: &str = "<<<CONTEXT>>>";
pub const CONTEXT_CLOSE: &str = "<<<END CONTEXT>>>";
pub const QUERY_OPEN: &str = "<<<QUERY>>>";
pub const QUERY_CLOSE: &str = "<<<END QUERY>>>";

const PLACEHOLDERS: [&str; 7] = [
    "system",
    "ontology",
    "persona",
    "spatial",
    "demonstrations",
    "query",
    "schema",
];

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("invalid template: {0}")]
    Template(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Hex SHA-256 of a text, used to version templates and context files.
pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub system: String,
    pub schema: String,
    pub layout: String,
    pub hash: String,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut sections: Vec<(String, String)> = Vec::new();
        for line in text.lines() {
            let trimmed = line.trim();
            if let Some(name) = trimmed
                .strip_prefix("== ")
                .and_then(|rest| rest.strip_suffix(" =="))
            {
                sections.push((name.trim().to_string(), String::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push_str(line);
                body.push('\n');
            } else if !trimmed.is_empty() {
                return Err(PromptError::Template("text before the first section".into()));
            }
        }
        let take = |name: &str| -> Result<String, PromptError> {
            let mut found = sections.iter().filter(|(n, _)| n == name);
            let (_, body) = found
                .next()
                .ok_or_else(|| PromptError::Template(format!("missing section `{name}`")))?;
            if found.next().is_some() {
                return Err(PromptError::Template(format!("duplicate section `{name}`")));
            }
            Ok(body.trim_end().to_string())
        };
        let template = Self {
            system: take("system")?,
            schema: take("schema")?,
            layout: take("layout")?,
            hash: content_hash(text),
        };
        if !template.layout.contains("{{query}}") {
            return Err(PromptError::Template("layout lacks {{query}}".into()));
        }
        let mut rest = template.layout.as_str();
        while let Some(open) = rest.find("{{") {
            let close = rest[open..]
                .find("}}")
                .ok_or_else(|| PromptError::Template("unterminated placeholder".into()))?;
            let name = &rest[open + 2..open + close];
            if !PLACEHOLDERS.contains(&name) {
                return Err(PromptError::Template(format!("unknown placeholder `{name}`")));
            }
            rest = &rest[open + close + 2..];
        }
        Ok(template)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

/// Free text shown once per prompt, identified by its content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextText {
    pub text: String,
    pub hash: String,
}

impl ContextText {
    pub fn new(text: &str) -> Result<Self, PromptError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(PromptError::Config("context text is empty".into()));
        }
        Ok(Self {
            text: text.to_string(),
            hash: content_hash(text),
        })
    }

    pub fn default_persona() -> Self {
        Self::new(DEFAULT_PERSONA).expect("bundled persona")
    }

    pub fn default_spatial() -> Self {
        Self::new(DEFAULT_SPATIAL).expect("bundled spatial description")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub system_instruction: String,
    pub ontology_lines: Vec<String>,
    pub demonstrations: Vec<String>,
    pub context_block: String,
    pub persona: Option<ContextText>,
    pub spatial: Option<ContextText>,
    pub output_schema_note: String,
    pub text: String,
}

fn render_context_body(ctx: &InstanceContext, ontology: &Ontology) -> String {
    let m = ctx.local_minutes();
    let mut out = String::new();
    let _ = writeln!(out, "Date: {}", ctx.clock.format("%Y-%m-%d"));
    let _ = writeln!(out, "Day of week: {}", ctx.day().full_name());
    let _ = writeln!(out, "Local time: {:02}:{:02}", m / 60, m % 60);
    let _ = writeln!(out, "Recent activities (oldest first):");
    if ctx.history.is_empty() {
        let _ = writeln!(out, "- none");
    }
    for h in &ctx.history {
        let _ = writeln!(
            out,
            "- {} [{}]: {:.1} min",
            ontology.name(h.label),
            h.label.index(),
            h.duration_minutes
        );
    }
    out
}

fn fence(open: &str, body: &str, close: &str) -> String {
    format!("{open}\n{body}{close}\n")
}

/// The answer line shown after a demonstration, durations rounded to 0.1 min.
fn demo_answer(label: ActivityLabel, duration: f64) -> String {
    render_prediction(label, (duration * 10.0).round() / 10.0)
}

/// Renders a prediction the way the model is asked to answer.
pub fn render_prediction(label: ActivityLabel, duration_minutes: f64) -> String {
    let duration = serde_json::Number::from_f64(duration_minutes)
        .map(|n| n.to_string())
        .unwrap_or_else(|| "null".into());
    format!(
        "{{\"next_activity\": {}, \"duration_minutes\": {}}}",
        label.index(),
        duration
    )
}

/// Builds the full prompt: system instruction, ontology, persona and
/// spatial context, demonstrations (each a context block plus its answer)
/// and finally the query context.
pub fn assemble_prompt(
    template: &PromptTemplate,
    ontology: &Ontology,
    demonstrations: &[&InstanceContext],
    query: &InstanceContext,
    persona: Option<&ContextText>,
    spatial: Option<&ContextText>,
) -> Result<PromptBundle, PromptError> {
    if ontology.is_empty() {
        return Err(PromptError::Config("ontology is empty".into()));
    }
    let too_long = |c: &InstanceContext| c.history.len() > HISTORY_WINDOW;
    if too_long(query) || demonstrations.iter().any(|d| too_long(d)) {
        return Err(PromptError::Config(format!(
            "history longer than {HISTORY_WINDOW} activities"
        )));
    }

    let ontology_lines: Vec<String> = ontology
        .labels()
        .map(|l| format!("{} : {}", l.index(), ontology.name(l)))
        .collect();

    let mut demos = Vec::with_capacity(demonstrations.len());
    for (i, d) in demonstrations.iter().enumerate() {
        let target = d.target.ok_or_else(|| {
            PromptError::Config(format!("demonstration {} has no target", i + 1))
        })?;
        demos.push(format!(
            "### Example {}\n{}Answer: {}\n",
            i + 1,
            fence(CONTEXT_OPEN, &render_context_body(d, ontology), CONTEXT_CLOSE),
            demo_answer(target.label, target.duration_minutes)
        ));
    }
    let demos_text: String = demos.iter().map(|d| format!("{d}\n")).collect();
    let context_block = fence(QUERY_OPEN, &render_context_body(query, ontology), QUERY_CLOSE);
    let query_text = format!("### Query\n{context_block}Answer:");

    let none = "(not provided)";
    let text = template
        .layout
        .replace("{{system}}", &template.system)
        .replace("{{ontology}}", &ontology_lines.join("\n"))
        .replace("{{persona}}", persona.map_or(none, |p| &p.text))
        .replace("{{spatial}}", spatial.map_or(none, |s| &s.text))
        .replace("{{demonstrations}}", &demos_text)
        .replace("{{query}}", &query_text)
        .replace("{{schema}}", &template.schema);

    Ok(PromptBundle {
        system_instruction: template.system.clone(),
        ontology_lines,
        demonstrations: demos,
        context_block,
        persona: persona.cloned(),
        spatial: spatial.cloned(),
        output_schema_note: template.schema.clone(),
        text: text + "\n",
    })
}

/// Query fields recovered from an assembled prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryView {
    pub day: DayOfWeek,
    pub minutes_since_midnight: u32,
    pub last_label: Option<ActivityLabel>,
}

/// Reads the fenced query block back out of a prompt.
pub fn extract_query(prompt: &str) -> Result<QueryView, String> {
    let start = prompt
        .find(QUERY_OPEN)
        .ok_or_else(|| format!("missing {QUERY_OPEN}"))?;
    let body_start = start + QUERY_OPEN.len();
    let end = prompt[body_start..]
        .find(QUERY_CLOSE)
        .ok_or_else(|| format!("missing {QUERY_CLOSE}"))?;
    let body = &prompt[body_start..body_start + end];

    let mut day = None;
    let mut minutes = None;
    let mut last_label = None;
    for line in body.lines() {
        if let Some(v) = line.strip_prefix("Day of week: ") {
            day = Some(DayOfWeek::from_full_name(v).ok_or_else(|| format!("bad day `{v}`"))?);
        } else if let Some(v) = line.strip_prefix("Local time: ") {
            let (h, m) = v.trim().split_once(':').ok_or_else(|| format!("bad time `{v}`"))?;
            let h: u32 = h.parse().map_err(|_| format!("bad hour `{h}`"))?;
            let m: u32 = m.parse().map_err(|_| format!("bad minute `{m}`"))?;
            if h >= 24 || m >= 60 {
                return Err(format!("time out of range `{v}`"));
            }
            minutes = Some(h * 60 + m);
        } else if let Some(item) = line.strip_prefix("- ") {
            if item == "none" {
                continue;
            }
            let open = item.find(" [").ok_or_else(|| format!("bad history line `{line}`"))?;
            let close = item[open..]
                .find("]:")
                .ok_or_else(|| format!("bad history line `{line}`"))?;
            let idx: u16 = item[open + 2..open + close]
                .parse()
                .map_err(|_| format!("bad label index in `{line}`"))?;
            last_label = Some(ActivityLabel(idx));
        }
    }
    Ok(QueryView {
        day: day.ok_or("query lacks a day of week")?,
        minutes_since_midnight: minutes.ok_or("query lacks a local time")?,
        last_label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub next_activity: ActivityLabel,
    pub duration_minutes: f64,
    pub raw_text: String,
    pub parse_attempts: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OutputError {
    #[error("malformed output: {0}")]
    Malformed(String),
    #[error("unknown activity label: {0}")]
    UnknownLabel(String),
    #[error("duration must be positive, got {0}")]
    NonpositiveDuration(f64),
}

/// Validates a model reply of the form
/// `{"next_activity": <index or name>, "duration_minutes": <number>}`.
pub fn parse_prediction(raw: &str, ontology: &Ontology) -> Result<Prediction, OutputError> {
    let value: Value = serde_json::from_str(raw.trim())
        .map_err(|e| OutputError::Malformed(format!("not JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| OutputError::Malformed("not a JSON object".into()))?;
    if let Some(extra) = obj
        .keys()
        .find(|k| *k != "next_activity" && *k != "duration_minutes")
    {
        return Err(OutputError::Malformed(format!("unexpected field `{extra}`")));
    }
    let label = match obj.get("next_activity") {
        Some(Value::Number(n)) => {
            let idx = n
                .as_u64()
                .ok_or_else(|| OutputError::UnknownLabel(n.to_string()))?;
            ontology
                .by_index(idx as usize)
                .map_err(|_| OutputError::UnknownLabel(n.to_string()))?
        }
        Some(Value::String(s)) => ontology
            .get(s)
            .ok_or_else(|| OutputError::UnknownLabel(s.clone()))?,
        Some(other) => {
            return Err(OutputError::Malformed(format!(
                "next_activity has the wrong type: {other}"
            )))
        }
        None => return Err(OutputError::Malformed("missing next_activity".into())),
    };
    let duration = match obj.get("duration_minutes") {
        Some(Value::Number(n)) => n
            .as_f64()
            .ok_or_else(|| OutputError::Malformed(format!("duration not representable: {n}")))?,
        Some(other) => {
            return Err(OutputError::Malformed(format!(
                "duration_minutes has the wrong type: {other}"
            )))
        }
        None => return Err(OutputError::Malformed("missing duration_minutes".into())),
    };
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(OutputError::NonpositiveDuration(duration));
    }
    Ok(Prediction {
        next_activity: label,
        duration_minutes: duration,
        raw_text: raw.to_string(),
        parse_attempts: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{HistoryItem, Target};
    use chrono::NaiveDate;

    fn ontology() -> Ontology {
        Ontology::new([
            "bed_to_toilet",
            "being_outside",
            "eating",
            "housekeeping",
            "sleeping",
            "meal_preparation",
            "relax",
            "resperate",
            "wash_dishes",
            "work",
        ])
        .unwrap()
    }

    fn ctx(h: u32, m: u32, labels: &[u16]) -> InstanceContext {
        let clock = NaiveDate::from_ymd_opt(2010, 11, 4)
            .unwrap()
            .and_hms_opt(h, m, 17)
            .unwrap();
        InstanceContext::new(
            clock,
            labels
                .iter()
                .map(|&l| HistoryItem {
                    label: ActivityLabel(l),
                    duration_minutes: 10.0 + f64::from(l),
                })
                .collect(),
        )
    }

    #[test]
    fn zero_shot_prompt_has_only_the_query() {
        let o = ontology();
        let b = assemble_prompt(&PromptTemplate::builtin(), &o, &[], &ctx(8, 15, &[4, 0, 6]), None, None)
            .unwrap();
        assert!(b.demonstrations.is_empty());
        assert_eq!(b.text.matches(QUERY_OPEN).count(), 1);
        assert_eq!(b.text.matches(CONTEXT_OPEN).count(), 0);
    }

    #[test]
    fn ontology_lines_cover_every_label() {
        let o = ontology();
        let b = assemble_prompt(&PromptTemplate::builtin(), &o, &[], &ctx(8, 15, &[]), None, None).unwrap();
        assert_eq!(b.ontology_lines.len(), 10);
        for (i, line) in b.ontology_lines.iter().enumerate() {
            assert_eq!(line, &format!("{i} : {}", o.names()[i]));
            assert!(b.text.contains(line.as_str()));
        }
    }

    #[test]
    fn query_round_trips_through_the_prompt() {
        let o = ontology();
        let mut demo = ctx(7, 0, &[1, 2, 3]);
        demo.target = Some(Target {
            label: ActivityLabel(9),
            duration_minutes: 12.34,
        });
        let q = ctx(21, 47, &[4, 0, 6]);
        let b = assemble_prompt(
            &PromptTemplate::builtin(),
            &o,
            &[&demo],
            &q,
            Some(&ContextText::default_persona()),
            Some(&ContextText::default_spatial()),
        )
        .unwrap();
        assert!(b.text.contains("Answer: {\"next_activity\": 9, \"duration_minutes\": 12.3}"));
        let view = extract_query(&b.text).unwrap();
        assert_eq!(view.day, DayOfWeek::Thu);
        assert_eq!(view.minutes_since_midnight, 21 * 60 + 47);
        assert_eq!(view.last_label, Some(ActivityLabel(6)));
    }

    #[test]
    fn demonstrations_need_targets_and_history_is_bounded() {
        let o = ontology();
        let t = PromptTemplate::builtin();
        let demo = ctx(7, 0, &[1]);
        assert!(assemble_prompt(&t, &o, &[&demo], &ctx(8, 0, &[]), None, None).is_err());
        let long = ctx(8, 0, &[1, 2, 3, 4]);
        assert!(assemble_prompt(&t, &o, &[], &long, None, None).is_err());
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::parse("== system ==\nx\n== schema ==\ny\n== layout ==\n{{query}}\n").is_ok());
        assert!(PromptTemplate::parse("== system ==\nx\n== schema ==\ny\n== layout ==\nno query\n").is_err());
        assert!(PromptTemplate::parse("== system ==\nx\n== layout ==\n{{query}}\n").is_err());
        assert!(
            PromptTemplate::parse("== system ==\nx\n== schema ==\ny\n== layout ==\n{{query}} {{oops}}\n")
                .is_err()
        );
        assert!(PromptTemplate::parse("stray\n== system ==\n").is_err());
    }

    #[test]
    fn parses_index_and_name() {
        let o = ontology();
        let p = parse_prediction(r#"{"next_activity": 4, "duration_minutes": 35}"#, &o).unwrap();
        assert_eq!((p.next_activity, p.duration_minutes), (ActivityLabel(4), 35.0));
        let p = parse_prediction("  {\"next_activity\": \"sleeping\", \"duration_minutes\": 480}\n", &o)
            .unwrap();
        assert_eq!(p.next_activity, o.label("sleeping").unwrap());
        let p = parse_prediction(r#"{"next_activity": "Meal_Preparation", "duration_minutes": 2.5}"#, &o)
            .unwrap();
        assert_eq!(p.next_activity, ActivityLabel(5));
    }

    #[test]
    fn rejects_bad_outputs_with_distinct_errors() {
        let o = ontology();
        let bad = |s: &str| parse_prediction(s, &o).unwrap_err();
        assert!(matches!(bad("I think they will relax next."), OutputError::Malformed(_)));
        assert!(matches!(bad("[1, 2]"), OutputError::Malformed(_)));
        assert!(matches!(bad(r#"{"next_activity": 4}"#), OutputError::Malformed(_)));
        assert!(matches!(
            bad(r#"{"next_activity": 4, "duration_minutes": "35"}"#),
            OutputError::Malformed(_)
        ));
        assert!(matches!(
            bad(r#"{"next_activity": 4, "duration_minutes": 3, "why": "x"}"#),
            OutputError::Malformed(_)
        ));
        assert!(matches!(
            bad(r#"{"next_activity": 10, "duration_minutes": 3}"#),
            OutputError::UnknownLabel(_)
        ));
        assert!(matches!(
            bad(r#"{"next_activity": -1, "duration_minutes": 3}"#),
            OutputError::UnknownLabel(_)
        ));
        assert!(matches!(
            bad(r#"{"next_activity": "napping", "duration_minutes": 3}"#),
            OutputError::UnknownLabel(_)
        ));
        assert_eq!(
            bad(r#"{"next_activity": 1, "duration_minutes": 0}"#),
            OutputError::NonpositiveDuration(0.0)
        );
    }

    #[test]
    fn extract_query_reports_contract_violations() {
        assert!(extract_query("no fences here").is_err());
        assert!(extract_query(&format!("{QUERY_OPEN}\nLocal time: 08:00\n{QUERY_CLOSE}")).is_err());
        let ok = format!("{QUERY_OPEN}\nDay of week: Sunday\nLocal time: 23:59\n- none\n{QUERY_CLOSE}");
        assert_eq!(
            extract_query(&ok).unwrap(),
            QueryView {
                day: DayOfWeek::Sun,
                minutes_since_midnight: 1439,
                last_label: None
            }
        );
    }
}
