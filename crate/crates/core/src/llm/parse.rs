//! Total parsers for model output. Nothing here panics or returns an error;
//! failures are reported through [`ParseStatus`].

use serde_json::Value;

use crate::corpus::PiiType;
use crate::detection::ParseStatus;
use crate::surrogation::items::Evaluation;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDetections {
    pub status: ParseStatus,
    pub detections: Vec<(String, PiiType)>,
    /// Array elements skipped for a missing field or an unknown type.
    pub dropped: usize,
}

impl ParsedDetections {
    fn with_status(status: ParseStatus) -> Self {
        Self {
            status,
            detections: Vec::new(),
            dropped: 0,
        }
    }
}

/// Lenient type lookup: case, spaces, hyphens, and `<...>` wrappers are
/// ignored, and `COURSE` maps to `COURSE_NUMBER`.
pub fn parse_pii_type(raw: &str) -> Option<PiiType> {
    let norm: String = raw
        .trim()
        .trim_matches(|c: char| c == '<' || c == '>' || c == '"' || c == '\'' || c == '`')
        .chars()
        .map(|c| {
            if c == ' ' || c == '-' {
                '_'
            } else {
                c.to_ascii_uppercase()
            }
        })
        .collect();
    norm.parse().ok()
}

/// Values of every well-formed JSON document starting at an opening
/// bracket, in text order.
fn embedded_json(raw: &str, open: char) -> impl Iterator<Item = Value> + '_ {
    raw.char_indices()
        .filter(move |&(_, c)| c == open)
        .filter_map(|(i, _)| {
            serde_json::Deserializer::from_str(&raw[i..])
                .into_iter::<Value>()
                .next()
                .and_then(Result::ok)
        })
}

/// First JSON array in the text, past any code fence or prose.
pub fn first_json_array(raw: &str) -> Option<Vec<Value>> {
    embedded_json(raw, '[').find_map(|v| match v {
        Value::Array(items) => Some(items),
        _ => None,
    })
}

fn detection_from(value: &Value) -> Option<(String, PiiType)> {
    let obj = value.as_object()?;
    let text = obj.get("text")?.as_str()?;
    let pii_type = parse_pii_type(obj.get("type")?.as_str()?)?;
    if text.trim().is_empty() {
        return None;
    }
    Some((text.to_string(), pii_type))
}

/// Parses a `[{"text": ..., "type": ...}]` response.
///
/// Empty or whitespace output is `EMPTY`. A well-formed array is `OK` unless
/// it is non-empty and no element is usable, which is `MALFORMED`. Without an
/// array, a lone `{"text", "type"}` object is accepted; anything else is
/// `MALFORMED`.
pub fn parse_detections(raw: &str) -> ParsedDetections {
    if raw.trim().is_empty() {
        return ParsedDetections::with_status(ParseStatus::Empty);
    }
    let elements = match first_json_array(raw) {
        Some(items) => items,
        None => match embedded_json(raw, '{').find_map(|v| detection_from(&v)) {
            Some(single) => {
                return ParsedDetections {
                    status: ParseStatus::Ok,
                    detections: vec![single],
                    dropped: 0,
                }
            }
            None => return ParsedDetections::with_status(ParseStatus::Malformed),
        },
    };
    let detections: Vec<_> = elements.iter().filter_map(detection_from).collect();
    let dropped = elements.len() - detections.len();
    let status = if !elements.is_empty() && detections.is_empty() {
        ParseStatus::Malformed
    } else {
        ParseStatus::Ok
    };
    ParsedDetections {
        status,
        detections,
        dropped,
    }
}

/// One row of the audit table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRow {
    pub pii_type: PiiType,
    pub ai_redacted_content: Option<String>,
    pub evaluation: Evaluation,
    pub surrogate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAudit {
    pub status: ParseStatus,
    pub rows: Vec<AuditRow>,
    pub dropped: usize,
}

fn blank_cell(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "-" || t == "—" || t.eq_ignore_ascii_case("n/a") || t.eq_ignore_ascii_case("none")
}

fn clean_cell(s: &str) -> Option<String> {
    let t = s.trim();
    let t = t.strip_prefix('`').and_then(|x| x.strip_suffix('`')).unwrap_or(t);
    let t = t.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(t);
    if blank_cell(t) {
        None
    } else {
        Some(t.replace("<br>", "\n").replace("\\|", "|"))
    }
}

fn row_from_cells(
    pii_type: Option<&str>,
    content: Option<&str>,
    evaluation: Option<&str>,
    surrogate: Option<&str>,
) -> Option<AuditRow> {
    Some(AuditRow {
        pii_type: parse_pii_type(pii_type?)?,
        ai_redacted_content: content.and_then(clean_cell),
        evaluation: clean_cell(evaluation?)?.parse().ok()?,
        surrogate: surrogate.and_then(clean_cell),
    })
}

fn split_row(line: &str) -> Vec<String> {
    let inner = line.trim().trim_start_matches('|');
    let inner = inner.strip_suffix('|').unwrap_or(inner);
    let mut cells = Vec::new();
    let mut current = String::new();
    let mut chars = inner.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' if chars.peek() == Some(&'|') => {
                current.push('\\');
                current.push('|');
                chars.next();
            }
            '|' => cells.push(std::mem::take(&mut current)),
            _ => current.push(c),
        }
    }
    cells.push(current);
    cells.into_iter().map(|c| c.trim().to_string()).collect()
}

fn is_separator(cells: &[String]) -> bool {
    cells
        .iter()
        .all(|c| !c.is_empty() && c.chars().all(|ch| matches!(ch, '-' | ':' | ' ')))
}

fn normalize_header(h: &str) -> String {
    h.trim()
        .trim_matches(|c| c == '*' || c == '`')
        .to_ascii_lowercase()
        .replace([' ', '-'], "_")
}

const COLUMNS: [&str; 4] = ["pii_type", "ai_redacted_content", "pii_evaluation", "surrogate"];

fn column_index(header: &[String], name: &str) -> Option<usize> {
    let alt = match name {
        "pii_evaluation" => "evaluation",
        other => other,
    };
    header
        .iter()
        .position(|h| normalize_header(h) == name || normalize_header(h) == alt)
}

fn parse_markdown_table(raw: &str) -> Option<(Vec<AuditRow>, usize)> {
    let mut lines = raw.lines().map(str::trim).filter(|l| l.starts_with('|'));
    let header = loop {
        let cells = split_row(lines.next()?);
        if column_index(&cells, "pii_type").is_some() {
            break cells;
        }
    };
    let idx: Vec<Option<usize>> = COLUMNS.iter().map(|c| column_index(&header, c)).collect();
    idx[2]?;
    let (mut rows, mut dropped) = (Vec::new(), 0);
    for line in lines {
        let cells = split_row(line);
        if is_separator(&cells) {
            continue;
        }
        if column_index(&cells, "pii_type").is_some() {
            continue;
        }
        let cell = |k: usize| idx[k].and_then(|i| cells.get(i)).map(String::as_str);
        match row_from_cells(cell(0), cell(1), cell(2), cell(3)) {
            Some(row) => rows.push(row),
            None => dropped += 1,
        }
    }
    Some((rows, dropped))
}

fn json_cell(obj: &serde_json::Map<String, Value>, name: &str) -> Option<String> {
    let alt = if name == "pii_evaluation" { "evaluation" } else { name };
    match obj.get(name).or_else(|| obj.get(alt))? {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

/// Parses the four-column audit output, given either as a markdown table or
/// as a JSON array of objects keyed by column name. Totals as
/// [`parse_detections`]: `EMPTY` for blank output, `MALFORMED` when neither
/// form is found or no row is usable. A table with zero rows is `OK`.
pub fn parse_audit_table(raw: &str) -> ParsedAudit {
    if raw.trim().is_empty() {
        return ParsedAudit {
            status: ParseStatus::Empty,
            rows: Vec::new(),
            dropped: 0,
        };
    }
    let parsed = parse_markdown_table(raw).or_else(|| {
        let elements = first_json_array(raw)?;
        let mut rows = Vec::new();
        for el in &elements {
            let Some(obj) = el.as_object() else { continue };
            let cells: Vec<Option<String>> = COLUMNS.iter().map(|c| json_cell(obj, c)).collect();
            if let Some(row) = row_from_cells(
                cells[0].as_deref(),
                cells[1].as_deref(),
                cells[2].as_deref(),
                cells[3].as_deref(),
            ) {
                rows.push(row);
            }
        }
        let dropped = elements.len() - rows.len();
        Some((rows, dropped))
    });
    match parsed {
        Some((rows, dropped)) if !(rows.is_empty() && dropped > 0) => ParsedAudit {
            status: ParseStatus::Ok,
            rows,
            dropped,
        },
        Some((_, dropped)) => ParsedAudit {
            status: ParseStatus::Malformed,
            rows: Vec::new(),
            dropped,
        },
        None => ParsedAudit {
            status: ParseStatus::Malformed,
            rows: Vec::new(),
            dropped: 0,
        },
    }
}
