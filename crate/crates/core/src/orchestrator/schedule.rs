//! Tolerant parser for `schedule = [Agent(prompt), ...]` text.

use thiserror::Error;

use crate::types::{Domain, SubTask};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleParseError {
    #[error("UnparseableSchedule: {0}")]
    Unparseable(String),
}

fn bad(msg: impl Into<String>) -> ScheduleParseError {
    ScheduleParseError::Unparseable(msg.into())
}

/// Accepts optional `schedule =`, quoted or bare prompts, any whitespace and
/// trailing commas. Agent names go through `Domain::from_str` (so `Forest`
/// and `database` both work). An empty list parses to an empty vector.
pub fn parse_schedule(text: &str) -> Result<Vec<SubTask>, ScheduleParseError> {
    let start = match text.find("schedule") {
        Some(i) => {
            let after = &text[i + "schedule".len()..];
            let open = after.find('[').ok_or_else(|| bad("missing '['"))?;
            i + "schedule".len() + open
        }
        None => {
            let t = text.trim_start();
            if !t.starts_with('[') {
                return Err(bad("no schedule list found"));
            }
            text.len() - t.len()
        }
    };
    let chars: Vec<char> = text[start + 1..].chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    loop {
        while i < chars.len() && (chars[i].is_whitespace() || chars[i] == ',') {
            i += 1;
        }
        if i >= chars.len() {
            return Err(bad("unterminated list"));
        }
        if chars[i] == ']' {
            return Ok(out);
        }
        let name_start = i;
        while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
            i += 1;
        }
        let name: String = chars[name_start..i].iter().collect();
        if name.is_empty() {
            return Err(bad(format!("expected agent name at '{}'", chars[i])));
        }
        let agent: Domain = name.parse().map_err(|_| bad(format!("unknown agent '{name}'")))?;
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        if i >= chars.len() || chars[i] != '(' {
            return Err(bad(format!("expected '(' after {name}")));
        }
        i += 1;
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        let prompt = if i < chars.len() && (chars[i] == '"' || chars[i] == '\'') {
            let q = chars[i];
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(bad("unterminated string")),
                    Some('\\') => {
                        if let Some(c) = chars.get(i + 1) {
                            s.push(*c);
                        }
                        i += 2;
                    }
                    Some(c) if *c == q => {
                        i += 1;
                        break;
                    }
                    Some(c) => {
                        s.push(*c);
                        i += 1;
                    }
                }
            }
            while i < chars.len() && chars[i].is_whitespace() {
                i += 1;
            }
            if chars.get(i) != Some(&')') {
                return Err(bad("expected ')' after quoted prompt"));
            }
            i += 1;
            s
        } else {
            let mut depth = 0usize;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(bad("unterminated prompt")),
                    Some('(') => {
                        depth += 1;
                        s.push('(');
                    }
                    Some(')') if depth == 0 => {
                        i += 1;
                        break;
                    }
                    Some(')') => {
                        depth -= 1;
                        s.push(')');
                    }
                    Some(c) => s.push(*c),
                }
                i += 1;
            }
            s.trim().to_string()
        };
        out.push(SubTask::new(agent, prompt));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Schedule;
    use proptest::prelude::*;

    #[test]
    fn canonical_form() {
        let s = parse_schedule(
            "schedule = [Database(Load NDVI for brisbane 2024), DataOps(Filter brisbane), \
             Agriculture(Recommend crop rotation areas), Map(Plot the clusters)]",
        )
        .unwrap();
        let agents: Vec<Domain> = s.iter().map(|t| t.agent).collect();
        assert_eq!(agents, vec![Domain::Database, Domain::DataOps, Domain::Agriculture, Domain::Map]);
        assert_eq!(s[0].subprompt, "Load NDVI for brisbane 2024");
    }

    #[test]
    fn variants() {
        let s = parse_schedule("Answer:\n  schedule=[ Forest ( \"plot canopy (2020)\" ) ,map('x, y'),]").unwrap();
        assert_eq!(s, vec![SubTask::new(Domain::Forestry, "plot canopy (2020)"), SubTask::new(Domain::Map, "x, y")]);
        let s = parse_schedule("[Vision(count planes (all of them))]").unwrap();
        assert_eq!(s[0].subprompt, "count planes (all of them)");
        assert_eq!(parse_schedule("schedule = []").unwrap(), vec![]);
    }

    #[test]
    fn rejects_prose() {
        assert!(parse_schedule("First load the data, then plot it.").is_err());
        assert!(parse_schedule("schedule = [Wizard(x)]").is_err());
        assert!(parse_schedule("schedule = [Map(x)").is_err());
        assert!(parse_schedule("schedule = [Map x]").is_err());
    }

    proptest! {
        #[test]
        fn program_round_trip(items in prop::collection::vec((0usize..8, "[ -~]{0,30}"), 0..6)) {
            let subtasks: Vec<SubTask> = items.iter().map(|(a, p)| SubTask::new(Domain::ALL[*a], p.trim())).collect();
            let sched = Schedule { subtasks: subtasks.clone(), revision: 0 };
            prop_assert_eq!(parse_schedule(&sched.to_program()).unwrap(), subtasks);
        }
    }
}
