//! Prompt text for every model-facing call.
//!
//! Each system prompt opens with a fixed role line. The scripted backend keys
//! its playback on these lines, so change them together with
//! [`crate::backend::scripted::Scope::detect`].

use crate::types::{Domain, Schedule};

pub const ORCHESTRATOR_ROLE: &str = "You are a geospatial orchestrator";
pub const VERIFIER_ROLE: &str = "You verify task completion";
pub const COPILOT_ROLE: &str = "You are a geospatial copilot";

pub const PLAN_HEADER: &str = "Plan request";
pub const REVISION_HEADER: &str = "Revision request";
pub const LEDGER_HEADER: &str = "Ledger update";
pub const CHECK_HEADER: &str = "Completion check";

/// Response convention an agent uses to ask the orchestrator for another agent.
pub const DEPENDENCY_MARKER: &str = "NEEDS_DEPENDENCY";

pub fn agent_role(agent: Domain) -> String {
    format!("You are the {} agent", agent.agent_name())
}

pub fn agent_blurb(agent: Domain) -> &'static str {
    match agent {
        Domain::Database => "loads raster products for a region and date range",
        Domain::DataOps => "filters, clips and summarizes loaded data",
        Domain::Map => "plots layers and markers on the map",
        Domain::Agriculture => "vegetation and reflectance analysis (NDVI, Band 2)",
        Domain::Climate => "land surface temperature and aerosol analysis",
        Domain::Urban => "population and built-up surface analysis",
        Domain::Forestry => "canopy cover and tree loss analysis",
        Domain::Vision => "object detection and land-cover classification on scenes",
    }
}

pub fn orchestrator_system(roster: &[Domain], guidance: &str) -> String {
    let mut s = format!(
        "{ORCHESTRATOR_ROLE} coordinating remote sensing agents.\n\
         1. Break the user request into agent subtasks.\n\
         2. Write a precise prompt for each agent.\n\
         3. Order the agents so inputs exist before use (load before filter).\n\
         Agents:\n"
    );
    for a in roster {
        s.push_str(&format!("- {}: {}\n", a.agent_name(), agent_blurb(*a)));
    }
    s.push_str(
        "Answer with one line: schedule = [Agent(prompt), ...]\n\
         Example request: use 2024 NDVI for brisbane to recommend crop rotation areas on the map.\n\
         Example answer: schedule = [Database(Load NDVI for brisbane 2024-01..2024-12), \
         DataOps(Filter brisbane), Agriculture(Recommend crop rotation areas from low NDVI clusters), \
         Map(Plot the clusters)]\n",
    );
    if !guidance.is_empty() {
        s.push_str(guidance);
        if !guidance.ends_with('\n') {
            s.push('\n');
        }
    }
    s
}

pub fn plan_request(task_text: &str) -> String {
    format!("{PLAN_HEADER}\nTask: {task_text}\n")
}

pub fn plan_reminder(task_text: &str) -> String {
    format!(
        "{PLAN_HEADER}\nTask: {task_text}\nFormat reminder: reply with exactly one line of the form \
         schedule = [Agent(prompt), ...]\n"
    )
}

pub fn revision_request(
    task_text: &str,
    completed: &[String],
    failed: Option<&str>,
    missing: &str,
    directive: Option<&str>,
    remaining: &Schedule,
) -> String {
    let mut s = format!("{REVISION_HEADER}\nTask: {task_text}\n");
    s.push_str(&format!("Completed: {}\n", list_or_none(completed)));
    if let Some(f) = failed {
        s.push_str(&format!("Failed step: {f}\n"));
    }
    s.push_str(&format!("Missing: {missing}\n"));
    if let Some(d) = directive {
        s.push_str(&format!("Directive: {d}\n"));
    }
    s.push_str(&format!("Current remaining plan: {}\n", remaining.to_program()));
    s.push_str("Reply with the remaining steps only, as schedule = [Agent(prompt), ...]\n");
    s
}

pub fn ledger_request(
    task_text: &str,
    last_agent: Domain,
    last_status: &str,
    last_summary: &str,
    completed: &[String],
    remaining: &Schedule,
) -> String {
    format!(
        "{LEDGER_HEADER}\nTask: {task_text}\nLast result: {} {last_status}\nSummary: {last_summary}\n\
         Completed: {}\nRemaining: {}\n\
         Reply with schedule = [Agent(prompt), ...] to replace the remaining steps, or CONTINUE.\n",
        last_agent.agent_name(),
        list_or_none(completed),
        remaining.to_program(),
    )
}

pub fn verifier_system() -> String {
    format!("{VERIFIER_ROLE} for a geospatial orchestrator. Reply COMPLETE, or INCOMPLETE: <what is missing>.\n")
}

pub fn check_request(task_text: &str, results: &[(Domain, String, String)]) -> String {
    let mut s = format!("{CHECK_HEADER}\nTask: {task_text}\nResults:\n");
    for (agent, status, summary) in results {
        s.push_str(&format!("- {} {status}: {summary}\n", agent.agent_name()));
    }
    s
}

pub fn agent_system(agent: Domain, guidance: &str) -> String {
    let mut s = format!(
        "{}, a geospatial expert ({}). Solve the query with your own tools only. \
         Handles such as @hN name data produced earlier. If another agent must act first, reply \
         {DEPENDENCY_MARKER}(<Agent>): <reason>. Otherwise finish with a short summary.\n",
        agent_role(agent),
        agent_blurb(agent)
    );
    if !guidance.is_empty() {
        s.push_str(guidance);
        if !guidance.ends_with('\n') {
            s.push('\n');
        }
    }
    s
}

pub fn agent_query(subprompt: &str, context: &str) -> String {
    let ctx = if context.is_empty() { "none" } else { context };
    format!("Query: {subprompt}\nContext: {ctx}")
}

pub fn copilot_system() -> String {
    format!(
        "{COPILOT_ROLE} with access to every tool. Solve the request with tool calls in order, then \
         summarize the result.\n"
    )
}

pub fn copilot_request(task_text: &str) -> String {
    format!("Task: {task_text}\n")
}

fn list_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "none".to_string()
    } else {
        items.join("; ")
    }
}
