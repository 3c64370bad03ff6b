//! Compiles gold solutions into scripted backend behaviors.

use serde_json::Value;

use crate::backend::scripted::{Perturbation, ScriptedBehavior, ScriptedCall, ScriptedReply, Scope};
use crate::prompts;
use crate::types::{Domain, GoldStep, Schedule, SubTask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BehaviorMode {
    /// Planner and agents follow the gold solution exactly.
    Faithful,
    Perturbed(Perturbation),
    /// The first plan leaves out the leading Database step; replanning
    /// restores the full gold schedule.
    InjectedFailure,
}

/// Consecutive steps by the same agent form one subtask.
pub fn group_steps(steps: &[GoldStep]) -> Vec<(Domain, Vec<GoldStep>)> {
    let mut out: Vec<(Domain, Vec<GoldStep>)> = Vec::new();
    for s in steps {
        match out.last_mut() {
            Some((a, v)) if *a == s.agent_name => v.push(s.clone()),
            _ => out.push((s.agent_name, vec![s.clone()])),
        }
    }
    out
}

fn is_placeholder(v: &Value) -> bool {
    v.as_str().is_some_and(|s| s.starts_with("$handle"))
}

pub fn describe_step(s: &GoldStep) -> String {
    let args: Vec<String> = s
        .canonical_args
        .iter()
        .filter(|(_, v)| !is_placeholder(v))
        .map(|(k, v)| match v {
            Value::String(t) => format!("{k}={t}"),
            other => format!("{k}={other}"),
        })
        .collect();
    if args.is_empty() {
        s.tool_name.clone()
    } else {
        format!("{} with {}", s.tool_name, args.join(", "))
    }
}

pub fn subprompt(steps: &[GoldStep]) -> String {
    let parts: Vec<String> = steps.iter().map(describe_step).collect();
    format!("Run {}", parts.join("; then "))
}

/// The planner's schedule for a gold solution. Repeated agents get an
/// ordinal suffix so every subprompt stays unique.
pub fn gold_schedule(steps: &[GoldStep]) -> Schedule {
    schedule_from_groups(&group_steps(steps).into_iter().map(|(a, v)| (a, subprompt(&v))).collect::<Vec<_>>())
}

fn schedule_from_groups(groups: &[(Domain, String)]) -> Schedule {
    let mut seen: Vec<String> = Vec::new();
    let subtasks = groups
        .iter()
        .map(|(a, p)| {
            let mut p = p.clone();
            let n = seen.iter().filter(|q| **q == p).count();
            seen.push(p.clone());
            if n > 0 {
                p = format!("{p} (part {})", n + 1);
            }
            SubTask::new(*a, p)
        })
        .collect();
    Schedule { subtasks, revision: 0 }
}

/// True when the injected-failure variant applies: the gold starts with a
/// Database step and other agents follow it.
pub fn injectable(steps: &[GoldStep]) -> bool {
    let g = group_steps(steps);
    g.len() >= 2 && g[0].0 == Domain::Database
}

fn alter(v: &Value) -> Value {
    match v {
        Value::Number(n) => {
            let x = n.as_f64().unwrap_or(0.0);
            serde_json::json!(if x == 0.0 { 1.0 } else { x * 2.0 })
        }
        Value::String(s) => Value::String(format!("{s}_x")),
        Value::Bool(b) => Value::Bool(!b),
        other => other.clone(),
    }
}

/// Applies `p` and returns the agent groups to script. Dropping keeps the
/// group (possibly empty) so the schedule shape is unchanged.
pub fn perturbed_groups(steps: &[GoldStep], p: Option<&Perturbation>) -> Vec<(Domain, Vec<GoldStep>)> {
    let mut tagged: Vec<(usize, Option<GoldStep>)> = Vec::new();
    let mut gi = 0;
    for (i, s) in steps.iter().enumerate() {
        if i > 0 && steps[i - 1].agent_name != s.agent_name {
            gi += 1;
        }
        tagged.push((gi, Some(s.clone())));
    }
    match p {
        None => {}
        Some(Perturbation::DropStep(i)) => {
            if let Some(t) = tagged.get_mut(*i) {
                t.1 = None;
            }
        }
        Some(Perturbation::DropLastStep) => {
            if let Some(t) = tagged.last_mut() {
                t.1 = None;
            }
        }
        Some(Perturbation::SwapSteps(i, j)) => {
            if *i < steps.len() && *j < steps.len() {
                let mut v = steps.to_vec();
                v.swap(*i, *j);
                return group_steps(&v);
            }
        }
        Some(Perturbation::WrongArgs(key)) => {
            if let Some(s) = tagged
                .iter_mut()
                .filter_map(|t| t.1.as_mut())
                .find(|s| s.canonical_args.get(key).is_some_and(|v| !is_placeholder(v)))
            {
                let v = alter(&s.canonical_args[key]);
                s.canonical_args.insert(key.clone(), v);
            }
        }
    }
    let g = group_steps(steps);
    g.iter()
        .enumerate()
        .map(|(k, (a, _))| (*a, tagged.iter().filter(|t| t.0 == k).filter_map(|t| t.1.clone()).collect()))
        .collect()
}

fn call_of(s: &GoldStep, qualified: bool) -> ScriptedReply {
    let name = if qualified { format!("{}__{}", s.agent_name.key(), s.tool_name) } else { s.tool_name.clone() };
    let args = Value::Object(s.canonical_args.clone().into_iter().collect());
    ScriptedReply::Calls(vec![ScriptedCall { name, args }])
}

fn final_text(agent: Domain, steps: &[GoldStep]) -> String {
    if steps.is_empty() {
        return format!("{} had nothing to run", agent.agent_name());
    }
    let tools: Vec<&str> = steps.iter().map(|s| s.tool_name.as_str()).collect();
    format!("{} ran {}", agent.agent_name(), tools.join(", "))
}

/// One rule per subtask (one tool call per turn, then a final reply), a
/// planner rule, and a single-agent rule over qualified tool names.
pub fn compile_behavior(task_text: &str, gold: &[GoldStep], mode: &BehaviorMode) -> ScriptedBehavior {
    let mut b = ScriptedBehavior::default();
    let perturbation = match mode {
        BehaviorMode::Perturbed(p) => Some(p.clone()),
        _ => None,
    };
    b.perturbation = perturbation.clone();
    let gold_groups = group_steps(gold);
    let full = gold_schedule(gold);
    let groups = perturbed_groups(gold, perturbation.as_ref());
    // Swapping may regroup; subprompts follow the scripted groups.
    let sched = if groups.len() == gold_groups.len() && groups.iter().zip(&gold_groups).all(|(a, g)| a.0 == g.0) {
        full.clone()
    } else {
        schedule_from_groups(&groups.iter().map(|(a, v)| (*a, subprompt(v))).collect::<Vec<_>>())
    };

    for ((agent, steps), sub) in groups.iter().zip(&sched.subtasks) {
        let mut replies: Vec<ScriptedReply> = steps.iter().map(|s| call_of(s, false)).collect();
        replies.push(ScriptedReply::Final(final_text(*agent, steps)));
        b.push(Scope::Agent(*agent), sub.subprompt.clone(), replies);
    }

    let flat: Vec<GoldStep> = groups.iter().flat_map(|(_, v)| v.iter().cloned()).collect();
    let mut single: Vec<ScriptedReply> = flat.iter().map(|s| call_of(s, true)).collect();
    single.push(ScriptedReply::Final(format!("Finished {} tool calls", flat.len())));
    b.push(Scope::SingleAgent, format!("Task: {task_text}"), single);

    let plan_header = format!("{}\nTask: {task_text}", prompts::PLAN_HEADER);
    if *mode == BehaviorMode::InjectedFailure && injectable(gold) {
        let first = Schedule { subtasks: sched.subtasks[1..].to_vec(), revision: 0 };
        b.push(Scope::Orchestrator, plan_header, vec![ScriptedReply::Final(first.to_program())]);
        b.push(
            Scope::Orchestrator,
            format!("{}\nTask: {task_text}", prompts::REVISION_HEADER),
            vec![ScriptedReply::Final(sched.to_program())],
        );
        b.push(
            Scope::Orchestrator,
            format!("{}\nTask: {task_text}\nLast result: {} needs_dependency", prompts::LEDGER_HEADER, sched.subtasks[1].agent.agent_name()),
            vec![ScriptedReply::Final(sched.to_program())],
        );
    } else {
        b.push(Scope::Orchestrator, plan_header, vec![ScriptedReply::Final(sched.to_program())]);
    }
    b
}
