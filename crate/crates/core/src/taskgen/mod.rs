//! Deterministic task and gold generation from templates.

pub mod behavior;
pub mod interpret;
pub mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{complete, BackendError, ChatBackend, ChatMessage};
use crate::dataset::{read_jsonl, write_jsonl, IoError};
use crate::registry::retrieval::{ToolExemplar, TsStore, WmStore, WorkflowExemplar};
use crate::sandbox::raster::mix;
use crate::sandbox::Sandbox;
use crate::types::{DateRange, Domain, GoldSolution, RegionRef, TaskPrompt};
use behavior::{gold_schedule, group_steps};
use templates::{gold_datapoints, RecipeError, TaskTemplate};

pub use behavior::{compile_behavior, BehaviorMode};
pub use interpret::{interpret, Interpretation};
pub use templates::builtin_templates;

pub const EXEMPLARS_PER_AGENT: usize = 7;
pub const DEFAULT_PER_AGENT: usize = 25;
pub const FULL_PER_AGENT: usize = 250;

#[derive(Debug, Error)]
pub enum TaskGenError {
    #[error("TemplateGapError: no template for agent {0}")]
    TemplateGap(Domain),
    #[error("templates for {agent} yield only {available} distinct prompts, {needed} needed")]
    InsufficientVariety { agent: Domain, available: usize, needed: usize },
    #[error("template {code}: {source}")]
    Recipe { code: String, source: RecipeError },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub exemplar: usize,
    pub benchmark: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub sandbox_seed: u64,
    pub per_agent: usize,
    pub counts: BTreeMap<Domain, SplitCounts>,
    pub fixture_hash: String,
    pub templates: Vec<String>,
}

impl DatasetManifest {
    pub fn total_benchmark(&self) -> usize {
        self.counts.values().map(|c| c.benchmark).sum()
    }

    pub fn total_exemplars(&self) -> usize {
        self.counts.values().map(|c| c.exemplar).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tasks: Vec<TaskPrompt>,
    pub golds: Vec<GoldSolution>,
    pub exemplars: Vec<TaskPrompt>,
    pub exemplar_golds: Vec<GoldSolution>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn gold(&self, task_id: &str) -> Option<&GoldSolution> {
        self.golds.iter().find(|g| g.task_id == task_id)
    }
}

fn range_of(steps: &[crate::types::GoldStep]) -> Option<DateRange> {
    steps
        .iter()
        .find(|s| s.tool_name == "load_product")
        .and_then(|s| s.canonical_args.get("date_range"))
        .and_then(|v| DateRange::from_json(v).ok())
}

/// Per agent: 7 exemplars then `per_agent` benchmark tasks, drawn round-robin
/// over that agent's templates from seeded shuffles of each slot space.
/// No prompt text repeats anywhere in the output.
pub fn generate_dataset(
    templates: &[TaskTemplate],
    sandbox: &Sandbox,
    seed: u64,
    per_agent: usize,
) -> Result<Dataset, TaskGenError> {
    let meta = sandbox.metadata();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut out = Dataset {
        tasks: Vec::new(),
        golds: Vec::new(),
        exemplars: Vec::new(),
        exemplar_golds: Vec::new(),
        manifest: DatasetManifest {
            seed,
            sandbox_seed: meta.seed,
            per_agent,
            counts: BTreeMap::new(),
            fixture_hash: sandbox.fixture_hash(),
            templates: templates.iter().map(|t| t.code.to_string()).collect(),
        },
    };
    for agent in Domain::ALL {
        let mine: Vec<&TaskTemplate> = templates.iter().filter(|t| t.domain == agent).collect();
        if mine.is_empty() {
            return Err(TaskGenError::TemplateGap(agent));
        }
        let mut queues: Vec<std::vec::IntoIter<templates::Slots>> = mine
            .iter()
            .map(|t| {
                let mut space = (t.space)(&meta);
                let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[agent.key().as_bytes(), t.code.as_bytes()]));
                space.shuffle(&mut rng);
                space.into_iter()
            })
            .collect();
        let needed = EXEMPLARS_PER_AGENT + per_agent;
        let mut picked = 0;
        let mut turn = 0;
        let mut exhausted = vec![false; mine.len()];
        while picked < needed {
            if exhausted.iter().all(|e| *e) {
                return Err(TaskGenError::InsufficientVariety { agent, available: picked, needed });
            }
            let k = turn % mine.len();
            turn += 1;
            if exhausted[k] {
                continue;
            }
            let Some(slots) = queues[k].next() else {
                exhausted[k] = true;
                continue;
            };
            let (text, steps) = mine[k].instantiate(&slots);
            if !used.insert(text.clone()) {
                turn -= 1;
                continue;
            }
            let exemplar = picked < EXEMPLARS_PER_AGENT;
            let id = if exemplar {
                format!("{}-x{:02}", agent.key(), picked)
            } else {
                format!("{}-{:04}", agent.key(), picked - EXEMPLARS_PER_AGENT)
            };
            let gold_datapoints = gold_datapoints(&steps, &meta)
                .map_err(|source| TaskGenError::Recipe { code: mine[k].code.to_string(), source })?;
            let task = TaskPrompt {
                id: id.clone(),
                domain: agent,
                text,
                region: RegionRef::new(slots.region.as_deref().unwrap_or_default()),
                date_range: range_of(&steps),
            };
            let gold = GoldSolution { task_id: id, steps, gold_datapoints };
            if exemplar {
                out.exemplars.push(task);
                out.exemplar_golds.push(gold);
            } else {
                out.tasks.push(task);
                out.golds.push(gold);
            }
            picked += 1;
        }
        out.manifest.counts.insert(agent, SplitCounts { exemplar: EXEMPLARS_PER_AGENT, benchmark: per_agent });
    }
    Ok(out)
}

/// One tool exemplar per (exemplar, agent involved) and one workflow
/// exemplar per exemplar.
pub fn compile_memories(exemplars: &[TaskPrompt], golds: &[GoldSolution]) -> (TsStore, WmStore) {
    let mut ts = Vec::new();
    let mut wm = Vec::new();
    for t in exemplars {
        let Some(g) = golds.iter().find(|g| g.task_id == t.id) else {
            continue;
        };
        let mut agents: Vec<Domain> = Vec::new();
        for (agent, _) in group_steps(&g.steps) {
            if agents.contains(&agent) {
                continue;
            }
            agents.push(agent);
            let mut tools_used: Vec<String> = Vec::new();
            for s in g.steps.iter().filter(|s| s.agent_name == agent) {
                if !tools_used.contains(&s.tool_name) {
                    tools_used.push(s.tool_name.clone());
                }
            }
            ts.push(ToolExemplar { prompt_text: t.text.clone(), agent, tools_used });
        }
        wm.push(WorkflowExemplar {
            prompt_text: t.text.clone(),
            agents_involved: agents,
            schedule_sketch: gold_schedule(&g.steps).subtasks,
        });
    }
    (TsStore::from_exemplars(ts), WmStore::from_exemplars(wm))
}

/// Optional surface rewording. `None` leaves the text untouched; an empty
/// model reply also falls back to the original.
pub fn paraphrase_hook(text: &str, backend: Option<&dyn ChatBackend>) -> Result<String, BackendError> {
    let Some(b) = backend else {
        return Ok(text.to_string());
    };
    let messages = [
        ChatMessage::system("You reword geospatial task prompts without changing their meaning."),
        ChatMessage::user(format!("Paraphrase: {text}")),
    ];
    let reply = complete(b, &messages, &[])?;
    let t = reply.message.content.trim();
    Ok(if t.is_empty() { text.to_string() } else { t.to_string() })
}

pub fn dataset_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

pub const FILES: [&str; 7] = [
    "tasks.jsonl",
    "golds.jsonl",
    "exemplars.jsonl",
    "exemplar_golds.jsonl",
    "manifest.json",
    "ts_store.jsonl",
    "wm_store.jsonl",
];

/// Writes the dataset and both memory stores into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset, ts: &TsStore, wm: &WmStore) -> Result<(), TaskGenError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.display().to_string(), source })?;
    write_jsonl(&dir.join("tasks.jsonl"), &ds.tasks)?;
    write_jsonl(&dir.join("golds.jsonl"), &ds.golds)?;
    write_jsonl(&dir.join("exemplars.jsonl"), &ds.exemplars)?;
    write_jsonl(&dir.join("exemplar_golds.jsonl"), &ds.exemplar_golds)?;
    let m = serde_json::to_string_pretty(&ds.manifest).map_err(|e| TaskGenError::Json(e.to_string()))?;
    let path = dir.join("manifest.json");
    std::fs::write(&path, m + "\n").map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    ts.save(&dir.join("ts_store.jsonl"))?;
    wm.save(&dir.join("wm_store.jsonl"))?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, TaskGenError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    let manifest = serde_json::from_str(&text).map_err(|e| TaskGenError::Json(format!("{}: {e}", path.display())))?;
    Ok(Dataset {
        tasks: read_jsonl(&dir.join("tasks.jsonl"))?,
        golds: read_jsonl(&dir.join("golds.jsonl"))?,
        exemplars: read_jsonl(&dir.join("exemplars.jsonl"))?,
        exemplar_golds: read_jsonl(&dir.join("exemplar_golds.jsonl"))?,
        manifest,
    })
}

pub fn load_memories(dir: &Path) -> Result<(TsStore, WmStore), TaskGenError> {
    Ok((TsStore::load(&dir.join("ts_store.jsonl"))?, WmStore::load(&dir.join("wm_store.jsonl"))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::SandboxConfig;
    use crate::types::Product;

    fn sandbox() -> Sandbox {
        Sandbox::new(SandboxConfig::default())
    }

    #[test]
    fn counts_and_disjoint_split() {
        let ds = generate_dataset(&builtin_templates(), &sandbox(), 7, 2).unwrap();
        assert_eq!(ds.tasks.len(), 16);
        assert_eq!(ds.exemplars.len(), 56);
        assert_eq!(ds.manifest.total_benchmark(), 16);
        let ex: BTreeSet<&str> = ds.exemplars.iter().map(|t| t.text.as_str()).collect();
        assert!(ds.tasks.iter().all(|t| !ex.contains(t.text.as_str())));
    }

    #[test]
    fn full_scale_is_reachable() {
        let ds = generate_dataset(&builtin_templates(), &sandbox(), 7, FULL_PER_AGENT).unwrap();
        assert_eq!(ds.tasks.len(), 2000);
        let texts: BTreeSet<&str> = ds.tasks.iter().chain(&ds.exemplars).map(|t| t.text.as_str()).collect();
        assert_eq!(texts.len(), 2056);
    }

    #[test]
    fn template_gap() {
        let ts: Vec<TaskTemplate> = builtin_templates().into_iter().filter(|t| t.domain != Domain::Urban).collect();
        let e = generate_dataset(&ts, &sandbox(), 7, 1).unwrap_err();
        assert!(matches!(e, TaskGenError::TemplateGap(Domain::Urban)));
        assert!(e.to_string().starts_with("TemplateGapError"));
    }

    #[test]
    fn exemplars_cover_every_real_tool() {
        let ds = generate_dataset(&builtin_templates(), &sandbox(), 7, 0).unwrap();
        let used: BTreeSet<(Domain, &str)> =
            ds.exemplar_golds.iter().flat_map(|g| g.steps.iter().map(|s| (s.agent_name, s.tool_name.as_str()))).collect();
        for spec in crate::registry::ToolRegistry::with_real_tools(&Domain::ALL).real_specs() {
            assert!(used.contains(&(spec.agent, spec.name.as_str())), "{}", spec.qualified_name());
        }
    }

    #[test]
    fn memories_sizes() {
        let ds = generate_dataset(&builtin_templates(), &sandbox(), 7, 0).unwrap();
        let (ts, wm) = compile_memories(&ds.exemplars, &ds.exemplar_golds);
        assert_eq!(wm.len(), 56);
        let expected: usize = ds
            .exemplar_golds
            .iter()
            .map(|g| g.steps.iter().map(|s| s.agent_name).collect::<BTreeSet<_>>().len())
            .sum();
        assert_eq!(ts.len(), expected);
        let (ts0, wm0) = compile_memories(&[], &[]);
        assert!(ts0.is_empty() && wm0.is_empty());
    }

    #[test]
    fn crop_exemplar_touches_four_agents() {
        let ds = generate_dataset(&builtin_templates(), &sandbox(), 7, 0).unwrap();
        let t = ds.exemplars.iter().find(|t| t.text.contains("crop rotation")).unwrap();
        let g = ds.exemplar_golds.iter().find(|g| g.task_id == t.id).unwrap();
        let (ts, _) = compile_memories(std::slice::from_ref(t), std::slice::from_ref(g));
        assert_eq!(ts.len(), 4);
        assert!(g.gold_datapoints.iter().all(|k| k.product == Product::Ndvi));
    }

    #[test]
    fn write_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for run in 0..2 {
            let d = dir.path().join(format!("r{run}"));
            let ds = generate_dataset(&builtin_templates(), &sandbox(), 7, 2).unwrap();
            let (ts, wm) = compile_memories(&ds.exemplars, &ds.exemplar_golds);
            write_dataset(&d, &ds, &ts, &wm).unwrap();
            bytes.push(FILES.iter().map(|f| std::fs::read(d.join(f)).unwrap()).collect::<Vec<_>>());
        }
        assert_eq!(bytes[0], bytes[1]);
        let back = load_dataset(&dir.path().join("r0")).unwrap();
        assert_eq!(back, generate_dataset(&builtin_templates(), &sandbox(), 7, 2).unwrap());
    }

    #[test]
    fn seeds_differ() {
        let a = generate_dataset(&builtin_templates(), &sandbox(), 7, 2).unwrap();
        let b = generate_dataset(&builtin_templates(), &sandbox(), 8, 2).unwrap();
        assert_ne!(a.tasks, b.tasks);
    }

    #[test]
    fn paraphrase_off_is_identity() {
        assert_eq!(paraphrase_hook("plot NDVI", None).unwrap(), "plot NDVI");
    }
}
