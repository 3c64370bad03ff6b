//! Agent toolkits: real sandbox tools plus generated filler tools.

pub mod retrieval;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backend::{count_tokens, render_tool_schema, schema_cost};
use crate::dataset::ToolLookup;
use crate::sandbox::raster::mix;
use crate::sandbox::tools::{real_tools, Args};
use crate::sandbox::{ErrorCode, SandboxSession, ToolError, ToolOutput};
use crate::types::{Domain, ParamKind, ParamSpec, ToolSpec};

pub use retrieval::{
    format_guidance, RetrievalError, SimilarityIndex, TsStore, ToolExemplar, WmStore, WorkflowExemplar,
};

/// Schema tokens occupied by every generated filler tool.
pub const FILLER_SCHEMA_TOKENS: u32 = 33;
/// Total tool count across the eight toolkits in the default configuration.
pub const DEFAULT_TOTAL_TOOLS: usize = 521;

pub type Handler = Arc<dyn Fn(&mut SandboxSession, &Args) -> Result<ToolOutput, ToolError> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("DuplicateTool: {agent}.{name} is already registered")]
    DuplicateTool { agent: Domain, name: String },
}

#[derive(Clone)]
pub struct RegisteredTool {
    pub spec: ToolSpec,
    pub filler: bool,
    handler: Handler,
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<RegisteredTool>,
    index: BTreeMap<(Domain, String), usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub agent: Domain,
    pub description: String,
    pub schema_token_cost: u32,
    pub filler: bool,
}

impl ToolRegistry {
    pub fn new() -> Self {
        ToolRegistry::default()
    }

    /// Registers a tool; the schema cost is recomputed from the rendering.
    pub fn register_tool(&mut self, mut spec: ToolSpec, handler: Handler) -> Result<(), RegistryError> {
        self.insert(&mut spec, handler, false)
    }

    fn insert(&mut self, spec: &mut ToolSpec, handler: Handler, filler: bool) -> Result<(), RegistryError> {
        let key = (spec.agent, spec.name.clone());
        if self.index.contains_key(&key) {
            return Err(RegistryError::DuplicateTool { agent: spec.agent, name: spec.name.clone() });
        }
        spec.schema_token_cost = schema_cost(spec);
        self.index.insert(key, self.tools.len());
        self.tools.push(RegisteredTool { spec: spec.clone(), filler, handler });
        Ok(())
    }

    pub fn register_filler(&mut self, mut spec: ToolSpec) -> Result<(), RegistryError> {
        let handler: Handler = Arc::new(|_, _| Ok(ToolOutput::new(json!({"status": "ok"}))));
        self.insert(&mut spec, handler, true)
    }

    /// Real tools of the given toolkits.
    pub fn with_real_tools(domains: &[Domain]) -> Self {
        let mut r = ToolRegistry::new();
        for (spec, f) in real_tools() {
            if domains.contains(&spec.agent) {
                r.register_tool(spec, Arc::new(f)).expect("real tool names are unique");
            }
        }
        r
    }

    /// Real tools plus filler for the given toolkits, with the per-domain
    /// filler counts of `filler`.
    pub fn standard(domains: &[Domain], filler: &BTreeMap<Domain, usize>, seed: u64) -> Self {
        let mut r = ToolRegistry::with_real_tools(domains);
        for d in domains {
            let n = filler.get(d).copied().unwrap_or(0);
            for t in generate_filler_tools(*d, n, seed) {
                r.register_filler(t).expect("filler names are unique");
            }
        }
        r
    }

    /// All eight toolkits with 521 tools in total.
    pub fn default_full(seed: u64) -> Self {
        ToolRegistry::standard(&Domain::ALL, &filler_counts_for_total(DEFAULT_TOTAL_TOOLS), seed)
    }

    /// A copy holding only the given toolkits.
    pub fn restricted(&self, domains: &[Domain]) -> Self {
        let mut r = ToolRegistry::new();
        for t in &self.tools {
            if domains.contains(&t.spec.agent) {
                r.index.insert((t.spec.agent, t.spec.name.clone()), r.tools.len());
                r.tools.push(t.clone());
            }
        }
        r
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn domains(&self) -> Vec<Domain> {
        let mut d: Vec<Domain> = self.tools.iter().map(|t| t.spec.agent).collect();
        d.sort();
        d.dedup();
        d
    }

    pub fn get(&self, agent: Domain, name: &str) -> Option<&RegisteredTool> {
        self.index.get(&(agent, name.to_string())).map(|i| &self.tools[*i])
    }

    pub fn toolkit(&self, agent: Domain) -> Vec<ToolSpec> {
        self.tools.iter().filter(|t| t.spec.agent == agent).map(|t| t.spec.clone()).collect()
    }

    pub fn all_specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().map(|t| t.spec.clone()).collect()
    }

    pub fn real_specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().filter(|t| !t.filler).map(|t| t.spec.clone()).collect()
    }

    pub fn count(&self, agent: Domain) -> (usize, usize) {
        let real = self.tools.iter().filter(|t| t.spec.agent == agent && !t.filler).count();
        let filler = self.tools.iter().filter(|t| t.spec.agent == agent && t.filler).count();
        (real, filler)
    }

    pub fn schema_tokens(&self, agent: Option<Domain>) -> u64 {
        self.tools
            .iter()
            .filter(|t| agent.is_none_or(|a| t.spec.agent == a))
            .map(|t| t.spec.schema_token_cost as u64)
            .sum()
    }

    /// Resolves `agent__tool` names.
    pub fn resolve_qualified(&self, name: &str) -> Option<(Domain, String)> {
        let (a, t) = name.split_once("__")?;
        let agent: Domain = a.parse().ok()?;
        self.get(agent, t).map(|_| (agent, t.to_string()))
    }

    /// Runs a tool and records its accesses in the session.
    pub fn dispatch(
        &self,
        session: &mut SandboxSession,
        agent: Domain,
        name: &str,
        args: &Args,
    ) -> Result<ToolOutput, ToolError> {
        let tool = self
            .get(agent, name)
            .ok_or_else(|| ToolError::new(ErrorCode::UnknownTool, format!("{agent} has no tool '{name}'")))?;
        let out = (tool.handler)(session, args)?;
        session.record(&out.accessed);
        Ok(out)
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.tools
            .iter()
            .map(|t| ManifestEntry {
                name: t.spec.name.clone(),
                agent: t.spec.agent,
                description: t.spec.description.clone(),
                schema_token_cost: t.spec.schema_token_cost,
                filler: t.filler,
            })
            .collect()
    }

    pub fn write_manifest(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.manifest()).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }
}

impl ToolLookup for ToolRegistry {
    fn has_tool(&self, agent: Domain, tool: &str) -> bool {
        self.get(agent, tool).is_some()
    }
}

/// Filler counts such that the eight toolkits hold `total` tools together,
/// toolkit sizes differing by at most one (earlier toolkits in
/// `Domain::TOOLKIT_ORDER` take the remainder).
pub fn filler_counts_for_total(total: usize) -> BTreeMap<Domain, usize> {
    let real = ToolRegistry::with_real_tools(&Domain::ALL);
    let base = total / 8;
    let rem = total % 8;
    Domain::TOOLKIT_ORDER
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let size = base + usize::from(i < rem);
            (*d, size.saturating_sub(real.count(*d).0))
        })
        .collect()
}

const NOUNS: [&str; 16] = [
    "parcel", "cadastre", "tile", "catalog", "archive", "quota", "ledger", "manifest", "schema", "queue", "bucket",
    "license", "index", "journal", "mirror", "registry",
];
const VERBS: [&str; 12] =
    ["audit", "export", "sync", "rename", "archive", "validate", "compact", "reindex", "tag", "purge", "lock", "clone"];
const PAD: [&str; 24] = [
    "records", "entries", "batch", "metadata", "revision", "owner", "account", "storage", "format", "version", "checksum",
    "identifier", "folder", "permissions", "timestamp", "listing", "bundle", "pointer", "cache", "snapshot", "audit",
    "trail", "header", "footer",
];
const PARAM_POOL: [(&str, ParamKind); 6] = [
    ("target", ParamKind::Text),
    ("limit", ParamKind::Integer),
    ("dry_run", ParamKind::Boolean),
    ("label", ParamKind::Text),
    ("factor", ParamKind::Number),
    ("page", ParamKind::Integer),
];

/// Deterministic filler tools for one toolkit, each rendering to exactly
/// `FILLER_SCHEMA_TOKENS` tokens.
pub fn generate_filler_tools(domain: Domain, count: usize, seed: u64) -> Vec<ToolSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[b"filler", domain.key().as_bytes()]));
    (0..count)
        .map(|i| {
            let noun = *NOUNS.choose(&mut rng).expect("nonempty");
            let verb = *VERBS.choose(&mut rng).expect("nonempty");
            let n_params = rng.random_range(1..=2);
            let mut params: Vec<ParamSpec> = Vec::new();
            while params.len() < n_params {
                let (name, kind) = PARAM_POOL[rng.random_range(0..PARAM_POOL.len())];
                if params.iter().all(|p| p.name != name) {
                    let required = params.is_empty();
                    params.push(ParamSpec { name: name.into(), kind, required });
                }
            }
            let mut spec = ToolSpec {
                name: format!("{}_{noun}_{verb}_{i}", domain.key()),
                agent: domain,
                description: format!("{verb} {noun}"),
                params,
                schema_token_cost: 0,
            };
            let target = FILLER_SCHEMA_TOKENS as usize;
            while count_tokens(&render_tool_schema(&spec)) < target {
                spec.description.push(' ');
                spec.description.push_str(PAD[rng.random_range(0..PAD.len())]);
            }
            while count_tokens(&render_tool_schema(&spec)) > target {
                let cut = spec.description.rfind(' ').expect("description has more than one word");
                spec.description.truncate(cut);
            }
            spec.schema_token_cost = schema_cost(&spec);
            spec
        })
        .collect()
}
