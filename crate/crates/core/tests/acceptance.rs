//! Acceptance run: one PASS/FAIL/SKIP line per criterion. Built with
//! `harness = false` so the lines are never captured.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geosquad::backend::{input_tokens, BackendConfig, BackendKind, ChatMessage};
use geosquad::engine::{run_bench, runnable, write_bench, BenchOutcome, Engine, EngineConfig, ScriptMode, Variant};
use geosquad::evaluator::mspe;
use geosquad::orchestrator::StrategyConfig;
use geosquad::prompts;
use geosquad::taskgen::behavior::injectable;
use geosquad::taskgen::{builtin_templates, compile_memories, generate_dataset, interpret, Dataset, DEFAULT_PER_AGENT};
use geosquad::types::{Cell, DataPointKey, GoldSolution, Period, Product, StrategyKind, TaskPrompt, Terminal};

const BUDGET: u32 = 8192;

fn engine(mode: ScriptMode, budget: Option<u32>) -> Engine {
    let mut cfg = EngineConfig { script_mode: mode, ..EngineConfig::default() };
    if let Some(b) = budget {
        cfg.backend.context_budget = b;
    }
    Engine::new(cfg).unwrap()
}

fn dataset() -> Dataset {
    let e = engine(ScriptMode::Faithful, None);
    generate_dataset(&builtin_templates(), &e.sandbox, 7, DEFAULT_PER_AGENT).unwrap()
}

fn with_memories(e: Engine, ds: &Dataset) -> Engine {
    let (ts, wm) = compile_memories(&ds.exemplars, &ds.exemplar_golds);
    e.with_memories(ts, wm)
}

fn bench(e: &Engine, tasks: &[TaskPrompt], golds: &[GoldSolution], kinds: &[StrategyKind]) -> Vec<BenchOutcome> {
    let variants: Vec<Variant> = kinds.iter().map(|k| Variant::new(*k, true, true)).collect();
    run_bench(e, tasks, golds, &variants).unwrap()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_fidelity(ds: &Dataset) -> String {
    let start = Instant::now();
    let e = with_memories(engine(ScriptMode::Faithful, None), ds);
    let out = bench(&e, &ds.tasks, &ds.golds, &[StrategyKind::Hybrid]);
    let elapsed = start.elapsed();
    let r = &out[0].report;
    assert_eq!(r.tasks, 200);
    assert_eq!(r.correctness_pct, 100.0);
    assert_eq!(r.eps.len(), 8);
    for (p, eps) in &r.eps {
        assert_eq!(*eps, Some(0.0), "eps for {p}");
    }
    assert!(out[0].traces.iter().all(|t| t.terminal == Terminal::Completed));
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    format!("200 tasks, correctness 100.00%, eps 0.00 on 8 metrics, {:.1}s", elapsed.as_secs_f64())
}

fn perturbation_calibration(ds: &Dataset) -> String {
    let e = with_memories(engine(ScriptMode::DropLastStep, None), ds);
    let expected = mean(ds.golds.iter().map(|g| (g.steps.len() as f64 - 1.0) / g.steps.len() as f64));
    let mut got = Vec::new();
    for o in bench(&e, &ds.tasks, &ds.golds, &[StrategyKind::CompositionOnly, StrategyKind::Hybrid]) {
        let m = mean(o.scores.iter().map(|s| s.correctness));
        assert!((m - expected).abs() < 1e-9, "{}: {m} vs {expected}", o.variant.label());
        got.push(m);
    }

    // mspe against direct enumeration on random fixtures.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let products = [Product::Ndvi, Product::Lst, Product::Canopy];
    let key = |rng: &mut ChaCha8Rng| {
        DataPointKey::new(
            products[rng.random_range(0..products.len())],
            Cell::new(rng.random_range(0..6), rng.random_range(0..6)),
            Period::month(2024, rng.random_range(1..=3)),
        )
    };
    for _ in 0..100 {
        let gold: BTreeSet<DataPointKey> = (0..rng.random_range(1..40)).map(|_| key(&mut rng)).collect();
        let accessed: BTreeSet<DataPointKey> = (0..rng.random_range(0..40)).map(|_| key(&mut rng)).collect();
        for p in products {
            let g: Vec<&DataPointKey> = gold.iter().filter(|k| k.product == p).collect();
            if g.is_empty() {
                assert!(mspe(&accessed, &gold, p, false).is_err());
                continue;
            }
            // Literal enumeration: 100 * (1/|G|) * sum of squared per-point errors.
            let mut sum = 0.0;
            for k in &g {
                let e: f64 = if accessed.contains(k) { 0.0 } else { 1.0 };
                sum += e * e;
            }
            let want = 100.0 * (1.0 / g.len() as f64) * sum;
            let extra = accessed.iter().filter(|k| k.product == p && !gold.contains(k)).count();
            let want_x = 100.0 * (1.0 / (g.len() + extra) as f64) * (sum + extra as f64);
            assert_eq!(mspe(&accessed, &gold, p, false).unwrap(), want);
            assert_eq!(mspe(&accessed, &gold, p, true).unwrap(), want_x);
        }
    }
    format!("analytic {expected:.9}, composition {:.9}, hybrid {:.9}; mspe = enumeration on 100 fixtures", got[0], got[1])
}

fn injected(ds: &Dataset) -> (Vec<TaskPrompt>, Vec<GoldSolution>) {
    ds.tasks.iter().zip(&ds.golds).filter(|(_, g)| injectable(&g.steps)).map(|(t, g)| (t.clone(), g.clone())).unzip()
}

fn error_recovery(ds: &Dataset) -> String {
    let (tasks, golds) = injected(ds);
    assert!(tasks.len() >= 50, "only {} injectable tasks", tasks.len());
    let e = with_memories(engine(ScriptMode::InjectedFailure, None), ds);
    let out = bench(&e, &tasks, &golds, &[StrategyKind::Hybrid, StrategyKind::CompositionOnly]);
    let (h, c) = (&out[0], &out[1]);
    for t in &c.traces {
        assert!(t.executed_steps.iter().any(|s| s.error_code() == Some("MissingProduct")), "{}: no injected failure", t.task_id);
    }
    let done = |o: &BenchOutcome| o.traces.iter().filter(|t| t.terminal == Terminal::Completed).count();
    assert_eq!(done(h), tasks.len());
    assert_eq!(done(c), 0);
    assert!(h.report.correctness_pct > c.report.correctness_pct);
    format!(
        "{} tasks: hybrid completes {}/{} ({:.2}%), composition_only {}/{} ({:.2}%)",
        tasks.len(),
        done(h),
        tasks.len(),
        h.report.correctness_pct,
        done(c),
        tasks.len(),
        c.report.correctness_pct
    )
}

fn cost_ordering(ds: &Dataset) -> String {
    let (tasks, golds) = injected(ds);
    let e = with_memories(engine(ScriptMode::InjectedFailure, None), ds);
    let out = bench(&e, &tasks, &golds, &[StrategyKind::LedgerLoop, StrategyKind::Hybrid, StrategyKind::CompositionOnly]);
    for (i, t) in tasks.iter().enumerate() {
        let [l, h, c] = [0, 1, 2].map(|k| out[k].scores[i].tokens);
        assert!(l > h && h > c, "{}: ledger {l}, hybrid {h}, composition {c}", t.id);
    }
    let [l, h, c] = [0, 1, 2].map(|k| out[k].report.avg_tokens_k);
    assert!(l > h && h > c, "report avg_tokens_k: {l} {h} {c}");
    format!("{} tasks, avg k-tokens ledger {l:.2} > hybrid {h:.2} > composition {c:.2}", tasks.len())
}

fn context_scaling(ds: &Dataset) -> String {
    let mut lines = Vec::new();
    let mut completed_small = false;
    for n in 1..=8 {
        let mut e = engine(ScriptMode::Faithful, Some(BUDGET));
        e.restrict_domains(n);
        let (tasks, golds): (Vec<TaskPrompt>, Vec<GoldSolution>) = ds
            .tasks
            .iter()
            .zip(&ds.golds)
            .filter(|(_, g)| runnable(g, &e.registry))
            .map(|(t, g)| (t.clone(), g.clone()))
            .unzip();
        if tasks.is_empty() {
            lines.push(format!("{n}:no runnable tasks"));
            continue;
        }
        let tools = e.registry.all_specs();
        // The first single-agent call already carries every tool schema.
        let first_call = |t: &TaskPrompt| {
            input_tokens(&[ChatMessage::system(prompts::copilot_system()), ChatMessage::user(prompts::copilot_request(&t.text))], &tools)
        };
        let max_need = tasks.iter().map(first_call).max().unwrap_or(0);
        let min_need = tasks.iter().map(first_call).min().unwrap_or(0);
        if n <= 3 {
            assert!(max_need <= BUDGET as u64, "{n} toolkits need {max_need}");
        } else {
            assert!(min_need > BUDGET as u64, "{n} toolkits need only {min_need}");
        }
        let out = bench(&e, &tasks, &golds, &[StrategyKind::SingleAgent]);
        let overflow = out[0].traces.iter().filter(|t| t.terminal == Terminal::ContextOverflow).count();
        let completed = out[0].traces.iter().filter(|t| t.terminal == Terminal::Completed).count();
        if n >= 4 {
            assert_eq!(overflow, tasks.len(), "{n} toolkits");
        } else {
            assert_eq!(overflow, 0, "{n} toolkits");
            completed_small |= completed == tasks.len() && !tasks.is_empty();
        }
        lines.push(format!("{n}:{}tools/{}tok/{}of{}ok", e.registry.len(), min_need, completed, tasks.len()));
    }
    assert!(completed_small, "no configuration with at most 3 toolkits completed");
    let e = with_memories(engine(ScriptMode::Faithful, Some(BUDGET)), ds);
    let out = bench(&e, &ds.tasks, &ds.golds, &[StrategyKind::Hybrid]);
    assert!(out[0].traces.iter().all(|t| t.terminal == Terminal::Completed));
    format!("single_agent crossover at 4 toolkits [{}]; hybrid completes all 200 at 8", lines.join(" "))
}

fn retrieval(ds: &Dataset) -> String {
    let (ts, wm) = compile_memories(&ds.exemplars, &ds.exemplar_golds);
    assert_eq!(wm.len(), 56);
    let mut checked = 0;
    for x in &ds.exemplars {
        let top = wm.retrieve(&x.text, 1).unwrap();
        assert!((top[0].1 - 1.0).abs() < 1e-12, "WM {}: {}", x.id, top[0].1);
        assert_eq!(top[0].0.prompt_text, x.text);
        let g = ds.exemplar_golds.iter().find(|g| g.task_id == x.id).unwrap();
        for agent in g.agents_in_order() {
            let top = ts.retrieve(agent, &x.text, 1).unwrap();
            assert!((top[0].1 - 1.0).abs() < 1e-12, "TS {} {agent}: {}", x.id, top[0].1);
            assert_eq!(top[0].0.prompt_text, x.text);
        }
        checked += 1;
    }
    let q = "zyzzyva quokka xylophone";
    assert!(wm.retrieve(q, 56).unwrap().iter().all(|(_, s)| *s == 0.0));
    for agent in geosquad::types::Domain::ALL {
        assert!(ts.retrieve(agent, q, 100).unwrap().iter().all(|(_, s)| *s == 0.0));
    }
    format!("{checked} exemplars self-retrieve at 1.0 in TS and WM; disjoint query scores 0")
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(ds: &Dataset) -> String {
    let tmp = tempfile::tempdir().unwrap();
    let variants: Vec<Variant> = StrategyKind::ALL.iter().map(|k| Variant::new(*k, true, true)).collect();
    let mut runs = Vec::new();
    for i in 0..2 {
        // Fresh engine and dataset each time: nothing carries over.
        let ds_i = dataset();
        assert_eq!(&ds_i, ds);
        let e = with_memories(engine(ScriptMode::Faithful, None), &ds_i);
        let out = run_bench(&e, &ds_i.tasks, &ds_i.golds, &variants).unwrap();
        let dir = tmp.path().join(format!("run{i}"));
        write_bench(&dir, &out).unwrap();
        runs.push(files_under(&dir));
    }
    assert!(runs[0].contains_key(Path::new("report.csv")));
    assert_eq!(runs[0].len(), 2 + 200 * variants.len());
    assert_eq!(runs[0], runs[1]);
    format!("{} files byte-identical across two runs of {} variants", runs[0].len(), variants.len())
}

fn live_smoke() -> Option<String> {
    std::env::var("GEOSQUAD_API_KEY").ok().filter(|k| !k.is_empty())?;
    let endpoint = std::env::var("GEOSQUAD_ENDPOINT").unwrap_or_else(|_| "https://api.openai.com/v1".into());
    let model = std::env::var("GEOSQUAD_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
    let backend = BackendConfig {
        kind: BackendKind::Http,
        endpoint: Some(endpoint),
        model_name: model,
        ..BackendConfig::scripted(128_000)
    };
    let e = Engine::new(EngineConfig { backend, ..EngineConfig::default() }).unwrap();
    let i = interpret("live-crop", "From NDVI, recommend crop rotation areas in Brisbane").unwrap();
    let (trace, _) =
        e.run_one(&i.task, None, &StrategyConfig::new(StrategyKind::Hybrid), ScriptMode::Faithful, &geosquad::events::ignore);
    assert!(!trace.schedules.is_empty(), "no schedule parsed: {}", trace.final_answer);
    assert!(!trace.schedules[0].subtasks.is_empty());
    Some(format!("terminal {}, {} tokens", trace.terminal, trace.token_usage.total_tokens))
}

fn run(name: &str, f: impl FnOnce() -> Option<String>) -> bool {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Some(detail)) => {
            println!("PASS {name}: {detail}");
            true
        }
        Ok(None) => {
            println!("SKIP {name}: GEOSQUAD_API_KEY not set");
            true
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("FAIL {name}: {msg}");
            false
        }
    }
}

fn main() {
    // `cargo test -- --list` and similar probes expect no work.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    std::panic::set_hook(Box::new(|info| {
        if let Some(l) = info.location() {
            eprintln!("  panicked at {}:{}", l.file(), l.line());
        }
    }));
    let ds = dataset();
    let results = [
        run("oracle_fidelity", || Some(oracle_fidelity(&ds))),
        run("perturbation_calibration", || Some(perturbation_calibration(&ds))),
        run("error_recovery_separation", || Some(error_recovery(&ds))),
        run("cost_ordering", || Some(cost_ordering(&ds))),
        run("context_window_scaling", || Some(context_scaling(&ds))),
        run("retrieval_properties", || Some(retrieval(&ds))),
        run("determinism", || Some(determinism(&ds))),
        run("live_backend_smoke", live_smoke),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} criteria, {failed} failed", results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
