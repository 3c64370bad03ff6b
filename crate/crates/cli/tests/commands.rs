use std::path::Path;

use geosquad::engine::{EngineConfig, Variant};
use geosquad::taskgen::FILES;
use geosquad::types::{ExecutionTrace, StrategyKind, Terminal};
use geosquad_cli::commands::{cmd_bench, cmd_chat, cmd_gen, parse_variants, BenchArgs, ChatArgs, GenArgs};

fn config(root: &Path) -> EngineConfig {
    EngineConfig { dataset_dir: root.join("datasets"), output_dir: root.join("runs"), ..EngineConfig::default() }
}

fn gen(root: &Path, per_agent: usize) -> String {
    cmd_gen(config(root), &GenArgs { per_agent: Some(per_agent), ..GenArgs::default() }).unwrap()
}

fn traces(dir: &Path) -> Vec<ExecutionTrace> {
    let mut files: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.iter().map(|f| serde_json::from_str(&std::fs::read_to_string(f).unwrap()).unwrap()).collect()
}

#[test]
fn gen_counts_and_rerun_is_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gen(tmp.path(), 2);
    assert!(out.contains("total: 16 tasks, 56 exemplars"), "{out}");
    let dir = tmp.path().join("datasets/seed-7");
    let first: Vec<Vec<u8>> = FILES.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect();
    gen(tmp.path(), 2);
    let second: Vec<Vec<u8>> = FILES.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn gen_without_templates_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let skip = vec!["crop_rotation".to_string(), "bright_fields".to_string()];
    let e = cmd_gen(config(tmp.path()), &GenArgs { per_agent: Some(1), skip_templates: skip, ..GenArgs::default() })
        .unwrap_err();
    assert_eq!(e.code, 2);
    assert!(e.message.starts_with("TemplateGapError"), "{}", e.message);
}

#[test]
fn bench_requires_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let e = cmd_bench(config(tmp.path()), &BenchArgs::default()).unwrap_err();
    assert_eq!(e.code, 1);
    assert!(e.message.contains("run gen first"));
}

#[test]
fn bench_faithful_rows() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), 3);
    let args = BenchArgs { strategies: vec!["hybrid,composition_only".into()], ..BenchArgs::default() };
    let out = cmd_bench(config(tmp.path()), &args).unwrap();
    assert!(out.contains("24 tasks x 2 variants"), "{out}");
    let csv = std::fs::read_to_string(tmp.path().join("runs/bench-seed-7/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r.split(',').nth(4), Some("100.00"), "{r}");
    }
    assert_eq!(traces(&tmp.path().join("runs/bench-seed-7/traces/hybrid-ts-wm")).len(), 24);
}

#[test]
fn bench_single_agent_overflows_at_five_domains() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), 2);
    let mut args = BenchArgs {
        strategies: vec!["single_agent".into()],
        domains: Some(5),
        budget: Some(8192),
        ..BenchArgs::default()
    };
    let e = cmd_bench(config(tmp.path()), &args).unwrap_err();
    assert_eq!(e.code, 1);
    assert!(e.message.contains("context_overflow"));
    let ts = traces(&tmp.path().join("runs/bench-seed-7/traces/single_agent"));
    assert!(!ts.is_empty());
    assert!(ts.iter().all(|t| t.terminal == Terminal::ContextOverflow));
    args.allow_failures = true;
    assert!(cmd_bench(config(tmp.path()), &args).is_ok());
}

#[test]
fn variant_parsing() {
    let c = EngineConfig::default();
    let v = parse_variants(&["hybrid".into(), "ledger_loop-ts".into()], &c).unwrap();
    assert_eq!(v, vec![Variant::new(StrategyKind::Hybrid, true, true), Variant::new(StrategyKind::LedgerLoop, true, false)]);
    assert_eq!(parse_variants(&["all".into()], &c).unwrap().len(), 4);
    assert_eq!(parse_variants(&["nonsense".into()], &c).unwrap_err().code, 2);
}

#[test]
fn chat_crop_rotation_names_cells_and_one_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ChatArgs { prompt: "From NDVI, recommend crop rotation areas in Brisbane".into(), budget: None };
    let out = cmd_chat(config(tmp.path()), &args).unwrap();
    assert!(out.contains("terminal: completed"), "{out}");
    let line = out.lines().find(|l| l.contains("Agriculture.low_ndvi_clusters")).expect("cluster payload");
    assert!(line.contains("\"largest\":[[["), "{line}");
    assert!(out.contains("map layers: 1"), "{out}");
    assert!(out.contains("tokens: "));
    let trace_line = out.lines().find(|l| l.starts_with("trace: ")).unwrap();
    assert!(Path::new(trace_line.trim_start_matches("trace: ")).is_file());
}

#[test]
fn chat_usage_and_unknown_region() {
    let tmp = tempfile::tempdir().unwrap();
    let e = cmd_chat(config(tmp.path()), &ChatArgs { prompt: "  ".into(), budget: None }).unwrap_err();
    assert_eq!(e.code, 2);
    assert!(e.message.starts_with("usage"));
    let args = ChatArgs { prompt: "Identify heatwave zones in Atlantis and plot them".into(), budget: None };
    let out = cmd_chat(config(tmp.path()), &args).unwrap();
    assert!(out.contains("UnknownRegion"), "{out}");
    assert!(out.contains("incomplete: "), "{out}");
    assert!(!out.contains("terminal: completed"));
}
