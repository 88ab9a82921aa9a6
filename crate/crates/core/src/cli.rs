//! The `met` command line.
//!
//! Exit codes: 0 success, 2 usage (unknown command or flag), 3 config,
//! 4 data, 5 scoring provider.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::dataset::{compute_stats, filter_and_split, generate_synthetic_mkb, leak_check};
use crate::error::{Error, Result};
use crate::fusion::{
    grid_search_weights, miss_list, read_score_cache, run_ablation, write_jsonl,
    write_score_cache, FusionWeights, GridResult,
};
use crate::kb::{read_entities, save_kb, save_splits, KnowledgeBase, VectorStore, ENTITIES_FILE};
use crate::pipeline::*;
use crate::report::{format_ablation_table, format_assemble_table, format_dev_test_table, format_main_table};
use crate::retrieval::{read_candidates, write_candidates, Indices};

#[derive(Debug, Parser)]
#[command(name = "met", version, about = "Multimodal entity tagging over a multimodal knowledge base")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat TOML run configuration; flags override its keys.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a raw KB and split it into KB, train, dev and test.
    BuildKb(Common),
    /// Generate a synthetic KB with splits, joint vectors and a lexicon.
    Synth(Common),
    /// Sparsity and ambiguity statistics of the KB.
    Stats(Common),
    /// Build and save the BM25 and HNSW indices.
    Index(Common),
    /// Stage-1 candidates for dev and test.
    Retrieve(Common),
    /// Matcher scores for every candidate.
    Score(Common),
    /// Grid-search fusion weights on dev.
    Tune(Common),
    /// Hits@N report for dev and test.
    Eval(Common),
    /// Leave-one-matcher-out study.
    Ablate(Common),
    /// Re-score with K instances per modality and compare.
    AssembleEval(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildKb(_) => "build-kb",
            Command::Synth(_) => "synth",
            Command::Stats(_) => "stats",
            Command::Index(_) => "index",
            Command::Retrieve(_) => "retrieve",
            Command::Score(_) => "score",
            Command::Tune(_) => "tune",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::AssembleEval(_) => "assemble-eval",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::BuildKb(c)
            | Command::Synth(c)
            | Command::Stats(c)
            | Command::Index(c)
            | Command::Retrieve(c)
            | Command::Score(c)
            | Command::Tune(c)
            | Command::Eval(c)
            | Command::Ablate(c)
            | Command::AssembleEval(c) => c,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 3,
        Error::Provider(_) => 5,
        Error::Io { .. }
        | Error::Malformed { .. }
        | Error::DimensionMismatch { .. }
        | Error::DanglingImage { .. }
        | Error::Data(_) => 4,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let kind = match exit_code(&e) {
                3 => "config error",
                4 => "data error",
                _ => "provider error",
            };
            eprintln!("met {}: {kind}: {e}", cli.command.name());
            exit_code(&e)
        }
    }
}

/// Effective configuration for a command: defaults, then the file, then
/// flags.
pub fn resolve_config(common: &Common) -> Result<RunConfig> {
    let base = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    base.with_overrides(&common.overrides)
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    write_text(path, &s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(require(path)?).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::malformed(path, 1, e))
}

pub fn execute(cmd: &Command) -> Result<()> {
    let cfg = resolve_config(cmd.common())?;
    if cfg.threads > 0 {
        // fails only if a pool already exists, which keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_text(&cfg.out_dir.join(format!("config-{}.toml", cmd.name())), &cfg.to_toml())?;
    let out = |f: &str| cfg.out_dir.join(f);

    match cmd {
        Command::Synth(_) => {
            let s = generate_synthetic_mkb(&cfg.synth())?;
            save_synth(&s, &cfg)?;
            println!(
                "synth: {} entities, {} train / {} dev / {} test queries -> {}",
                s.kb.len(),
                s.splits.train.len(),
                s.splits.dev.len(),
                s.splits.test.len(),
                cfg.kb_dir.display()
            );
        }
        Command::BuildKb(_) => {
            let entities = read_entities(&require(&cfg.raw_entities)?)?;
            let vectors = if cfg.raw_vectors.extension().is_some_and(|e| e == "jsonl") {
                VectorStore::load_jsonl(&require(&cfg.raw_vectors)?, None)?
            } else {
                VectorStore::load(&require(&cfg.raw_vectors)?)?
            };
            let raw = KnowledgeBase::new(entities, vectors)?;
            let (kb, splits) = filter_and_split(&raw, &cfg.split_spec())?;
            let leaks = leak_check(&kb, &splits);
            if !leaks.is_clean() {
                return Err(Error::Data(format!(
                    "split leaks {} glosses and {} images",
                    leaks.shared_glosses.len(),
                    leaks.shared_images.len()
                )));
            }
            for d in [&cfg.kb_dir, &cfg.splits_dir] {
                fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
            save_kb(&kb, &cfg.kb_dir)?;
            save_splits(&splits, kb.dim(), &cfg.splits_dir)?;
            println!(
                "build-kb: kept {} of {} entities, {} train / {} dev / {} test",
                kb.len(),
                raw.len(),
                splits.train.len(),
                splits.dev.len(),
                splits.test.len()
            );
        }
        Command::Stats(_) => {
            require(&cfg.kb_dir.join(ENTITIES_FILE))?;
            let kb = crate::kb::load_kb(&cfg.kb_dir)?;
            let s = compute_stats(&kb);
            print!("{}", s.to_table());
            write_json(&out("stats.json"), &s)?;
        }
        Command::Index(_) => {
            let kb = crate::kb::load_kb(&cfg.kb_dir)?;
            let idx = Indices::build(&kb, cfg.bm25(), cfg.hnsw())?;
            idx.text.save(&out(TEXT_INDEX_FILE))?;
            idx.image.save(&out(IMAGE_INDEX_FILE))?;
            println!("index: {} glosses, {} images", idx.text.num_docs(), idx.image.len());
        }
        Command::Retrieve(_) => {
            let (kb, splits) = load_data(&cfg)?;
            let idx = load_indices(&cfg)?;
            for (name, qs) in [("dev", &splits.dev), ("test", &splits.test)] {
                let c = retrieve_split(&kb, &idx, qs, &cfg.retrieval())?;
                write_candidates(&out(&candidates_file(name)), &c)?;
            }
        }
        Command::Score(_) => {
            let (kb, splits) = load_data(&cfg)?;
            let b = cfg.bindings()?;
            for (name, qs) in [("dev", &splits.dev), ("test", &splits.test)] {
                let c = read_candidates(&require(&out(&candidates_file(name)))?, &kb)?;
                write_score_cache(&out(&scores_file(name)), &score_split(qs, &c, &b)?)?;
            }
        }
        Command::Tune(_) => {
            let dev = read_score_cache(&require(&out(&scores_file("dev")))?)?;
            let g = grid_search_weights(&dev, &cfg.grid)?;
            println!("tune: weights {:?} ({} tuples), dev Hits@1 {:.1}", g.weights.0, g.evaluated, g.dev.at(1).unwrap_or(0.0));
            write_json(&out(WEIGHTS_FILE), &g)?;
        }
        Command::Eval(_) => {
            let dev = read_score_cache(&require(&out(&scores_file("dev")))?)?;
            let test = read_score_cache(&require(&out(&scores_file("test")))?)?;
            let (weights, tuning) = match cfg.weights {
                Some(w) => (FusionWeights(w), None),
                None => {
                    let g: GridResult = read_json(&out(WEIGHTS_FILE))?;
                    (g.weights, Some(g))
                }
            };
            let report = RunReport {
                weights,
                tuning,
                dev: main_table(&dev, &weights)?,
                test: main_table(&test, &weights)?,
            };
            write_json(&out(REPORT_FILE), &report)?;
            let text = format!(
                "{}\n{}",
                format_main_table(&report.test),
                format_dev_test_table(&report.dev, &report.test)
            );
            write_text(&out(REPORT_TEXT_FILE), &text)?;
            write_jsonl(&out(MISSES_FILE), &miss_list(&test, &weights)?)?;
            print!("{}", format_main_table(&report.test));
        }
        Command::Ablate(_) => {
            let dev = read_score_cache(&require(&out(&scores_file("dev")))?)?;
            let test = read_score_cache(&require(&out(&scores_file("test")))?)?;
            let rows = run_ablation(&dev, &test, &cfg.grid)?;
            write_json(&out(ABLATION_FILE), &rows)?;
            let t = format_ablation_table(&rows);
            write_text(&out(ABLATION_TEXT_FILE), &t)?;
            print!("{t}");
        }
        Command::AssembleEval(_) => {
            let (kb, splits) = load_data(&cfg)?;
            let b = cfg.bindings()?;
            let mut asm = Vec::new();
            for (name, qs) in [("dev", &splits.dev), ("test", &splits.test)] {
                let c = read_candidates(&require(&out(&candidates_file(name)))?, &kb)?;
                let s = score_split_assembled(qs, &c, cfg.k_assemble, &b, &kb)?;
                write_score_cache(&out(&assembled_scores_file(name)), &s)?;
                asm.push(s);
            }
            let plain_dev = read_score_cache(&require(&out(&scores_file("dev")))?)?;
            let plain_test = read_score_cache(&require(&out(&scores_file("test")))?)?;
            let plain_w = match cfg.weights {
                Some(w) => FusionWeights(w),
                None => grid_search_weights(&plain_dev, &cfg.grid)?.weights,
            };
            let asm_tuned = grid_search_weights(&asm[0], &cfg.grid)?;
            let table = assemble_table(&plain_test, &asm[1], &plain_w, &asm_tuned.weights)?;
            write_json(
                &out(ASSEMBLE_FILE),
                &serde_json::json!({
                    "k": cfg.k_assemble,
                    "plain_weights": plain_w,
                    "assembled_weights": asm_tuned.weights,
                    "table": table,
                }),
            )?;
            let t = format_assemble_table(&table);
            write_text(&out(ASSEMBLE_TEXT_FILE), &t)?;
            print!("{t}");
        }
    }
    Ok(())
}
