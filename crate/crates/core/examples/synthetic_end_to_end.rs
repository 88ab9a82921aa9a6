// Whole pipeline on a generated knowledge base: retrieve, score with toy
// matchers, tune on dev, report on test.

use std::sync::Arc;

use met_core::dataset::{generate_synthetic_mkb, SynthSpec};
use met_core::fusion::DEFAULT_GRID;
use met_core::matchers::ScorerBindings;
use met_core::pipeline::{build_report, retrieve_split, score_split};
use met_core::report::{format_dev_test_table, format_main_table};
use met_core::retrieval::{Indices, RetrievalConfig};
use met_core::text_index::Bm25Params;
use met_core::vector_index::HnswParams;

fn main() -> met_core::Result<()> {
    let s = generate_synthetic_mkb(&SynthSpec { num_entities: 200, dev_size: 30, test_size: 30, ..SynthSpec::default() })?;
    let indices = Indices::build(&s.kb, Bm25Params::default(), HnswParams::default())?;
    let b = ScorerBindings::toy(s.lexicon.clone(), Arc::new(s.joint.clone()));
    let cfg = RetrievalConfig::default();

    let dev = score_split(&s.splits.dev, &retrieve_split(&s.kb, &indices, &s.splits.dev, &cfg)?, &b)?;
    let test = score_split(&s.splits.test, &retrieve_split(&s.kb, &indices, &s.splits.test, &cfg)?, &b)?;
    let report = build_report(&dev, &test, &DEFAULT_GRID, None)?;

    println!("tuned weights {:?}", report.weights.0);
    print!("{}", format_main_table(&report.test));
    println!();
    print!("{}", format_dev_test_table(&report.dev, &report.test));
    Ok(())
}
