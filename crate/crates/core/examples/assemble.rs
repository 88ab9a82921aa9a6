// Scoring with several evidence instances per modality: each matcher averages
// over the retrieved instance and up to k-1 more from the same entity.

use std::sync::Arc;

use met_core::dataset::{generate_synthetic_mkb, SynthSpec};
use met_core::fusion::{assembled_set, score_query, score_query_assembled};
use met_core::matchers::{MatcherKind, ScorerBindings};
use met_core::retrieval::{retrieve_candidates, Indices, RetrievalConfig};
use met_core::text_index::Bm25Params;
use met_core::vector_index::HnswParams;

fn main() -> met_core::Result<()> {
    let s = generate_synthetic_mkb(&SynthSpec { num_entities: 100, dev_size: 5, test_size: 5, ..SynthSpec::default() })?;
    let b = ScorerBindings::toy(s.lexicon.clone(), Arc::new(s.joint.clone()));
    let indices = Indices::build(&s.kb, Bm25Params::default(), HnswParams::default())?;
    let q = &s.splits.test[0];
    let cands = retrieve_candidates(&s.kb, &indices, q, &RetrievalConfig { n_texts: 5, m_images: 5, ..Default::default() })?;

    let set = assembled_set(&cands[0], 3, &s.kb)?;
    println!("{}: {} texts, {} images assembled", cands[0].entity_id, set.texts.len(), set.images.len());

    let plain = score_query(q, &cands, &b)?;
    let k3 = score_query_assembled(q, &cands, 3, &b, &s.kb)?;
    for (p, a) in plain.candidates.iter().zip(&k3.candidates).take(5) {
        println!(
            "{:<8} IBM {:.3} -> {:.3}   TCM {:.3} -> {:.3}",
            p.entity_id.as_str(),
            p.scores.get(MatcherKind::Ibm),
            a.scores.get(MatcherKind::Ibm),
            p.scores.get(MatcherKind::Tcm),
            a.scores.get(MatcherKind::Tcm)
        );
    }
    Ok(())
}
