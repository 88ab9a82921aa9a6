// Stage one: BM25 on the query text and HNSW on the query image, merged per
// entity and paired with evidence from the other modality.

use met_core::dataset::{generate_synthetic_mkb, SynthSpec};
use met_core::retrieval::{retrieve_candidates, Indices, Pairing, RetrievalConfig};
use met_core::text_index::Bm25Params;
use met_core::vector_index::HnswParams;

fn main() -> met_core::Result<()> {
    let s = generate_synthetic_mkb(&SynthSpec { num_entities: 200, ..SynthSpec::default() })?;
    let indices = Indices::build(&s.kb, Bm25Params::default(), HnswParams::default())?;
    let cfg = RetrievalConfig {
        n_texts: 10,
        m_images: 10,
        pairing: Pairing::Random(7),
    };
    let q = &s.splits.test[0];
    let cands = retrieve_candidates(&s.kb, &indices, q, &cfg)?;
    println!("query {:?} (gold {:?}): {} candidates", q.text, q.gold, cands.len());
    for c in cands.iter().take(8) {
        println!(
            "{:<8} {:<6?} text#{:?} image {:?} score {:.3}",
            c.entity_id.as_str(),
            c.channel,
            c.evidence_text.as_ref().map(|t| t.gloss_index),
            c.evidence_image.as_ref().map(|i| i.image_id.as_str()),
            c.retrieval_score
        );
    }
    let found = cands.iter().any(|c| Some(&c.entity_id) == q.gold.as_ref());
    println!("gold among candidates: {found}");
    Ok(())
}
