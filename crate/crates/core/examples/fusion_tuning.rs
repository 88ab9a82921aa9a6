// Weighted-sum fusion: rank by hand-picked weights, then grid-search the
// weights on a small dev set.

use met_core::fusion::{evaluate, grid_search_weights, rank_entities, FusionWeights, ScoredCandidate, ScoredQuery, DEFAULT_GRID};
use met_core::kb::EntityId;
use met_core::matchers::ScoreVector;
use met_core::retrieval::Channel;

fn cand(id: &str, s: [f64; 4]) -> ScoredCandidate {
    ScoredCandidate {
        entity_id: EntityId::new(id),
        channel: Channel::Text,
        text_score: None,
        image_score: None,
        scores: ScoreVector::new(s),
    }
}

fn main() -> met_core::Result<()> {
    // TBM, TCM, IBM, CLIP
    let dev: Vec<ScoredQuery> = (0..6)
        .map(|i| ScoredQuery {
            query_id: format!("q{i}"),
            gold: Some(EntityId::new("gold")),
            candidates: vec![
                cand("gold", [0.4, 0.9, 0.3 + 0.1 * i as f64, 0.6]),
                cand("decoy", [0.8, 0.2, 0.7, 0.5]),
                cand("other", [0.5, 0.5, 0.5, 0.5]),
            ],
        })
        .collect();

    let w = FusionWeights([0.5, 0.1, 0.3, 0.1]);
    let ranked = rank_entities("q0", &dev[0].candidates, &w)?;
    println!("weights {:?}: {:?}", w.0, ranked.entries);
    println!("Hits@1 with hand weights: {:.1}", evaluate(&dev, &w)?.at(1).unwrap());

    let g = grid_search_weights(&dev, &DEFAULT_GRID)?;
    println!(
        "tuned {:?} over {} tuples: Hits@1 {:.1}",
        g.weights.0,
        g.evaluated,
        g.dev.at(1).unwrap()
    );
    Ok(())
}
