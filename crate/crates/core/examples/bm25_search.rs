// BM25 over glosses: one document per gloss, hits map back to entities.

use met_core::kb::{Entity, EntityId, KnowledgeBase, VectorStore};
use met_core::text_index::{Bm25Params, TextIndex};

fn main() -> met_core::Result<()> {
    let entity = |id: &str, glosses: &[&str]| Entity {
        id: EntityId::new(id),
        glosses: glosses.iter().map(|s| s.to_string()).collect(),
        image_ids: vec![],
    };
    let kb = KnowledgeBase::new(
        vec![
            entity("apple", &["a red or green fruit", "the apple tree grows fruit"]),
            entity("banana", &["a long yellow fruit"]),
            entity("fire_truck", &["a red vehicle used by firefighters"]),
        ],
        VectorStore::empty(1),
    )?;
    let index = TextIndex::build(&kb, Bm25Params::default());
    println!("{} docs, avgdl {:.2}", index.num_docs(), index.avgdl());

    for hit in index.search("red fruit", 5) {
        let r = index.doc_ref(hit.doc).expect("hit refers to a document");
        println!("{:>8.4}  {}#{}  {:?}", hit.score, r.entity_id, r.gloss_index, kb.entity(&r.entity_id).unwrap().glosses[r.gloss_index]);
    }
    println!("idf(fruit) = {:.4}, idf(vehicle) = {:.4}", index.idf("fruit"), index.idf("vehicle"));
    Ok(())
}
