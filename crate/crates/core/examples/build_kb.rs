// Filter a raw knowledge base and split it into KB evidence, train, dev and
// test query pairs, then check that no gloss or image crosses a boundary.

use met_core::dataset::{filter_and_split, leak_check, SplitSpec};
use met_core::kb::{save_kb, save_splits, Entity, EntityId, KnowledgeBase, VectorStore};

fn main() -> met_core::Result<()> {
    let mut entities = Vec::new();
    let mut vectors = Vec::new();
    for e in 0..40 {
        let id = format!("Q{e}");
        let glosses: Vec<String> = (0..5).map(|g| format!("{id} described in words, version {g}")).collect();
        let mut image_ids = Vec::new();
        for i in 0..4 {
            let iid = format!("{id}/img{i}.jpg");
            vectors.push((iid.clone(), vec![e as f32, i as f32, 1.0]));
            image_ids.push(iid);
        }
        entities.push(Entity { id: EntityId::new(id), glosses, image_ids });
    }
    // too sparse to withhold anything from
    entities.push(Entity {
        id: EntityId::new("sparse"),
        glosses: vec!["lonely".into()],
        image_ids: vec![],
    });
    let raw = KnowledgeBase::new(entities, VectorStore::from_records(3, vectors)?)?;

    let (kb, splits) = filter_and_split(&raw, &SplitSpec::new(5, 5, 42))?;
    println!(
        "kept {} of {} entities; {} train / {} dev / {} test",
        kb.len(),
        raw.len(),
        splits.train.len(),
        splits.dev.len(),
        splits.test.len()
    );
    let q = &splits.dev[0];
    println!("dev query {}: {:?} + {} -> gold {:?}", q.query_id, q.text, q.image_id, q.gold);
    assert!(leak_check(&kb, &splits).is_clean());

    let dir = std::env::temp_dir().join(format!("met-build-kb-{}", std::process::id()));
    save_kb(&kb, &dir.join("kb"))?;
    save_splits(&splits, kb.dim(), &dir.join("splits"))?;
    println!("written under {}", dir.display());
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
