// Approximate nearest neighbours over image vectors, compared with the exact
// scan.

use met_core::kb::VectorStore;
use met_core::vector_index::{exact_knn, HnswIndex, HnswParams, Metric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> met_core::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 32;
    let store = VectorStore::from_records(
        dim,
        (0..3000).map(|i| (format!("img{i:04}"), (0..dim).map(|_| rng.random_range(-1.0..1.0f32)).collect())),
    )?;
    let params = HnswParams { seed: 11, ..HnswParams::default() };
    let index = HnswIndex::build(&store, params)?;

    let query: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let approx = index.search(&query, 20)?;
    let exact = exact_knn(&store, Metric::Cosine, &query, 20)?;
    let overlap = approx.iter().filter(|h| exact.iter().any(|e| e.image_id == h.image_id)).count();
    println!("recall@20 = {:.2}", overlap as f64 / 20.0);
    for h in approx.iter().take(3) {
        println!("{}  {:.4}", h.image_id, h.similarity);
    }
    Ok(())
}
