// Training batches drawn from a candidate list always contain a positive.

use met_core::dataset::sample_training_batch;

fn main() -> met_core::Result<()> {
    let mut labels = vec![false; 200];
    labels[137] = true;
    let mut hits = 0;
    for seed in 0..100 {
        let batch = sample_training_batch(&labels, 64, seed)?;
        if batch.contains(&137) {
            hits += 1;
        }
    }
    println!("positive present in {hits}/100 batches");
    println!("first batch: {:?}", &sample_training_batch(&labels, 64, 0)?[..8]);
    Ok(())
}
