// The four matchers with toy providers: raw scores and their normalised form.

use std::sync::Arc;

use met_core::kb::VectorStore;
use met_core::matchers::{
    clip_score, ibm_score, normalize_score, tbm_score, tcm_score, Lexicon, MatcherKind, ScorerBindings,
};

fn main() -> met_core::Result<()> {
    let joint = VectorStore::from_records(
        2,
        [("apple.jpg".to_string(), vec![1.0, 0.1]), ("truck.jpg".to_string(), vec![0.0, 1.0])],
    )?;
    let lexicon = Lexicon::new(2, [("apple".to_string(), vec![1.0, 0.0]), ("truck".to_string(), vec![0.0, 1.0])]);
    let b = ScorerBindings::toy(lexicon, Arc::new(joint));

    let q = "a crisp apple";
    for e in ["an apple on a table", "a red truck"] {
        let tbm = tbm_score(q, e, &b)?.unwrap();
        let tcm = tcm_score(q, e, &b)?.unwrap();
        println!(
            "{e:<22} TBM {tbm:+.3} -> {:.3}   TCM {tcm:+.3} -> {:.3}",
            normalize_score(MatcherKind::Tbm, tbm)?,
            normalize_score(MatcherKind::Tcm, tcm)?
        );
    }
    let ibm = ibm_score(&[1.0, 0.0, 0.5], &[0.9, 0.1, 0.4])?;
    println!("IBM {ibm:+.3} -> {:.3}", normalize_score(MatcherKind::Ibm, ibm)?);
    for img in ["apple.jpg", "truck.jpg", "unknown.jpg"] {
        match clip_score(q, img, &b)? {
            Some(r) => println!("CLIP {img:<11} {r:+.3} -> {:.3}", normalize_score(MatcherKind::Clip, r)?),
            None => println!("CLIP {img:<11} missing (neutral 0.5)"),
        }
    }
    Ok(())
}
