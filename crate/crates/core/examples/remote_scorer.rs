// Scoring through the line-delimited JSON protocol: a reference server backed
// by toy providers, and a client bound to one matcher kind.

use std::collections::BTreeMap;
use std::sync::Arc;

use met_core::dataset::{generate_synthetic_mkb, SynthSpec};
use met_core::fusion::score_query;
use met_core::matchers::remote::{RemoteClient, ScorerServer};
use met_core::matchers::{MatcherKind, ScorerBindings};
use met_core::retrieval::{retrieve_candidates, Indices, RetrievalConfig};
use met_core::text_index::Bm25Params;
use met_core::vector_index::HnswParams;

fn main() -> met_core::Result<()> {
    let s = generate_synthetic_mkb(&SynthSpec { num_entities: 100, dev_size: 5, test_size: 5, ..SynthSpec::default() })?;
    let local = ScorerBindings::toy(s.lexicon.clone(), Arc::new(s.joint.clone()));

    let server = ScorerServer::new(local.clone(), BTreeMap::from([(MatcherKind::Tcm, 0)]));
    let endpoint = server.spawn_tcp("127.0.0.1:0")?;
    let client = Arc::new(RemoteClient::connect(&endpoint)?);
    println!("connected to {endpoint}, kinds {:?}", client.kinds());

    let bindings = local.with_remote(client.clone(), MatcherKind::Tcm);
    let indices = Indices::build(&s.kb, Bm25Params::default(), HnswParams::default())?;
    let q = &s.splits.dev[0];
    let cands = retrieve_candidates(&s.kb, &indices, q, &RetrievalConfig::default())?;
    let scored = score_query(q, &cands, &bindings)?;
    println!(
        "{} candidates scored with {} remote request(s)",
        scored.candidates.len(),
        client.request_count()
    );
    Ok(())
}
