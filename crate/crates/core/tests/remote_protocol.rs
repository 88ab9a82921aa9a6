use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use met_core::dataset::{generate_synthetic_mkb, SynthSpec};
use met_core::kb::{EntityId, QueryPair, VectorStore};
use met_core::matchers::remote::{RemoteClient, ScorerServer, PROTOCOL};
use met_core::matchers::{score_candidates, Lexicon, MatcherKind, ScorerBindings};
use met_core::pipeline::{retrieve_split, score_split};
use met_core::retrieval::{Candidate, Channel, EvidenceImage, EvidenceText, Indices, RetrievalConfig};
use met_core::text_index::Bm25Params;
use met_core::vector_index::HnswParams;

const HELLO: &str = r#"{"op":"hello","id":0,"protocol":"met-scorer","version":1}"#;
const HELLO_REPLY: &str =
    r#"{"id":0,"protocol":"met-scorer","version":1,"kinds":["TBM","TCM","IBM","CLIP"],"dims":{"TBM":256,"CLIP":2}}"#;
const IBM_REQ: &str = r#"{"op":"score","id":1,"kind":"IBM","items":[{"query_image_id":"q1","query_image":[1.0,0.0],"image_id":"i1","image":[2.0,0.0]},{"query_image_id":"q1","query_image":[1.0,0.0],"image_id":"i2","image":[0.0,3.0]}]}"#;
const IBM_REPLY: &str = r#"{"id":1,"scores":[1.0,0.0]}"#;
const TCM_REQ: &str = r#"{"op":"score","id":2,"kind":"TCM","items":[{"query_text":"","evidence_text":"..."}]}"#;
const TCM_REPLY: &str = r#"{"id":2,"scores":[null]}"#;

fn toy_server() -> ScorerServer {
    let joint = VectorStore::from_records(2, [("i1".to_string(), vec![1.0, 0.0])]).unwrap();
    let lex = Lexicon::new(2, [("apple".to_string(), vec![1.0, 0.0])]);
    ScorerServer::new(
        ScorerBindings::toy(lex, Arc::new(joint)),
        BTreeMap::from([(MatcherKind::Tbm, 256), (MatcherKind::Clip, 2)]),
    )
}

#[test]
fn server_transcript_is_byte_exact() {
    let input = format!("{HELLO}\n{IBM_REQ}\n{TCM_REQ}\n");
    let mut out = Vec::new();
    toy_server().serve_stream(input.as_bytes(), &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), format!("{HELLO_REPLY}\n{IBM_REPLY}\n{TCM_REPLY}\n"));
}

/// Plays the server side from the golden transcript and records what the
/// client wrote.
#[test]
fn client_transcript_is_byte_exact() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::<String>::new()));
    let log = seen.clone();
    let h = thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut w = s;
        for reply in [HELLO_REPLY, IBM_REPLY] {
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            log.lock().unwrap().push(line.trim_end().to_string());
            writeln!(w, "{reply}").unwrap();
        }
    });
    let c = RemoteClient::connect(&format!("tcp://{addr}")).unwrap();
    assert_eq!(c.kinds(), MatcherKind::ALL);
    assert_eq!(c.dims()[&MatcherKind::Clip], 2);
    let items = vec![
        met_core::matchers::remote::image_item(
            met_core::matchers::ImageRef { image_id: "q1", vec: &[1.0, 0.0] },
            met_core::matchers::ImageRef { image_id: "i1", vec: &[2.0, 0.0] },
        ),
        met_core::matchers::remote::image_item(
            met_core::matchers::ImageRef { image_id: "q1", vec: &[1.0, 0.0] },
            met_core::matchers::ImageRef { image_id: "i2", vec: &[0.0, 3.0] },
        ),
    ];
    assert_eq!(c.score(MatcherKind::Ibm, items).unwrap(), vec![Some(1.0), Some(0.0)]);
    h.join().unwrap();
    assert_eq!(*seen.lock().unwrap(), vec![HELLO.to_string(), IBM_REQ.to_string()]);
}

#[test]
fn handshake_rejects_other_protocols() {
    let s = toy_server();
    let r = s.handle_line(r#"{"op":"hello","id":0,"protocol":"other","version":1}"#);
    assert!(r.contains("\"error\""), "{r}");
    let r = s.handle_line(&format!(r#"{{"op":"hello","id":0,"protocol":"{PROTOCOL}","version":2}}"#));
    assert!(r.contains("\"error\""), "{r}");
}

fn query(text: &str) -> QueryPair {
    QueryPair {
        query_id: "q".into(),
        text: text.into(),
        image_id: "i1".into(),
        image_vec: vec![1.0, 0.0],
        gold: None,
    }
}

#[test]
fn one_request_per_matcher_for_64_candidates() {
    let server = toy_server();
    let endpoint = server.clone().spawn_tcp("127.0.0.1:0").unwrap();
    let client = Arc::new(RemoteClient::connect(&endpoint).unwrap());
    let b = ScorerBindings::remote(client.clone());
    let cands: Vec<Candidate> = (0..64)
        .map(|i| Candidate {
            entity_id: EntityId::new(format!("e{i:02}")),
            evidence_text: Some(EvidenceText {
                gloss_index: 0,
                text: format!("apple number {i}"),
            }),
            evidence_image: (i % 4 != 0).then(|| EvidenceImage {
                image_id: format!("img{i}"),
                vec: vec![i as f32, 1.0],
            }),
            channel: Channel::Both,
            retrieval_score: 1.0,
            text_score: Some(1.0),
            image_score: None,
        })
        .collect();
    let scored = score_candidates(&query("red apple"), &cands, &b).unwrap();
    assert_eq!(scored.len(), 64);
    assert_eq!(client.request_count(), 4);
    assert_eq!(server.request_count(), 4);
    // candidates without an image stay, with a neutral IBM score
    assert!(scored[0].1.is_missing(MatcherKind::Ibm));
    assert_eq!(scored[0].1.get(MatcherKind::Ibm), 0.5);
}

#[test]
fn pipelined_requests_answer_in_order() {
    let endpoint = toy_server().spawn_tcp("127.0.0.1:0").unwrap();
    let s = TcpStream::connect(endpoint.trim_start_matches("tcp://")).unwrap();
    let mut r = BufReader::new(s.try_clone().unwrap());
    let mut w = s;
    let mut batch = String::new();
    for id in 10..30 {
        batch.push_str(&format!(
            r#"{{"op":"score","id":{id},"kind":"TCM","items":[{{"query_text":"a b","evidence_text":"b c"}}]}}"#
        ));
        batch.push('\n');
        if id == 15 {
            batch.push_str("{broken\n");
        }
    }
    w.write_all(batch.as_bytes()).unwrap();
    let mut ids = Vec::new();
    for _ in 0..21 {
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        ids.push(v["id"].as_u64());
        if v["id"].is_null() {
            assert!(v["error"].as_str().unwrap().starts_with("malformed request"));
        }
    }
    let mut want: Vec<Option<u64>> = (10..16).map(Some).collect();
    want.push(None);
    want.extend((16..30).map(Some));
    assert_eq!(ids, want);
}

#[test]
fn client_pipeline_keeps_batch_order() {
    let endpoint = toy_server().spawn_tcp("127.0.0.1:0").unwrap();
    let c = RemoteClient::connect(&endpoint).unwrap();
    let batches = (0..8)
        .map(|i| {
            let items = (0..=i)
                .map(|j| met_core::matchers::remote::text_item("a b c d", &format!("a {j}")))
                .collect();
            (MatcherKind::Tcm, items)
        })
        .collect();
    let out = c.pipeline(batches).unwrap();
    for (i, r) in out.into_iter().enumerate() {
        assert_eq!(r.unwrap().len(), i + 1);
    }
}

#[test]
fn malformed_item_does_not_drop_connection() {
    let endpoint = toy_server().spawn_tcp("127.0.0.1:0").unwrap();
    let c = RemoteClient::connect(&endpoint).unwrap();
    let bad = vec![met_core::matchers::remote::Item::default()];
    let err = c.score(MatcherKind::Tbm, bad).unwrap_err();
    assert!(err.to_string().contains("missing query_text"), "{err}");
    let ok = c.score(MatcherKind::Tbm, vec![met_core::matchers::remote::text_item("x", "x")]);
    assert_eq!(ok.unwrap().len(), 1);
}

#[test]
fn remote_scores_equal_in_process_scores() {
    let spec = SynthSpec {
        num_entities: 150,
        dev_size: 15,
        test_size: 15,
        seed: 4,
        ..SynthSpec::default()
    };
    let s = generate_synthetic_mkb(&spec).unwrap();
    let local = ScorerBindings::toy(s.lexicon.clone(), Arc::new(s.joint.clone()));
    let server = ScorerServer::new(local.clone(), BTreeMap::new());
    let endpoint = server.spawn_tcp("127.0.0.1:0").unwrap();
    let client = Arc::new(RemoteClient::connect(&endpoint).unwrap());
    let idx = Indices::build(&s.kb, Bm25Params::default(), HnswParams::default()).unwrap();
    let cands = retrieve_split(&s.kb, &idx, &s.splits.dev, &RetrievalConfig::default()).unwrap();

    let want = score_split(&s.splits.dev, &cands, &local).unwrap();
    let got = score_split(&s.splits.dev, &cands, &ScorerBindings::remote(client.clone())).unwrap();
    assert_close(&want, &got);
    // at most one request per matcher and query
    let n = s.splits.dev.len() as u64;
    assert!(client.request_count() <= 4 * n && client.request_count() >= n);

    // one kind remote, the rest local
    let mixed = local.clone().with_remote(client, MatcherKind::Clip);
    assert_close(&want, &score_split(&s.splits.dev, &cands, &mixed).unwrap());
}

fn assert_close(want: &[met_core::fusion::ScoredQuery], got: &[met_core::fusion::ScoredQuery]) {
    assert_eq!(want.len(), got.len());
    for (w, g) in want.iter().zip(got) {
        assert_eq!(w.candidates.len(), g.candidates.len());
        for (a, b) in w.candidates.iter().zip(&g.candidates) {
            assert_eq!(a.entity_id, b.entity_id);
            for k in MatcherKind::ALL {
                assert!((a.scores.get(k) - b.scores.get(k)).abs() <= 1e-6, "{k}");
                assert_eq!(a.scores.is_missing(k), b.scores.is_missing(k));
            }
        }
    }
}
