use std::time::Duration;

use sarceval_client::embed::HttpEncoder;
use sarceval_client::{MockScript, MockServer};
use sarceval_core::metrics::similarity::{EncoderSimilarity, HashingEncoder, TextSimilarity, TokenEncoder};

#[test]
fn remote_encoder_matches_local_hashing_encoder() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let server = rt
        .block_on(MockServer::start(MockScript::default(), "127.0.0.1:0".parse().unwrap()))
        .unwrap();
    let remote = HttpEncoder::new(&server.base_url(), None, Duration::from_secs(5)).unwrap();
    let texts = ["the caption mocks the rain", "a sunny beach"];
    assert_eq!(
        remote.encode(&texts).unwrap(),
        HashingEncoder::default().encode(&texts).unwrap()
    );
    let sim = EncoderSimilarity(remote);
    let s = sim.similarity(texts[0], texts[0]).unwrap();
    assert!((s - 1.0).abs() < 1e-9);
    drop(server);
}
