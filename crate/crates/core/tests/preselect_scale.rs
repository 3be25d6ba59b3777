use consel_core::corpus::{EmbeddingMatrix, Split, UtteranceRecord};
use consel_core::flmi::{preselect, GreedyMode, DEFAULT_CHUNK};
use consel_core::mfcc::MFCC_DIM;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

fn matrix(prefix: &str, n: usize, rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let mut m = EmbeddingMatrix::new(MFCC_DIM).unwrap();
    let mut row = vec![0f32; MFCC_DIM];
    for i in 0..n {
        row.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        m.push(format!("{prefix}{i:06}"), &row).unwrap();
    }
    m
}

#[test]
fn budget_of_thirty_thousand_on_large_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(150);
    let pool = matrix("p", 150_000, &mut rng);
    let queries = matrix("q", 64, &mut rng);
    let manifest: Vec<UtteranceRecord> = pool
        .ids()
        .iter()
        .map(|id| UtteranceRecord {
            utt_id: id.clone(),
            duration_sec: 4.0,
            audio_path: None,
            ref_text: None,
            split: Split::Pool,
        })
        .collect();
    let picked = preselect(&manifest, &pool, &queries, 30_000, GreedyMode::Lazy, DEFAULT_CHUNK).unwrap();
    assert_eq!(picked.len(), 30_000);
    assert_eq!(picked.iter().collect::<HashSet<_>>().len(), 30_000);
}
