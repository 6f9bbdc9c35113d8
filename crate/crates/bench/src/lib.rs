//! Seeded input generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcguide::taxonomy::render_tags;
use rcguide::{EmbeddingIndex, ErrorTag};

pub fn random_index(entities: usize, dim: usize, seed: u64) -> EmbeddingIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = EmbeddingIndex::new(dim).expect("positive dimension");
    for i in 0..entities {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        index.insert(format!("entity{i:06}"), v).expect("finite nonzero vector");
    }
    index
}

/// Label vectors and probabilities for `n` instances over `labels` labels.
pub fn random_predictions(n: usize, labels: usize, seed: u64) -> Vec<(Vec<bool>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let y = (0..labels).map(|_| rng.random_bool(0.3)).collect();
            let p = (0..labels).map(|_| rng.random::<f64>()).collect();
            (y, p)
        })
        .collect()
}

pub fn tagged_sentences(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let tags: Vec<ErrorTag> = (0..rng.random_range(1..4))
                .map(|_| ErrorTag::ALL[rng.random_range(0..ErrorTag::ALL.len())])
                .collect();
            render_tags(&format!("Drug{i} did not alter the clearance of drug{}.", i + 1), &tags)
        })
        .collect()
}

/// `(id, difficulty)` pairs and a loss per id.
pub fn random_difficulties(n: usize, seed: u64) -> (Vec<(String, u8)>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..n).map(|i| (format!("x{i}"), rng.random_range(0..=5u8))).collect();
    let losses = (0..n).map(|_| rng.random_range(0.0..6.0)).collect();
    (entries, losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded() {
        assert_eq!(tagged_sentences(5, 1), tagged_sentences(5, 1));
        assert_eq!(random_difficulties(10, 2), random_difficulties(10, 2));
        let index = random_index(20, 8, 3);
        assert_eq!(index.len(), 20);
        assert_eq!(index.vector("entity000004"), random_index(20, 8, 3).vector("entity000004"));
    }
}
