use occlbench::occlcon::{separation_score, EmbeddingBatch};
use occlbench::scenegen::OcclusionLevel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Isotropic random unit vectors have zero expected cosine similarity, so the
/// separation of randomly labelled random embeddings concentrates at zero.
#[test]
fn random_unit_vectors_have_near_zero_separation() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (trial, &(n, dim)) in [(300, 16), (300, 32), (500, 8), (1000, 32)].iter().cycle().take(20).enumerate() {
        let mut rows = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            rows.extend(v.iter().map(|x| x / norm));
        }
        let labels = (0..n).map(|_| OcclusionLevel::ALL[rng.gen_range(0..3)]).collect();
        let delta = separation_score(&EmbeddingBatch::new(dim, rows, labels).unwrap()).unwrap();
        assert!(delta.abs() < 0.1, "trial {trial}: n {n}, dim {dim}, delta {delta}");
    }
}
