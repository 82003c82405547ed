//! Occlusion-level contrastive objective on pooled, normalized encoder features.
//!
//! For unit embeddings `z_i` with levels `y_i`:
//!
//! ```text
//! L_con = 1/B^2 * sum_i [ sum_{j: y_j = y_i} (1 - s_ij) + sum_{j: y_j != y_i} max(0, s_ij - tau(y_i, y_j)) ]
//! ```
//!
//! with `s_ij = z_i . z_j` and `tau` = `tau_lh` for low/high pairs, `tau_m` for
//! pairs involving mid. The positive sum includes `j = i`, whose term is zero.
//! At `s_ij = tau` the hinge is treated as inactive (subgradient 0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegen::OcclusionLevel;

/// Pooled vectors with norm below this get the epsilon treatment in [`embed`].
pub const NORM_EPS: f64 = 1e-12;
/// Allowed deviation of a row norm from 1.
pub const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginConfig {
    pub tau_lh: f64,
    pub tau_m: f64,
    pub lambda_weight: f64,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig {
            tau_lh: 0.4,
            tau_m: 0.6,
            lambda_weight: 1.0,
        }
    }
}

impl MarginConfig {
    pub fn new(tau_lh: f64, tau_m: f64, lambda_weight: f64) -> Result<Self> {
        let cfg = MarginConfig {
            tau_lh,
            tau_m,
            lambda_weight,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("tau_lh", self.tau_lh), ("tau_m", self.tau_m)] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("{name} = {t} must lie in (0, 1)")));
            }
        }
        if self.tau_lh > self.tau_m {
            return Err(Error::Config(format!(
                "tau_lh = {} exceeds tau_m = {}; the low-high margin must be the strict one",
                self.tau_lh, self.tau_m
            )));
        }
        if !(self.lambda_weight >= 0.0 && self.lambda_weight.is_finite()) {
            return Err(Error::Config(format!(
                "lambda = {} must be finite and non-negative",
                self.lambda_weight
            )));
        }
        Ok(())
    }
}

/// `B` unit rows of width `dim`, row-major, with one level per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    pub dim: usize,
    pub rows: Vec<f64>,
    pub labels: Vec<OcclusionLevel>,
}

impl EmbeddingBatch {
    /// Checks shapes and that every row has unit norm within [`UNIT_TOL`].
    pub fn new(dim: usize, rows: Vec<f64>, labels: Vec<OcclusionLevel>) -> Result<Self> {
        let batch = EmbeddingBatch { dim, rows, labels };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.rows.len() != self.dim * self.labels.len() {
            return Err(Error::Contract(format!(
                "embedding batch has {} values for {} rows of width {}",
                self.rows.len(),
                self.labels.len(),
                self.dim
            )));
        }
        for i in 0..self.len() {
            let n = norm(self.row(i));
            if !((n - 1.0).abs() <= UNIT_TOL) {
                return Err(Error::Contract(format!("embedding row {i} has norm {n}, expected 1")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn sim(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Output of [`embed`], holding what the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub batch: EmbeddingBatch,
    /// Samples whose pooled vector was zero and got the epsilon fallback.
    pub flagged: Vec<bool>,
    pooled_norms: Vec<f64>,
    spatial: usize,
}

/// Global average pooling of a `B x C x H x W` tensor followed by L2
/// normalization of each pooled row.
///
/// A pooled vector with norm below [`NORM_EPS`] has `NORM_EPS` added to every
/// component before normalization and is flagged; its gradient is zero.
pub fn embed(features: &[f64], shape: [usize; 4], labels: &[OcclusionLevel]) -> Result<Embedding> {
    let [b, c, h, w] = shape;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Contract(format!("feature map {b}x{c}x{h}x{w} has an empty dimension")));
    }
    if features.len() != b * c * h * w || labels.len() != b {
        return Err(Error::Contract(format!(
            "{} feature values and {} labels for shape {b}x{c}x{h}x{w}",
            features.len(),
            labels.len()
        )));
    }
    let spatial = h * w;
    let mut rows = vec![0.0; b * c];
    let mut flagged = vec![false; b];
    let mut pooled_norms = vec![0.0; b];
    for i in 0..b {
        let row = &mut rows[i * c..(i + 1) * c];
        for (k, v) in row.iter_mut().enumerate() {
            let base = (i * c + k) * spatial;
            *v = features[base..base + spatial].iter().sum::<f64>() / spatial as f64;
        }
        let mut n = norm(row);
        if n < NORM_EPS {
            flagged[i] = true;
            row.iter_mut().for_each(|v| *v += NORM_EPS);
            n = norm(row);
        }
        row.iter_mut().for_each(|v| *v /= n);
        pooled_norms[i] = n;
    }
    Ok(Embedding {
        batch: EmbeddingBatch {
            dim: c,
            rows,
            labels: labels.to_vec(),
        },
        flagged,
        pooled_norms,
        spatial,
    })
}

impl Embedding {
    /// Maps a gradient with respect to the unit rows back to the feature tensor.
    pub fn backward(&self, grad_rows: &[f64]) -> Vec<f64> {
        let (b, c) = (self.batch.len(), self.batch.dim);
        let mut out = vec![0.0; b * c * self.spatial];
        for i in 0..b {
            if self.flagged[i] {
                continue;
            }
            let z = self.batch.row(i);
            let g = &grad_rows[i * c..(i + 1) * c];
            let zg = dot(z, g);
            for k in 0..c {
                let gp = (g[k] - z[k] * zg) / self.pooled_norms[i];
                let v = gp / self.spatial as f64;
                let base = (i * c + k) * self.spatial;
                out[base..base + self.spatial].iter_mut().for_each(|o| *o = v);
            }
        }
        out
    }
}

/// Margin for a negative pair: `tau_lh` for low/high, `tau_m` whenever mid is involved.
pub fn pair_margin(a: OcclusionLevel, b: OcclusionLevel, cfg: &MarginConfig) -> Result<f64> {
    use OcclusionLevel::*;
    match (a, b) {
        _ if a == b => Err(Error::Contract(format!("pair_margin called on a positive pair ({a}, {a})"))),
        (Low, High) | (High, Low) => Ok(cfg.tau_lh),
        _ => Ok(cfg.tau_m),
    }
}

/// Per ordered pair: -1 for positives, +1 for active hinges, 0 otherwise.
fn pair_terms(batch: &EmbeddingBatch, cfg: &MarginConfig) -> Result<(f64, Vec<f64>)> {
    let n = batch.len();
    let mut loss = 0.0;
    let mut coef = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let s = batch.sim(i, j);
            if batch.labels[i] == batch.labels[j] {
                loss += 1.0 - s;
                coef[i * n + j] = -1.0;
            } else {
                let tau = pair_margin(batch.labels[i], batch.labels[j], cfg)?;
                if s > tau {
                    loss += s - tau;
                    coef[i * n + j] = 1.0;
                }
            }
        }
    }
    Ok((loss, coef))
}

pub fn contrastive_loss(batch: &EmbeddingBatch, cfg: &MarginConfig) -> Result<f64> {
    batch.validate()?;
    let n = batch.len();
    if n == 0 {
        return Ok(0.0);
    }
    Ok(pair_terms(batch, cfg)?.0 / (n * n) as f64)
}

/// Loss and its gradient with respect to the rows, treating each row as a free vector.
pub fn contrastive_loss_grad(batch: &EmbeddingBatch, cfg: &MarginConfig) -> Result<(f64, Vec<f64>)> {
    batch.validate()?;
    let (n, d) = (batch.len(), batch.dim);
    let mut grad = vec![0.0; n * d];
    if n == 0 {
        return Ok((0.0, grad));
    }
    let (sum, coef) = pair_terms(batch, cfg)?;
    let scale = 1.0 / (n * n) as f64;
    for i in 0..n {
        let gi = &mut grad[i * d..(i + 1) * d];
        for j in 0..n {
            // s_ij appears as pair (i, j) and as pair (j, i)
            let c = (coef[i * n + j] + coef[j * n + i]) * scale;
            if c != 0.0 {
                for (g, z) in gi.iter_mut().zip(batch.row(j)) {
                    *g += c * z;
                }
            }
        }
    }
    Ok((sum * scale, grad))
}

/// `L_fin = L_seg + lambda * L_con`; with lambda = 0 the result is `L_seg` exactly.
pub fn total_loss(l_seg: f64, l_con: f64, cfg: &MarginConfig) -> Result<f64> {
    if !l_seg.is_finite() {
        return Err(Error::NonFinite(format!("L_seg = {l_seg}")));
    }
    if !l_con.is_finite() {
        return Err(Error::NonFinite(format!("L_con = {l_con}")));
    }
    if cfg.lambda_weight == 0.0 {
        return Ok(l_seg);
    }
    let fin = l_seg + cfg.lambda_weight * l_con;
    if !fin.is_finite() {
        return Err(Error::NonFinite(format!("L_fin = {fin}")));
    }
    Ok(fin)
}

/// Mean cosine similarity over same-level pairs minus the mean over low/high pairs.
///
/// Same-level pairs are unordered pairs of distinct samples, so a level with
/// fewer than two samples contributes nothing to the first mean.
pub fn separation_score(batch: &EmbeddingBatch) -> Result<f64> {
    batch.validate()?;
    let n = batch.len();
    let (mut within, mut nw) = (0.0, 0usize);
    let (mut cross, mut nc) = (0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (batch.labels[i], batch.labels[j]);
            if a == b {
                within += batch.sim(i, j);
                nw += 1;
            } else if matches!(
                (a, b),
                (OcclusionLevel::Low, OcclusionLevel::High) | (OcclusionLevel::High, OcclusionLevel::Low)
            ) {
                cross += batch.sim(i, j);
                nc += 1;
            }
        }
    }
    if nw == 0 {
        return Err(Error::Domain("no occlusion level has two or more embeddings".into()));
    }
    if nc == 0 {
        return Err(Error::Domain("separation needs both low and high embeddings".into()));
    }
    Ok(within / nw as f64 - cross / nc as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use OcclusionLevel::*;

    fn batch(rows: &[&[f64]], labels: &[OcclusionLevel]) -> EmbeddingBatch {
        let dim = rows[0].len();
        EmbeddingBatch::new(dim, rows.concat(), labels.to_vec()).unwrap()
    }

    #[test]
    fn margins() {
        let cfg = MarginConfig::default();
        assert_eq!(pair_margin(Low, High, &cfg).unwrap(), 0.4);
        assert_eq!(pair_margin(High, Low, &cfg).unwrap(), 0.4);
        assert_eq!(pair_margin(Mid, High, &cfg).unwrap(), 0.6);
        assert_eq!(pair_margin(Mid, Low, &cfg).unwrap(), 0.6);
        assert!(matches!(pair_margin(Mid, Mid, &cfg), Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        assert!(MarginConfig::new(0.6, 0.4, 1.0).is_err());
        assert!(MarginConfig::new(0.0, 0.4, 1.0).is_err());
        assert!(MarginConfig::new(0.4, 1.0, 1.0).is_err());
        assert!(MarginConfig::new(0.4, 0.6, -1.0).is_err());
        assert!(MarginConfig::new(0.4, 0.4, 0.0).is_ok());
    }

    #[test]
    fn identical_same_label_is_zero() {
        let b = batch(&[&[1.0, 0.0], &[1.0, 0.0]], &[Low, Low]);
        assert!(contrastive_loss(&b, &MarginConfig::default()).unwrap().abs() < 1e-9);
    }

    #[test]
    fn orthogonal_low_mid_is_zero() {
        let b = batch(&[&[1.0, 0.0], &[0.0, 1.0]], &[Low, Mid]);
        assert!(contrastive_loss(&b, &MarginConfig::default()).unwrap().abs() < 1e-9);
    }

    #[test]
    fn low_high_at_similarity_point_nine() {
        let s: f64 = 0.9;
        let b = batch(&[&[1.0, 0.0], &[s, (1.0 - s * s).sqrt()]], &[Low, High]);
        // term by term: self pairs 0, the two cross pairs max(0, 0.9 - 0.4) each
        let expected = (0.0 + (s - 0.4) + (s - 0.4) + 0.0) / 4.0;
        let got = contrastive_loss(&b, &MarginConfig::default()).unwrap();
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 0.25).abs() < 1e-9);
    }

    #[test]
    fn non_unit_rows_are_rejected() {
        let b = EmbeddingBatch { dim: 2, rows: vec![1.0, 0.0, 0.5, 0.0], labels: vec![Low, Mid] };
        assert!(matches!(contrastive_loss(&b, &MarginConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn total_loss_cases() {
        let cfg = MarginConfig::default();
        assert_eq!(total_loss(2.0, 0.25, &cfg).unwrap(), 2.25);
        let half = MarginConfig { lambda_weight: 0.5, ..cfg };
        assert!((total_loss(1.5, 0.2, &half).unwrap() - 1.6).abs() < 1e-12);
        let zero = MarginConfig { lambda_weight: 0.0, ..cfg };
        assert_eq!(total_loss(0.123456789, 7.0, &zero).unwrap(), 0.123456789);
        assert!(matches!(total_loss(f64::NAN, 0.0, &cfg), Err(Error::NonFinite(_))));
        assert!(matches!(total_loss(1.0, f64::INFINITY, &cfg), Err(Error::NonFinite(_))));
    }

    #[test]
    fn constant_map_embeds_along_its_channel_values() {
        // 1 x 3 x 2 x 2 with channel values 1, 2, 2
        let mut f = vec![1.0; 4];
        f.extend([2.0; 8]);
        let e = embed(&f, [1, 3, 2, 2], &[Low]).unwrap();
        let z = e.batch.row(0);
        assert!((z[0] - 1.0 / 3.0).abs() < 1e-12 && (z[1] - 2.0 / 3.0).abs() < 1e-12);
        let scaled: Vec<f64> = f.iter().map(|v| v * 37.5).collect();
        let e2 = embed(&scaled, [1, 3, 2, 2], &[Low]).unwrap();
        for (a, b) in z.iter().zip(e2.batch.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_features_are_flagged_and_stay_unit() {
        let f = vec![0.0; 2 * 4];
        let e = embed(&f, [2, 4, 1, 1], &[Low, High]).unwrap();
        assert_eq!(e.flagged, vec![true, true]);
        e.batch.validate().unwrap();
        assert!(e.backward(&[1.0; 8]).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn separation_examples() {
        let same = batch(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]], &[Low, Low, High, High]);
        assert!(separation_score(&same).unwrap().abs() < 1e-12);
        let clusters = batch(
            &[&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0]],
            &[Low, Low, Mid, Mid, High, High],
        );
        assert!((separation_score(&clusters).unwrap() - 1.0).abs() < 1e-12);
        let no_high = batch(&[&[1.0, 0.0], &[1.0, 0.0]], &[Low, Low]);
        assert!(separation_score(&no_high).is_err());
    }

    fn unit_rows(raw: &[f64], dim: usize) -> Vec<f64> {
        raw.chunks(dim)
            .flat_map(|r| {
                let n = norm(r).max(1e-9);
                r.iter().map(move |v| v / n)
            })
            .collect()
    }

    fn level(k: u8) -> OcclusionLevel {
        OcclusionLevel::ALL[k as usize % 3]
    }

    proptest! {
        #[test]
        fn loss_is_non_negative_and_permutation_invariant(
            raw in prop::collection::vec(-1.0f64..1.0, 8 * 4),
            labels in prop::collection::vec(0u8..3, 8),
            rot in 0usize..8,
        ) {
            prop_assume!(raw.chunks(4).all(|r| norm(r) > 1e-3));
            let rows = unit_rows(&raw, 4);
            let labels: Vec<OcclusionLevel> = labels.into_iter().map(level).collect();
            let cfg = MarginConfig::default();
            let b = EmbeddingBatch::new(4, rows.clone(), labels.clone()).unwrap();
            let l = contrastive_loss(&b, &cfg).unwrap();
            prop_assert!(l >= 0.0);

            let order: Vec<usize> = (0..8).map(|i| (i * 3 + rot) % 8).collect();
            let permuted = EmbeddingBatch::new(
                4,
                order.iter().flat_map(|&i| rows[i * 4..(i + 1) * 4].to_vec()).collect(),
                order.iter().map(|&i| labels[i]).collect(),
            ).unwrap();
            prop_assert!((contrastive_loss(&permuted, &cfg).unwrap() - l).abs() < 1e-12);
        }

        #[test]
        fn zero_loss_iff_tight_clusters_below_margins(spread in 0.0f64..0.2) {
            // low along e0, high along e1 (similarity 0 < tau_lh): zero only without spread
            let b = batch(&[&[1.0, 0.0], &[(1.0 - spread * spread).sqrt(), spread], &[0.0, 1.0]], &[Low, Low, High]);
            let l = contrastive_loss(&b, &MarginConfig::default()).unwrap();
            if spread == 0.0 { prop_assert!(l == 0.0) } else { prop_assert!(l > 0.0) }
        }

        #[test]
        fn stricter_margin_costs_more_between_the_margins(s in 0.41f64..0.59) {
            let cfg = MarginConfig::default();
            let b = batch(&[&[1.0, 0.0], &[s, (1.0 - s * s).sqrt()]], &[Low, High]);
            let strict = contrastive_loss(&b, &cfg).unwrap();
            // the same pair scored with the mid margin
            let relaxed = contrastive_loss(&b, &MarginConfig { tau_lh: cfg.tau_m, ..cfg }).unwrap();
            prop_assert!(relaxed < strict);
            prop_assert!(relaxed.abs() < 1e-12);
        }
    }
}
