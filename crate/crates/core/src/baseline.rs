//! Weighted k-nearest-neighbor fingerprint regression.

use crate::data::{LabeledSample, Location, RssiWindow};
use crate::error::{Error, Result};
use crate::eval::Predictor;

/// Zero-distance guard for inverse-distance weights.
pub const DEFAULT_EPS: f64 = 1e-9;
pub const DEFAULT_K: usize = 10;

/// Flattened B×H windows with their locations, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDb {
    dim: usize,
    features: Vec<Vec<f64>>,
    locations: Vec<Location>,
}

impl FingerprintDb {
    pub fn new(dim: usize) -> Self {
        FingerprintDb {
            dim,
            features: Vec::new(),
            locations: Vec::new(),
        }
    }

    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::EmptyData("fingerprint database needs samples".into()))?;
        let mut db = FingerprintDb::new(first.window.values().len());
        for s in samples {
            db.insert(s.window.values().to_vec(), s.location)?;
        }
        Ok(db)
    }

    pub fn insert(&mut self, features: Vec<f64>, location: Location) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::shape("fingerprint db", self.dim, features.len()));
        }
        self.features.push(features);
        self.locations.push(location);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn knn_predict(db: &FingerprintDb, query: &RssiWindow, k: usize) -> Result<Location> {
    knn_predict_features(db, query.values(), k, Some(DEFAULT_EPS))
}

/// Inverse-distance weighted mean of the `k` nearest entries. With
/// `eps = None` distances are used unguarded, except that an exact match
/// still returns its stored location.
pub fn knn_predict_features(
    db: &FingerprintDb,
    query: &[f64],
    k: usize,
    eps: Option<f64>,
) -> Result<Location> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if db.len() < k {
        return Err(Error::InvalidArgument(format!(
            "database has {} entries, fewer than k = {k}",
            db.len()
        )));
    }
    if query.len() != db.dim {
        return Err(Error::shape("knn query", db.dim, query.len()));
    }
    let mut order: Vec<(f64, usize)> = db
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| (distance(f, query), i))
        .collect();
    // Stable selection: equal distances keep insertion order.
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest = &order[..k];
    if let Some(&(_, i)) = nearest.iter().find(|(d, _)| *d == 0.0) {
        return Ok(db.locations[i]);
    }
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for &(d, i) in nearest {
        let w = 1.0 / eps.map_or(d, |e| d.max(e));
        sx += w * db.locations[i].x;
        sy += w * db.locations[i].y;
        sw += w;
    }
    Ok(Location::new(sx / sw, sy / sw))
}

/// A database bound to a neighbor count, usable by the evaluation harness.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub db: FingerprintDb,
    pub k: usize,
}

impl Predictor for KnnModel {
    fn predict(&self, w: &RssiWindow) -> Result<Location> {
        knn_predict(&self.db, w, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn db(entries: &[(Vec<f64>, Location)]) -> FingerprintDb {
        let mut db = FingerprintDb::new(entries[0].0.len());
        for (f, l) in entries {
            db.insert(f.clone(), *l).unwrap();
        }
        db
    }

    /// Full sort of every entry, then the weighted mean of the first k.
    fn brute_force(entries: &[(Vec<f64>, Location)], q: &[f64], k: usize) -> Location {
        let mut all: Vec<(f64, usize)> = entries
            .iter()
            .enumerate()
            .map(|(i, (f, _))| {
                let d: f64 = f.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d.sqrt(), i)
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if all[0].0 == 0.0 {
            return entries[all[0].1].1;
        }
        let top = &all[..k];
        let (mut x, mut y, mut wsum) = (0.0, 0.0, 0.0);
        for (d, i) in top {
            let w = 1.0 / d.max(1e-9);
            x += w * entries[*i].1.x;
            y += w * entries[*i].1.y;
            wsum += w;
        }
        Location::new(x / wsum, y / wsum)
    }

    #[test]
    fn exact_match_returns_stored_location() {
        let d = db(&[
            (vec![1.0, 2.0], Location::new(5.0, 5.0)),
            (vec![3.0, 2.0], Location::new(9.0, 1.0)),
        ]);
        assert_eq!(
            knn_predict_features(&d, &[3.0, 2.0], 2, Some(1e-9)).unwrap(),
            Location::new(9.0, 1.0)
        );
    }

    #[test]
    fn equidistant_pair_averages() {
        let d = db(&[
            (vec![0.0], Location::new(0.0, 0.0)),
            (vec![2.0], Location::new(2.0, 0.0)),
        ]);
        assert_eq!(
            knn_predict_features(&d, &[1.0], 2, Some(1e-9)).unwrap(),
            Location::new(1.0, 0.0)
        );
    }

    #[test]
    fn small_db_or_zero_k_is_an_error() {
        let d = db(&[(vec![0.0], Location::new(0.0, 0.0))]);
        assert!(knn_predict_features(&d, &[1.0], 2, None).is_err());
        assert!(knn_predict_features(&d, &[1.0], 0, None).is_err());
        assert!(knn_predict_features(&d, &[1.0, 2.0], 1, None).is_err());
    }

    #[test]
    fn boundary_ties_follow_insertion_order() {
        let d = db(&[
            (vec![0.0], Location::new(0.0, 0.0)),
            (vec![2.0], Location::new(10.0, 0.0)),
            (vec![-2.0], Location::new(-10.0, 0.0)),
        ]);
        assert_eq!(
            knn_predict_features(&d, &[0.5], 2, None).unwrap().x,
            10.0 * (1.0 / 1.5) / (2.0 + 1.0 / 1.5)
        );
        let d = db(&[
            (vec![2.0], Location::new(1.0, 0.0)),
            (vec![-2.0], Location::new(7.0, 0.0)),
        ]);
        assert_eq!(knn_predict_features(&d, &[0.0], 1, None).unwrap().x, 1.0);
    }

    fn random_entries(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<(Vec<f64>, Location)> {
        (0..n)
            .map(|_| {
                let f = (0..dim).map(|_| rng.random_range(0.0..40.0)).collect();
                (
                    f,
                    Location::new(rng.random_range(0.0..30.0), rng.random_range(0.0..20.0)),
                )
            })
            .collect()
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(10..=50);
            let entries = random_entries(&mut rng, n, 6);
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..40.0)).collect();
            let got = knn_predict_features(&db(&entries), &q, 10, Some(1e-9)).unwrap();
            assert_eq!(got, brute_force(&entries, &q, 10));
        }
    }

    #[test]
    fn prediction_in_bounding_box_and_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let entries = random_entries(&mut rng, 30, 4);
            let q: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..40.0)).collect();
            let p = knn_predict_features(&db(&entries), &q, 10, None).unwrap();
            assert!((0.0..=30.0).contains(&p.x) && (0.0..=20.0).contains(&p.y));
            let c = 3.5;
            let scaled: Vec<(Vec<f64>, Location)> = entries
                .iter()
                .map(|(f, l)| (f.iter().map(|v| v * c).collect(), *l))
                .collect();
            let qs: Vec<f64> = q.iter().map(|v| v * c).collect();
            let ps = knn_predict_features(&db(&scaled), &qs, 10, None).unwrap();
            assert!((p.x - ps.x).abs() < 1e-9 && (p.y - ps.y).abs() < 1e-9);
        }
    }
}
