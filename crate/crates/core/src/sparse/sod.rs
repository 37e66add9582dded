use nalgebra::DVector;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::sq_dist;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetStrategy {
    Random,
    FarthestPoint,
}

/// Greedy max-min selection starting from `start`: each new point maximizes
/// its distance to the already selected set (first index wins ties).
pub fn farthest_point_indices(points: &[DVector<f64>], m: usize, start: usize) -> Vec<usize> {
    let n = points.len();
    let m = m.min(n);
    let mut chosen = Vec::with_capacity(m);
    if m == 0 {
        return chosen;
    }
    chosen.push(start);
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[start])).collect();
    while chosen.len() < m {
        let mut best = 0;
        let mut best_d = -1.0;
        for (i, d) in min_d.iter().enumerate() {
            if *d > best_d {
                best = i;
                best_d = *d;
            }
        }
        chosen.push(best);
        for (i, p) in points.iter().enumerate() {
            min_d[i] = min_d[i].min(sq_dist(p, &points[best]));
        }
    }
    chosen
}

/// Reduced dataset of `m` rows in their original order.
pub fn subset_of_data(data: &Dataset, m: usize, strategy: SubsetStrategy, seed: u64) -> Result<Dataset> {
    let n = data.len();
    if m == 0 || m > n {
        return Err(Error::input(format!("subset size {m} outside 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = match strategy {
        SubsetStrategy::Random => index::sample(&mut rng, n, m).into_vec(),
        SubsetStrategy::FarthestPoint => {
            let start = rng.random_range(0..n);
            farthest_point_indices(data.inputs(), m, start)
        }
    };
    idx.sort_unstable();
    data.select(&idx)
}
