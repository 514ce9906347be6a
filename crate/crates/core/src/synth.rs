//! Planted-partition (two-probability stochastic block model) generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphParts, Masks, Task};
use crate::tensor::DenseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise: f32,
    pub seed: u64,
}

impl PlantedPartition {
    fn check(&self) -> Result<()> {
        if self.communities < 2 {
            return Err(Error::Param(format!(
                "need at least 2 communities, got {}",
                self.communities
            )));
        }
        if !(0.0 <= self.p_out && self.p_out < self.p_in && self.p_in <= 1.0) {
            return Err(Error::Param(format!(
                "require 0 <= p_out < p_in <= 1, got p_in={} p_out={}",
                self.p_in, self.p_out
            )));
        }
        if self.nodes < self.communities {
            return Err(Error::Param(format!(
                "{} nodes cannot form {} communities",
                self.nodes, self.communities
            )));
        }
        if self.feature_dim < self.communities {
            return Err(Error::Param(format!(
                "feature dim {} is smaller than the community count {}",
                self.feature_dim, self.communities
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Param(format!("noise std {} must be >= 0", self.noise)));
        }
        Ok(())
    }

    /// Community of node `v`: contiguous, near-equal blocks.
    pub fn community_of(&self, v: usize) -> usize {
        v * self.communities / self.nodes
    }

    /// Unit-norm centroid of community `c`: uniform weight on its own block
    /// of feature dimensions, zero elsewhere. Centroids are orthogonal.
    pub fn centroid(&self, c: usize) -> Vec<f32> {
        let block = |d: usize| d * self.communities / self.feature_dim;
        let size = (0..self.feature_dim).filter(|&d| block(d) == c).count();
        let w = 1.0 / (size as f32).sqrt();
        (0..self.feature_dim)
            .map(|d| if block(d) == c { w } else { 0.0 })
            .collect()
    }

    pub fn generate(&self) -> Result<Graph> {
        self.check()?;
        let n = self.nodes;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        // community boundaries: start index of each community, plus n
        let mut starts: Vec<usize> = (0..self.communities)
            .map(|c| (c * n).div_ceil(self.communities))
            .collect();
        starts.push(n);

        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        let geo_in = (self.p_in > 0.0).then(|| Geometric::new(self.p_in).expect("p_in"));
        let geo_out = (self.p_out > 0.0).then(|| Geometric::new(self.p_out).expect("p_out"));
        for i in 0..n {
            let ci = self.community_of(i);
            for c in 0..self.communities {
                let lo = starts[c].max(i + 1);
                let hi = starts[c + 1];
                if lo >= hi {
                    continue;
                }
                let geo = if c == ci { &geo_in } else { &geo_out };
                let Some(geo) = geo else { continue };
                // geometric skipping: O(edges) rather than O(pairs)
                let mut j = lo;
                loop {
                    let skip = geo.sample(&mut rng);
                    j = match usize::try_from(skip).ok().and_then(|s| j.checked_add(s)) {
                        Some(j) => j,
                        None => break,
                    };
                    if j >= hi {
                        break;
                    }
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                    j += 1;
                }
            }
        }

        let normal = Normal::new(0.0f32, self.noise.max(f32::MIN_POSITIVE)).expect("noise");
        let centroids: Vec<Vec<f32>> = (0..self.communities).map(|c| self.centroid(c)).collect();
        let mut features = DenseMatrix::zeros(n, self.feature_dim);
        for v in 0..n {
            let c = &centroids[self.community_of(v)];
            for (x, &m) in features.row_mut(v).iter_mut().zip(c) {
                *x = if self.noise > 0.0 { m + normal.sample(&mut rng) } else { m };
            }
        }

        let labels: Vec<usize> = (0..n).map(|v| self.community_of(v)).collect();
        let masks = stratified_masks(&labels, self.communities, &mut rng);

        Graph::from_parts(GraphParts {
            features,
            neighbors,
            labels,
            num_classes: self.communities,
            masks,
            directed: false,
            task: Task::Node,
            graph_index: None,
        })
    }
}

/// 60/20/20 split within each class.
pub fn stratified_masks<R: Rng>(labels: &[usize], classes: usize, rng: &mut R) -> Masks {
    let n = labels.len();
    let mut masks = Masks {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for c in 0..classes {
        let mut members: Vec<usize> = (0..n).filter(|&v| labels[v] == c).collect();
        members.shuffle(rng);
        let m = members.len();
        let n_train = (0.6 * m as f64).round() as usize;
        let n_val = ((0.2 * m as f64).round() as usize).min(m - n_train);
        for (i, &v) in members.iter().enumerate() {
            if i < n_train {
                masks.train[v] = true;
            } else if i < n_train + n_val {
                masks.val[v] = true;
            } else {
                masks.test[v] = true;
            }
        }
    }
    masks
}

/// A planted-partition graph whose expected number of directed edge slots
/// is close to `target_slots`, at a fixed mean degree. Used for scaling runs.
pub fn graph_with_edge_slots(target_slots: usize, mean_degree: f64, feature_dim: usize, seed: u64) -> Result<Graph> {
    let nodes = ((target_slots as f64 / mean_degree).round() as usize).max(4);
    // mean degree ≈ (n/k)·p_in + (n - n/k)·p_out with k = 4 and p_out = p_in / 10
    let k = 4;
    let per = nodes as f64 / k as f64;
    let p_in = (mean_degree / (per + (nodes as f64 - per) / 10.0)).min(1.0);
    PlantedPartition {
        nodes,
        communities: k,
        p_in,
        p_out: p_in / 10.0,
        feature_dim: feature_dim.max(k),
        noise: 0.3,
        seed,
    }
    .generate()
}
