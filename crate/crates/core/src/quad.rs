//! Gauss–Legendre rules on [-1, 1] and small helpers around them.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// n-point Gauss–Legendre rule, nodes ascending.
    pub fn gauss_legendre(n: usize) -> Self {
        let n = NonZeroUsize::new(n.max(1)).unwrap();
        let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(n).as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (c + h * x, h * w))
    }
}

/// Pairwise summation of `n` items produced by `get`, in index order.
pub fn pairwise<T, F>(lo: usize, hi: usize, get: &F) -> T
where
    T: std::ops::Add<Output = T> + Default,
    F: Fn(usize) -> T,
{
    match hi - lo {
        0 => T::default(),
        1 => get(lo),
        n => {
            let mid = lo + n / 2;
            pairwise(lo, mid, get) + pairwise(mid, hi, get)
        }
    }
}
