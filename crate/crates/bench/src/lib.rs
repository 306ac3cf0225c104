//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use quartic_core::waves::build_grid;
use quartic_core::RadialGrid;

/// Radial grid on [0, 6] with `n` nodes, the size used throughout the tests.
pub fn grid(n: usize) -> Arc<RadialGrid> {
    Arc::new(build_grid(n, Some(6.0), 20.0).expect("valid grid"))
}
