//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use roughflow_core::{sample_fbm, ControlIncrements, Grid, RoughDriver};

/// fBm driver with `channels` channels on `steps` steps, fixed seed.
pub fn driver(steps: usize, channels: usize, hurst: f64) -> RoughDriver {
    sample_fbm(Grid::new(steps).unwrap(), channels, hurst, 7).unwrap()
}

/// A small deterministic control, `h_{l,i} = 0.01 sin(l + i)`.
pub fn control(steps: usize, channels: usize) -> ControlIncrements {
    let g = Grid::new(steps).unwrap();
    ControlIncrements::new(
        g,
        DMatrix::from_fn(steps, channels, |l, i| 0.01 * ((l + i) as f64).sin()),
    )
    .unwrap()
}

/// Unit-variance start and target with `n` coordinates.
pub fn points(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x = (0..n).map(|p| (p as f64 * 0.7).cos()).collect();
    let y = (0..n).map(|p| (p as f64 * 1.3).sin()).collect();
    (x, y)
}
