use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{BevGrid, GridSpec};

/// Sum of truncated Gaussian blobs, support kept 2+ cells inside the border.
pub(crate) fn smooth_random_grid(spec: &GridSpec, channels: usize, seed: u64) -> BevGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.side_cells;
    let mut g = BevGrid::zeros(*spec, channels);
    for ch in 0..channels {
        for _ in 0..4 {
            let sigma: f64 = rng.gen_range(3.5..5.0);
            let radius = 4.0 * sigma;
            let lo = 2.0 + radius + 1.0;
            let hi = n as f64 - lo;
            let cx = rng.gen_range(lo..hi);
            let cy = rng.gen_range(lo..hi);
            let amp: f64 = rng.gen_range(0.2..0.6);
            for row in 0..n {
                for col in 0..n {
                    let dx = col as f64 + 0.5 - cx;
                    let dy = row as f64 + 0.5 - cy;
                    let d2 = dx * dx + dy * dy;
                    if d2 <= radius * radius {
                        let v = g.get(row, col, ch) as f64 + amp * (-d2 / (2.0 * sigma * sigma)).exp();
                        g.set(row, col, ch, v as f32);
                    }
                }
            }
        }
    }
    g
}
