//! Thread-local FFT plan cache and a small 2D transform on top of rustfft.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub(crate) type C64 = Complex<f64>;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

fn transpose(src: &[C64], dst: &mut [C64], rows: usize, cols: usize) {
    const BLOCK: usize = 32;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Unnormalized 2D DFT of a row-major `rows × cols` buffer, in place.
pub(crate) fn fft2(buf: &mut [C64], rows: usize, cols: usize, inverse_dir: bool) {
    debug_assert_eq!(buf.len(), rows * cols);
    let (row_fft, col_fft) = if inverse_dir {
        (inverse(cols), inverse(rows))
    } else {
        (forward(cols), forward(rows))
    };
    row_fft.process(buf);
    let mut tmp = vec![C64::new(0.0, 0.0); buf.len()];
    transpose(buf, &mut tmp, rows, cols);
    col_fft.process(&mut tmp);
    transpose(&tmp, buf, cols, rows);
}
