//! 2D FFT over row-major complex grids.
//!
//! Forward is unnormalized; inverse divides by `width * height`, so an
//! identity round trip reproduces the input.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn fft2(data: &mut [Complex64], width: usize, height: usize) {
    transform(data, width, height, FftDirection::Forward);
}

pub fn ifft2(data: &mut [Complex64], width: usize, height: usize) {
    transform(data, width, height, FftDirection::Inverse);
    let norm = 1.0 / (width * height) as f64;
    data.iter_mut().for_each(|v| *v *= norm);
}

fn transform(data: &mut [Complex64], width: usize, height: usize, direction: FftDirection) {
    assert_eq!(data.len(), width * height);
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row = planner.plan_fft(width, direction);
        let col = planner.plan_fft(height, direction);

        let mut scratch = vec![Complex64::default(); row.get_inplace_scratch_len()];
        for r in data.chunks_exact_mut(width) {
            row.process_with_scratch(r, &mut scratch);
        }

        let mut column = vec![Complex64::default(); height];
        let mut scratch = vec![Complex64::default(); col.get_inplace_scratch_len()];
        for x in 0..width {
            for (y, v) in column.iter_mut().enumerate() {
                *v = data[y * width + x];
            }
            col.process_with_scratch(&mut column, &mut scratch);
            for (y, v) in column.iter().enumerate() {
                data[y * width + x] = *v;
            }
        }
    });
}

/// Signed FFT frequency index: `0..n/2` then negative frequencies.
#[inline]
pub fn signed_index(i: usize, n: usize) -> f64 {
    if i < n.div_ceil(2) {
        i as f64
    } else {
        i as f64 - n as f64
    }
}
