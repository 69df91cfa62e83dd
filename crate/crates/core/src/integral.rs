//! Summed-area tables and sliding-window statistics.
//!
//! A table over an `H × W` map has `(H + 1) × (W + 1)` entries with
//! `S[y][x] = Σ map[0..y][0..x]`, so any rectangle sum costs four lookups.
//! Class-indicator maps use exact `i32` counts and quantized scalar maps exact
//! `i64` sums; plain scalar maps use `f64`.

use std::ops::{Add, Sub};

use crate::domain::{ClassId, Square};

pub trait Accumulator:
    Copy + Default + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Send + Sync + std::fmt::Debug
{
}

impl Accumulator for i32 {}
impl Accumulator for i64 {}
impl Accumulator for f64 {}

/// Fixed-point scale used by [`quantize`]: values are stored in units of 2⁻³².
pub const QUANT_SCALE: f64 = 4_294_967_296.0;

/// Converts a non-negative scalar to fixed point so that window sums are exact
/// and ties compare equal. Sums stay within `i64` while
/// `value × pixel count < 2³¹`, e.g. values below 1000 on a 2-megapixel map.
pub fn quantize(value: f64) -> i64 {
    (value * QUANT_SCALE).round() as i64
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegralTable<T> {
    height: usize,
    width: usize,
    sums: Vec<T>,
}

impl<T: Accumulator> IntegralTable<T> {
    /// Builds the table from a per-pixel value function.
    pub fn from_fn(height: usize, width: usize, mut value: impl FnMut(usize, usize) -> T) -> Self {
        let stride = width + 1;
        let mut sums = vec![T::default(); (height + 1) * stride];
        for y in 0..height {
            let mut row = T::default();
            for x in 0..width {
                row = row + value(y, x);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { height, width, sums }
    }

    /// Builds the table from a row-major map.
    pub fn from_map(map: &[T], height: usize, width: usize) -> Self {
        assert_eq!(map.len(), height * width, "map size does not match {height}x{width}");
        Self::from_fn(height, width, |y, x| map[y * width + x])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Sum over the half-open rectangle `[y0, y1) × [x0, x1)`.
    #[inline]
    pub fn rect_sum(&self, y0: usize, x0: usize, y1: usize, x1: usize) -> T {
        let s = self.width + 1;
        self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0] + self.sums[y0 * s + x0]
    }

    #[inline]
    pub fn window_sum(&self, y: usize, x: usize, side: usize) -> T {
        self.rect_sum(y, x, y + side, x + side)
    }

    pub fn total(&self) -> T {
        self.rect_sum(0, 0, self.height, self.width)
    }
}

impl IntegralTable<i32> {
    /// Table of the 0/1 indicator `labels == class` over one `height × width`
    /// plane. Counts are `i32`, which halves the memory traffic of the
    /// per-class searches; planes must hold fewer than 2³¹ pixels.
    pub fn indicator(labels: &[ClassId], height: usize, width: usize, class: ClassId) -> Self {
        let mut table = Self { height: 0, width: 0, sums: Vec::new() };
        table.refill_indicator(labels, height, width, class);
        table
    }

    /// Rebuilds the table in place for another plane or class, keeping the
    /// allocation.
    pub fn refill_indicator(&mut self, labels: &[ClassId], height: usize, width: usize, class: ClassId) {
        assert!(height * width <= i32::MAX as usize, "plane too large for i32 counts");
        assert_eq!(labels.len(), height * width, "map size does not match {height}x{width}");
        let stride = width + 1;
        self.height = height;
        self.width = width;
        self.sums.clear();
        self.sums.resize((height + 1) * stride, 0);
        for (y, row) in labels.chunks_exact(width.max(1)).enumerate().take(height) {
            let (above, below) = self.sums.split_at_mut((y + 1) * stride);
            let above = &above[y * stride..];
            let mut acc = 0;
            for x in 0..width {
                acc += i32::from(row[x] == class);
                below[x + 1] = above[x + 1] + acc;
            }
        }
    }
}

impl IntegralTable<i64> {

    /// Table of a scalar map converted with [`quantize`].
    pub fn quantized(values: &[f64], height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |y, x| quantize(values[y * width + x]))
    }
}

pub fn build_integral(map: &[f64], height: usize, width: usize) -> IntegralTable<f64> {
    IntegralTable::from_map(map, height, width)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowHit<T> {
    pub y: usize,
    pub x: usize,
    pub value: T,
}

/// Best `side × side` window that shares no pixel with any `excluded` square.
///
/// Scans every in-bounds origin in `(y, x)` order and keeps the first strict
/// maximum, so ties go to the smallest `y`, then `x`. With `require_positive`
/// windows whose sum is not above zero are ignored. Slices of `excluded` are
/// not consulted; pass only squares from the table's plane.
pub fn window_argmax<T: Accumulator>(
    table: &IntegralTable<T>,
    side: usize,
    excluded: &[Square],
    require_positive: bool,
) -> Option<WindowHit<T>> {
    let (h, w) = (table.height, table.width);
    if side == 0 || side > h || side > w {
        return None;
    }
    let last_x = w - side;
    let mut best: Option<WindowHit<T>> = None;
    let mut blocked: Vec<(usize, usize)> = Vec::with_capacity(excluded.len());
    for y in 0..=h - side {
        blocked.clear();
        for e in excluded {
            if e.y < y + side && y < e.y + e.side {
                // origins x with [x, x+side) meeting [e.x, e.x+e.side)
                blocked.push(((e.x + 1).saturating_sub(side), e.x + e.side));
            }
        }
        blocked.sort_unstable();
        let mut x = 0;
        let mut k = 0;
        while x <= last_x {
            while k < blocked.len() && blocked[k].1 <= x {
                k += 1;
            }
            if k < blocked.len() && blocked[k].0 <= x {
                x = blocked[k].1;
                continue;
            }
            let stop = blocked.get(k).map_or(last_x + 1, |b| b.0.min(last_x + 1));
            for xx in x..stop {
                let v = table.window_sum(y, xx, side);
                if require_positive && v <= T::default() {
                    continue;
                }
                if best.as_ref().is_none_or(|b| v > b.value) {
                    best = Some(WindowHit { y, x: xx, value: v });
                }
            }
            x = stop;
        }
    }
    best
}

/// Row-major 2-D array.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub height: usize,
    pub width: usize,
    pub values: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn get(&self, y: usize, x: usize) -> T {
        self.values[y * self.width + x]
    }
}

/// Mean of every stride-1 `side × side` window; output is
/// `(H − side + 1) × (W − side + 1)` indexed by window origin.
pub fn window_mean_map(table: &IntegralTable<f64>, side: usize) -> Grid<f64> {
    assert!(side >= 1 && side <= table.height && side <= table.width, "window does not fit");
    let (oh, ow) = (table.height - side + 1, table.width - side + 1);
    let area = (side * side) as f64;
    let mut values = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            values.push(table.window_sum(y, x, side) / area);
        }
    }
    Grid { height: oh, width: ow, values }
}
