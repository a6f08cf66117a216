//! Unbounded arrays of base objects, materialized lazily.
//!
//! Indexes map onto segments of doubling length. A segment is allocated the
//! first time any of its cells is touched and installed with a CAS; the loser
//! of an installation race frees its copy. Cells are never moved or freed
//! before the array is dropped, so `get` hands out plain shared references.

use std::ptr;
use std::sync::atomic::{AtomicPtr, Ordering};
use std::sync::Arc;

const FIRST_SEGMENT: usize = 8;
const SEGMENTS: usize = 48;

type Init<T> = Arc<dyn Fn() -> T + Send + Sync>;

pub struct GrowableArray<T> {
    segments: [AtomicPtr<T>; SEGMENTS],
    init: Init<T>,
}

// SAFETY: cells are only reachable through `&T`, so sharing the array is
// exactly as safe as sharing `T`.
unsafe impl<T: Send + Sync> Send for GrowableArray<T> {}
unsafe impl<T: Send + Sync> Sync for GrowableArray<T> {}

fn locate(index: usize) -> (usize, usize) {
    let n = index / FIRST_SEGMENT + 1;
    let segment = (usize::BITS - 1 - n.leading_zeros()) as usize;
    let start = FIRST_SEGMENT * ((1 << segment) - 1);
    (segment, index - start)
}

fn segment_len(segment: usize) -> usize {
    FIRST_SEGMENT << segment
}

impl<T> GrowableArray<T> {
    /// Every cell starts out as `init()`.
    pub fn new(init: impl Fn() -> T + Send + Sync + 'static) -> Self {
        GrowableArray {
            segments: std::array::from_fn(|_| AtomicPtr::new(ptr::null_mut())),
            init: Arc::new(init),
        }
    }

    pub fn get(&self, index: usize) -> &T {
        let (segment, offset) = locate(index);
        assert!(segment < SEGMENTS, "index {index} out of range");
        let slot = &self.segments[segment];
        let mut base = slot.load(Ordering::Acquire);
        if base.is_null() {
            let fresh = self.allocate(segment);
            match slot.compare_exchange(ptr::null_mut(), fresh, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => base = fresh,
                Err(installed) => {
                    // SAFETY: `fresh` came from `allocate(segment)` and was never shared.
                    unsafe { Self::free(fresh, segment) };
                    base = installed;
                }
            }
        }
        // SAFETY: `base` points at a live segment of `segment_len(segment)`
        // cells and `offset` is below that length.
        unsafe { &*base.add(offset) }
    }

    /// Number of cells currently materialized.
    pub fn materialized(&self) -> usize {
        (0..SEGMENTS)
            .filter(|&s| !self.segments[s].load(Ordering::Acquire).is_null())
            .map(segment_len)
            .sum()
    }

    fn allocate(&self, segment: usize) -> *mut T {
        let cells: Box<[T]> = (0..segment_len(segment)).map(|_| (self.init)()).collect();
        Box::into_raw(cells) as *mut T
    }

    unsafe fn free(base: *mut T, segment: usize) {
        let slice = ptr::slice_from_raw_parts_mut(base, segment_len(segment));
        drop(Box::from_raw(slice));
    }
}

impl<T> Drop for GrowableArray<T> {
    fn drop(&mut self) {
        for (segment, slot) in self.segments.iter_mut().enumerate() {
            let base = *slot.get_mut();
            if !base.is_null() {
                // SAFETY: installed segments are owned by the array.
                unsafe { Self::free(base, segment) };
            }
        }
    }
}

impl<T> std::fmt::Debug for GrowableArray<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrowableArray").field("materialized", &self.materialized()).finish()
    }
}

/// A two-dimensional unbounded array: rows of lazily materialized cells.
pub struct Grid<T> {
    rows: GrowableArray<GrowableArray<T>>,
}

impl<T: 'static> Grid<T> {
    pub fn new(init: impl Fn() -> T + Send + Sync + 'static) -> Self {
        let init: Init<T> = Arc::new(init);
        Grid {
            rows: GrowableArray::new(move || {
                let init = Arc::clone(&init);
                GrowableArray::new(move || init())
            }),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        self.rows.get(row).get(col)
    }
}

impl<T> std::fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_objects::{FetchAdd, Register, BOTTOM};

    #[test]
    fn locate_is_contiguous() {
        let mut expected = (0, 0);
        for index in 0..10_000 {
            assert_eq!(locate(index), expected, "index {index}");
            expected.1 += 1;
            if expected.1 == segment_len(expected.0) {
                expected = (expected.0 + 1, 0);
            }
        }
    }

    #[test]
    fn untouched_cells_hold_initial_value() {
        let a = GrowableArray::new(|| Register::new(BOTTOM));
        assert_eq!(a.materialized(), 0);
        assert_eq!(a.get(1_000_000).read(), BOTTOM);
        a.get(5).write(3);
        assert_eq!(a.get(5).read(), 3);
        assert_eq!(a.get(4).read(), BOTTOM);
    }

    #[test]
    fn grid_cells_are_independent() {
        let g = Grid::new(|| Register::new(0));
        g.get(0, 0).write(1);
        g.get(1, 0).write(2);
        assert_eq!(g.get(0, 0).read(), 1);
        assert_eq!(g.get(1, 0).read(), 2);
        assert_eq!(g.get(0, 1).read(), 0);
        assert_eq!(g.get(7, 300).read(), 0);
    }

    #[test]
    fn concurrent_materialization_is_invisible() {
        let a = Arc::new(GrowableArray::new(|| FetchAdd::new(0)));
        let threads: Vec<_> = (0..4)
            .map(|_| {
                let a = Arc::clone(&a);
                std::thread::spawn(move || {
                    for i in 0..2000 {
                        a.get(i).fetch_add(1);
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        for i in 0..2000 {
            assert_eq!(a.get(i).fetch_add(0), 4);
        }
    }
}
