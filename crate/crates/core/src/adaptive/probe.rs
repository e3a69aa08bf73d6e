//! Debug-build recorder of the largest matrix shape touched by the
//! observation-space cost, used to assert that no `n`-sized object appears.

#[cfg(debug_assertions)]
mod imp {
    use std::cell::Cell;

    thread_local! {
        static MAX_SHAPE: Cell<(usize, usize)> = const { Cell::new((0, 0)) };
    }

    pub fn record(rows: usize, cols: usize) {
        MAX_SHAPE.with(|m| {
            let (r, c) = m.get();
            // keep the shape whose smaller side is largest
            if rows.min(cols) > r.min(c) || (rows.min(cols) == r.min(c) && rows.max(cols) > r.max(c)) {
                m.set((rows, cols));
            }
        });
    }

    pub fn reset() {
        MAX_SHAPE.with(|m| m.set((0, 0)));
    }

    pub fn max_shape() -> (usize, usize) {
        MAX_SHAPE.with(|m| m.get())
    }
}

#[cfg(not(debug_assertions))]
mod imp {
    #[inline(always)]
    pub fn record(_rows: usize, _cols: usize) {}

    pub fn reset() {}

    pub fn max_shape() -> (usize, usize) {
        (0, 0)
    }
}

pub use imp::{max_shape, reset};
pub(crate) use imp::record;

/// True when shape tracking is compiled in.
pub const ENABLED: bool = cfg!(debug_assertions);
