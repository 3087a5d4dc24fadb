//! Geometric nested dissection for row-major lattices.

/// Fill-reducing ordering (`perm[new] = old`) for a lattice whose stencil
/// reaches `reach` cells along an axis. Separators are `reach` cells wide so
/// the two halves are disconnected once the separator is removed.
pub fn lattice_nested_dissection(n1: usize, n2: usize, reach: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n1 * n2);
    dissect(0, n1, 0, n2, n2, reach.max(1), &mut out);
    debug_assert_eq!(out.len(), n1 * n2);
    out
}

const LEAF_CELLS: usize = 64;

fn dissect(
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    stride: usize,
    sep: usize,
    out: &mut Vec<usize>,
) {
    let (h, w) = (r1 - r0, c1 - c0);
    if h == 0 || w == 0 {
        return;
    }
    if h * w <= LEAF_CELLS || (h <= 2 * sep + 1 && w <= 2 * sep + 1) {
        for r in r0..r1 {
            out.extend((c0..c1).map(|c| r * stride + c));
        }
        return;
    }
    if w >= h {
        let mid = c0 + (w - sep) / 2;
        dissect(r0, r1, c0, mid, stride, sep, out);
        dissect(r0, r1, mid + sep, c1, stride, sep, out);
        for r in r0..r1 {
            out.extend((mid..mid + sep).map(|c| r * stride + c));
        }
    } else {
        let mid = r0 + (h - sep) / 2;
        dissect(r0, mid, c0, c1, stride, sep, out);
        dissect(mid + sep, r1, c0, c1, stride, sep, out);
        for r in mid..mid + sep {
            out.extend((c0..c1).map(|c| r * stride + c));
        }
    }
}
