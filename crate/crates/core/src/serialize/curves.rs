//! Space-filling curve keys over a quantized bounding box.

use crate::pointcloud::Point3;

const BOX_PAD: f64 = 1e-9;

/// Per-axis cell coordinates in `[0, 2^bits)` over the padded bounding box.
pub fn quantize(points: &[Point3], bits: u32) -> Vec<[u32; 3]> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let cells = (1u64 << bits) as f64;
    let max_cell = (1u32 << bits) - 1;
    points
        .iter()
        .map(|p| {
            let mut q = [0u32; 3];
            for axis in 0..3 {
                let a = lo[axis] - BOX_PAD;
                let b = hi[axis] + BOX_PAD;
                let t = ((p[axis] - a) / (b - a) * cells).floor();
                q[axis] = (t.max(0.0) as u32).min(max_cell);
            }
            q
        })
        .collect()
}

/// Interleaves `bits` bits per axis, x most significant within each triple.
pub fn morton_code(cell: [u32; 3], bits: u32) -> u64 {
    let mut code = 0u64;
    for b in (0..bits).rev() {
        for &c in &cell {
            code = (code << 1) | u64::from((c >> b) & 1);
        }
    }
    code
}

/// 3D Hilbert index via Skilling's axes-to-transpose transform.
pub fn hilbert_index(cell: [u32; 3], bits: u32) -> u64 {
    let mut x = cell;
    let n = x.len();
    let m = 1u32 << (bits - 1);

    // Inverse undo excess work
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }

    // Gray encode
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    let mut q = m;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xi in &mut x {
        *xi ^= t;
    }

    // The transposed form is read out bit-plane by bit-plane.
    morton_code(x, bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bit-by-bit interleave written independently of `morton_code`.
    fn morton_oracle(cell: [u32; 3], bits: u32) -> u64 {
        let mut code = 0u64;
        for b in 0..bits {
            code |= u64::from((cell[2] >> b) & 1) << (3 * b);
            code |= u64::from((cell[1] >> b) & 1) << (3 * b + 1);
            code |= u64::from((cell[0] >> b) & 1) << (3 * b + 2);
        }
        code
    }

    #[test]
    fn morton_matches_oracle() {
        for bits in [1, 2, 4, 10] {
            let max = 1u32 << bits;
            for x in (0..max).step_by((max as usize / 8).max(1)) {
                for y in (0..max).step_by((max as usize / 7).max(1)) {
                    for z in (0..max).step_by((max as usize / 5).max(1)) {
                        assert_eq!(morton_code([x, y, z], bits), morton_oracle([x, y, z], bits));
                    }
                }
            }
        }
    }

    #[test]
    fn corner_morton_codes() {
        for c in 0..8u32 {
            let cell = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
            assert_eq!(morton_code(cell, 1), u64::from(c));
        }
    }

    fn walk(bits: u32) -> Vec<[u32; 3]> {
        let side = 1u32 << bits;
        let mut cells = Vec::new();
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    cells.push([x, y, z]);
                }
            }
        }
        let mut keyed: Vec<(u64, [u32; 3])> = cells.iter().map(|&c| (hilbert_index(c, bits), c)).collect();
        keyed.sort();
        for (i, (k, _)) in keyed.iter().enumerate() {
            assert_eq!(*k, i as u64, "hilbert index is not a bijection");
        }
        keyed.into_iter().map(|(_, c)| c).collect()
    }

    #[test]
    fn first_order_curve_visits_corners_in_gray_order() {
        // Hand-unrolled from the transpose: x = a, y = a^b, z = b^c for index bits abc.
        let expected = [
            [0, 0, 0],
            [0, 0, 1],
            [0, 1, 1],
            [0, 1, 0],
            [1, 1, 0],
            [1, 1, 1],
            [1, 0, 1],
            [1, 0, 0],
        ];
        assert_eq!(walk(1), expected.to_vec());
    }

    #[test]
    fn adjacent_ranks_are_face_neighbors() {
        for bits in [2, 3] {
            let cells = walk(bits);
            for w in cells.windows(2) {
                let d: u32 = (0..3).map(|a| w[0][a].abs_diff(w[1][a])).sum();
                assert_eq!(d, 1, "{:?} -> {:?}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn quantize_stays_in_range() {
        let pts = vec![Point3::new(-1.0, 0.0, 3.0), Point3::new(1.0, 2.0, 3.0), Point3::new(0.0, 1.0, 3.0)];
        let q = quantize(&pts, 4);
        // A flat axis lands in the middle cell of its padded extent.
        assert_eq!(q[0], [0, 0, 8]);
        assert_eq!(q[1], [15, 15, 8]);
        assert!((7..=8).contains(&q[2][0]) && (7..=8).contains(&q[2][1]));
    }
}
