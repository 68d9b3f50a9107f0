//! Unit-cube topology. Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.

pub const CORNER_OFFSETS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Corner pairs; edges 0-3 run along x, 4-7 along y, 8-11 along z.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [2, 3],
    [4, 5],
    [6, 7],
    [0, 2],
    [1, 3],
    [4, 6],
    [5, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Faces as corners in cyclic order.
pub const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 4, 5, 1], // y = 0
    [2, 6, 7, 3], // y = 1
    [0, 1, 3, 2], // z = 0
    [4, 5, 7, 6], // z = 1
];

/// Local edge joining corners `a` and `b`.
pub fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&[p, q]| (p == a && q == b) || (p == b && q == a))
        .expect("corners share an edge")
}

/// Local corner index of offset `(dx, dy, dz)`.
pub fn corner_at(d: [usize; 3]) -> usize {
    d[0] | (d[1] << 1) | (d[2] << 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_join_corners_differing_in_one_axis() {
        for (e, &[a, b]) in EDGES.iter().enumerate() {
            let diff = a ^ b;
            assert_eq!(diff.count_ones(), 1);
            assert_eq!(diff, 1 << (e / 4));
            assert!(a < b);
        }
    }

    #[test]
    fn face_cycles_walk_edges() {
        for f in FACES {
            let axis_bits: usize = f.iter().fold(0, |acc, &c| acc | (c ^ f[0]));
            assert_eq!(axis_bits.count_ones(), 2);
            for i in 0..4 {
                edge_between(f[i], f[(i + 1) % 4]);
            }
        }
    }

    #[test]
    fn corner_offsets_match_index() {
        for (c, d) in CORNER_OFFSETS.iter().enumerate() {
            assert_eq!(corner_at(*d), c);
        }
    }
}
