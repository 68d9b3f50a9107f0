//! Dual marching cubes with FlexiCubes-style weights and deformations.
//!
//! Every cell containing a sign change emits one dual vertex per surface
//! patch. Patches are the connected components of the cell's crossing edges,
//! joined through shared faces; a face with four crossings is resolved with
//! the asymptotic decider so neighbouring cells agree. Each interior crossing
//! edge then yields a quad over the four cells around it.

use std::collections::HashMap;

use super::grid::{weight_activation, weight_activation_grad, SdfGrid};
use super::tables::{corner_at, edge_between, CORNER_OFFSETS, EDGES, FACES};
use super::MeshResult;
use crate::error::Result;

pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Lattice vertices whose edge produced part of a dual vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVertexTrace {
    pub cell: [usize; 3],
    pub crossings: Vec<[usize; 2]>,
}

/// What each output vertex was built from, for back-propagation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractionTrace {
    pub vertices: Vec<DualVertexTrace>,
}

/// Gradients with respect to the grid's stored quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGrad {
    pub values: Vec<f64>,
    pub deformations: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl GridGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            deformations: vec![[0.0; 3]; n],
            weights: vec![0.0; n],
        }
    }
}

struct UnionFind([usize; 12]);

impl UnionFind {
    fn new() -> Self {
        Self(std::array::from_fn(|i| i))
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Groups the crossing edges of one cell into surface patches, each listed
/// in ascending edge order; patches are ordered by their first edge.
pub fn cell_patches(inside: &[f64; 8]) -> Vec<Vec<usize>> {
    let is_in = inside.map(|v| v > 0.0);
    let crossing: [bool; 12] = std::array::from_fn(|e| {
        let [a, b] = EDGES[e];
        is_in[a] != is_in[b]
    });
    let mut uf = UnionFind::new();
    for face in FACES {
        let ring: [usize; 4] = std::array::from_fn(|i| edge_between(face[i], face[(i + 1) % 4]));
        let hits: Vec<usize> = ring.iter().copied().filter(|&e| crossing[e]).collect();
        match hits.len() {
            2 => uf.union(hits[0], hits[1]),
            4 => {
                let f = face.map(|c| inside[c]);
                let saddle = (f[0] * f[2] - f[1] * f[3]) / (f[0] + f[2] - f[1] - f[3]);
                if (saddle > 0.0) == is_in[face[0]] {
                    // corners 0 and 2 connect across the face; cut around 1 and 3
                    uf.union(ring[0], ring[1]);
                    uf.union(ring[2], ring[3]);
                } else {
                    uf.union(ring[3], ring[0]);
                    uf.union(ring[1], ring[2]);
                }
            }
            _ => {}
        }
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for e in (0..12).filter(|&e| crossing[e]) {
        let r = uf.find(e);
        match groups.iter_mut().find(|(root, _)| *root == r) {
            Some((_, g)) => g.push(e),
            None => groups.push((r, vec![e])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Zero crossing on edge `a → b` with per-corner weights.
fn edge_crossing(sa: f64, sb: f64, aa: f64, ab: f64, xa: [f64; 3], xb: [f64; 3]) -> [f64; 3] {
    let (a, b) = (sa * aa, sb * ab);
    let d = a - b;
    std::array::from_fn(|k| (a * xb[k] - b * xa[k]) / d)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn triangle_area(v: &[[f64; 3]], t: [u32; 3]) -> f64 {
    let (a, b, c) = (v[t[0] as usize], v[t[1] as usize], v[t[2] as usize]);
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

pub fn extract_mesh(grid: &SdfGrid) -> Result<MeshResult> {
    Ok(extract_mesh_traced(grid)?.0)
}

pub fn extract_mesh_traced(grid: &SdfGrid) -> Result<(MeshResult, ExtractionTrace)> {
    let r = grid.res();
    let cells = r - 1;
    let cell_id = |c: [usize; 3]| (c[0] * cells + c[1]) * cells + c[2];
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut trace = ExtractionTrace::default();
    let mut edge_vertex: HashMap<usize, [u32; 12]> = HashMap::new();
    let mut gammas: HashMap<usize, f64> = HashMap::new();

    for ci in 0..cells {
        for cj in 0..cells {
            for ck in 0..cells {
                let corners: [usize; 8] = std::array::from_fn(|c| {
                    let o = CORNER_OFFSETS[c];
                    grid.index(ci + o[0], cj + o[1], ck + o[2])
                });
                let inside = corners.map(|v| grid.inside_value(v));
                let patches = cell_patches(&inside);
                if patches.is_empty() {
                    continue;
                }
                let w = grid.cell_weights(&corners);
                let mut slots = [u32::MAX; 12];
                for patch in patches {
                    let mut acc = [0.0; 3];
                    let mut wsum = 0.0;
                    let mut crossings = Vec::with_capacity(patch.len());
                    for &e in &patch {
                        let [la, lb] = EDGES[e];
                        let (va, vb) = (corners[la], corners[lb]);
                        let u = edge_crossing(
                            inside[la],
                            inside[lb],
                            w.alpha[la],
                            w.alpha[lb],
                            grid.position(va),
                            grid.position(vb),
                        );
                        for k in 0..3 {
                            acc[k] += w.beta[e] * u[k];
                        }
                        wsum += w.beta[e];
                        crossings.push([va, vb]);
                        slots[e] = vertices.len() as u32;
                    }
                    vertices.push(acc.map(|a| a / wsum));
                    trace.vertices.push(DualVertexTrace {
                        cell: [ci, cj, ck],
                        crossings,
                    });
                }
                let id = cell_id([ci, cj, ck]);
                edge_vertex.insert(id, slots);
                gammas.insert(id, w.gamma);
            }
        }
    }

    let mut faces: Vec<[u32; 3]> = Vec::new();
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let v = [i, j, k];
                let lo = grid.index(i, j, k);
                for axis in 0..3 {
                    if v[axis] + 1 >= r {
                        continue;
                    }
                    let mut hi_ijk = v;
                    hi_ijk[axis] += 1;
                    let hi = grid.index(hi_ijk[0], hi_ijk[1], hi_ijk[2]);
                    let lo_in = grid.inside_value(lo) > 0.0;
                    if lo_in == (grid.inside_value(hi) > 0.0) {
                        continue;
                    }
                    let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
                    let mut quad = [0u32; 4];
                    let mut qg = [0.0; 4];
                    let mut complete = true;
                    for (slot, (db, dc)) in [(0, 0), (1, 0), (1, 1), (0, 1)].into_iter().enumerate() {
                        if v[b] < db || v[c] < dc || v[b] - db >= cells || v[c] - dc >= cells {
                            complete = false;
                            break;
                        }
                        let mut cell = v;
                        cell[b] -= db;
                        cell[c] -= dc;
                        let mut o_lo = [0; 3];
                        o_lo[b] = db;
                        o_lo[c] = dc;
                        let mut o_hi = o_lo;
                        o_hi[axis] = 1;
                        let e = edge_between(corner_at(o_lo), corner_at(o_hi));
                        let id = cell_id(cell);
                        quad[slot] = edge_vertex[&id][e];
                        qg[slot] = gammas[&id];
                    }
                    if !complete {
                        continue;
                    }
                    if !lo_in {
                        quad.reverse();
                        qg.reverse();
                    }
                    let g02 = qg[0] * qg[2];
                    let g13 = qg[1] * qg[3];
                    let split02 = if g02 != g13 {
                        g02 > g13
                    } else {
                        let p = |s: usize| vertices[quad[s] as usize];
                        norm(sub(p(0), p(2))) <= norm(sub(p(1), p(3)))
                    };
                    let tris = if split02 {
                        [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]]
                    } else {
                        [[quad[0], quad[1], quad[3]], [quad[1], quad[2], quad[3]]]
                    };
                    for t in tris {
                        if triangle_area(&vertices, t) >= MIN_TRIANGLE_AREA {
                            faces.push(t);
                        }
                    }
                }
            }
        }
    }
    Ok((MeshResult::new(vertices, faces), trace))
}

/// Pulls gradients on output vertex positions back to grid values,
/// deformations and raw weights. Quad splitting is discrete and passes no
/// gradient.
pub fn extraction_backward(
    grid: &SdfGrid,
    trace: &ExtractionTrace,
    d_vertices: &[[f64; 3]],
) -> GridGrad {
    let n = grid.values().len();
    let mut g = GridGrad::zeros(n);
    let sign = grid.convention.sign();
    let raw = grid.weights();
    for (vt, dv) in trace.vertices.iter().zip(d_vertices) {
        if dv.iter().all(|&x| x == 0.0) {
            continue;
        }
        let edges: Vec<_> = vt
            .crossings
            .iter()
            .map(|&[a, b]| {
                let (sa, sb) = (grid.inside_value(a), grid.inside_value(b));
                let (aa, ab) = (weight_activation(raw[a]), weight_activation(raw[b]));
                let (xa, xb) = (grid.position(a), grid.position(b));
                let mid = 0.5 * (raw[a] + raw[b]);
                let u = edge_crossing(sa, sb, aa, ab, xa, xb);
                (a, b, sa, sb, aa, ab, xa, xb, mid, weight_activation(mid), u)
            })
            .collect();
        let wsum: f64 = edges.iter().map(|e| e.9).sum();
        let mut v = [0.0; 3];
        for e in &edges {
            for k in 0..3 {
                v[k] += e.9 * e.10[k] / wsum;
            }
        }
        for &(a, b, sa, sb, aa, ab, xa, xb, mid, beta, u) in &edges {
            let g_u = dv.map(|d| d * beta / wsum);
            let g_beta: f64 = (0..3).map(|k| dv[k] * (u[k] - v[k]) / wsum).sum();
            let (big_a, big_b) = (sa * aa, sb * ab);
            let d = big_a - big_b;
            let mut g_a = 0.0;
            let mut g_b = 0.0;
            for k in 0..3 {
                g_a += g_u[k] * big_b * (xa[k] - xb[k]) / (d * d);
                g_b += g_u[k] * big_a * (xb[k] - xa[k]) / (d * d);
                g.deformations[b][k] += g_u[k] * big_a / d;
                g.deformations[a][k] -= g_u[k] * big_b / d;
            }
            g.values[a] += sign * g_a * aa;
            g.values[b] += sign * g_b * ab;
            g.weights[a] += g_a * sa * weight_activation_grad(raw[a]);
            g.weights[b] += g_b * sb * weight_activation_grad(raw[b]);
            let gm = g_beta * weight_activation_grad(mid) * 0.5;
            g.weights[a] += gm;
            g.weights[b] += gm;
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SignConvention;

    #[test]
    fn single_corner_inside_gives_one_patch() {
        let mut v = [-1.0; 8];
        v[0] = 1.0;
        assert_eq!(cell_patches(&v), vec![vec![0, 4, 8]]);
    }

    #[test]
    fn opposite_corners_make_two_patches() {
        let mut v = [-1.0; 8];
        v[0] = 1.0;
        v[7] = 1.0;
        assert_eq!(cell_patches(&v).len(), 2);
    }

    #[test]
    fn ambiguous_face_resolved_by_saddle() {
        // z = 0 face: corners 0 and 3 inside, strongly enough to join.
        let mut v = [-0.1; 8];
        v[0] = 1.0;
        v[3] = 1.0;
        assert_eq!(cell_patches(&v).len(), 1);
        v[0] = 0.05;
        v[3] = 0.05;
        v[1] = -1.0;
        v[2] = -1.0;
        assert_eq!(cell_patches(&v).len(), 2);
    }

    #[test]
    fn crossing_is_linear_interpolation_when_neutral() {
        let u = edge_crossing(1.0, -3.0, 1.0, 1.0, [0.0; 3], [1.0, 0.0, 0.0]);
        assert!((u[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn one_signed_grid_is_empty() {
        let g = SdfGrid::from_fn(6, SignConvention::PositiveInside, |_| -1.0).unwrap();
        let m = extract_mesh(&g).unwrap();
        assert!(m.vertices().is_empty() && m.faces().is_empty());
        assert_eq!(m.stats().volume, 0.0);
    }
}
