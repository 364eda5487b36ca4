//! Voronoi adjacency for point sites via an incremental Delaunay
//! triangulation (two sites are Voronoi neighbours exactly when they share a
//! Delaunay edge).
//!
//! Predicates are exact (adaptive arithmetic). Cocircular configurations are
//! resolved by symbolic perturbation of the lifted heights `x² + y²`, the
//! lexicographically smallest point receiving the dominant perturbation, so
//! degenerate inputs always produce the same triangulation.

use std::collections::HashSet;

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};

const INF: usize = usize::MAX;

fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

struct Triangulator<'a> {
    pts: &'a [[f64; 2]],
    rank: Vec<usize>,
}

impl Triangulator<'_> {
    fn orient(&self, a: usize, b: usize, c: usize) -> f64 {
        orient2d(coord(self.pts[a]), coord(self.pts[b]), coord(self.pts[c]))
    }

    /// Is `p` strictly inside the circumcircle of the CCW triangle `(a, b, c)`
    /// after perturbation?
    fn in_circle(&self, a: usize, b: usize, c: usize, p: usize) -> bool {
        let det = incircle(coord(self.pts[a]), coord(self.pts[b]), coord(self.pts[c]), coord(self.pts[p]));
        if det != 0.0 {
            return det > 0.0;
        }
        // d(det)/d(z_i) for each lifted height, by cofactor expansion.
        let mut terms = [
            (self.rank[a], self.orient(b, c, p)),
            (self.rank[b], -self.orient(a, c, p)),
            (self.rank[c], self.orient(a, b, p)),
            (self.rank[p], -self.orient(a, b, c)),
        ];
        terms.sort_by_key(|t| t.0);
        terms.iter().find(|t| t.1 != 0.0).map_or(false, |t| t.1 > 0.0)
    }

    fn conflicts(&self, t: &[usize; 3], p: usize) -> bool {
        if t[2] == INF {
            // Ghost triangle over hull edge t0 -> t1; the outside is on the left.
            let (u, v) = (t[0], t[1]);
            let o = self.orient(u, v, p);
            if o != 0.0 {
                return o > 0.0;
            }
            let (pu, pv, pp) = (self.pts[u], self.pts[v], self.pts[p]);
            let dot1 = (pp[0] - pu[0]) * (pv[0] - pu[0]) + (pp[1] - pu[1]) * (pv[1] - pu[1]);
            let dot2 = (pp[0] - pv[0]) * (pu[0] - pv[0]) + (pp[1] - pv[1]) * (pu[1] - pv[1]);
            dot1 > 0.0 && dot2 > 0.0
        } else {
            self.in_circle(t[0], t[1], t[2], p)
        }
    }
}

fn normalise(t: [usize; 3]) -> [usize; 3] {
    match t {
        [INF, a, b] => [a, b, INF],
        [a, INF, b] => [b, a, INF],
        t => t,
    }
}

/// Adjacent site pairs `(k, k')`, `k < k'`, whose Voronoi cells share an edge.
pub fn voronoi_adjacency(points: &[[f64; 2]]) -> Result<Vec<(usize, usize)>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidInput("Voronoi adjacency needs at least two sites".into()));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidInput("non-finite site coordinates".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a][0].total_cmp(&points[b][0]).then(points[a][1].total_cmp(&points[b][1]))
    });
    for w in order.windows(2) {
        if points[w[0]] == points[w[1]] {
            return Err(Error::InvalidInput(format!("duplicate site locations {} and {}", w[0] + 1, w[1] + 1)));
        }
    }
    let mut rank = vec![0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let tri = Triangulator { pts: points, rank };

    let (a, b) = (order[0], order[1]);
    let Some(ci) = order.iter().position(|&c| tri.orient(a, b, c) != 0.0) else {
        // All collinear: the cells are slabs and neighbours are consecutive.
        let mut edges: Vec<_> = order.windows(2).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).collect();
        edges.sort_unstable();
        return Ok(edges);
    };
    let c = order[ci];
    let (b, c) = if tri.orient(a, b, c) > 0.0 { (b, c) } else { (c, b) };
    let mut tris: Vec<[usize; 3]> = vec![[a, b, c], [b, a, INF], [c, b, INF], [a, c, INF]];

    for &p in order.iter().filter(|&&p| p != a && p != b && p != c) {
        let mut cavity = Vec::new();
        let mut i = 0;
        while i < tris.len() {
            if tri.conflicts(&tris[i], p) {
                cavity.push(tris.swap_remove(i));
            } else {
                i += 1;
            }
        }
        let edges: HashSet<(usize, usize)> =
            cavity.iter().flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]).collect();
        for &(u, v) in &edges {
            if !edges.contains(&(v, u)) {
                tris.push(normalise([u, v, p]));
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = tris
        .iter()
        .filter(|t| t[2] != INF)
        .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
        .map(|(u, v)| (u.min(v), u.max(v)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force oracle: edges of every triangle whose circumcircle is empty.
    fn brute_force(points: &[[f64; 2]]) -> Vec<(usize, usize)> {
        let n = points.len();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let o = orient2d(coord(points[i]), coord(points[j]), coord(points[k]));
                    if o == 0.0 {
                        continue;
                    }
                    let (a, b, c) = if o > 0.0 { (i, j, k) } else { (i, k, j) };
                    let empty = (0..n).filter(|&m| m != i && m != j && m != k).all(|m| {
                        incircle(coord(points[a]), coord(points[b]), coord(points[c]), coord(points[m])) <= 0.0
                    });
                    if empty {
                        pairs.extend([(i, j), (i, k), (j, k)]);
                    }
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    #[test]
    fn triangle_all_adjacent() {
        let adj = voronoi_adjacency(&[[0.0, 0.0], [1.0, 0.0], [0.3, 0.8]]).unwrap();
        assert_eq!(adj, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn unit_square_gets_one_diagonal() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let adj = voronoi_adjacency(&pts).unwrap();
        for side in [(0, 1), (1, 2), (2, 3), (0, 3)] {
            assert!(adj.contains(&side));
        }
        let diagonals = [(0, 2), (1, 3)].iter().filter(|d| adj.contains(d)).count();
        assert_eq!(diagonals, 1);
        assert_eq!(adj.len(), 5);
        // Deterministic under input permutation.
        let perm = [pts[2], pts[0], pts[3], pts[1]];
        let adj2 = voronoi_adjacency(&perm).unwrap();
        let back = [2, 0, 3, 1];
        let mut mapped: Vec<(usize, usize)> =
            adj2.iter().map(|&(a, b)| (back[a].min(back[b]), back[a].max(back[b]))).collect();
        mapped.sort_unstable();
        assert_eq!(mapped, adj);
    }

    #[test]
    fn collinear_points_chain() {
        let pts = [[3.0, 3.0], [0.0, 0.0], [2.0, 2.0], [1.0, 1.0]];
        assert_eq!(voronoi_adjacency(&pts).unwrap(), vec![(0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn integer_grid_is_valid_triangulation() {
        let pts: Vec<[f64; 2]> = (0..5).flat_map(|i| (0..5).map(move |j| [i as f64, j as f64])).collect();
        let adj = voronoi_adjacency(&pts).unwrap();
        // 25 grid points: 40 axis edges plus one diagonal per unit square.
        assert_eq!(adj.len(), 40 + 16);
    }

    #[test]
    fn rejects_duplicates() {
        assert!(voronoi_adjacency(&[[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]).is_err());
        assert!(voronoi_adjacency(&[[0.0, 0.0]]).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(pts in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3..30)) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let adj = voronoi_adjacency(&pts).unwrap();
            prop_assert_eq!(&adj, &brute_force(&pts));
            prop_assert!(adj.len() <= 3 * pts.len() - 6);
        }
    }
}
