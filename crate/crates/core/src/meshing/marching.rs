use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::Vector3;

use super::{TriMesh, TsdfVolume};

/// Corner `c` of a cube sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner_offset(c: usize) -> Vector3<f64> {
    Vector3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

/// The twelve cube edges as corner pairs, ordered by axis.
pub const EDGES: [(usize, usize); 12] = {
    let mut e = [(0, 0); 12];
    let mut n = 0;
    let mut axis = 0;
    while axis < 3 {
        let bit = 1 << axis;
        let mut c = 0;
        while c < 8 {
            if c & bit == 0 {
                e[n] = (c, c | bit);
                n += 1;
            }
            c += 1;
        }
        axis += 1;
    }
    e
};

fn edge_between(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == key).expect("corners share an edge")
}

/// Triangles (as cube-edge triples) for each of the 256 inside/outside
/// corner configurations; bit `c` set means corner `c` is negative.
pub type CaseTable = [Vec<[u8; 3]>; 256];

/// Builds the triangulation of one configuration: iso-segments are traced on
/// each face (ambiguous faces separate their negative corners, a rule that
/// depends only on the face so neighbouring cubes agree), chained into closed
/// loops, oriented against the field gradient and fanned into triangles.
fn triangulate_case(case: usize) -> Vec<[u8; 3]> {
    let neg = |c: usize| case >> c & 1 == 1;
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); 12];
    for axis in 0..3 {
        let (b1, b2) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let q: Vec<usize> = [(0, 0), (1, 0), (1, 1), (0, 1)]
                .iter()
                .map(|&(u, v)| side << axis | u << b1 | v << b2)
                .collect();
            let crossing: Vec<Option<usize>> = (0..4)
                .map(|k| (neg(q[k]) != neg(q[(k + 1) % 4])).then(|| edge_between(q[k], q[(k + 1) % 4])))
                .collect();
            let found: Vec<usize> = crossing.iter().flatten().copied().collect();
            let mut link = |a: usize, b: usize| {
                links[a].push(b);
                links[b].push(a);
            };
            match found.len() {
                0 => {}
                2 => link(found[0], found[1]),
                4 => {
                    for k in 0..4 {
                        if neg(q[k]) {
                            let before = crossing[(k + 3) % 4].expect("alternating face");
                            let after = crossing[k].expect("alternating face");
                            link(before, after);
                        }
                    }
                }
                _ => unreachable!("a face has an even number of sign changes"),
            }
        }
    }
    let mid = |e: usize| (corner_offset(EDGES[e].0) + corner_offset(EDGES[e].1)) * 0.5;
    let value = |c: usize| if neg(c) { -1.0 } else { 1.0 };
    let gradient = |p: &Vector3<f64>| {
        let mut g = Vector3::zeros();
        for c in 0..8 {
            let o = corner_offset(c);
            let f = |a: usize| if o[a] == 1.0 { p[a] } else { 1.0 - p[a] };
            let s = |a: usize| if o[a] == 1.0 { 1.0 } else { -1.0 };
            g += Vector3::new(s(0) * f(1) * f(2), f(0) * s(1) * f(2), f(0) * f(1) * s(2)) * value(c);
        }
        g
    };
    let mut tris = Vec::new();
    let mut used = [false; 12];
    for start in 0..12 {
        if used[start] || links[start].is_empty() {
            continue;
        }
        let mut lp = vec![start];
        used[start] = true;
        let mut prev = start;
        let mut cur = links[start][0];
        while cur != start {
            lp.push(cur);
            used[cur] = true;
            let next = if links[cur][0] == prev { links[cur][1] } else { links[cur][0] };
            prev = cur;
            cur = next;
        }
        let pts: Vec<Vector3<f64>> = lp.iter().map(|&e| mid(e)).collect();
        let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
        let mut area = Vector3::zeros();
        for k in 0..pts.len() {
            area += (pts[k] - centroid).cross(&(pts[(k + 1) % pts.len()] - centroid));
        }
        if area.dot(&gradient(&centroid)) < 0.0 {
            lp.reverse();
        }
        for k in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[k] as u8, lp[k + 1] as u8]);
        }
    }
    tris
}

/// The configuration table, generated on first use.
pub fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(triangulate_case))
}

/// Triangulates the zero level set over cubes whose eight samples all carry
/// weight. Vertices are placed by linear interpolation along cube edges and
/// shared between neighbouring cubes.
pub fn extract_mesh(volume: &TsdfVolume) -> TriMesh {
    let mut mesh = TriMesh::default();
    if volume.observed_count() == 0 {
        log::warn!("mesh extraction on a volume with no observed voxels");
        return mesh;
    }
    let table = case_table();
    let [nx, ny, nz] = volume.dims;
    let mut vertex_of: HashMap<(usize, usize), u32> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let idx: [usize; 8] =
                    std::array::from_fn(|c| volume.index(i + (c & 1), j + (c >> 1 & 1), k + (c >> 2 & 1)));
                if idx.iter().any(|&v| volume.weight[v] <= 0.0) {
                    continue;
                }
                let mut case = 0;
                for (c, &v) in idx.iter().enumerate() {
                    if volume.sdf[v] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for tri in &table[case] {
                    let ids = tri.map(|e| {
                        let (a, b) = EDGES[e as usize];
                        let key = (idx[a], e as usize / 4);
                        *vertex_of.entry(key).or_insert_with(|| {
                            let (va, vb) = (volume.sdf[idx[a]], volume.sdf[idx[b]]);
                            let t = va / (va - vb);
                            let pa = volume.point(i + (a & 1), j + (a >> 1 & 1), k + (a >> 2 & 1));
                            let pb = volume.point(i + (b & 1), j + (b >> 1 & 1), k + (b >> 2 & 1));
                            mesh.vertices.push(pa + (pb - pa) * t);
                            (mesh.vertices.len() - 1) as u32
                        })
                    });
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    mesh
}
