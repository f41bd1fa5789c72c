//! TSDF fusion of depth maps and zero-level-set extraction.

mod marching;
mod tsdf;

pub use marching::{case_table, extract_mesh, CaseTable};
pub use tsdf::{TsdfError, TsdfVolume, DEFAULT_PADDING, DEFAULT_RESOLUTION, TRUNCATION_VOXELS};

use nalgebra::Vector3;

/// Indexed triangle mesh; triangles are wound counter-clockwise seen from
/// the positive (outside) side of the level set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Unnormalized normal (twice the area) of triangle `t`.
    pub fn triangle_normal(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        (b - a).cross(&(c - a))
    }

    /// Number of triangle edges used by exactly one triangle.
    pub fn boundary_edge_count(&self) -> usize {
        let mut edges = std::collections::HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        edges.values().filter(|&&n| n == 1).count()
    }
}

/// Renders every view, fuses the depth of pixels whose accumulated alpha
/// exceeds `acc_threshold`, and extracts the zero level set. The grid spans
/// the Gaussian centers padded by `padding` of their extent.
pub fn mesh_gaussians(
    gaussians: &[crate::scene::Gaussian3D],
    views: &[crate::scene::CameraView],
    render: &crate::render::RenderConfig,
    resolution: usize,
    padding: f64,
    acc_threshold: f64,
) -> Result<TriMesh, TsdfError> {
    let Some(first) = gaussians.first() else {
        return Err(TsdfError::InvalidGrid("scene has no gaussians".into()));
    };
    let (lo, hi) = gaussians
        .iter()
        .fold((first.center, first.center), |(lo, hi), g| (lo.inf(&g.center), hi.sup(&g.center)));
    let mut volume = TsdfVolume::for_bounds(lo, hi, resolution, padding)?;
    for view in views {
        let buffers = crate::render::render_gaussians(gaussians, view, render, false);
        let mask = buffers.acc_alpha.map(|a| *a > acc_threshold);
        volume.integrate(&buffers.depth, view, Some(&mask));
    }
    Ok(extract_mesh(&volume))
}
