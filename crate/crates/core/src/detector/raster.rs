use crate::detector::GridSpec;
use crate::nnkit::{Grid, Scalar};
use crate::scenegen::PointScene;

/// Single-channel occupancy raster: `ln(1 + points in cell)`; points outside
/// the extent are ignored.
pub fn rasterize_bev<S: Scalar>(scene: &PointScene, spec: &GridSpec) -> Grid<S> {
    let mut counts = vec![0u32; spec.num_cells()];
    for p in &scene.points {
        if let Some((ix, iy)) = spec.cell_of(p.x, p.y) {
            counts[spec.flat(ix, iy)] += 1;
        }
    }
    Grid {
        channels: 1,
        height: spec.cells_y,
        width: spec.cells_x,
        values: counts.into_iter().map(|c| S::lit(f64::from(c).ln_1p())).collect(),
    }
}
