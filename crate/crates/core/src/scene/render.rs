//! Orthographic axis-aligned depth and feature renders.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{Category, SceneGraph, SceneObject};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewAxis {
    /// From the ceiling, looking along −z.
    Down,
    /// From the y = min wall, looking along +y.
    North,
    /// From the x = min wall, looking along +x.
    East,
    /// From the y = max wall, looking along −y.
    South,
    /// From the x = max wall, looking along −x.
    West,
    /// From the floor, looking along +z.
    Up,
}

/// Views are taken in this order; `n_views` selects a prefix.
pub const VIEW_ORDER: [ViewAxis; 6] =
    [ViewAxis::Down, ViewAxis::North, ViewAxis::East, ViewAxis::South, ViewAxis::West, ViewAxis::Up];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub axis: ViewAxis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewRender {
    pub view_id: usize,
    /// H x W x C: category one-hots, depth / far-plane, occupancy.
    pub features: Array3<f64>,
    /// H x W, meters from the camera plane.
    pub depth: Array2<f64>,
    pub camera: Camera,
}

struct ViewGeometry {
    dir: [f64; 3],
    plane_axis: usize,
    plane_coord: f64,
    u_axis: usize,
    v_axis: usize,
    far: f64,
}

impl ViewAxis {
    fn geometry(self, scene: &SceneGraph) -> ViewGeometry {
        let (lo, hi) = (scene.room.min, scene.room.max);
        let ext = scene.room.extent();
        let (dir, plane_axis, plane_coord, u_axis, v_axis) = match self {
            ViewAxis::Down => ([0.0, 0.0, -1.0], 2, hi[2], 0, 1),
            ViewAxis::Up => ([0.0, 0.0, 1.0], 2, lo[2], 0, 1),
            ViewAxis::North => ([0.0, 1.0, 0.0], 1, lo[1], 0, 2),
            ViewAxis::South => ([0.0, -1.0, 0.0], 1, hi[1], 0, 2),
            ViewAxis::East => ([1.0, 0.0, 0.0], 0, lo[0], 1, 2),
            ViewAxis::West => ([-1.0, 0.0, 0.0], 0, hi[0], 1, 2),
        };
        ViewGeometry { dir, plane_axis, plane_coord, u_axis, v_axis, far: ext[plane_axis] }
    }
}

/// Entry distance of a ray into an object's oriented box, if it hits.
pub(crate) fn ray_hit(origin: [f64; 3], dir: [f64; 3], obj: &SceneObject) -> Option<f64> {
    let (s, c) = obj.yaw.sin_cos();
    let rel = [origin[0] - obj.center[0], origin[1] - obj.center[1], origin[2] - obj.center[2]];
    // rotate into the object frame (by −yaw)
    let p = [c * rel[0] + s * rel[1], -s * rel[0] + c * rel[1], rel[2]];
    let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
    let mut tmin = f64::NEG_INFINITY;
    let mut tmax = f64::INFINITY;
    for a in 0..3 {
        let h = 0.5 * obj.size[a];
        if d[a].abs() < 1e-12 {
            if p[a].abs() > h {
                return None;
            }
        } else {
            let t1 = (-h - p[a]) / d[a];
            let t2 = (h - p[a]) / d[a];
            tmin = tmin.max(t1.min(t2));
            tmax = tmax.min(t1.max(t2));
        }
    }
    (tmax >= tmin.max(0.0)).then_some(tmin.max(0.0))
}

/// Renders `n_views` orthographic views (prefix of [`VIEW_ORDER`], cycling
/// if more are requested) on an `height x width` grid.
pub fn render_views(scene: &SceneGraph, n_views: usize, height: usize, width: usize) -> Vec<ViewRender> {
    (0..n_views).map(|v| render_view(scene, v, VIEW_ORDER[v % VIEW_ORDER.len()], height, width)).collect()
}

fn render_view(scene: &SceneGraph, view_id: usize, axis: ViewAxis, height: usize, width: usize) -> ViewRender {
    let g = axis.geometry(scene);
    let (lo, hi) = (scene.room.min, scene.room.max);
    let du = (hi[g.u_axis] - lo[g.u_axis]) / width as f64;
    let dv = (hi[g.v_axis] - lo[g.v_axis]) / height as f64;
    let channels = Category::COUNT + 2;
    let mut features = Array3::zeros((height, width, channels));
    let mut depth = Array2::from_elem((height, width), g.far);

    for r in 0..height {
        for c in 0..width {
            let mut origin = [0.0; 3];
            origin[g.plane_axis] = g.plane_coord;
            origin[g.u_axis] = lo[g.u_axis] + (c as f64 + 0.5) * du;
            // row 0 is the far end of the v axis (top of the image)
            origin[g.v_axis] = hi[g.v_axis] - (r as f64 + 0.5) * dv;
            let mut best: Option<(f64, Category)> = None;
            for obj in &scene.objects {
                if let Some(t) = ray_hit(origin, g.dir, obj) {
                    if best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, obj.category));
                    }
                }
            }
            if let Some((t, cat)) = best {
                let t = t.min(g.far);
                depth[[r, c]] = t;
                features[[r, c, cat.index()]] = 1.0;
                features[[r, c, channels - 1]] = 1.0;
            }
            features[[r, c, Category::COUNT]] = depth[[r, c]] / g.far;
        }
    }

    let mut position = scene.room.center();
    position[g.plane_axis] = g.plane_coord;
    ViewRender { view_id, features, depth, camera: Camera { position, axis } }
}
