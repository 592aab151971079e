//! One-bounce synthetic scenes with exact layer ground truth.
//!
//! Surfaces are axis-aligned rectangles. Direct light comes from a white area
//! light, indirect light from exactly one diffuse bounce off the surfaces,
//! computed with analytic point-to-polygon form factors between a receiver
//! point and 16×16 patches per surface. Layers are stored on per-surface texel
//! grids and looked up bilinearly, so every rendered pixel satisfies
//! `I = R ⊙ Σ_k b_k T_k` exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Frame, Rgb};
use crate::palette::ClusterMap;
use crate::par;

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: V3) -> V3 {
    scale(a, 1.0 / norm(a))
}

/// Axis-aligned rectangle on the plane `coord[axis] = position`, spanning
/// `min..max` over the two remaining axes (in increasing axis order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub axis: usize,
    pub position: f64,
    /// `+1` or `-1`: the side the rectangle faces.
    pub facing: f64,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    fn other_axes(&self) -> (usize, usize) {
        match self.axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    pub fn normal(&self) -> V3 {
        let mut n = [0.0; 3];
        n[self.axis] = self.facing;
        n
    }

    /// World point at local coordinates `(u, v)` in `[0, 1]²`.
    pub fn point(&self, u: f64, v: f64) -> V3 {
        let (a, b) = self.other_axes();
        let mut p = [0.0; 3];
        p[self.axis] = self.position;
        p[a] = self.min[0] + u * (self.max[0] - self.min[0]);
        p[b] = self.min[1] + v * (self.max[1] - self.min[1]);
        p
    }

    /// Local coordinates of a world point on the plane.
    fn local(&self, p: V3) -> (f64, f64) {
        let (a, b) = self.other_axes();
        (
            (p[a] - self.min[0]) / (self.max[0] - self.min[0]),
            (p[b] - self.min[1]) / (self.max[1] - self.min[1]),
        )
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    /// Sub-rectangle `[u0, u1] × [v0, v1]` in local coordinates.
    fn sub_rect(&self, u0: f64, u1: f64, v0: f64, v1: f64) -> Rect {
        let w = self.max[0] - self.min[0];
        let h = self.max[1] - self.min[1];
        Rect {
            min: [self.min[0] + u0 * w, self.min[1] + v0 * h],
            max: [self.min[0] + u1 * w, self.min[1] + v1 * h],
            ..self.clone()
        }
    }

    fn corners(&self) -> [V3; 4] {
        [self.point(0.0, 0.0), self.point(1.0, 0.0), self.point(1.0, 1.0), self.point(0.0, 1.0)]
    }

    /// Ray parameter of the hit with `origin + t dir`, if inside the rectangle.
    fn intersect(&self, origin: V3, dir: V3) -> Option<f64> {
        let d = dir[self.axis];
        if d.abs() < 1e-15 {
            return None;
        }
        let t = (self.position - origin[self.axis]) / d;
        let p = add(origin, scale(dir, t));
        let (a, b) = self.other_axes();
        let inside = p[a] >= self.min[0] && p[a] <= self.max[0] && p[b] >= self.min[1] && p[b] <= self.max[1];
        inside.then_some(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub name: String,
    pub rect: Rect,
    /// Index into the scene palette.
    pub color: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaLight {
    pub rect: Rect,
    /// Radiosity of the white emitter.
    pub intensity: f64,
}

/// Orthographic camera. Frame `t` is shifted by `t * shift_px` pixels along
/// the image x axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub direction: V3,
    /// World point seen by the image center of frame 0.
    pub target: V3,
    pub pixel_size: f64,
    pub shift_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Base colors; every surface references one of them.
    pub palette: Vec<Rgb>,
    pub surfaces: Vec<Surface>,
    pub light: AreaLight,
    pub camera: Camera,
    /// Radiosity patches per surface side.
    #[serde(default = "default_patches")]
    pub patches: usize,
    /// Texels per surface side for the stored layers.
    #[serde(default = "default_texels")]
    pub texels: usize,
}

fn default_patches() -> usize {
    16
}

fn default_texels() -> usize {
    16
}

/// Five visible faces of an axis-aligned box resting on the floor.
pub fn box_surfaces(name: &str, min: V3, max: V3, color: usize) -> Vec<Surface> {
    let face = |suffix: &str, axis: usize, position: f64, facing: f64| {
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        Surface {
            name: format!("{name}-{suffix}"),
            rect: Rect {
                axis,
                position,
                facing,
                min: [min[a], min[b]],
                max: [max[a], max[b]],
            },
            color,
        }
    };
    vec![
        face("top", 1, max[1], 1.0),
        face("left", 0, min[0], -1.0),
        face("right", 0, max[0], 1.0),
        face("front", 2, min[2], -1.0),
        face("back", 2, max[2], 1.0),
    ]
}

impl SyntheticScene {
    /// Box room with a red left wall, white floor and back wall, a green and a
    /// blue box, and a ceiling area light. 128×128, 30 frames, 2 px/frame.
    pub fn default_room() -> Self {
        let palette = vec![[0.8, 0.8, 0.8], [0.85, 0.2, 0.15], [0.2, 0.75, 0.25], [0.2, 0.3, 0.85]];
        let mut surfaces = vec![
            Surface {
                name: "floor".into(),
                rect: Rect {
                    axis: 1,
                    position: 0.0,
                    facing: 1.0,
                    min: [0.0, 0.0],
                    max: [6.0, 4.0],
                },
                color: 0,
            },
            Surface {
                name: "back-wall".into(),
                rect: Rect {
                    axis: 2,
                    position: 4.0,
                    facing: -1.0,
                    min: [0.0, 0.0],
                    max: [6.0, 3.6],
                },
                color: 0,
            },
            Surface {
                name: "left-wall".into(),
                rect: Rect {
                    axis: 0,
                    position: 0.0,
                    facing: 1.0,
                    min: [0.0, 0.0],
                    max: [3.6, 4.0],
                },
                color: 1,
            },
        ];
        surfaces.extend(box_surfaces("green-box", [0.9, 0.0, 1.6], [2.0, 1.1, 2.7], 2));
        surfaces.extend(box_surfaces("blue-box", [2.4, 0.0, 2.0], [3.3, 0.9, 2.9], 3));
        SyntheticScene {
            width: 128,
            height: 128,
            frames: 30,
            palette,
            surfaces,
            light: AreaLight {
                rect: Rect {
                    axis: 1,
                    position: 3.6,
                    facing: -1.0,
                    min: [1.5, 1.0],
                    max: [3.0, 2.5],
                },
                intensity: 11.0,
            },
            camera: Camera {
                direction: [-0.8, -0.9, 1.0],
                target: [1.2, 1.0, 2.5],
                pixel_size: 0.024,
                shift_px: 2.0,
            },
            patches: 16,
            texels: 16,
        }
    }

    /// Just a white floor under the light.
    pub fn floor_only() -> Self {
        let mut s = Self::default_room();
        s.surfaces.truncate(1);
        s.palette.truncate(1);
        s.frames = 1;
        s.camera.direction = [0.0, -1.0, 0.2];
        s.camera.target = [3.0, 0.0, 2.0];
        s.camera.pixel_size = 0.02;
        s.width = 64;
        s.height = 64;
        s
    }

    pub fn k(&self) -> usize {
        self.palette.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 || self.frames == 0 {
            return Err(Error::Scene("resolution must be at least 8x8 with one frame".into()));
        }
        if self.patches == 0 || self.texels < 2 {
            return Err(Error::Scene("patches >= 1 and texels >= 2 required".into()));
        }
        for s in self.surfaces.iter().chain(std::iter::once(&Surface {
            name: "light".into(),
            rect: self.light.rect.clone(),
            color: 0,
        })) {
            let r = &s.rect;
            if r.axis > 2 || r.facing.abs() != 1.0 || !(r.area() > 0.0) {
                return Err(Error::Scene(format!("surface {} is degenerate", s.name)));
            }
            if s.color >= self.palette.len().max(1) {
                return Err(Error::Scene(format!("surface {} references a missing color", s.name)));
            }
        }
        if self
            .palette
            .iter()
            .flatten()
            .any(|v| !(*v > 0.0 && *v <= 1.0))
        {
            return Err(Error::Scene("palette colors must lie in (0, 1]".into()));
        }
        if norm(self.camera.direction) == 0.0 || !(self.camera.pixel_size > 0.0) {
            return Err(Error::Scene("camera direction and pixel size must be nonzero".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: SyntheticScene = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

/// Form factor from a differential receiver at `p` with normal `n` to a
/// polygon, by Lambert's contour integral. The polygon is clipped to the
/// receiver's upper half-space first.
pub fn point_polygon_form_factor(p: V3, n: V3, polygon: &[V3]) -> f64 {
    let clipped = clip_to_halfspace(p, n, polygon);
    if clipped.len() < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..clipped.len() {
        let a = normalize(sub(clipped[i], p));
        let b = normalize(sub(clipped[(i + 1) % clipped.len()], p));
        let c = cross(a, b);
        let cn = norm(c);
        if cn < 1e-15 {
            continue;
        }
        let gamma = dot(a, b).clamp(-1.0, 1.0).acos();
        sum += gamma * dot(scale(c, 1.0 / cn), n);
    }
    (sum / (2.0 * std::f64::consts::PI)).abs()
}

fn clip_to_halfspace(p: V3, n: V3, polygon: &[V3]) -> Vec<V3> {
    const EPS: f64 = 1e-9;
    let side = |q: V3| dot(sub(q, p), n) - EPS;
    let mut out = Vec::with_capacity(polygon.len() + 2);
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa >= 0.0) != (sb >= 0.0) {
            let t = sa / (sa - sb);
            out.push(add(a, scale(sub(b, a), t)));
        }
    }
    out
}

/// Stored layers of one surface: `texels × texels` grid per layer.
#[derive(Debug, Clone)]
struct SurfaceLayers {
    /// `layers[l][v * texels + u]`, `l` in `0..=K`.
    layers: Vec<Vec<f64>>,
}

/// Precomputed light transport of a scene; camera independent.
#[derive(Debug, Clone)]
pub struct SceneLighting {
    surfaces: Vec<SurfaceLayers>,
    texels: usize,
}

struct Occluders<'a> {
    rects: Vec<&'a Rect>,
}

impl Occluders<'_> {
    fn visible(&self, p: V3, q: V3) -> bool {
        let d = sub(q, p);
        for r in &self.rects {
            if let Some(t) = r.intersect(p, d) {
                if t > 1e-6 && t < 1.0 - 1e-6 {
                    return false;
                }
            }
        }
        true
    }
}

impl SceneLighting {
    pub fn compute(scene: &SyntheticScene) -> Result<Self> {
        scene.validate()?;
        let k = scene.k();
        let occ = Occluders {
            rects: scene.surfaces.iter().map(|s| &s.rect).collect(),
        };
        let texels = scene.texels;
        let np = scene.patches;
        let light_split = 4;
        let light_parts: Vec<Rect> = (0..light_split * light_split)
            .map(|i| {
                let (u, v) = ((i % light_split) as f64, (i / light_split) as f64);
                let s = light_split as f64;
                scene.light.rect.sub_rect(u / s, (u + 1.0) / s, v / s, (v + 1.0) / s)
            })
            .collect();
        let light_normal = scene.light.rect.normal();

        let direct = |p: V3, n: V3| -> f64 {
            let mut e = 0.0;
            for part in &light_parts {
                let centre = part.point(0.5, 0.5);
                if dot(sub(p, centre), light_normal) <= 0.0 || !occ.visible(p, centre) {
                    continue;
                }
                e += point_polygon_form_factor(p, n, &part.corners());
            }
            scene.light.intensity * e
        };
        let offset = |s: &Surface, u: f64, v: f64| add(s.rect.point(u, v), scale(s.rect.normal(), 1e-7));

        // direct light at every radiosity patch
        struct Patch {
            rect: Rect,
            centre: V3,
            normal: V3,
            color: usize,
            t0: f64,
        }
        let mut patches = Vec::with_capacity(scene.surfaces.len() * np * np);
        for s in &scene.surfaces {
            let f = np as f64;
            for j in 0..np {
                for i in 0..np {
                    let (u0, v0) = (i as f64 / f, j as f64 / f);
                    let rect = s.rect.sub_rect(u0, u0 + 1.0 / f, v0, v0 + 1.0 / f);
                    let centre = offset(s, u0 + 0.5 / f, v0 + 0.5 / f);
                    patches.push(Patch {
                        rect,
                        centre,
                        normal: s.rect.normal(),
                        color: s.color,
                        t0: 0.0,
                    });
                }
            }
        }
        let t0s = par::map_indexed(patches.len(), |i| direct(patches[i].centre, patches[i].normal));
        for (p, t) in patches.iter_mut().zip(t0s) {
            p.t0 = t;
        }

        let mut out = Vec::with_capacity(scene.surfaces.len());
        for s in &scene.surfaces {
            let n = s.rect.normal();
            let texel_values = par::map_indexed(texels * texels, |idx| {
                let (i, j) = (idx % texels, idx / texels);
                let u = (i as f64 + 0.5) / texels as f64;
                let v = (j as f64 + 0.5) / texels as f64;
                let p = offset(s, u, v);
                let mut vals = vec![0.0; k + 1];
                vals[0] = direct(p, n);
                for q in &patches {
                    if q.t0 == 0.0 || dot(sub(p, q.centre), q.normal) <= 0.0 || dot(sub(q.centre, p), n) <= 0.0 {
                        continue;
                    }
                    if !occ.visible(p, q.centre) {
                        continue;
                    }
                    let ff = point_polygon_form_factor(p, n, &q.rect.corners());
                    vals[1 + q.color] += q.t0 * ff;
                }
                vals
            });
            let mut layers = vec![vec![0.0; texels * texels]; k + 1];
            for (idx, vals) in texel_values.into_iter().enumerate() {
                for (l, v) in vals.into_iter().enumerate() {
                    layers[l][idx] = v;
                }
            }
            out.push(SurfaceLayers { layers });
        }
        Ok(SceneLighting { surfaces: out, texels })
    }

    /// Bilinear lookup of all layers at local coordinates of surface `s`.
    fn lookup(&self, s: usize, u: f64, v: f64) -> Vec<f64> {
        let t = self.texels;
        // texel values sit at texel centers
        let fu = (u * t as f64 - 0.5).clamp(0.0, (t - 1) as f64);
        let fv = (v * t as f64 - 0.5).clamp(0.0, (t - 1) as f64);
        let (i0, j0) = (fu.floor() as usize, fv.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(t - 1), (j0 + 1).min(t - 1));
        let (a, b) = (fu - i0 as f64, fv - j0 as f64);
        self.surfaces[s]
            .layers
            .iter()
            .map(|g| {
                let top = g[j0 * t + i0] * (1.0 - a) + g[j0 * t + i1] * a;
                let bot = g[j1 * t + i0] * (1.0 - a) + g[j1 * t + i1] * a;
                top * (1.0 - b) + bot * b
            })
            .collect()
    }

    /// Layers at a texel-grid point, for checks.
    pub fn texel(&self, surface: usize, layer: usize, i: usize, j: usize) -> f64 {
        self.surfaces[surface].layers[layer][j * self.texels + i]
    }
}

/// Ground truth of one rendered frame.
#[derive(Debug, Clone)]
pub struct GroundTruthFrame {
    pub input: Frame,
    /// Unclamped `R ⊙ Σ b_k T_k`.
    pub exact: Vec<Rgb>,
    pub reflectance: Vec<Rgb>,
    /// `layers[l]`, `l` in `0..=K`.
    pub layers: Vec<Vec<f64>>,
    /// Palette index + 1 per pixel.
    pub labels: ClusterMap,
}

impl GroundTruthFrame {
    /// `S = Σ b_k T_k` with the given basis.
    pub fn illumination(&self, basis: &[Rgb]) -> Vec<Rgb> {
        let n = self.reflectance.len();
        (0..n)
            .map(|i| {
                let mut s = [0.0; 3];
                for (l, b) in basis.iter().enumerate() {
                    for c in 0..3 {
                        s[c] += b[c] * self.layers[l][i];
                    }
                }
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruthBundle {
    pub width: usize,
    pub height: usize,
    /// Scene base colors, `b_1..b_K`.
    pub palette: Vec<Rgb>,
    pub frames: Vec<GroundTruthFrame>,
}

impl GroundTruthBundle {
    /// `[b_0, b_1, .., b_K]`.
    pub fn basis(&self) -> Vec<Rgb> {
        std::iter::once([1.0; 3]).chain(self.palette.iter().copied()).collect()
    }
}

struct CameraFrame {
    origin: V3,
    right: V3,
    up: V3,
    dir: V3,
}

fn camera_frame(cam: &Camera, t: usize, width: usize, height: usize) -> CameraFrame {
    let dir = normalize(cam.direction);
    let world_up = if dir[1].abs() > 0.999 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
    let right = normalize(cross(world_up, dir));
    let up = cross(dir, right);
    let shift = t as f64 * cam.shift_px;
    let back = 100.0;
    let corner = add(
        add(cam.target, scale(dir, -back)),
        add(
            scale(right, (shift - width as f64 / 2.0) * cam.pixel_size),
            scale(up, (height as f64 / 2.0) * cam.pixel_size),
        ),
    );
    CameraFrame {
        origin: corner,
        right,
        up,
        dir,
    }
}

/// Renders one frame from precomputed lighting.
pub fn render_frame(scene: &SyntheticScene, lighting: &SceneLighting, t: usize) -> Result<GroundTruthFrame> {
    let (w, h) = (scene.width, scene.height);
    let k = scene.k();
    let cam = camera_frame(&scene.camera, t, w, h);
    let hits = par::map_indexed(w * h, |idx| {
        let (x, y) = (idx % w, idx / w);
        let o = add(
            cam.origin,
            add(
                scale(cam.right, (x as f64 + 0.5) * scene.camera.pixel_size),
                scale(cam.up, -(y as f64 + 0.5) * scene.camera.pixel_size),
            ),
        );
        let mut best: Option<(f64, usize)> = None;
        for (si, s) in scene.surfaces.iter().enumerate() {
            if dot(cam.dir, s.rect.normal()) >= 0.0 {
                continue;
            }
            if let Some(tt) = s.rect.intersect(o, cam.dir) {
                if tt > 0.0 && best.map_or(true, |(bt, _)| tt < bt) {
                    best = Some((tt, si));
                }
            }
        }
        best.map(|(tt, si)| {
            let p = add(o, scale(cam.dir, tt));
            let (u, v) = scene.surfaces[si].rect.local(p);
            (si, lighting.lookup(si, u, v))
        })
    });
    if hits.iter().any(|h| h.is_none()) {
        return Err(Error::Scene(format!("frame {t}: camera sees past the scene geometry")));
    }
    let basis: Vec<Rgb> = std::iter::once([1.0; 3]).chain(scene.palette.iter().copied()).collect();
    let mut reflectance = Vec::with_capacity(w * h);
    let mut layers = vec![Vec::with_capacity(w * h); k + 1];
    let mut labels = Vec::with_capacity(w * h);
    let mut exact = Vec::with_capacity(w * h);
    for hit in hits.into_iter().flatten() {
        let (si, vals) = hit;
        let color = scene.surfaces[si].color;
        let rho = scene.palette[color];
        let mut s = [0.0; 3];
        for (l, v) in vals.iter().enumerate() {
            layers[l].push(*v);
            for c in 0..3 {
                s[c] += basis[l][c] * v;
            }
        }
        reflectance.push(rho);
        labels.push(color as u16 + 1);
        exact.push([rho[0] * s[0], rho[1] * s[1], rho[2] * s[2]]);
    }
    Ok(GroundTruthFrame {
        input: Frame::new(w, h, exact.clone())?,
        exact,
        reflectance,
        layers,
        labels: ClusterMap {
            width: w,
            height: h,
            ids: labels,
        },
    })
}

/// Renders every frame of the scene. `seed` is accepted for interface
/// stability; rendering itself is deterministic.
pub fn render_scene(scene: &SyntheticScene, seed: u64) -> Result<GroundTruthBundle> {
    let _ = seed;
    let lighting = SceneLighting::compute(scene)?;
    let frames = (0..scene.frames)
        .map(|t| render_frame(scene, &lighting, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(GroundTruthBundle {
        width: scene.width,
        height: scene.height,
        palette: scene.palette.clone(),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn form_factor_of_large_overhead_square_approaches_one() {
        let big = [[-1e3, 1.0, -1e3], [1e3, 1.0, -1e3], [1e3, 1.0, 1e3], [-1e3, 1.0, 1e3]];
        let f = point_polygon_form_factor([0.0; 3], [0.0, 1.0, 0.0], &big);
        assert_relative_eq!(f, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn form_factor_matches_brute_force_integration() {
        // unit square one unit above the receiver, offset sideways
        let rect = Rect {
            axis: 1,
            position: 1.0,
            facing: -1.0,
            min: [0.5, -0.5],
            max: [1.5, 0.5],
        };
        let p = [0.0; 3];
        let n = [0.0, 1.0, 0.0];
        let analytic = point_polygon_form_factor(p, n, &rect.corners());
        let m = 400;
        let mut brute = 0.0;
        let da = rect.area() / (m * m) as f64;
        for j in 0..m {
            for i in 0..m {
                let q = rect.point((i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64);
                let d = sub(q, p);
                let r2 = dot(d, d);
                let cos_p = dot(d, n) / r2.sqrt();
                let cos_q = -dot(d, rect.normal()) / r2.sqrt();
                brute += cos_p * cos_q / (std::f64::consts::PI * r2) * da;
            }
        }
        assert_relative_eq!(analytic, brute, max_relative = 1e-4);
    }

    #[test]
    fn polygon_behind_the_receiver_is_clipped() {
        let below = [[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [1.0, -1.0, 1.0], [-1.0, -1.0, 1.0]];
        assert_eq!(point_polygon_form_factor([0.0; 3], [0.0, 1.0, 0.0], &below), 0.0);
    }

    #[test]
    fn lone_floor_has_no_indirect_light() {
        let scene = SyntheticScene::floor_only();
        let b = render_scene(&scene, 0).unwrap();
        let f = &b.frames[0];
        assert!(f.layers[0].iter().all(|t| *t > 0.0));
        assert!(f.layers[1].iter().all(|t| *t == 0.0));
    }

    #[test]
    fn doubling_the_light_doubles_every_layer() {
        let mut scene = SyntheticScene::default_room();
        scene.width = 32;
        scene.height = 32;
        scene.camera.pixel_size *= 4.0;
        scene.frames = 1;
        scene.patches = 6;
        scene.texels = 6;
        let a = render_scene(&scene, 0).unwrap();
        scene.light.intensity *= 2.0;
        let b = render_scene(&scene, 0).unwrap();
        for (la, lb) in a.frames[0].layers.iter().zip(&b.frames[0].layers) {
            for (x, y) in la.iter().zip(lb) {
                assert_relative_eq!(2.0 * x, *y, max_relative = 1e-12);
            }
        }
        assert_eq!(a.frames[0].reflectance, b.frames[0].reflectance);
    }

    #[test]
    fn scene_round_trips_through_json() {
        let scene = SyntheticScene::default_room();
        let text = serde_json::to_string(&scene).unwrap();
        assert_eq!(SyntheticScene::from_json(&text).unwrap(), scene);
        let mut bad = scene.clone();
        bad.surfaces[0].rect.max = bad.surfaces[0].rect.min;
        assert!(bad.validate().is_err());
    }
}
