use crate::imaging::{Frame, Rgb};

/// Per-frame unknowns: log-reflectance `r` (3 channels) and transport layers
/// `T_0..T_K`, interleaved per pixel as `[r0, r1, r2, T0, .., TK]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub width: usize,
    pub height: usize,
    /// Number of reflectance base colors (indirect layers).
    pub k: usize,
    pub values: Vec<f64>,
}

impl LayerStack {
    pub fn zeros(width: usize, height: usize, k: usize) -> Self {
        LayerStack {
            width,
            height,
            k,
            values: vec![0.0; width * height * (k + 4)],
        }
    }

    pub fn stride(&self) -> usize {
        self.k + 4
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        let s = self.stride();
        &self.values[i * s..(i + 1) * s]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.stride();
        &mut self.values[i * s..(i + 1) * s]
    }

    pub fn log_reflectance(&self, i: usize) -> Rgb {
        let p = self.pixel(i);
        [p[0], p[1], p[2]]
    }

    pub fn reflectance(&self, i: usize) -> Rgb {
        self.log_reflectance(i).map(f64::exp)
    }

    /// `T_layer` at pixel `i`, `layer` in `0..=K`.
    pub fn transport(&self, i: usize, layer: usize) -> f64 {
        self.values[i * self.stride() + 3 + layer]
    }

    pub fn set_transport(&mut self, i: usize, layer: usize, v: f64) {
        let s = self.stride();
        self.values[i * s + 3 + layer] = v;
    }

    /// `S(x) = Σ_k b_k T_k(x)`.
    pub fn illumination(&self, i: usize, basis: &[Rgb]) -> Rgb {
        debug_assert_eq!(basis.len(), self.k + 1);
        let p = self.pixel(i);
        let mut s = [0.0; 3];
        for (l, b) in basis.iter().enumerate() {
            let t = p[3 + l];
            for c in 0..3 {
                s[c] += b[c] * t;
            }
        }
        s
    }

    pub fn reflectance_image(&self) -> Vec<Rgb> {
        (0..self.pixel_count()).map(|i| self.reflectance(i)).collect()
    }

    pub fn illumination_image(&self, basis: &[Rgb]) -> Vec<Rgb> {
        (0..self.pixel_count()).map(|i| self.illumination(i, basis)).collect()
    }

    pub fn layer(&self, layer: usize) -> Vec<f64> {
        (0..self.pixel_count()).map(|i| self.transport(i, layer)).collect()
    }

    /// `R ⊙ Σ_k b_k T_k`, unclamped.
    pub fn reconstruction(&self, basis: &[Rgb]) -> Vec<Rgb> {
        (0..self.pixel_count())
            .map(|i| {
                let r = self.reflectance(i);
                let s = self.illumination(i, basis);
                [r[0] * s[0], r[1] * s[1], r[2] * s[2]]
            })
            .collect()
    }

    pub fn reconstruction_frame(&self, basis: &[Rgb]) -> Frame {
        Frame::new(self.width, self.height, self.reconstruction(basis)).expect("dimensions match")
    }

    pub fn min_transport(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.pixel_count() {
            for l in 0..=self.k {
                m = m.min(self.transport(i, l));
            }
        }
        m
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> LayerStack {
        let s = self.stride();
        let mut values = Vec::with_capacity(w * h * s);
        for y in y0..y0 + h {
            let a = (y * self.width + x0) * s;
            values.extend_from_slice(&self.values[a..a + w * s]);
        }
        LayerStack {
            width: w,
            height: h,
            k: self.k,
            values,
        }
    }
}
