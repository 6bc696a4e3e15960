use serde::{Deserialize, Serialize};

/// Binary silhouette Ψ, row-major, `true` = foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    width: u32,
    height: u32,
    pixels: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self::filled(width, height, false)
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self::filled(width, height, true)
    }

    fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    /// `None` when `pixels` does not hold exactly `width·height` entries.
    pub fn from_pixels(width: u32, height: u32, pixels: Vec<bool>) -> Option<Self> {
        (pixels.len() == width as usize * height as usize).then_some(Self { width, height, pixels })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for v in 0..height {
            for u in 0..width {
                pixels.push(f(u, v));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        u < self.width && v < self.height && self.pixels[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, value: bool) {
        if u < self.width && v < self.height {
            self.pixels[(v * self.width + u) as usize] = value;
        }
    }

    /// Membership of the floor-rounded pixel coordinate; out of frame is outside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if !(x >= 0.0 && y >= 0.0) {
            return false;
        }
        let (u, v) = (x.floor(), y.floor());
        u < self.width as f64 && v < self.height as f64 && self.get(u as u32, v as u32)
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|p| **p).count()
    }

    /// Euclidean distance, in pixels, from every pixel center to the nearest
    /// set pixel center; infinite everywhere for an empty mask.
    pub fn distance_field(&self) -> Vec<f64> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut sq: Vec<f64> = self
            .pixels
            .iter()
            .map(|p| if *p { 0.0 } else { f64::INFINITY })
            .collect();
        let mut line = Vec::new();
        for u in 0..w {
            line.clear();
            line.extend((0..h).map(|v| sq[v * w + u]));
            for (v, d) in squared_distance_1d(&line).into_iter().enumerate() {
                sq[v * w + u] = d;
            }
        }
        for row in sq.chunks_mut(w.max(1)) {
            let d = squared_distance_1d(row);
            row.copy_from_slice(&d);
        }
        sq.into_iter().map(f64::sqrt).collect()
    }
}

/// Lower envelope of parabolas rooted at `f` (Felzenszwalb and Huttenlocher).
fn squared_distance_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let roots: Vec<usize> = (0..n).filter(|q| f[*q].is_finite()).collect();
    if roots.is_empty() {
        return vec![f64::INFINITY; n];
    }
    let mut hull: Vec<usize> = Vec::with_capacity(roots.len());
    let mut starts: Vec<f64> = Vec::with_capacity(roots.len());
    let cross =
        |a: usize, b: usize| ((f[b] + (b * b) as f64) - (f[a] + (a * a) as f64)) / (2.0 * (b as f64 - a as f64));
    for &q in &roots {
        let mut s = f64::NEG_INFINITY;
        while let Some(&top) = hull.last() {
            s = cross(top, q);
            if s <= *starts.last().unwrap() {
                hull.pop();
                starts.pop();
            } else {
                break;
            }
        }
        if hull.is_empty() {
            s = f64::NEG_INFINITY;
        }
        hull.push(q);
        starts.push(s);
    }
    let mut out = vec![0.0; n];
    let mut k = 0;
    for (x, o) in out.iter_mut().enumerate() {
        while k + 1 < hull.len() && starts[k + 1] < x as f64 {
            k += 1;
        }
        let d = x as f64 - hull[k] as f64;
        *o = d * d + f[hull[k]];
    }
    out
}
