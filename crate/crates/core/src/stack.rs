//! Multi-coil complex image stacks and their on-disk format.
//!
//! File layout: one line of JSON header terminated by `\n`, followed by the
//! raw payload. The payload is row-major, coil-major (then map-major), with
//! each sample stored as interleaved `(re, im)` little-endian `f64`.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackKind {
    Kspace,
    Image,
    Sensitivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackHeader {
    pub n: usize,
    pub m: usize,
    pub coils: usize,
    pub maps: usize,
    pub kind: StackKind,
}

/// `coils x maps` complex images on an `n x m` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilStack {
    n: usize,
    m: usize,
    coils: usize,
    maps: usize,
    kind: StackKind,
    data: Vec<Complex64>,
}

impl CoilStack {
    pub fn zeros(n: usize, m: usize, coils: usize, maps: usize, kind: StackKind) -> Self {
        CoilStack {
            n,
            m,
            coils,
            maps,
            kind,
            data: vec![Complex64::new(0.0, 0.0); n * m * coils * maps],
        }
    }

    pub fn from_data(
        n: usize,
        m: usize,
        coils: usize,
        maps: usize,
        kind: StackKind,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != n * m * coils * maps {
            return Err(Error::mismatch(format!(
                "stack {n}x{m}x{coils}x{maps} needs {} samples, got {}",
                n * m * coils * maps,
                data.len()
            )));
        }
        Ok(CoilStack { n, m, coils, maps, kind, data })
    }

    /// Wraps a single image as a one-coil, one-map stack.
    pub fn from_image(grid: Grid, kind: StackKind, image: Vec<Complex64>) -> Result<Self> {
        CoilStack::from_data(grid.n(), grid.m(), 1, 1, kind, image)
    }

    /// Builds a stack from one image per coil (single map).
    pub fn from_coil_images(grid: Grid, kind: StackKind, images: Vec<Vec<Complex64>>) -> Result<Self> {
        let coils = images.len();
        let mut data = Vec::with_capacity(coils * grid.len());
        for img in images {
            if img.len() != grid.len() {
                return Err(Error::mismatch("coil image size does not match grid"));
            }
            data.extend(img);
        }
        CoilStack::from_data(grid.n(), grid.m(), coils, 1, kind, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn coils(&self) -> usize {
        self.coils
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn kind(&self) -> StackKind {
        self.kind
    }

    pub fn set_kind(&mut self, kind: StackKind) {
        self.kind = kind;
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n, self.m)
    }

    pub fn header(&self) -> StackHeader {
        StackHeader {
            n: self.n,
            m: self.m,
            coils: self.coils,
            maps: self.maps,
            kind: self.kind,
        }
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    fn offset(&self, coil: usize, map: usize) -> usize {
        debug_assert!(coil < self.coils && map < self.maps);
        (coil * self.maps + map) * self.n * self.m
    }

    /// Row-major `n x m` image for one coil and map.
    pub fn image(&self, coil: usize, map: usize) -> &[Complex64] {
        let o = self.offset(coil, map);
        &self.data[o..o + self.n * self.m]
    }

    pub fn image_mut(&mut self, coil: usize, map: usize) -> &mut [Complex64] {
        let o = self.offset(coil, map);
        let len = self.n * self.m;
        &mut self.data[o..o + len]
    }

    pub fn get(&self, coil: usize, map: usize, row: usize, col: usize) -> Complex64 {
        self.data[self.offset(coil, map) + row * self.m + col]
    }

    /// Column `col` (an `x2` profile of length `n`) of one coil/map image.
    pub fn column(&self, coil: usize, map: usize, col: usize) -> Vec<Complex64> {
        let img = self.image(coil, map);
        (0..self.n).map(|r| img[r * self.m + col]).collect()
    }

    /// Keeps only the listed coils, in the given order.
    pub fn select_coils(&self, coils: &[usize]) -> Result<CoilStack> {
        let mut data = Vec::with_capacity(coils.len() * self.maps * self.n * self.m);
        for &c in coils {
            if c >= self.coils {
                return Err(Error::invalid(format!("coil {c} out of range (have {})", self.coils)));
            }
            for q in 0..self.maps {
                data.extend_from_slice(self.image(c, q));
            }
        }
        CoilStack::from_data(self.n, self.m, coils.len(), self.maps, self.kind, data)
    }

    pub fn same_shape(&self, other: &CoilStack) -> bool {
        self.n == other.n && self.m == other.m && self.coils == other.coils && self.maps == other.maps
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header()).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.data.len() * 16);
        for v in &self.data {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line"))?;
        let header: StackHeader = serde_json::from_slice(&bytes[..nl]).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let payload = &bytes[nl + 1..];
        let count = header.n * header.m * header.coils * header.maps;
        if payload.len() != count * 16 {
            return Err(bad(&format!("payload has {} bytes, header implies {}", payload.len(), count * 16)));
        }
        let data = payload
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex64::new(re, im)
            })
            .collect();
        CoilStack::from_data(header.n, header.m, header.coils, header.maps, header.kind, data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        CoilStack::from_bytes(&bytes, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }
}

/// Real-valued `n x m` image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn zeros(n: usize, m: usize) -> Self {
        RealImage { n, m, data: vec![0.0; n * m] }
    }

    pub fn from_data(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * m {
            return Err(Error::mismatch(format!("image {n}x{m} needs {} pixels, got {}", n * m, data.len())));
        }
        Ok(RealImage { n, m, data })
    }

    /// Pointwise modulus of a complex image.
    pub fn magnitude_of(n: usize, m: usize, image: &[Complex64]) -> Result<Self> {
        RealImage::from_data(n, m, image.iter().map(|v| v.norm()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.m + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.m + col] = v;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> RealImage {
        RealImage {
            n: self.n,
            m: self.m,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn same_shape(&self, other: &RealImage) -> bool {
        self.n == other.n && self.m == other.m
    }

    /// Stores the image as a single-coil complex stack with zero imaginary part.
    pub fn to_stack(&self) -> CoilStack {
        let data = self.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        CoilStack::from_data(self.n, self.m, 1, 1, StackKind::Image, data).expect("sizes agree")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let data: Vec<Complex64> = (0..2 * 3 * 4 * 2).map(|k| Complex64::new(k as f64, -(k as f64) * 0.5)).collect();
        let s = CoilStack::from_data(3, 4, 2, 2, StackKind::Sensitivity, data).unwrap();
        let bytes = s.to_bytes();
        let first_line = bytes.split(|&b| b == b'\n').next().unwrap();
        let header: serde_json::Value = serde_json::from_slice(first_line).unwrap();
        assert_eq!(header["kind"], "sensitivity");
        assert_eq!(header["maps"], 2);
        let back = CoilStack::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn payload_layout_is_coil_major_interleaved() {
        let mut s = CoilStack::zeros(2, 2, 2, 1, StackKind::Image);
        s.image_mut(1, 0)[3] = Complex64::new(1.5, -2.0);
        let bytes = s.to_bytes();
        let payload = &bytes[bytes.iter().position(|&b| b == b'\n').unwrap() + 1..];
        let at = (4 + 3) * 16;
        assert_eq!(f64::from_le_bytes(payload[at..at + 8].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(payload[at + 8..at + 16].try_into().unwrap()), -2.0);
    }

    #[test]
    fn truncated_payload_rejected() {
        let s = CoilStack::zeros(2, 2, 1, 1, StackKind::Kspace);
        let mut bytes = s.to_bytes();
        bytes.pop();
        assert!(CoilStack::from_bytes(&bytes, Path::new("x")).is_err());
    }

    #[test]
    fn column_and_selection() {
        let data: Vec<Complex64> = (0..12).map(|k| Complex64::new(k as f64, 0.0)).collect();
        let s = CoilStack::from_data(2, 3, 2, 1, StackKind::Image, data).unwrap();
        assert_eq!(s.column(1, 0, 2), vec![Complex64::new(8.0, 0.0), Complex64::new(11.0, 0.0)]);
        let sel = s.select_coils(&[1]).unwrap();
        assert_eq!(sel.coils(), 1);
        assert_eq!(sel.image(0, 0), s.image(1, 0));
        assert!(s.select_coils(&[2]).is_err());
    }
}
