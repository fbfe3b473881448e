//! Dense volumes and orthogonal-plane slicing.
//!
//! Voxel `(x, y, z)` of a volume with dims `[d1, d2, d3]` is stored at
//! `x + d1 * (y + d2 * z)`, so XY slices are contiguous and XZ slices are
//! strided gathers.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{dim_err, Error, Result};
use crate::field::Image;

/// Orthogonal section of a volume. The sampler alternates between `XY` and
/// `XZ`; `YZ` exists for three-plane evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Plane {
    XY,
    XZ,
    YZ,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::XY, Plane::XZ, Plane::YZ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Plane::XY => "xy",
            Plane::XZ => "xz",
            Plane::YZ => "yz",
        }
    }

    pub fn id(&self) -> u8 {
        match self {
            Plane::XY => 0,
            Plane::XZ => 1,
            Plane::YZ => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Plane::XY),
            1 => Some(Plane::XZ),
            2 => Some(Plane::YZ),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "xy" | "XY" => Some(Plane::XY),
            "xz" | "XZ" => Some(Plane::XZ),
            "yz" | "YZ" => Some(Plane::YZ),
            _ => None,
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One orthogonal section with the plane and index it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub plane: Plane,
    pub index: usize,
    pub pixels: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f64>,
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    for (axis, &d) in dims.iter().enumerate() {
        if d < 2 || d % 2 != 0 {
            return Err(dim_err!(
                "volume dimension d{} = {} must be even and at least 2",
                axis + 1,
                d
            ));
        }
    }
    Ok(())
}

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(dim_err!(
                "volume data length {} does not match {}x{}x{}",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(alloc::format!(
                "non-finite voxel at linear index {pos}"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: f64) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            data: vec![value; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: f64) {
        let i = self.index(x, y, z);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of slices along `plane` (the size of its normal axis).
    pub fn slice_count(&self, plane: Plane) -> usize {
        match plane {
            Plane::XY => self.dims[2],
            Plane::XZ => self.dims[1],
            Plane::YZ => self.dims[0],
        }
    }

    /// In-plane dims of a slice along `plane`.
    pub fn slice_dims(&self, plane: Plane) -> [usize; 2] {
        match plane {
            Plane::XY => [self.dims[0], self.dims[1]],
            Plane::XZ => [self.dims[0], self.dims[2]],
            Plane::YZ => [self.dims[1], self.dims[2]],
        }
    }

    fn check_index(&self, plane: Plane, index: usize) -> Result<()> {
        let bound = self.slice_count(plane);
        if index >= bound {
            return Err(Error::Bounds {
                plane,
                index,
                bound,
            });
        }
        Ok(())
    }

    /// Copy of the section `plane` at `index`.
    pub fn slice(&self, plane: Plane, index: usize) -> Result<Slice> {
        self.check_index(plane, index)?;
        let [d1, d2, d3] = self.dims;
        let pixels = match plane {
            Plane::XY => {
                let n = d1 * d2;
                Image::new([d1, d2], self.data[index * n..(index + 1) * n].to_vec())?
            }
            Plane::XZ => {
                let mut data = Vec::with_capacity(d1 * d3);
                for z in 0..d3 {
                    let start = self.index(0, index, z);
                    data.extend_from_slice(&self.data[start..start + d1]);
                }
                Image::new([d1, d3], data)?
            }
            Plane::YZ => Image::from_fn([d2, d3], |y, z| self.get(index, y, z)),
        };
        Ok(Slice {
            plane,
            index,
            pixels,
        })
    }

    /// Overwrites the section `plane` at `index` with `pixels`.
    pub fn put_slice(&mut self, plane: Plane, index: usize, pixels: &Image) -> Result<()> {
        self.check_index(plane, index)?;
        let want = self.slice_dims(plane);
        if pixels.dims() != want {
            return Err(dim_err!(
                "slice of shape {:?} does not fit {} plane of shape {:?}",
                pixels.dims(),
                plane,
                want
            ));
        }
        let [d1, d2, d3] = self.dims;
        let src = pixels.data();
        match plane {
            Plane::XY => {
                let n = d1 * d2;
                self.data[index * n..(index + 1) * n].copy_from_slice(src);
            }
            Plane::XZ => {
                for z in 0..d3 {
                    let start = self.index(0, index, z);
                    self.data[start..start + d1].copy_from_slice(&src[z * d1..(z + 1) * d1]);
                }
            }
            Plane::YZ => {
                for z in 0..d3 {
                    for y in 0..d2 {
                        let i = self.index(index, y, z);
                        self.data[i] = src[y + d2 * z];
                    }
                }
            }
        }
        Ok(())
    }

    /// Functional form of [`Volume::put_slice`].
    pub fn with_slice(mut self, slice: &Slice) -> Result<Self> {
        self.put_slice(slice.plane, slice.index, &slice.pixels)?;
        Ok(self)
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }

    pub fn max_abs_diff(&self, other: &Volume) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rescales to `[0, 1]` by the volume's own min and max. Constant volumes map to 0.
    pub fn normalize_min_max(&mut self) {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = hi - lo;
        for v in &mut self.data {
            *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
        }
    }
}
