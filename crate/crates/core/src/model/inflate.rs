use super::layers::Kernel3d;
use crate::error::{Error, Result};

/// 2D convolution kernel `[c_out, c_in, kh, kw]`, e.g. taken from an
/// image-pretrained network.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Kernel2d {
    pub fn from_vec(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for kernel {dims:?}",
                data.len()
            )));
        }
        Ok(Kernel2d { dims, data })
    }

    pub fn get(&self, o: usize, i: usize, y: usize, x: usize) -> f64 {
        let [_, ci, kh, kw] = self.dims;
        self.data[((o * ci + i) * kh + y) * kw + x]
    }
}

/// Replicates a 2D kernel `depth` times along a new depth axis and divides
/// by `depth`, so a depth-constant input reproduces the 2D response.
pub fn inflate_2d_kernel(kernel: &Kernel2d, depth: usize) -> Result<Kernel3d> {
    if depth < 1 {
        return Err(Error::Config("inflation depth must be at least 1".into()));
    }
    let [co, ci, kh, kw] = kernel.dims;
    let plane = kh * kw;
    let scale = depth as f64;
    let mut data = Vec::with_capacity(co * ci * depth * plane);
    for oi in 0..co * ci {
        let src = &kernel.data[oi * plane..(oi + 1) * plane];
        for _ in 0..depth {
            data.extend(src.iter().map(|v| v / scale));
        }
    }
    Kernel3d::from_vec([co, ci, depth, kh, kw], data)
}
