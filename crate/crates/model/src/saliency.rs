//! Channel-averaged feature saliency.

use ppk_autodiff::Tensor;

use crate::Result;

/// Mean of `f` (`[C, gh, gw]`) over channels, min-max normalized and upsampled by
/// nearest neighbour to `(gh * stride) x (gw * stride)`, row-major. A spatially
/// constant mean gives all zeros.
pub fn export_saliency(f: &Tensor, stride: usize) -> Result<Vec<f64>> {
    let [c, gh, gw] = f.shape()[..] else {
        return Err(ppk_autodiff::Error::Shape(format!("expected [C, gh, gw], got {:?}", f.shape())).into());
    };
    let cells = gh * gw;
    let mean: Vec<f64> = (0..cells)
        .map(|k| (0..c).map(|ch| f.data()[ch * cells + k]).sum::<f64>() / c.max(1) as f64)
        .collect();
    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm: Vec<f64> = if hi > lo { mean.iter().map(|v| (v - lo) / (hi - lo)).collect() } else { vec![0.0; cells] };
    let (h, w) = (gh * stride, gw * stride);
    Ok((0..h * w).map(|k| norm[(k / w / stride) * gw + (k % w) / stride]).collect())
}

/// 8-bit gray levels for a `[0, 1]` map.
pub fn to_gray8(map: &[f64]) -> Vec<u8> {
    map.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}
