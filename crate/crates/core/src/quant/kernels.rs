//! Compute kernels over quantized operands.
//!
//! Operands are decoded to `f32` on the fly. Every product of two FP8 (or
//! FP16) values is exact in `f32`, and every running sum is an `f32` add in a
//! fixed order: the reduction index ascends innermost. Outputs are plain FP32
//! tensors; callers apply their own Q node.

use rayon::prelude::*;

use crate::format::{FloatFormat, RoundingMode};

use super::tensor::{QuantizedTensor, Tensor};
use super::QuantError;

/// Stride and symmetric zero padding for a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self { stride: 1, padding: 0 }
    }
}

impl Conv2dParams {
    /// Output spatial size, or `None` if the kernel does not fit.
    pub fn output_size(&self, input: usize, kernel: usize) -> Option<usize> {
        if self.stride == 0 {
            return None;
        }
        let padded = input + 2 * self.padding;
        (padded >= kernel).then(|| (padded - kernel) / self.stride + 1)
    }
}

fn require_fp8(t: &QuantizedTensor) -> Result<(), QuantError> {
    if t.format() != FloatFormat::FP8 {
        return Err(QuantError::UnsupportedFormat(t.format().name()));
    }
    Ok(())
}

fn dims2(t: &QuantizedTensor) -> Result<(usize, usize), QuantError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(QuantError::Rank {
            expected: 2,
            got: s.len(),
        }),
    }
}

/// `[M×K] · [K×N]` with FP8 operands and FP32 accumulation.
pub fn gemm_fp8(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<Tensor, QuantError> {
    require_fp8(a)?;
    require_fp8(b)?;
    gemm(a, b)
}

/// Same as [`gemm_fp8`] but accepts FP16 operands as well (used by the
/// 16-bit boundary layers).
pub fn gemm(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<Tensor, QuantError> {
    let (m, k) = dims2(a)?;
    let (kb, n) = dims2(b)?;
    if k != kb {
        return Err(QuantError::InnerDimension { left: k, right: kb });
    }
    let (ta, tb) = (a.table(), b.table());
    // B transposed so the k loop walks contiguous codes.
    let bt = b.transpose()?;
    let (ac, bc) = (a.codes(), bt.codes());
    let mut out = vec![0f32; m * n];
    if k > 0 {
        out.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            let arow = &ac[i * k..(i + 1) * k];
            for (j, o) in row.iter_mut().enumerate() {
                let bcol = &bc[j * k..(j + 1) * k];
                let mut acc = 0f32;
                for (&x, &y) in arow.iter().zip(bcol) {
                    acc += ta[x as usize] * tb[y as usize];
                }
                *o = acc;
            }
        });
    }
    Tensor::new(vec![m, n], out)
}

struct ConvGeometry {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(x: &QuantizedTensor, w: &QuantizedTensor, p: Conv2dParams) -> Result<ConvGeometry, QuantError> {
    let [batch, channels, height, width] = x.shape()[..] else {
        return Err(QuantError::Rank {
            expected: 4,
            got: x.shape().len(),
        });
    };
    let [filters, wc, kh, kw] = w.shape()[..] else {
        return Err(QuantError::Rank {
            expected: 4,
            got: w.shape().len(),
        });
    };
    if wc != channels {
        return Err(QuantError::InnerDimension {
            left: channels,
            right: wc,
        });
    }
    let (Some(oh), Some(ow)) = (p.output_size(height, kh), p.output_size(width, kw)) else {
        return Err(QuantError::ConvGeometry(format!(
            "kernel {kh}x{kw} with stride {} padding {} does not fit input {height}x{width}",
            p.stride, p.padding
        )));
    };
    Ok(ConvGeometry {
        batch,
        channels,
        height,
        width,
        filters,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Direct convolution: `x [N,C,H,W] ⋆ w [F,C,kH,kW] -> [N,F,OH,OW]`, FP8
/// operands.
pub fn conv2d_fp8(x: &QuantizedTensor, w: &QuantizedTensor, params: Conv2dParams) -> Result<Tensor, QuantError> {
    require_fp8(x)?;
    require_fp8(w)?;
    conv2d(x, w, params)
}

/// Direct convolution over FP8 or FP16 operands. Accumulation order per
/// output element is channel, then kernel row, then kernel column; padded
/// taps contribute an exact zero.
pub fn conv2d(x: &QuantizedTensor, w: &QuantizedTensor, params: Conv2dParams) -> Result<Tensor, QuantError> {
    let g = conv_geometry(x, w, params)?;
    let (tx, tw) = (x.table(), w.table());
    let (xc, wc) = (x.codes(), w.codes());
    let plane = g.oh * g.ow;
    let mut out = vec![0f32; g.batch * g.filters * plane];
    out.par_chunks_mut(plane.max(1)).enumerate().for_each(|(nf, dst)| {
        let (n, f) = (nf / g.filters, nf % g.filters);
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = 0f32;
                for c in 0..g.channels {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let wv = tw[wc[((f * g.channels + c) * g.kh + ky) * g.kw + kx] as usize];
                            let iy = (oy * params.stride + ky) as isize - params.padding as isize;
                            let ix = (ox * params.stride + kx) as isize - params.padding as isize;
                            let xv = if iy < 0 || ix < 0 || iy as usize >= g.height || ix as usize >= g.width {
                                0.0
                            } else {
                                tx[xc[((n * g.channels + c) * g.height + iy as usize) * g.width + ix as usize] as usize]
                            };
                            acc += xv * wv;
                        }
                    }
                }
                dst[oy * g.ow + ox] = acc;
            }
        }
    });
    Tensor::new(vec![g.batch, g.filters, g.oh, g.ow], out)
}

/// Unfold every image of `x` into columns:
/// `[C·kH·kW, N·OH·OW]`, rows ordered (c, ky, kx), columns ordered
/// (n, oy, ox). Padding uses the +0 code.
pub fn im2col(
    x: &QuantizedTensor,
    kernel: (usize, usize),
    params: Conv2dParams,
) -> Result<QuantizedTensor, QuantError> {
    let [batch, channels, height, width] = x.shape()[..] else {
        return Err(QuantError::Rank {
            expected: 4,
            got: x.shape().len(),
        });
    };
    let (kh, kw) = kernel;
    let (Some(oh), Some(ow)) = (params.output_size(height, kh), params.output_size(width, kw)) else {
        return Err(QuantError::ConvGeometry(format!(
            "kernel {kh}x{kw} does not fit input {height}x{width}"
        )));
    };
    let rows = channels * kh * kw;
    let cols = batch * oh * ow;
    let mut codes = vec![0u16; rows * cols];
    let xc = x.codes();
    for c in 0..channels {
        for ky in 0..kh {
            for kx in 0..kw {
                let r = (c * kh + ky) * kw + kx;
                for n in 0..batch {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let iy = (oy * params.stride + ky) as isize - params.padding as isize;
                            let ix = (ox * params.stride + kx) as isize - params.padding as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < height && (ix as usize) < width {
                                codes[r * cols + (n * oh + oy) * ow + ox] =
                                    xc[((n * channels + c) * height + iy as usize) * width + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    let mut q = QuantizedTensor::from_codes(vec![rows, cols], codes, x.format(), RoundingMode::NearestEven)?;
    q.mode = x.mode_used();
    Ok(q)
}

/// Convolution reformulated as `W[F, C·kH·kW] · im2col(x)`; bitwise equal
/// to [`conv2d`] because the reduction order is the same.
pub fn conv2d_im2col(x: &QuantizedTensor, w: &QuantizedTensor, params: Conv2dParams) -> Result<Tensor, QuantError> {
    let g = conv_geometry(x, w, params)?;
    let cols = im2col(x, (g.kh, g.kw), params)?;
    let wm = w.clone().reshape(vec![g.filters, g.channels * g.kh * g.kw])?;
    let y = gemm(&wm, &cols)?;
    // [F, N·OH·OW] -> [N, F, OH, OW]
    let plane = g.oh * g.ow;
    let src = y.data();
    let mut out = vec![0f32; src.len()];
    for f in 0..g.filters {
        for n in 0..g.batch {
            out[(n * g.filters + f) * plane..][..plane]
                .copy_from_slice(&src[f * g.batch * plane + n * plane..][..plane]);
        }
    }
    Tensor::new(vec![g.batch, g.filters, g.oh, g.ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::tensor::dequantize;

    fn q(shape: &[usize], values: &[f32]) -> QuantizedTensor {
        QuantizedTensor::from_representable(shape.to_vec(), values, FloatFormat::FP8).unwrap()
    }

    #[test]
    fn identity_gemm() {
        let eye = q(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = q(&[2, 3], &[0.5, -3.0, 1.75, 6.0, 0.0, -0.125]);
        assert_eq!(gemm_fp8(&eye, &b).unwrap(), dequantize(&b));
    }

    #[test]
    fn hand_accumulation() {
        let a = q(&[1, 2], &[1.0, 2.0]);
        let b = q(&[2, 1], &[0.5, 0.25]);
        assert_eq!(gemm_fp8(&a, &b).unwrap().data(), &[1.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = q(&[2, 3], &[0.0; 6]);
        let b = q(&[2, 3], &[0.0; 6]);
        assert_eq!(gemm_fp8(&a, &b), Err(QuantError::InnerDimension { left: 3, right: 2 }));
        let x = q(&[1, 2, 3, 3], &[0.0; 18]);
        let w = q(&[1, 1, 2, 2], &[0.0; 4]);
        assert!(conv2d_fp8(&x, &w, Conv2dParams::default()).is_err());
        let w = q(&[1, 2, 5, 5], &[0.0; 50]);
        assert!(matches!(
            conv2d_fp8(&x, &w, Conv2dParams::default()),
            Err(QuantError::ConvGeometry(_))
        ));
    }

    #[test]
    fn fp16_operands_rejected_by_fp8_entry_points() {
        let a = QuantizedTensor::from_representable(vec![1, 1], &[1.0], FloatFormat::FP16).unwrap();
        assert!(matches!(gemm_fp8(&a, &a), Err(QuantError::UnsupportedFormat(_))));
        assert_eq!(gemm(&a, &a).unwrap().data(), &[1.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let vals: Vec<f32> = (0..2 * 3 * 4).map(|i| FloatFormat::FP8.decode(i * 3) as f32).collect();
        let x = q(&[1, 2, 3, 4], &vals);
        let w = q(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            conv2d_fp8(&x, &w, Conv2dParams::default()).unwrap().data(),
            dequantize(&x).data()
        );
    }

    #[test]
    fn delta_image_reproduces_kernel() {
        let mut img = vec![0.0f32; 25];
        img[2 * 5 + 2] = 1.0;
        let x = q(&[1, 1, 5, 5], &img);
        let kern = [0.5, -1.0, 2.0, 0.25, 3.0, -0.75, 1.5, 4.0, -6.0];
        let w = q(&[1, 1, 3, 3], &kern);
        let y = conv2d_fp8(&x, &w, Conv2dParams { stride: 1, padding: 1 }).unwrap();
        // correlation: output around the delta is the kernel flipped
        for ky in 0..3 {
            for kx in 0..3 {
                let oy = 2 + 1 - ky;
                let ox = 2 + 1 - kx;
                assert_eq!(y.data()[oy * 5 + ox], kern[ky * 3 + kx]);
            }
        }
        assert_eq!(y.data().iter().filter(|v| **v != 0.0).count(), 9);
    }

    #[test]
    fn im2col_path_matches_direct() {
        let vals: Vec<f32> = (0..2 * 3 * 6 * 5)
            .map(|i| FloatFormat::FP8.decode((i * 37 % 120) as u32 | if i % 3 == 0 { 0x80 } else { 0 }) as f32)
            .collect();
        let x = q(&[2, 3, 6, 5], &vals);
        let wv: Vec<f32> = (0..4 * 3 * 3 * 2)
            .map(|i| FloatFormat::FP8.decode((i * 11 % 70 + 40) as u32) as f32)
            .collect();
        let w = q(&[4, 3, 3, 2], &wv);
        for params in [Conv2dParams::default(), Conv2dParams { stride: 2, padding: 1 }] {
            let direct = conv2d_fp8(&x, &w, params).unwrap();
            let via = conv2d_im2col(&x, &w, params).unwrap();
            assert_eq!(direct.shape(), via.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&direct), bits(&via));
        }
    }
}
