//! 2-D cross-correlation via im2col. 1-D convolution is the unit-height case.

use super::graph::{Grads, Graph, Op, Var};
use super::kernels::{gemm, Mat};
use crate::error::{FinoError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

#[derive(Clone, Copy)]
struct Dims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl Dims {
    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    fn plane(&self) -> usize {
        self.oh * self.ow
    }
}

pub(crate) struct Conv2dSaved {
    input: Var,
    kernel: Var,
    bias: Option<Var>,
    geom: ConvGeometry,
    dims: Dims,
}

fn im2col(x: &[f64], d: &Dims, g: &ConvGeometry, cols: &mut [f64]) {
    let plane = d.plane();
    for c in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..d.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad_h as isize;
                    let line = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * d.h + iy as usize) * d.w..][..d.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad_w as isize;
                        *v = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], d: &Dims, g: &ConvGeometry, dx: &mut [f64]) {
    let plane = d.plane();
    for c in 0..d.c_in {
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = (c * d.kh + ki) * d.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..d.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * d.h + iy as usize) * d.w..][..d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Conv2dSaved {
    pub(crate) fn backward(&self, g: &[f64], grads: &mut Grads<'_>) {
        let d = self.dims;
        let values = grads.values;
        let x = values[self.input.0].data();
        let w = values[self.kernel.0].data();
        let (patch, plane) = (d.patch(), d.plane());
        let in_len = d.c_in * d.h * d.w;
        let out_len = d.c_out * plane;

        if let Some(bias) = self.bias {
            if let Some(db) = grads.acc(bias) {
                for n in 0..d.n {
                    for (c, dbc) in db.iter_mut().enumerate() {
                        let row = &g[n * out_len + c * plane..][..plane];
                        *dbc += row.iter().sum::<f64>();
                    }
                }
            }
        }

        let want_kernel = grads.acc(self.kernel).is_some();
        let want_input = grads.acc(self.input).is_some();
        if !want_kernel && !want_input {
            return;
        }
        let mut cols = vec![0.0; patch * plane];
        let mut dcols = vec![0.0; patch * plane];
        for n in 0..d.n {
            let gy = &g[n * out_len..(n + 1) * out_len];
            if want_kernel {
                im2col(&x[n * in_len..(n + 1) * in_len], &d, &self.geom, &mut cols);
                let dw = grads.acc(self.kernel).expect("tracked");
                gemm(
                    d.c_out,
                    plane,
                    patch,
                    Mat::rows(gy, plane),
                    Mat::transposed(&cols, plane),
                    1.0,
                    dw,
                );
            }
            if want_input {
                gemm(
                    patch,
                    d.c_out,
                    plane,
                    Mat::transposed(w, patch),
                    Mat::rows(gy, plane),
                    0.0,
                    &mut dcols,
                );
                let dx = grads.acc(self.input).expect("tracked");
                col2im_add(&dcols, &d, &self.geom, &mut dx[n * in_len..(n + 1) * in_len]);
            }
        }
    }
}

impl Graph {
    /// Cross-correlation of `input` (`[C,H,W]` or `[N,C,H,W]`) with `kernel`
    /// (`[C_out,C_in,kh,kw]`), zero padding on all sides.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let geom = ConvGeometry {
            stride,
            pad_h: padding,
            pad_w: padding,
        };
        self.conv2d_with(input, kernel, bias, geom)
    }

    pub fn conv2d_with(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let batched = match in_shape.len() {
            4 => true,
            3 => false,
            r => return Err(FinoError::dim(format!("conv2d input rank {r}, want 3 or 4"))),
        };
        let (n, c_in, h, w) = if batched {
            (in_shape[0], in_shape[1], in_shape[2], in_shape[3])
        } else {
            (1, in_shape[0], in_shape[1], in_shape[2])
        };
        let k_shape = self.shape(kernel).to_vec();
        if k_shape.len() != 4 {
            return Err(FinoError::dim(format!("kernel shape {k_shape:?}, want rank 4")));
        }
        let (c_out, kc, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kc != c_in {
            return Err(FinoError::dim(format!(
                "input has {c_in} channels, kernel expects {kc}"
            )));
        }
        if geom.stride == 0 {
            return Err(FinoError::param("conv stride must be at least 1"));
        }
        if kh > h + 2 * geom.pad_h || kw > w + 2 * geom.pad_w {
            return Err(FinoError::dim(format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * geom.pad_h,
                w + 2 * geom.pad_w
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(FinoError::dim(format!(
                    "bias shape {:?}, want [{c_out}]",
                    self.shape(b)
                )));
            }
        }
        let d = Dims {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh: (h + 2 * geom.pad_h - kh) / geom.stride + 1,
            ow: (w + 2 * geom.pad_w - kw) / geom.stride + 1,
        };
        let (patch, plane) = (d.patch(), d.plane());
        let x = self.value(input).data();
        let wt = self.value(kernel).data();
        let b = bias.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * c_out * plane];
        let mut cols = vec![0.0; patch * plane];
        for i in 0..n {
            im2col(&x[i * c_in * h * w..(i + 1) * c_in * h * w], &d, &geom, &mut cols);
            let y = &mut out[i * c_out * plane..(i + 1) * c_out * plane];
            gemm(c_out, patch, plane, Mat::rows(wt, patch), Mat::rows(&cols, plane), 0.0, y);
            if let Some(b) = b {
                for (c, row) in y.chunks_mut(plane).enumerate() {
                    row.iter_mut().for_each(|v| *v += b[c]);
                }
            }
        }
        let out_shape = if batched {
            vec![n, c_out, d.oh, d.ow]
        } else {
            vec![c_out, d.oh, d.ow]
        };
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push(
            Tensor::from_parts(out_shape, out),
            Op::Conv2d(Conv2dSaved {
                input,
                kernel,
                bias,
                geom,
                dims: d,
            }),
            &inputs,
        )
    }

    /// 1-D convolution of `[C,T]` or `[N,C,T]` with `[C_out,C_in,k]`,
    /// computed as a unit-height 2-D convolution.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let in_shape = self.shape(input).to_vec();
        let as_2d: Vec<usize> = match in_shape.len() {
            2 => vec![in_shape[0], 1, in_shape[1]],
            3 => vec![in_shape[0], in_shape[1], 1, in_shape[2]],
            r => return Err(FinoError::dim(format!("conv1d input rank {r}, want 2 or 3"))),
        };
        let k_shape = self.shape(kernel).to_vec();
        if k_shape.len() != 3 {
            return Err(FinoError::dim(format!("conv1d kernel {k_shape:?}, want rank 3")));
        }
        let x = self.reshape(input, &as_2d)?;
        let k = self.reshape(kernel, &[k_shape[0], k_shape[1], 1, k_shape[2]])?;
        let y = self.conv2d_with(
            x,
            k,
            bias,
            ConvGeometry {
                stride,
                pad_h: 0,
                pad_w: padding,
            },
        )?;
        let y_shape = self.shape(y).to_vec();
        let mut out_shape = y_shape.clone();
        out_shape.remove(out_shape.len() - 2);
        self.reshape(y, &out_shape)
    }
}
