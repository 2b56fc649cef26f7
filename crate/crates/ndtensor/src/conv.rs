//! Strided 3D convolution and its adjoint, lowered to matrix products.
//!
//! Tensors use the layout `[batch, channel, x, y, energy]`. Kernels for
//! [`conv3d`] are `[out_channels, in_channels, kx, ky, ke]`. The transposed
//! convolution takes the *same* kernel tensor and runs the map backwards,
//! from `out_channels` to `in_channels`, so the pair satisfies
//! `<conv3d(u, K), v> == <u, conv3d_transpose(v, K)>`.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

const SPATIAL_AXES: [&str; 3] = ["x", "y", "energy"];

/// Stride and zero padding along the three convolved axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dSpec {
    pub fn new(stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self { stride, padding }
    }

    /// Stride 1, no padding.
    pub fn unit() -> Self {
        Self::new([1; 3], [0; 3])
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if let Some(axis) = self.stride.iter().position(|&s| s == 0) {
            return Err(TensorError::InvalidArgument {
                op,
                reason: format!("stride along `{}` must be at least 1", SPATIAL_AXES[axis]),
            });
        }
        Ok(())
    }
}

impl Default for Conv3dSpec {
    fn default() -> Self {
        Self::unit()
    }
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Geometry of one convolution: the "image" side (`channels`, `image`)
/// and the "column" side (`kernel`, `out`).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    channels: usize,
    image: [usize; 3],
    kernel: [usize; 3],
    out: [usize; 3],
    spec: Conv3dSpec,
}

impl Geometry {
    fn resolve(op: &'static str, channels: usize, image: [usize; 3], kernel: [usize; 3], spec: Conv3dSpec) -> Result<Self> {
        spec.validate(op)?;
        let mut out = [0; 3];
        for axis in 0..3 {
            out[axis] = conv_output_extent(image[axis], kernel[axis], spec.stride[axis], spec.padding[axis]).ok_or(
                TensorError::DimensionMismatch {
                    op,
                    axis: SPATIAL_AXES[axis],
                    expected: image[axis] + 2 * spec.padding[axis],
                    found: kernel[axis],
                },
            )?;
        }
        Ok(Self {
            channels,
            image,
            kernel,
            out,
            spec,
        })
    }

    fn image_volume(&self) -> usize {
        self.image.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.out.iter().product()
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    /// Scatters one image (`channels * image_volume` values) into a
    /// `[col_rows, out_volume]` patch matrix.
    fn im2col(&self, image: &[f64], col: &mut [f64]) {
        let [k0, k1, k2] = self.kernel;
        let [o0, o1, o2] = self.out;
        let [i0, i1, i2] = self.image;
        let [s0, s1, s2] = self.spec.stride;
        let [p0, p1, p2] = self.spec.padding;
        let p_cols = self.out_volume();
        let mut row = 0;
        for c in 0..self.channels {
            let chan = &image[c * i0 * i1 * i2..(c + 1) * i0 * i1 * i2];
            for a in 0..k0 {
                for b in 0..k1 {
                    for e in 0..k2 {
                        let dst = &mut col[row * p_cols..(row + 1) * p_cols];
                        let mut idx = 0;
                        for u in 0..o0 {
                            let x = (u * s0 + a) as isize - p0 as isize;
                            for v in 0..o1 {
                                let y = (v * s1 + b) as isize - p1 as isize;
                                let line = &mut dst[idx..idx + o2];
                                idx += o2;
                                if x < 0 || x >= i0 as isize || y < 0 || y >= i1 as isize {
                                    line.fill(0.0);
                                    continue;
                                }
                                let src = &chan[(x as usize * i1 + y as usize) * i2..][..i2];
                                for (w, slot) in line.iter_mut().enumerate() {
                                    let z = (w * s2 + e) as isize - p2 as isize;
                                    *slot = if z >= 0 && z < i2 as isize { src[z as usize] } else { 0.0 };
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: accumulates patch values back into
    /// the image.
    fn col2im(&self, col: &[f64], image: &mut [f64]) {
        let [k0, k1, k2] = self.kernel;
        let [o0, o1, o2] = self.out;
        let [i0, i1, i2] = self.image;
        let [s0, s1, s2] = self.spec.stride;
        let [p0, p1, p2] = self.spec.padding;
        let p_cols = self.out_volume();
        let mut row = 0;
        for c in 0..self.channels {
            let chan = &mut image[c * i0 * i1 * i2..(c + 1) * i0 * i1 * i2];
            for a in 0..k0 {
                for b in 0..k1 {
                    for e in 0..k2 {
                        let src = &col[row * p_cols..(row + 1) * p_cols];
                        let mut idx = 0;
                        for u in 0..o0 {
                            let x = (u * s0 + a) as isize - p0 as isize;
                            for v in 0..o1 {
                                let y = (v * s1 + b) as isize - p1 as isize;
                                let line = &src[idx..idx + o2];
                                idx += o2;
                                if x < 0 || x >= i0 as isize || y < 0 || y >= i1 as isize {
                                    continue;
                                }
                                let dst = &mut chan[(x as usize * i1 + y as usize) * i2..][..i2];
                                for (w, &val) in line.iter().enumerate() {
                                    let z = (w * s2 + e) as isize - p2 as isize;
                                    if z >= 0 && z < i2 as isize {
                                        dst[z as usize] += val;
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// `c = alpha * a·b + beta * c` on row-major slices; `ta`/`tb` transpose
/// the stored matrices before multiplying.
#[allow(clippy::too_many_arguments)]
fn gemm(
    alpha: f64,
    a: &[f64],
    a_shape: (usize, usize),
    ta: bool,
    b: &[f64],
    b_shape: (usize, usize),
    tb: bool,
    beta: f64,
    c: &mut [f64],
    c_shape: (usize, usize),
) {
    let a = ArrayView2::from_shape(a_shape, a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape(b_shape, b).expect("gemm rhs shape");
    let mut c = ArrayViewMut2::from_shape(c_shape, c).expect("gemm output shape");
    let a = if ta { a.t() } else { a };
    let b = if tb { b.t() } else { b };
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}

fn dims5(t: &Tensor) -> [usize; 5] {
    let s = t.shape();
    [s[0], s[1], s[2], s[3], s[4]]
}

fn check_channels(op: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(TensorError::DimensionMismatch {
            op,
            axis: "channel",
            expected,
            found,
        });
    }
    Ok(())
}

fn conv_geometry(input: &Tensor, kernel: &Tensor, spec: Conv3dSpec) -> Result<Geometry> {
    const OP: &str = "conv3d";
    input.expect_rank(OP, 5)?;
    kernel.expect_rank(OP, 5)?;
    let [_, cin, x, y, e] = dims5(input);
    let [_, kin, kx, ky, ke] = dims5(kernel);
    check_channels(OP, kin, cin)?;
    Geometry::resolve(OP, cin, [x, y, e], [kx, ky, ke], spec)
}

fn transpose_geometry(input: &Tensor, kernel: &Tensor, spec: Conv3dSpec, output: [usize; 3]) -> Result<Geometry> {
    const OP: &str = "conv3d_transpose";
    input.expect_rank(OP, 5)?;
    kernel.expect_rank(OP, 5)?;
    let [_, cin, x, y, e] = dims5(input);
    let [kout, kin, kx, ky, ke] = dims5(kernel);
    check_channels(OP, kout, cin)?;
    let geom = Geometry::resolve(OP, kin, output, [kx, ky, ke], spec)?;
    for (axis, (&reached, &have)) in geom.out.iter().zip(&[x, y, e]).enumerate() {
        if reached != have {
            return Err(TensorError::DimensionMismatch {
                op: OP,
                axis: SPATIAL_AXES[axis],
                expected: reached,
                found: have,
            });
        }
    }
    Ok(geom)
}

/// Output extents of [`conv3d`] for the given input and kernel extents.
pub fn conv3d_output_shape(input: [usize; 3], kernel: [usize; 3], spec: Conv3dSpec) -> Result<[usize; 3]> {
    Ok(Geometry::resolve("conv3d", 1, input, kernel, spec)?.out)
}

/// Cross-correlation (no kernel flip) of `input` with `kernel`.
pub fn conv3d(input: &Tensor, kernel: &Tensor, spec: Conv3dSpec) -> Result<Tensor> {
    let g = conv_geometry(input, kernel, spec)?;
    let batch = input.shape()[0];
    let cout = kernel.shape()[0];
    let (rows, cols) = (g.col_rows(), g.out_volume());
    let in_stride = g.channels * g.image_volume();
    let mut out = vec![0.0; batch * cout * cols];
    let mut col = vec![0.0; rows * cols];
    for b in 0..batch {
        g.im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &mut col);
        gemm(
            1.0,
            kernel.data(),
            (cout, rows),
            false,
            &col,
            (rows, cols),
            false,
            0.0,
            &mut out[b * cout * cols..(b + 1) * cout * cols],
            (cout, cols),
        );
    }
    let [o0, o1, o2] = g.out;
    Tensor::new([batch, cout, o0, o1, o2], out)
}

/// Adjoint of [`conv3d`] with the same `kernel`, mapping
/// `[B, Cout, ..]` back to `[B, Cin, output]`.
///
/// `output` must be an extent that [`conv3d`] maps onto the input's
/// extents; otherwise the target is unreachable and a dimension error names
/// the first disagreeing axis.
pub fn conv3d_transpose(input: &Tensor, kernel: &Tensor, spec: Conv3dSpec, output: [usize; 3]) -> Result<Tensor> {
    let g = transpose_geometry(input, kernel, spec, output)?;
    let batch = input.shape()[0];
    let ca = kernel.shape()[0];
    let (rows, cols) = (g.col_rows(), g.out_volume());
    let out_stride = g.channels * g.image_volume();
    let mut out = vec![0.0; batch * out_stride];
    let mut col = vec![0.0; rows * cols];
    for b in 0..batch {
        gemm(
            1.0,
            kernel.data(),
            (ca, rows),
            true,
            &input.data()[b * ca * cols..(b + 1) * ca * cols],
            (ca, cols),
            false,
            0.0,
            &mut col,
            (rows, cols),
        );
        g.col2im(&col, &mut out[b * out_stride..(b + 1) * out_stride]);
    }
    Tensor::new([batch, g.channels, output[0], output[1], output[2]], out)
}

/// `(input, kernel)` gradients, each present only when requested.
pub(crate) type ConvGrads = (Option<Vec<f64>>, Option<Vec<f64>>);

/// Gradients of `conv3d(input, kernel)` given the upstream gradient.
pub(crate) fn conv3d_backward(
    input: &Tensor,
    kernel: &Tensor,
    spec: Conv3dSpec,
    grad_out: &[f64],
    want_input: bool,
    want_kernel: bool,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, kernel, spec)?;
    let batch = input.shape()[0];
    let cout = kernel.shape()[0];
    let (rows, cols) = (g.col_rows(), g.out_volume());
    let in_stride = g.channels * g.image_volume();
    let mut grad_in = want_input.then(|| vec![0.0; input.len()]);
    let mut grad_k = want_kernel.then(|| vec![0.0; kernel.len()]);
    let mut col = vec![0.0; rows * cols];
    for b in 0..batch {
        let gout = &grad_out[b * cout * cols..(b + 1) * cout * cols];
        if let Some(gk) = grad_k.as_mut() {
            g.im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &mut col);
            gemm(1.0, gout, (cout, cols), false, &col, (rows, cols), true, 1.0, gk, (cout, rows));
        }
        if let Some(gi) = grad_in.as_mut() {
            gemm(1.0, kernel.data(), (cout, rows), true, gout, (cout, cols), false, 0.0, &mut col, (rows, cols));
            g.col2im(&col, &mut gi[b * in_stride..(b + 1) * in_stride]);
        }
    }
    Ok((grad_in, grad_k))
}

/// Gradients of `conv3d_transpose(input, kernel)` given the upstream gradient.
pub(crate) fn conv3d_transpose_backward(
    input: &Tensor,
    kernel: &Tensor,
    spec: Conv3dSpec,
    output: [usize; 3],
    grad_out: &[f64],
    want_input: bool,
    want_kernel: bool,
) -> Result<ConvGrads> {
    let g = transpose_geometry(input, kernel, spec, output)?;
    let batch = input.shape()[0];
    let ca = kernel.shape()[0];
    let (rows, cols) = (g.col_rows(), g.out_volume());
    let out_stride = g.channels * g.image_volume();
    let mut grad_in = want_input.then(|| vec![0.0; input.len()]);
    let mut grad_k = want_kernel.then(|| vec![0.0; kernel.len()]);
    let mut col = vec![0.0; rows * cols];
    for b in 0..batch {
        g.im2col(&grad_out[b * out_stride..(b + 1) * out_stride], &mut col);
        if let Some(gi) = grad_in.as_mut() {
            gemm(
                1.0,
                kernel.data(),
                (ca, rows),
                false,
                &col,
                (rows, cols),
                false,
                0.0,
                &mut gi[b * ca * cols..(b + 1) * ca * cols],
                (ca, cols),
            );
        }
        if let Some(gk) = grad_k.as_mut() {
            let x = &input.data()[b * ca * cols..(b + 1) * ca * cols];
            gemm(1.0, x, (ca, cols), false, &col, (rows, cols), true, 1.0, gk, (ca, rows));
        }
    }
    Ok((grad_in, grad_k))
}
