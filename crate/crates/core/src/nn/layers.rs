//! The fixed layer set and its forward/backward kernels.
//!
//! Convolutions are valid (no padding), stride 1, square kernels; pooling is
//! 2×2 with stride 2. Kernels operate on a whole batch, looping over samples
//! in order so every reduction has a fixed order.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const POOL: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    MaxPool2d,
    Relu,
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. })
    }

    /// `(weight shape, bias shape)` for parameterised layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    /// Number of scalar parameters this layer carries.
    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => {
                let [c, h, w] = expect_chw(self, input)?;
                if c != in_channels {
                    return Err(Error::Shape(format!(
                        "conv2d expects {in_channels} input channels, got {c}"
                    )));
                }
                if h < kernel || w < kernel {
                    return Err(Error::Shape(format!(
                        "conv2d kernel {kernel} larger than input {h}x{w}"
                    )));
                }
                Ok(vec![out_channels, h - kernel + 1, w - kernel + 1])
            }
            LayerSpec::MaxPool2d => {
                let [c, h, w] = expect_chw(self, input)?;
                if h < POOL || w < POOL {
                    return Err(Error::Shape(format!("maxpool2d input {h}x{w} too small")));
                }
                Ok(vec![c, h / POOL, w / POOL])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if input.len() != 1 || input[0] != in_features {
                    return Err(Error::Shape(format!(
                        "linear expects [{in_features}], got {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
        }
    }
}

fn expect_chw(layer: &LayerSpec, input: &[usize]) -> Result<[usize; 3]> {
    match input {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(format!(
            "{} expects a C×H×W input, got {input:?}",
            layer.kind()
        ))),
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => write!(f, "conv2d({in_channels},{out_channels},{kernel})"),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => write!(f, "linear({in_features},{out_features})"),
            other => f.write_str(other.kind()),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], &s[open + 1..s.len() - 1]),
            Some(_) => return Err(Error::InvalidArgument(format!("malformed layer `{s}`"))),
            None => (s, ""),
        };
        let nums = args
            .split(',')
            .filter(|a| !a.trim().is_empty())
            .map(|a| a.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArgument(format!("layer `{s}`: {e}")))?;
        match (name, nums.as_slice()) {
            ("conv2d", &[i, o, k]) => Ok(LayerSpec::Conv2d {
                in_channels: i,
                out_channels: o,
                kernel: k,
            }),
            ("linear", &[i, o]) => Ok(LayerSpec::Linear {
                in_features: i,
                out_features: o,
            }),
            ("maxpool2d", []) => Ok(LayerSpec::MaxPool2d),
            ("relu", []) => Ok(LayerSpec::Relu),
            ("flatten", []) => Ok(LayerSpec::Flatten),
            _ => Err(Error::InvalidArgument(format!("unknown layer `{s}`"))),
        }
    }
}

/// Geometry of a single valid convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub out: usize,
}

impl ConvGeom {
    pub fn oh(&self) -> usize {
        self.h - self.k + 1
    }
    pub fn ow(&self) -> usize {
        self.w - self.k + 1
    }
    /// Rows of the unfolded input: C·k·k.
    pub fn patch(&self) -> usize {
        self.c * self.k * self.k
    }
    /// Columns of the unfolded input: OH·OW.
    pub fn positions(&self) -> usize {
        self.oh() * self.ow()
    }
}

/// Unfold one C×H×W sample into a (C·k·k)×(OH·OW) matrix.
pub(crate) fn im2col<T: Real>(g: &ConvGeom, input: &[T], cols: &mut [T]) {
    let (oh, ow, k) = (g.oh(), g.ow(), g.k);
    let p = g.positions();
    for c in 0..g.c {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let src = &plane[(oy + ky) * g.w + kx..(oy + ky) * g.w + kx + ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a C×H×W gradient.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], grad_input: &mut [T]) {
    let (oh, ow, k) = (g.oh(), g.ow(), g.k);
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut grad_input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ky) * g.w + kx..(oy + ky) * g.w + kx + ow];
                    for (d, &s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    bias: &[T],
    output: &mut [T],
) {
    let (patch, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.out * p;
    let mut cols = vec![T::zero(); patch * p];
    for b in 0..batch {
        im2col(g, &input[b * in_len..(b + 1) * in_len], &mut cols);
        let out = &mut output[b * out_len..(b + 1) * out_len];
        for (o, row) in out.chunks_exact_mut(p).enumerate() {
            row.fill(bias[o]);
        }
        T::gemm(
            g.out, patch, p, T::one(), weight, patch as isize, 1, &cols, p as isize, 1,
            T::one(), out, p as isize, 1,
        );
    }
}

/// Accumulates weight and bias gradients; writes the input gradient when
/// `grad_input` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    input: &[T],
    weight: &[T],
    grad_output: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    mut grad_input: Option<&mut [T]>,
) {
    let (patch, p) = (g.patch(), g.positions());
    let in_len = g.c * g.h * g.w;
    let out_len = g.out * p;
    let mut cols = vec![T::zero(); patch * p];
    let mut dcols = vec![T::zero(); patch * p];
    for b in 0..batch {
        let dy = &grad_output[b * out_len..(b + 1) * out_len];
        for (o, row) in dy.chunks_exact(p).enumerate() {
            let mut s = T::zero();
            for &v in row {
                s += v;
            }
            grad_bias[o] += s;
        }
        im2col(g, &input[b * in_len..(b + 1) * in_len], &mut cols);
        // dW += dY · colsᵀ
        T::gemm(
            g.out, p, patch, T::one(), dy, p as isize, 1, &cols, 1, p as isize, T::one(),
            grad_weight, patch as isize, 1,
        );
        if let Some(gi) = grad_input.as_deref_mut() {
            // dcols = Wᵀ · dY
            T::gemm(
                patch, g.out, p, T::one(), weight, 1, patch as isize, dy, p as isize, 1,
                T::zero(), &mut dcols, p as isize, 1,
            );
            col2im(g, &dcols, &mut gi[b * in_len..(b + 1) * in_len]);
        }
    }
}

pub(crate) fn linear_forward<T: Real>(
    batch: usize,
    in_f: usize,
    out_f: usize,
    input: &[T],
    weight: &[T],
    bias: &[T],
    output: &mut [T],
) {
    for row in output.chunks_exact_mut(out_f) {
        row.copy_from_slice(bias);
    }
    // Y = X · Wᵀ
    T::gemm(
        batch, in_f, out_f, T::one(), input, in_f as isize, 1, weight, 1, in_f as isize,
        T::one(), output, out_f as isize, 1,
    );
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward<T: Real>(
    batch: usize,
    in_f: usize,
    out_f: usize,
    input: &[T],
    weight: &[T],
    grad_output: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    grad_input: Option<&mut [T]>,
) {
    for row in grad_output.chunks_exact(out_f) {
        for (gb, &d) in grad_bias.iter_mut().zip(row) {
            *gb += d;
        }
    }
    // dW += dYᵀ · X
    T::gemm(
        out_f, batch, in_f, T::one(), grad_output, 1, out_f as isize, input, in_f as isize, 1,
        T::one(), grad_weight, in_f as isize, 1,
    );
    if let Some(gi) = grad_input {
        // dX = dY · W
        T::gemm(
            batch, out_f, in_f, T::one(), grad_output, out_f as isize, 1, weight, in_f as isize,
            1, T::zero(), gi, in_f as isize, 1,
        );
    }
}

/// 2×2/2 max pooling over `planes` H×W planes. Records the flat input index
/// of each selected maximum (first maximum in scan order on ties).
pub(crate) fn maxpool_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    input: &[T],
    output: &mut [T],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / POOL, w / POOL);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (oy * POOL) * w + ox * POOL;
                for dy in 0..POOL {
                    for dx in 0..POOL {
                        let idx = base + (oy * POOL + dy) * w + ox * POOL + dx;
                        if input[idx] > input[best] {
                            best = idx;
                        }
                    }
                }
                let o = pl * oh * ow + oy * ow + ox;
                output[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn maxpool_backward<T: Real>(argmax: &[u32], grad_output: &[T], grad_input: &mut [T]) {
    for (&src, &g) in argmax.iter().zip(grad_output) {
        grad_input[src as usize] += g;
    }
}
