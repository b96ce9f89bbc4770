//! Layer kernels. Activations are `(batch, features)` matrices; image
//! activations are flattened per sample in channel-major (C, H, W) order.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::par::{self, MatRef, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        in_height: usize,
        in_width: usize,
    },
    /// Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped.
    MaxPool2x2 {
        channels: usize,
        in_height: usize,
        in_width: usize,
    },
    Relu {
        features: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2x2 { .. } => "maxpool2x2",
            LayerSpec::Relu { .. } => "relu",
        }
    }

    pub fn input_features(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_features, .. } => in_features,
            LayerSpec::Conv2d {
                in_channels,
                in_height,
                in_width,
                ..
            } => in_channels * in_height * in_width,
            LayerSpec::MaxPool2x2 {
                channels,
                in_height,
                in_width,
            } => channels * in_height * in_width,
            LayerSpec::Relu { features } => features,
        }
    }

    /// Output activation shape for one sample, `[features]` or `[h, w, c]`.
    pub fn output_shape(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Dense { out_features, .. } => vec![out_features],
            LayerSpec::Conv2d { out_channels, .. } => {
                let (h, w) = self.conv_out_hw();
                vec![h, w, out_channels]
            }
            LayerSpec::MaxPool2x2 {
                channels,
                in_height,
                in_width,
            } => vec![in_height / 2, in_width / 2, channels],
            LayerSpec::Relu { features } => vec![features],
        }
    }

    pub fn output_features(&self) -> usize {
        self.output_shape().iter().product()
    }

    fn conv_out_hw(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                padding,
                stride,
                in_height,
                in_width,
                ..
            } => (
                (in_height + 2 * padding - kernel) / stride + 1,
                (in_width + 2 * padding - kernel) / stride + 1,
            ),
            _ => unreachable!("conv_out_hw on a non-conv layer"),
        }
    }

    /// Shapes of the (weight, bias) parameters, if the layer has any.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            _ => None,
        }
    }

    /// (fan_in, fan_out) used by the uniform initializer.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((in_features, out_features)),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            _ => None,
        }
    }
}

/// What a layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Dense { input: Tensor<T> },
    Conv { cols: Vec<T>, batch: usize },
    Pool { argmax: Vec<u32>, batch: usize },
    Relu { input: Tensor<T> },
}

fn check_input<T: Real>(spec: &LayerSpec, input: &Tensor<T>) -> Result<usize> {
    let want = spec.input_features();
    if input.shape().len() != 2 || input.row_len() != want {
        return Err(Error::shape(
            format!("{} layer input", spec.name()),
            &[input.rows(), want],
            input.shape(),
        ));
    }
    Ok(input.rows())
}

/// Runs one layer. `params` is `(weight, bias)` for dense and conv layers.
pub fn layer_forward<T: Real>(
    spec: &LayerSpec,
    params: Option<(&Tensor<T>, &Tensor<T>)>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, LayerCache<T>)> {
    let batch = check_input(spec, input)?;
    match *spec {
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let (w, b) = params.ok_or_else(|| Error::Config("dense layer without parameters".into()))?;
            w.expect_shape("dense weight", &[out_features, in_features])?;
            b.expect_shape("dense bias", &[out_features])?;
            let out = dense_forward(w, b, input, batch);
            Ok((out, LayerCache::Dense { input: input.clone() }))
        }
        LayerSpec::Conv2d { .. } => {
            let (w, b) = params.ok_or_else(|| Error::Config("conv layer without parameters".into()))?;
            let (ws, bs) = spec.param_shapes().expect("conv has params");
            w.expect_shape("conv weight", &ws)?;
            b.expect_shape("conv bias", &bs)?;
            let cols = im2col(spec, input.data(), batch);
            let out = conv_forward(spec, w, b, &cols, batch);
            Ok((out, LayerCache::Conv { cols, batch }))
        }
        LayerSpec::MaxPool2x2 { .. } => {
            let (out, argmax) = maxpool_forward(spec, input, batch);
            Ok((out, LayerCache::Pool { argmax, batch }))
        }
        LayerSpec::Relu { features } => {
            let data = input.data().iter().map(|&v| v.max(T::zero())).collect();
            let out = Tensor::from_vec(vec![batch, features], data)?;
            Ok((out, LayerCache::Relu { input: input.clone() }))
        }
    }
}

/// Backpropagates `grad_out` through one layer. Returns the input gradient
/// (skipped when `need_input_grad` is false) and `(dW, db)` for layers with
/// parameters.
#[allow(clippy::type_complexity)]
pub fn layer_backward<T: Real>(
    spec: &LayerSpec,
    params: Option<(&Tensor<T>, &Tensor<T>)>,
    cache: &LayerCache<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<(Option<Tensor<T>>, Option<(Tensor<T>, Tensor<T>)>)> {
    let out_features = spec.output_features();
    let batch = grad_out.rows();
    if grad_out.shape() != [batch, out_features] {
        return Err(Error::shape(
            format!("{} layer output gradient", spec.name()),
            &[batch, out_features],
            grad_out.shape(),
        ));
    }
    match (spec, cache) {
        (LayerSpec::Dense { in_features, .. }, LayerCache::Dense { input }) => {
            cache_batch(spec, input.rows(), batch)?;
            let (w, _) = params.ok_or_else(|| Error::Cache("dense layer without parameters".into()))?;
            let g = MatRef::new(grad_out.data(), batch, out_features);
            let mut dw = vec![T::zero(); out_features * in_features];
            par::gemm(
                T::one(),
                g.t(),
                MatRef::new(input.data(), batch, *in_features),
                T::zero(),
                &mut dw,
            );
            let db = column_sums(grad_out.data(), batch, out_features);
            let dx = if need_input_grad {
                let mut dx = vec![T::zero(); batch * in_features];
                par::gemm(
                    T::one(),
                    g,
                    MatRef::new(w.data(), out_features, *in_features),
                    T::zero(),
                    &mut dx,
                );
                Some(Tensor::from_vec(vec![batch, *in_features], dx)?)
            } else {
                None
            };
            Ok((
                dx,
                Some((
                    Tensor::from_vec(vec![out_features, *in_features], dw)?,
                    Tensor::from_vec(vec![out_features], db)?,
                )),
            ))
        }
        (LayerSpec::Conv2d { .. }, LayerCache::Conv { cols, batch: cb }) => {
            cache_batch(spec, *cb, batch)?;
            let (w, _) = params.ok_or_else(|| Error::Cache("conv layer without parameters".into()))?;
            let (dx, dw, db) = conv_backward(spec, w, cols, grad_out, batch, need_input_grad);
            let (ws, bs) = spec.param_shapes().expect("conv has params");
            Ok((
                dx.map(|d| Tensor::from_vec(vec![batch, spec.input_features()], d))
                    .transpose()?,
                Some((Tensor::from_vec(ws, dw)?, Tensor::from_vec(bs, db)?)),
            ))
        }
        (LayerSpec::MaxPool2x2 { .. }, LayerCache::Pool { argmax, batch: cb }) => {
            cache_batch(spec, *cb, batch)?;
            let in_features = spec.input_features();
            let mut dx = vec![T::zero(); batch * in_features];
            let g = grad_out.data();
            par::for_each_row(&mut dx, in_features, |n, row| {
                let base = n * out_features;
                for o in 0..out_features {
                    row[argmax[base + o] as usize] += g[base + o];
                }
            });
            Ok((Some(Tensor::from_vec(vec![batch, in_features], dx)?), None))
        }
        (LayerSpec::Relu { features }, LayerCache::Relu { input }) => {
            cache_batch(spec, input.rows(), batch)?;
            let dx = input
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                .collect();
            Ok((Some(Tensor::from_vec(vec![batch, *features], dx)?), None))
        }
        _ => Err(Error::Cache(format!(
            "cache kind does not match {} layer",
            spec.name()
        ))),
    }
}

fn cache_batch(spec: &LayerSpec, cached: usize, given: usize) -> Result<()> {
    if cached != given {
        return Err(Error::Cache(format!(
            "{} layer cached a batch of {cached}, gradient has {given}",
            spec.name()
        )));
    }
    Ok(())
}

fn column_sums<T: Real>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut sums = vec![T::zero(); cols];
    for r in 0..rows {
        for (s, &v) in sums.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *s += v;
        }
    }
    sums
}

pub(crate) fn dense_forward<T: Real>(w: &Tensor<T>, b: &Tensor<T>, input: &Tensor<T>, batch: usize) -> Tensor<T> {
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![T::zero(); batch * out_f];
    for row in out.chunks_mut(out_f) {
        row.copy_from_slice(b.data());
    }
    par::gemm(
        T::one(),
        MatRef::new(input.data(), batch, in_f),
        MatRef::new(w.data(), out_f, in_f).t(),
        T::one(),
        &mut out,
    );
    Tensor::from_vec(vec![batch, out_f], out).expect("dense output shape")
}

struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
    stride: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

fn geom(spec: &LayerSpec) -> ConvGeom {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            stride,
            in_height,
            in_width,
        } => {
            let (oh, ow) = spec.conv_out_hw();
            ConvGeom {
                cin: in_channels,
                cout: out_channels,
                k: kernel,
                pad: padding,
                stride,
                h: in_height,
                w: in_width,
                oh,
                ow,
            }
        }
        _ => unreachable!(),
    }
}

/// Patch matrix: one row per (sample, output pixel), `cin*k*k` columns in
/// (c, ky, kx) order to match the weight layout.
fn im2col<T: Real>(spec: &LayerSpec, input: &[T], batch: usize) -> Vec<T> {
    let g = geom(spec);
    let patch = g.cin * g.k * g.k;
    let per_sample = g.oh * g.ow * patch;
    let in_sz = g.cin * g.h * g.w;
    let mut cols = vec![T::zero(); batch * per_sample];
    par::for_each_row(&mut cols, per_sample, |n, out| {
        let x = &input[n * in_sz..(n + 1) * in_sz];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = &mut out[(oy * g.ow + ox) * patch..(oy * g.ow + ox + 1) * patch];
                for c in 0..g.cin {
                    for ky in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        for kx in 0..g.k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            let v = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                x[c * g.h * g.w + iy as usize * g.w + ix as usize]
                            } else {
                                T::zero()
                            };
                            row[(c * g.k + ky) * g.k + kx] = v;
                        }
                    }
                }
            }
        }
    });
    cols
}

fn conv_forward<T: Real>(spec: &LayerSpec, w: &Tensor<T>, b: &Tensor<T>, cols: &[T], batch: usize) -> Tensor<T> {
    let g = geom(spec);
    let patch = g.cin * g.k * g.k;
    let pix = g.oh * g.ow;
    // (batch*pix, cout) = cols * W^T
    let mut tmp = vec![T::zero(); batch * pix * g.cout];
    par::gemm(
        T::one(),
        MatRef::new(cols, batch * pix, patch),
        MatRef::new(w.data(), g.cout, patch).t(),
        T::zero(),
        &mut tmp,
    );
    let mut out = vec![T::zero(); batch * g.cout * pix];
    let bias = b.data();
    par::for_each_row(&mut out, g.cout * pix, |n, row| {
        for p in 0..pix {
            let src = &tmp[(n * pix + p) * g.cout..(n * pix + p + 1) * g.cout];
            for (c, &v) in src.iter().enumerate() {
                row[c * pix + p] = v + bias[c];
            }
        }
    });
    Tensor::from_vec(vec![batch, g.cout * pix], out).expect("conv output shape")
}

#[allow(clippy::type_complexity)]
fn conv_backward<T: Real>(
    spec: &LayerSpec,
    w: &Tensor<T>,
    cols: &[T],
    grad_out: &Tensor<T>,
    batch: usize,
    need_input_grad: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let g = geom(spec);
    let patch = g.cin * g.k * g.k;
    let pix = g.oh * g.ow;
    let go = grad_out.data();
    // regroup output gradient to (batch*pix, cout)
    let mut gp = vec![T::zero(); batch * pix * g.cout];
    par::for_each_row(&mut gp, pix * g.cout, |n, row| {
        let src = &go[n * g.cout * pix..(n + 1) * g.cout * pix];
        for c in 0..g.cout {
            for p in 0..pix {
                row[p * g.cout + c] = src[c * pix + p];
            }
        }
    });
    let gmat = MatRef::new(&gp, batch * pix, g.cout);
    let mut dw = vec![T::zero(); g.cout * patch];
    par::gemm(T::one(), gmat.t(), MatRef::new(cols, batch * pix, patch), T::zero(), &mut dw);
    let db = column_sums(&gp, batch * pix, g.cout);
    if !need_input_grad {
        return (None, dw, db);
    }
    let mut dcols = vec![T::zero(); batch * pix * patch];
    par::gemm(T::one(), gmat, MatRef::new(w.data(), g.cout, patch), T::zero(), &mut dcols);
    let in_sz = g.cin * g.h * g.w;
    let mut dx = vec![T::zero(); batch * in_sz];
    par::for_each_row(&mut dx, in_sz, |n, x| {
        let dc = &dcols[n * pix * patch..(n + 1) * pix * patch];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = &dc[(oy * g.ow + ox) * patch..(oy * g.ow + ox + 1) * patch];
                for c in 0..g.cin {
                    for ky in 0..g.k {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        if iy < 0 || iy as usize >= g.h {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix as usize >= g.w {
                                continue;
                            }
                            x[c * g.h * g.w + iy as usize * g.w + ix as usize] += row[(c * g.k + ky) * g.k + kx];
                        }
                    }
                }
            }
        }
    });
    (Some(dx), dw, db)
}

fn maxpool_forward<T: Real>(spec: &LayerSpec, input: &Tensor<T>, batch: usize) -> (Tensor<T>, Vec<u32>) {
    let (c, h, w) = match *spec {
        LayerSpec::MaxPool2x2 {
            channels,
            in_height,
            in_width,
        } => (channels, in_height, in_width),
        _ => unreachable!(),
    };
    let (oh, ow) = (h / 2, w / 2);
    let out_sz = c * oh * ow;
    let in_sz = c * h * w;
    let x = input.data();
    let mut out = vec![T::zero(); batch * out_sz];
    let mut argmax = vec![0u32; batch * out_sz];
    for n in 0..batch {
        let xs = &x[n * in_sz..(n + 1) * in_sz];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    // first maximal element wins ties
                    let mut best_idx = ch * h * w + (2 * oy) * w + 2 * ox;
                    let mut best = xs[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if xs[idx] > best {
                            best = xs[idx];
                            best_idx = idx;
                        }
                    }
                    let o = n * out_sz + ch * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx as u32;
                }
            }
        }
    }
    (
        Tensor::from_vec(vec![batch, out_sz], out).expect("pool output shape"),
        argmax,
    )
}
