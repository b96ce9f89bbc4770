use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{layer_backward, layer_forward, LayerCache, LayerSpec};
use crate::nn::tensor::Tensor;
use crate::par::{self, MatRef, Real};
use crate::rng::{self, Rng, Stream};

/// Fixed model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// 1024-400-400 MLP (32x32 padded inputs).
    Mlp400,
    /// 1024-1000-1000 MLP.
    Mlp1000,
    /// 784-256-256 MLP.
    Mlp256x2,
    /// Four 5x5 conv layers (10, 20, 40, 70 filters) and a 256-unit dense layer.
    CnnSmall,
}

impl Arch {
    pub fn input_dim(self) -> usize {
        match self {
            Arch::Mlp400 | Arch::Mlp1000 => 1024,
            Arch::Mlp256x2 | Arch::CnnSmall => 784,
        }
    }

    pub fn feature_dim(self) -> usize {
        match self {
            Arch::Mlp400 => 400,
            Arch::Mlp1000 => 1000,
            Arch::Mlp256x2 | Arch::CnnSmall => 256,
        }
    }

    pub fn trunk_specs(self) -> Vec<LayerSpec> {
        let mlp = |sizes: &[usize]| {
            let mut v = Vec::new();
            for w in sizes.windows(2) {
                v.push(LayerSpec::Dense {
                    in_features: w[0],
                    out_features: w[1],
                });
                v.push(LayerSpec::Relu { features: w[1] });
            }
            v
        };
        match self {
            Arch::Mlp400 => mlp(&[1024, 400, 400]),
            Arch::Mlp1000 => mlp(&[1024, 1000, 1000]),
            Arch::Mlp256x2 => mlp(&[784, 256, 256]),
            Arch::CnnSmall => {
                let conv = |cin, cout, padding, hw| LayerSpec::Conv2d {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: 5,
                    padding,
                    stride: 1,
                    in_height: hw,
                    in_width: hw,
                };
                vec![
                    conv(1, 10, 2, 28),
                    LayerSpec::Relu { features: 28 * 28 * 10 },
                    LayerSpec::MaxPool2x2 {
                        channels: 10,
                        in_height: 28,
                        in_width: 28,
                    },
                    conv(10, 20, 2, 14),
                    LayerSpec::Relu { features: 14 * 14 * 20 },
                    LayerSpec::MaxPool2x2 {
                        channels: 20,
                        in_height: 14,
                        in_width: 14,
                    },
                    conv(20, 40, 0, 7),
                    LayerSpec::Relu { features: 3 * 3 * 40 },
                    conv(40, 70, 2, 3),
                    LayerSpec::Relu { features: 3 * 3 * 70 },
                    LayerSpec::Dense {
                        in_features: 3 * 3 * 70,
                        out_features: 256,
                    },
                    LayerSpec::Relu { features: 256 },
                ]
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Mlp400 => "mlp400",
            Arch::Mlp1000 => "mlp1000",
            Arch::Mlp256x2 => "mlp256x2",
            Arch::CnnSmall => "cnn_small",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp400" => Ok(Arch::Mlp400),
            "mlp1000" => Ok(Arch::Mlp1000),
            "mlp256x2" => Ok(Arch::Mlp256x2),
            "cnn_small" => Ok(Arch::CnnSmall),
            other => Err(Error::Config(format!("unknown arch `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    #[default]
    Random,
    Zeros,
}

/// Output units grouped into heads, in logit order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeadLayout {
    pub heads: Vec<usize>,
}

impl HeadLayout {
    pub fn new(heads: Vec<usize>) -> Self {
        HeadLayout { heads }
    }

    pub fn total_units(&self) -> usize {
        self.heads.iter().sum()
    }

    /// Logit range of head `h`.
    pub fn range(&self, h: usize) -> Range<usize> {
        let start: usize = self.heads[..h].iter().sum();
        start..start + self.heads[h]
    }

    pub fn is_prefix_of(&self, other: &HeadLayout) -> bool {
        other.heads.len() >= self.heads.len() && other.heads[..self.heads.len()] == self.heads[..]
    }
}

/// Index into a network's parameter registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
struct Param<T> {
    name: String,
    value: Tensor<T>,
    is_head: bool,
}

#[derive(Debug, Clone)]
struct TrunkLayer {
    spec: LayerSpec,
    params: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
struct Head {
    units: usize,
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    arch: Arch,
    trunk: Vec<TrunkLayer>,
    heads: Vec<Head>,
    params: Vec<Param<T>>,
    head_init: HeadInit,
    seed: u64,
    version: u64,
}

/// Everything backward needs from one forward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    version: u64,
    batch: usize,
    heads: usize,
    layers: Vec<LayerCache<T>>,
    features: Tensor<T>,
}

/// Per-parameter gradients keyed like the registry. `None` marks a
/// parameter that took no part in the loss (an inactive head).
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.as_mut())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Adds `other` into `self` (absent entries in `self` are taken over).
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y),
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn uniform_init<T: Real>(shape: &[usize], bound: f64, seed: u64, index: usize) -> Tensor<T> {
    let mut rng = rng::substream(seed, Stream::Init, index as u64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..bound))).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("init shape")
}

/// Builds `arch` with the given output heads. Trunk weights are uniform in
/// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
pub fn build_model<T: Real>(
    arch: Arch,
    input_dim: usize,
    layout: &HeadLayout,
    head_init: HeadInit,
    seed: u64,
) -> Result<Network<T>> {
    if input_dim != arch.input_dim() {
        return Err(Error::Config(format!(
            "{arch} expects input_dim {}, got {input_dim}",
            arch.input_dim()
        )));
    }
    let mut net = Network {
        arch,
        trunk: Vec::new(),
        heads: Vec::new(),
        params: Vec::new(),
        head_init,
        seed,
        version: 0,
    };
    let (mut n_dense, mut n_conv) = (0, 0);
    for spec in arch.trunk_specs() {
        let params = match (spec.param_shapes(), spec.fans()) {
            (Some((ws, bs)), Some((fi, fo))) => {
                let prefix = match spec {
                    LayerSpec::Conv2d { .. } => {
                        n_conv += 1;
                        format!("conv{n_conv}")
                    }
                    _ => {
                        n_dense += 1;
                        format!("fc{n_dense}")
                    }
                };
                let bound = (6.0 / (fi + fo) as f64).sqrt();
                let w = net.push_param(format!("{prefix}.weight"), Tensor::zeros(&ws), false);
                net.params[w].value = uniform_init(&ws, bound, seed, w);
                let b = net.push_param(format!("{prefix}.bias"), Tensor::zeros(&bs), false);
                Some((w, b))
            }
            _ => None,
        };
        net.trunk.push(TrunkLayer { spec, params });
    }
    net.ensure_heads(layout)?;
    Ok(net)
}

impl<T: Real> Network<T> {
    fn push_param(&mut self, name: String, value: Tensor<T>, is_head: bool) -> usize {
        self.params.push(Param { name, value, is_head });
        self.params.len() - 1
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn layout(&self) -> HeadLayout {
        HeadLayout::new(self.heads.iter().map(|h| h.units).collect())
    }

    pub fn output_units(&self) -> usize {
        self.heads.iter().map(|h| h.units).sum()
    }

    pub fn trunk_specs(&self) -> Vec<LayerSpec> {
        self.trunk.iter().map(|l| l.spec).collect()
    }

    /// Grows the output layer to `layout`. Existing heads must be a prefix
    /// of it; returns the ids of newly created parameters.
    pub fn ensure_heads(&mut self, layout: &HeadLayout) -> Result<Vec<ParamId>> {
        let current = self.layout();
        if !current.is_prefix_of(layout) {
            return Err(Error::Config(format!(
                "head layout {:?} does not extend existing {:?}",
                layout.heads, current.heads
            )));
        }
        let features = self.arch.feature_dim();
        let mut created = Vec::new();
        for units in layout.heads[current.heads.len()..].iter().copied() {
            let k = self.heads.len();
            let shape = [units, features];
            let w = self.push_param(format!("head.{k}.weight"), Tensor::zeros(&shape), true);
            if self.head_init == HeadInit::Random {
                let bound = (6.0 / (features + units) as f64).sqrt();
                self.params[w].value = uniform_init(&shape, bound, self.seed, w);
            }
            let b = self.push_param(format!("head.{k}.bias"), Tensor::zeros(&[units]), true);
            self.heads.push(Head { units, weight: w, bias: b });
            created.extend([ParamId(w), ParamId(b)]);
        }
        if !created.is_empty() {
            self.version += 1;
        }
        Ok(created)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn is_head_param(&self, id: ParamId) -> bool {
        self.params[id.0].is_head
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        self.version += 1;
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Head parameters `(weight, bias)` of head `h`.
    pub fn head_params(&self, h: usize) -> (ParamId, ParamId) {
        (ParamId(self.heads[h].weight), ParamId(self.heads[h].bias))
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Scalars in trunk weight matrices only (biases and heads excluded).
    pub fn trunk_weight_scalars(&self) -> usize {
        self.trunk
            .iter()
            .filter_map(|l| l.params)
            .map(|(w, _)| self.params[w].value.len())
            .sum()
    }

    pub fn trunk_scalars(&self) -> usize {
        self.params.iter().filter(|p| !p.is_head).map(|p| p.value.len()).sum()
    }

    /// Activation shape after each trunk layer, for one sample.
    pub fn activation_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        self.trunk.iter().map(|l| (l.spec.name(), l.spec.output_shape())).collect()
    }

    /// Named copy of every parameter.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Loads parameters by name; every registry entry must be present.
    pub fn load_state(&mut self, state: &[(String, Tensor<T>)]) -> Result<()> {
        for p in &mut self.params {
            let (_, v) = state
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{}`", p.name)))?;
            v.expect_shape(&p.name, p.value.shape())?;
            p.value = v.clone();
        }
        self.version += 1;
        Ok(())
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            arch: self.arch,
            trunk: self.trunk.clone(),
            heads: self.heads.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    is_head: p.is_head,
                })
                .collect(),
            head_init: self.head_init,
            seed: self.seed,
            version: 0,
        }
    }

    fn layer_params(&self, l: &TrunkLayer) -> Option<(&Tensor<T>, &Tensor<T>)> {
        l.params.map(|(w, b)| (&self.params[w].value, &self.params[b].value))
    }

    fn head_matrix(&self) -> (Vec<T>, Vec<T>) {
        let f = self.arch.feature_dim();
        let total = self.output_units();
        let mut w = Vec::with_capacity(total * f);
        let mut b = Vec::with_capacity(total);
        for h in &self.heads {
            w.extend_from_slice(self.params[h.weight].value.data());
            b.extend_from_slice(self.params[h.bias].value.data());
        }
        (w, b)
    }

    fn heads_forward(&self, features: &Tensor<T>) -> Tensor<T> {
        let f = self.arch.feature_dim();
        let total = self.output_units();
        let batch = features.rows();
        let (w, b) = self.head_matrix();
        let mut out = vec![T::zero(); batch * total];
        if total > 0 {
            for row in out.chunks_mut(total) {
                row.copy_from_slice(&b);
            }
            par::gemm(
                T::one(),
                MatRef::new(features.data(), batch, f),
                MatRef::new(&w, total, f).t(),
                T::one(),
                &mut out,
            );
        }
        Tensor::from_vec(vec![batch, total], out).expect("logit shape")
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.row_len() != self.input_dim() {
            return Err(Error::shape(
                format!("{} network input", self.arch),
                &[x.rows(), self.input_dim()],
                x.shape(),
            ));
        }
        Ok(())
    }

    /// Logits for a `(batch, input_dim)` input, keeping what backward needs.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.trunk.len());
        let mut act = x.clone();
        for layer in &self.trunk {
            let (out, cache) = layer_forward(&layer.spec, self.layer_params(layer), &act)?;
            caches.push(cache);
            act = out;
        }
        let logits = self.heads_forward(&act);
        Ok((
            logits,
            ForwardCache {
                version: self.version,
                batch: x.rows(),
                heads: self.heads.len(),
                layers: caches,
                features: act,
            },
        ))
    }

    /// Logits only (no cache).
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &self.trunk {
            act = layer_forward(&layer.spec, self.layer_params(layer), &act)?.0;
        }
        Ok(self.heads_forward(&act))
    }

    /// Reverse pass. With `active_heads`, heads marked inactive get no
    /// gradient entry at all.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        dlogits: &Tensor<T>,
        active_heads: Option<&[bool]>,
    ) -> Result<Gradients<T>> {
        if cache.version != self.version || cache.heads != self.heads.len() {
            return Err(Error::Cache("network changed since the forward pass".into()));
        }
        if cache.layers.len() != self.trunk.len() {
            return Err(Error::Cache("layer count differs from the forward pass".into()));
        }
        let total = self.output_units();
        dlogits.expect_shape("dlogits", &[cache.batch, total])?;
        let f = self.arch.feature_dim();
        let batch = cache.batch;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.params.len()];

        // heads
        let g = MatRef::new(dlogits.data(), batch, total);
        let mut dw_all = vec![T::zero(); total * f];
        par::gemm(
            T::one(),
            g.t(),
            MatRef::new(cache.features.data(), batch, f),
            T::zero(),
            &mut dw_all,
        );
        let mut offset = 0;
        for (k, h) in self.heads.iter().enumerate() {
            let active = active_heads.is_none_or(|a| a.get(k).copied().unwrap_or(false));
            if active {
                let dw = dw_all[offset * f..(offset + h.units) * f].to_vec();
                let mut db = vec![T::zero(); h.units];
                for r in 0..batch {
                    for (j, d) in db.iter_mut().enumerate() {
                        *d += dlogits.data()[r * total + offset + j];
                    }
                }
                grads[h.weight] = Some(Tensor::from_vec(vec![h.units, f], dw)?);
                grads[h.bias] = Some(Tensor::from_vec(vec![h.units], db)?);
            }
            offset += h.units;
        }
        let (w_all, _) = self.head_matrix();
        let mut dfeat = vec![T::zero(); batch * f];
        if total > 0 {
            par::gemm(T::one(), g, MatRef::new(&w_all, total, f), T::zero(), &mut dfeat);
        }
        let mut grad = Tensor::from_vec(vec![batch, f], dfeat)?;

        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let (dx, pg) = layer_backward(&layer.spec, self.layer_params(layer), &cache.layers[i], &grad, i > 0)?;
            if let (Some((w, b)), Some((dw, db))) = (layer.params, pg) {
                grads[w] = Some(dw);
                grads[b] = Some(db);
            }
            match dx {
                Some(d) => grad = d,
                None => break,
            }
        }
        Ok(Gradients { grads })
    }

    /// Empty gradient set sized to this registry.
    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            grads: self.params.iter().map(|p| Some(Tensor::zeros(p.value.shape()))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp400_counts_match_overhead_formula() {
        let net: Network<f32> = build_model(Arch::Mlp400, 1024, &HeadLayout::new(vec![10]), HeadInit::Random, 0).unwrap();
        assert_eq!(net.trunk_scalars(), (1024 * 400 + 400) + (400 * 400 + 400));
        assert_eq!(net.trunk_weight_scalars() * 2, 1_139_200);
        assert_eq!(net.num_scalars(), net.trunk_scalars() + 400 * 10 + 10);
    }

    #[test]
    fn mlp1000_counts_match_overhead_formula() {
        let net: Network<f32> = build_model(Arch::Mlp1000, 1024, &HeadLayout::new(vec![10]), HeadInit::Random, 0).unwrap();
        assert_eq!(net.trunk_weight_scalars() * 2, 4_048_000);
    }

    #[test]
    fn cnn_activation_sizes() {
        let net: Network<f32> = build_model(Arch::CnnSmall, 784, &HeadLayout::new(vec![2]), HeadInit::Random, 0).unwrap();
        let shapes: Vec<Vec<usize>> = net
            .activation_shapes()
            .into_iter()
            .filter(|(n, _)| *n == "maxpool2x2" || *n == "dense")
            .map(|(_, s)| s)
            .collect();
        assert_eq!(shapes, vec![vec![14, 14, 10], vec![7, 7, 20], vec![256]]);
        let convs: Vec<Vec<usize>> = net
            .activation_shapes()
            .into_iter()
            .filter(|(n, _)| *n == "conv2d")
            .map(|(_, s)| s)
            .collect();
        assert_eq!(convs[2], vec![3, 3, 40]);
        assert_eq!(convs[3], vec![3, 3, 70]);
        let x = Tensor::<f32>::zeros(&[3, 784]);
        assert_eq!(net.logits(&x).unwrap().shape(), &[3, 2]);
    }

    #[test]
    fn wrong_input_dim_is_config_error() {
        let r: Result<Network<f32>> = build_model(Arch::Mlp400, 784, &HeadLayout::new(vec![2]), HeadInit::Random, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn growing_heads_keeps_existing_params() {
        let mut net: Network<f32> = build_model(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2]), HeadInit::Random, 3).unwrap();
        let before = net.param(net.head_params(0).0).clone();
        let new = net.ensure_heads(&HeadLayout::new(vec![2, 2])).unwrap();
        assert_eq!(new.len(), 2);
        assert_eq!(net.param(net.head_params(0).0), &before);
        assert_eq!(net.output_units(), 4);
        assert!(net.ensure_heads(&HeadLayout::new(vec![4])).is_err());
        assert_eq!(net.name(new[0]), "head.1.weight");
    }

    #[test]
    fn zero_head_init() {
        let net: Network<f32> = build_model(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2, 2]), HeadInit::Zeros, 3).unwrap();
        assert!(net.param(net.head_params(1).0).data().iter().all(|&v| v == 0.0));
        assert!(net.param(ParamId(0)).max_abs() > 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net: Network<f64> = build_model(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2]), HeadInit::Random, 3).unwrap();
        let x = Tensor::zeros(&[1, 784]);
        let (_, cache) = net.forward(&x).unwrap();
        net.param_mut(ParamId(0)).data_mut()[0] = 1.0;
        let d = Tensor::zeros(&[1, 2]);
        assert!(matches!(net.backward(&cache, &d, None), Err(Error::Cache(_))));
    }

    #[test]
    fn zero_dlogits_give_zero_gradients() {
        let net: Network<f64> = build_model(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2]), HeadInit::Random, 3).unwrap();
        let x = Tensor::full(&[2, 784], 0.3);
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &Tensor::zeros(&[2, 2]), None).unwrap();
        assert_eq!(g.iter().count(), net.param_count());
        assert!(g.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn inactive_heads_get_no_gradient() {
        let net: Network<f64> = build_model(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2, 2]), HeadInit::Random, 3).unwrap();
        let x = Tensor::full(&[1, 784], 0.3);
        let (_, cache) = net.forward(&x).unwrap();
        let g = net.backward(&cache, &Tensor::full(&[1, 4], 0.1), Some(&[true, false])).unwrap();
        let (w1, b1) = net.head_params(1);
        assert!(g.get(w1).is_none() && g.get(b1).is_none());
        assert!(g.get(net.head_params(0).0).is_some());
    }

    #[test]
    fn state_round_trip_by_name() {
        let a: Network<f32> = build_model(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2]), HeadInit::Random, 1).unwrap();
        let mut b: Network<f32> = build_model(Arch::Mlp256x2, 784, &HeadLayout::new(vec![2]), HeadInit::Random, 2).unwrap();
        b.load_state(&a.state()).unwrap();
        let x = Tensor::full(&[1, 784], 0.5);
        assert_eq!(a.logits(&x).unwrap(), b.logits(&x).unwrap());
    }
}
