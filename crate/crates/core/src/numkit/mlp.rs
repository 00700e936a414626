use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::ops::{layer_norm_row, sigmoid};
use super::{Real, Tensor, LAYER_NORM_EPS};

/// Squashing applied to the final affine layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// Bounds value estimates to (0, 1).
    Sigmoid,
    /// Deterministic continuous actions in (-1, 1).
    Tanh,
}

/// Logical layout of the network output: `num_goals` heads of `per_goal`
/// entries each. UVFA-style networks have a single head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub num_goals: usize,
    pub per_goal: usize,
}

impl HeadShape {
    pub fn curried(num_goals: usize, per_goal: usize) -> Self {
        Self {
            num_goals,
            per_goal,
        }
    }

    pub fn single(per_goal: usize) -> Self {
        Self::curried(1, per_goal)
    }

    pub fn width(&self) -> usize {
        self.num_goals * self.per_goal
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub layer_norm: bool,
}

/// Builder-style description of an MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub head: HeadShape,
    pub layer_norm: bool,
    pub output: OutputActivation,
}

impl MlpArch {
    pub fn new(input: usize, hidden: &[usize], head: HeadShape) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            head,
            layer_norm: true,
            output: OutputActivation::Identity,
        }
    }

    pub fn with_output(mut self, output: OutputActivation) -> Self {
        self.output = output;
        self
    }

    pub fn with_layer_norm(mut self, on: bool) -> Self {
        self.layer_norm = on;
        self
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![self.input];
        dims.extend(&self.hidden);
        dims.push(self.head.width());
        let n = dims.len() - 1;
        (0..n)
            .map(|i| LayerSpec {
                fan_in: dims[i],
                fan_out: dims[i + 1],
                layer_norm: self.layer_norm && i + 1 < n,
            })
            .collect()
    }
}

/// Flat parameter store with per-layer weight/bias views.
///
/// Layer `i` stores its `[fan_in x fan_out]` row-major weight followed by its
/// `[fan_out]` bias; layers are concatenated in order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T = f32> {
    layers: Vec<LayerSpec>,
    head: HeadShape,
    output: OutputActivation,
    offsets: Vec<usize>,
    data: Vec<T>,
}

fn layout(layers: &[LayerSpec]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(layers.len());
    let mut total = 0;
    for l in layers {
        offsets.push(total);
        total += l.fan_in * l.fan_out + l.fan_out;
    }
    (offsets, total)
}

fn validate(layers: &[LayerSpec], head: &HeadShape) -> Result<()> {
    let last = layers
        .last()
        .ok_or_else(|| Error::shape("network needs at least one layer"))?;
    if head.num_goals == 0 || head.per_goal == 0 {
        return Err(Error::shape("empty head shape"));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.fan_in == 0 || l.fan_out == 0 {
            return Err(Error::shape(format!("layer {i} has a zero dimension")));
        }
        if i + 1 < layers.len() && layers[i + 1].fan_in != l.fan_out {
            return Err(Error::LayerShape {
                layer: i + 1,
                expected: l.fan_out,
                got: layers[i + 1].fan_in,
            });
        }
    }
    if last.layer_norm {
        return Err(Error::shape("output layer cannot be normalized"));
    }
    if last.fan_out != head.width() {
        return Err(Error::shape(format!(
            "final layer has {} outputs but head {}x{} needs {}",
            last.fan_out,
            head.num_goals,
            head.per_goal,
            head.width()
        )));
    }
    Ok(())
}

impl<T: Real> NetParams<T> {
    pub fn from_parts(
        layers: Vec<LayerSpec>,
        head: HeadShape,
        output: OutputActivation,
        data: Vec<T>,
    ) -> Result<Self> {
        validate(&layers, &head)?;
        let (offsets, total) = layout(&layers);
        if data.len() != total {
            return Err(Error::shape(format!(
                "parameter blob has {} values, layout needs {total}",
                data.len()
            )));
        }
        Ok(Self {
            layers,
            head,
            output,
            offsets,
            data,
        })
    }

    pub fn zeros(arch: &MlpArch) -> Result<Self> {
        let layers = arch.layer_specs();
        let (_, total) = layout(&layers);
        Self::from_parts(layers, arch.head, arch.output, vec![T::zero(); total])
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &MlpArch, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        for l in 0..p.layers.len() {
            let bound = 1.0 / (p.layers[l].fan_in as f64).sqrt();
            for w in p.weight_mut(l) {
                *w = T::of(rng.random_range(-bound..=bound));
            }
        }
        Ok(p)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn head(&self) -> HeadShape {
        self.head
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.head.width()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn weight_range(&self, l: usize) -> Range<usize> {
        let s = self.offsets[l];
        s..s + self.layers[l].fan_in * self.layers[l].fan_out
    }

    pub fn bias_range(&self, l: usize) -> Range<usize> {
        let e = self.weight_range(l).end;
        e..e + self.layers[l].fan_out
    }

    pub fn weight(&self, l: usize) -> &[T] {
        &self.data[self.weight_range(l)]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [T] {
        let r = self.weight_range(l);
        &mut self.data[r]
    }

    pub fn bias(&self, l: usize) -> &[T] {
        &self.data[self.bias_range(l)]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [T] {
        let r = self.bias_range(l);
        &mut self.data[r]
    }

    /// Named parameter blocks in storage order.
    pub fn blocks(&self) -> Vec<(String, Range<usize>)> {
        (0..self.layers.len())
            .flat_map(|l| {
                [
                    (format!("layer{l}.weight"), self.weight_range(l)),
                    (format!("layer{l}.bias"), self.bias_range(l)),
                ]
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams {
            layers: self.layers.clone(),
            head: self.head,
            output: self.output,
            offsets: self.offsets.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    /// True when both networks have identical layouts.
    pub fn same_layout<U>(&self, other: &NetParams<U>) -> bool {
        self.layers == other.layers && self.head == other.head && self.output == other.output
    }
}

/// Gradients laid out exactly like the owning [`NetParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads<T = f32> {
    pub data: Vec<T>,
}

impl<T: Real> NetGrads<T> {
    pub fn zeros_like(params: &NetParams<T>) -> Self {
        Self {
            data: vec![T::zero(); params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn norm(&self) -> T {
        self.data.iter().map(|&g| g * g).sum::<T>().sqrt()
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Activations<T = f32> {
    batch: usize,
    /// Input of every layer, `[batch x fan_in]`.
    inputs: Vec<Vec<T>>,
    /// Value fed into each hidden ReLU (post-normalization when enabled).
    pre: Vec<Vec<T>>,
    /// Per-row `1/sqrt(var + eps)` for each normalized hidden layer.
    inv_std: Vec<Vec<T>>,
    output: Tensor<T>,
}

impl<T: Real> Activations<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// On/off state of every hidden ReLU unit, layer by layer. Two
    /// parameter settings with equal patterns lie in the same linear piece.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre.iter().flatten().map(|&v| v > T::zero()).collect()
    }

    /// `[batch, num_goals, per_goal]`.
    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }

    pub fn into_output(self) -> Tensor<T> {
        self.output
    }

    /// Output entries of one batch row, `num_goals * per_goal` long.
    pub fn output_row(&self, r: usize) -> &[T] {
        self.output.row(r)
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out[r] = b + x[r] W` for every row. Zero inputs are skipped, which makes
/// sparse one-hot observations cheap.
fn affine<T: Real>(x: &[T], batch: usize, w: &[T], b: &[T], fan_in: usize, out: &mut [T]) {
    let fan_out = b.len();
    for r in 0..batch {
        let o = &mut out[r * fan_out..(r + 1) * fan_out];
        o.copy_from_slice(b);
        let xr = &x[r * fan_in..(r + 1) * fan_in];
        for (i, &xi) in xr.iter().enumerate() {
            if xi != T::zero() {
                axpy(o, xi, &w[i * fan_out..(i + 1) * fan_out]);
            }
        }
    }
}

/// Runs the network on `input` (`[batch, in]`), returning all intermediates.
pub fn mlp_forward<T: Real>(params: &NetParams<T>, input: &Tensor<T>) -> Result<Activations<T>> {
    if input.shape().len() != 2 {
        return Err(Error::shape(format!(
            "expected a [batch, in] input, got {:?}",
            input.shape()
        )));
    }
    let batch = input.rows();
    if input.row_len() != params.layers[0].fan_in {
        return Err(Error::LayerShape {
            layer: 0,
            expected: params.layers[0].fan_in,
            got: input.row_len(),
        });
    }
    let eps = T::of(LAYER_NORM_EPS);
    let n = params.layers.len();
    let mut inputs: Vec<Vec<T>> = Vec::with_capacity(n);
    inputs.push(input.data().to_vec());
    let mut pre = Vec::with_capacity(n - 1);
    let mut inv_std = Vec::with_capacity(n - 1);
    let mut logits = Vec::new();
    for (l, spec) in params.layers.iter().enumerate() {
        let mut z = vec![T::zero(); batch * spec.fan_out];
        affine(
            &inputs[l],
            batch,
            params.weight(l),
            params.bias(l),
            spec.fan_in,
            &mut z,
        );
        if l + 1 == n {
            logits = z;
            break;
        }
        let mut stds = Vec::new();
        if spec.layer_norm {
            stds.reserve(batch);
            for row in z.chunks_mut(spec.fan_out) {
                stds.push(layer_norm_row(row, eps));
            }
        }
        let h: Vec<T> = z.iter().map(|&v| v.max(T::zero())).collect();
        pre.push(z);
        inv_std.push(stds);
        inputs.push(h);
    }
    match params.output {
        OutputActivation::Identity => {}
        OutputActivation::Sigmoid => logits.iter_mut().for_each(|v| *v = sigmoid(*v)),
        OutputActivation::Tanh => logits.iter_mut().for_each(|v| *v = v.tanh()),
    }
    let output = Tensor::new(
        vec![batch, params.head.num_goals, params.head.per_goal],
        logits,
    )?;
    Ok(Activations {
        batch,
        inputs,
        pre,
        inv_std,
        output,
    })
}

/// Output of one head per row (`heads[r]` for row `r`), `[batch x per_goal]`,
/// without computing the other heads. Matches the corresponding slice of
/// [`mlp_forward`].
pub fn mlp_forward_head<T: Real>(params: &NetParams<T>, input: &Tensor<T>, heads: &[usize]) -> Result<Vec<T>> {
    let batch = input.rows();
    if input.shape().len() != 2 || input.row_len() != params.layers[0].fan_in {
        return Err(Error::LayerShape {
            layer: 0,
            expected: params.layers[0].fan_in,
            got: input.row_len(),
        });
    }
    if heads.len() != batch {
        return Err(Error::shape(format!("{} heads for {batch} rows", heads.len())));
    }
    let HeadShape { num_goals, per_goal } = params.head;
    if let Some(&g) = heads.iter().find(|&&g| g >= num_goals) {
        return Err(Error::shape(format!("head {g} out of range ({num_goals})")));
    }
    let eps = T::of(LAYER_NORM_EPS);
    let n = params.layers.len();
    let mut h = input.data().to_vec();
    for (l, spec) in params.layers[..n - 1].iter().enumerate() {
        let mut z = vec![T::zero(); batch * spec.fan_out];
        affine(&h, batch, params.weight(l), params.bias(l), spec.fan_in, &mut z);
        for row in z.chunks_mut(spec.fan_out) {
            if spec.layer_norm {
                layer_norm_row(row, eps);
            }
            row.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        h = z;
    }
    let LayerSpec { fan_in, fan_out, .. } = params.layers[n - 1];
    let (w, b) = (params.weight(n - 1), params.bias(n - 1));
    let mut out = vec![T::zero(); batch * per_goal];
    for (r, &g) in heads.iter().enumerate() {
        let o = &mut out[r * per_goal..(r + 1) * per_goal];
        let cols = g * per_goal..(g + 1) * per_goal;
        o.copy_from_slice(&b[cols.clone()]);
        for (i, &xi) in h[r * fan_in..(r + 1) * fan_in].iter().enumerate() {
            if xi != T::zero() {
                axpy(o, xi, &w[i * fan_out + cols.start..i * fan_out + cols.end]);
            }
        }
        match params.output {
            OutputActivation::Identity => {}
            OutputActivation::Sigmoid => o.iter_mut().for_each(|v| *v = sigmoid(*v)),
            OutputActivation::Tanh => o.iter_mut().for_each(|v| *v = v.tanh()),
        }
    }
    Ok(out)
}

/// Reverse-mode gradients of a scalar loss given `dL/d output`.
pub fn mlp_backward<T: Real>(
    params: &NetParams<T>,
    acts: &Activations<T>,
    grad_output: &Tensor<T>,
) -> Result<NetGrads<T>> {
    Ok(mlp_backward_with_input(params, acts, grad_output, false)?.0)
}

/// Like [`mlp_backward`], optionally also returning `dL/d input`.
pub fn mlp_backward_with_input<T: Real>(
    params: &NetParams<T>,
    acts: &Activations<T>,
    grad_output: &Tensor<T>,
    want_input_grad: bool,
) -> Result<(NetGrads<T>, Option<Tensor<T>>)> {
    let batch = acts.batch;
    let out_dim = params.output_dim();
    if grad_output.len() != batch * out_dim {
        return Err(Error::shape(format!(
            "grad_output has {} entries, expected {batch}x{out_dim}",
            grad_output.len()
        )));
    }
    if acts.inputs.len() != params.layers.len() || acts.inputs[0].len() != batch * params.input_dim()
    {
        return Err(Error::shape("activations do not belong to these parameters"));
    }
    let y = acts.output.data();
    let g = grad_output.data();
    let mut dz: Vec<T> = match params.output {
        OutputActivation::Identity => g.to_vec(),
        OutputActivation::Sigmoid => g
            .iter()
            .zip(y)
            .map(|(&g, &y)| g * y * (T::one() - y))
            .collect(),
        OutputActivation::Tanh => g
            .iter()
            .zip(y)
            .map(|(&g, &y)| g * (T::one() - y * y))
            .collect(),
    };
    let mut grads = NetGrads::zeros_like(params);
    let mut input_grad = None;
    // Curried heads usually receive a gradient at one action per goal;
    // rows that sparse skip the zero columns of the output layer.
    let mut nonzero: Vec<Option<Vec<usize>>> = dz
        .chunks(out_dim.max(1))
        .map(|row| {
            let nz: Vec<usize> = (0..row.len()).filter(|&j| row[j] != T::zero()).collect();
            (nz.len() * 4 <= row.len()).then_some(nz)
        })
        .collect();
    for l in (0..params.layers.len()).rev() {
        let LayerSpec {
            fan_in, fan_out, ..
        } = params.layers[l];
        let x = &acts.inputs[l];
        let (wr, br) = (params.weight_range(l), params.bias_range(l));
        {
            let (head, tail) = grads.data.split_at_mut(br.start);
            let gw = &mut head[wr];
            let gb = &mut tail[..fan_out];
            for r in 0..batch {
                let dzr = &dz[r * fan_out..(r + 1) * fan_out];
                for (b, &d) in gb.iter_mut().zip(dzr) {
                    *b += d;
                }
                let xr = &x[r * fan_in..(r + 1) * fan_in];
                match &nonzero[r] {
                    Some(nz) => {
                        for (i, &xi) in xr.iter().enumerate() {
                            if xi != T::zero() {
                                let row = &mut gw[i * fan_out..(i + 1) * fan_out];
                                for &j in nz {
                                    row[j] += xi * dzr[j];
                                }
                            }
                        }
                    }
                    None => {
                        for (i, &xi) in xr.iter().enumerate() {
                            if xi != T::zero() {
                                axpy(&mut gw[i * fan_out..(i + 1) * fan_out], xi, dzr);
                            }
                        }
                    }
                }
            }
        }
        if l == 0 && !want_input_grad {
            break;
        }
        let w = params.weight(l);
        let mut dx = vec![T::zero(); batch * fan_in];
        for r in 0..batch {
            let dzr = &dz[r * fan_out..(r + 1) * fan_out];
            for i in 0..fan_in {
                let wr = &w[i * fan_out..(i + 1) * fan_out];
                dx[r * fan_in + i] = match &nonzero[r] {
                    Some(nz) => nz.iter().fold(T::zero(), |acc, &j| acc + wr[j] * dzr[j]),
                    None => dot(wr, dzr),
                };
            }
        }
        nonzero = vec![None; batch];
        if l == 0 {
            input_grad = Some(Tensor::new(vec![batch, fan_in], dx)?);
            break;
        }
        let p = &acts.pre[l - 1];
        for (d, &pv) in dx.iter_mut().zip(p) {
            if pv <= T::zero() {
                *d = T::zero();
            }
        }
        if params.layers[l - 1].layer_norm {
            let d = T::of(fan_in as f64);
            for r in 0..batch {
                let dn = &mut dx[r * fan_in..(r + 1) * fan_in];
                let nr = &p[r * fan_in..(r + 1) * fan_in];
                let inv = acts.inv_std[l - 1][r];
                let mean_dn = dn.iter().copied().sum::<T>() / d;
                let mean_dnn = dot(dn, nr) / d;
                for (v, &nv) in dn.iter_mut().zip(nr) {
                    *v = inv * (*v - mean_dn - nv * mean_dnn);
                }
            }
        }
        dz = dx;
    }
    Ok((grads, input_grad))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numkit::finite_diff_check;

    /// Straight scalar-loop re-implementation of the forward pass.
    fn oracle_forward(p: &NetParams<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = p.layers().len();
        for (l, s) in p.layers().iter().enumerate() {
            let w = p.weight(l);
            let b = p.bias(l);
            let mut z = vec![0.0; s.fan_out];
            for j in 0..s.fan_out {
                let mut acc = b[j];
                for i in 0..s.fan_in {
                    acc += h[i] * w[i * s.fan_out + j];
                }
                z[j] = acc;
            }
            if l + 1 < n {
                if s.layer_norm {
                    let m = z.iter().sum::<f64>() / z.len() as f64;
                    let v = z.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / z.len() as f64;
                    for a in z.iter_mut() {
                        *a = (*a - m) / (v + LAYER_NORM_EPS).sqrt();
                    }
                }
                for a in z.iter_mut() {
                    if *a < 0.0 {
                        *a = 0.0;
                    }
                }
            } else {
                match p.output_activation() {
                    OutputActivation::Identity => {}
                    OutputActivation::Sigmoid => {
                        for a in z.iter_mut() {
                            *a = 1.0 / (1.0 + (-*a).exp());
                        }
                    }
                    OutputActivation::Tanh => {
                        for a in z.iter_mut() {
                            *a = a.tanh();
                        }
                    }
                }
            }
            h = z;
        }
        h
    }

    #[test]
    fn head_forward_matches_full_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for out in [OutputActivation::Sigmoid, OutputActivation::Identity, OutputActivation::Tanh] {
            let arch = MlpArch::new(5, &[8, 6], HeadShape::curried(4, 3)).with_output(out);
            let p = NetParams::<f64>::init(&arch, &mut rng).unwrap();
            let x: Vec<f64> = (0..7 * 5).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
            let x = Tensor::new(vec![7, 5], x).unwrap();
            let heads = [0, 3, 1, 1, 2, 0, 3];
            let full = mlp_forward(&p, &x).unwrap().into_output().into_data();
            let sel = mlp_forward_head(&p, &x, &heads).unwrap();
            for (r, &g) in heads.iter().enumerate() {
                for a in 0..3 {
                    assert!((sel[r * 3 + a] - full[(r * 4 + g) * 3 + a]).abs() < 1e-12);
                }
            }
            assert!(mlp_forward_head(&p, &x, &[0; 6]).is_err());
            assert!(mlp_forward_head(&p, &x, &[4; 7]).is_err());
        }
    }

    fn small_arch() -> MlpArch {
        MlpArch::new(5, &[8, 6], HeadShape::curried(3, 2)).with_output(OutputActivation::Sigmoid)
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let arch = MlpArch::new(3, &[], HeadShape::single(3)).with_layer_norm(false);
        let mut p = NetParams::<f32>::zeros(&arch).unwrap();
        for i in 0..3 {
            p.weight_mut(0)[i * 3 + i] = 1.0;
        }
        let x = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let acts = mlp_forward(&p, &x).unwrap();
        assert_eq!(acts.output().data(), x.data());
        assert_eq!(acts.output().shape(), &[2, 1, 3]);
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetParams::<f32>::init(&small_arch(), &mut rng).unwrap();
        let row = [0.3f32, -1.0, 0.0, 2.0, 0.5];
        let x = Tensor::from_rows(&[row, row]).unwrap();
        let acts = mlp_forward(&p, &x).unwrap();
        assert_eq!(acts.output_row(0), acts.output_row(1));
        let again = mlp_forward(&p, &x).unwrap();
        assert_eq!(acts.output().data(), again.output().data());
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let arch = MlpArch::new(6, &[16], HeadShape::curried(4, 3));
        let p = NetParams::<f32>::init(&arch, &mut rng).unwrap();
        let x = Tensor::new(vec![1, 6], vec![1.0f32; 6]).unwrap();
        let got = mlp_forward(&p, &x).unwrap();
        let want = oracle_forward(&p.cast::<f64>(), &[1.0; 6]);
        for (a, b) in got.output().data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = NetParams::<f32>::init(&small_arch(), &mut rng).unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap();
        match mlp_forward(&p, &x) {
            Err(Error::LayerShape { layer: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn layers_must_chain() {
        let layers = vec![
            LayerSpec {
                fan_in: 2,
                fan_out: 3,
                layer_norm: true,
            },
            LayerSpec {
                fan_in: 4,
                fan_out: 2,
                layer_norm: false,
            },
        ];
        let err = NetParams::<f32>::from_parts(
            layers,
            HeadShape::single(2),
            OutputActivation::Identity,
            vec![0.0; 6 + 3 + 8 + 2],
        );
        assert!(matches!(err, Err(Error::LayerShape { layer: 1, .. })));
    }

    #[test]
    fn zero_and_doubled_grad_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = NetParams::<f32>::init(&small_arch(), &mut rng).unwrap();
        let x = Tensor::new(vec![3, 5], (0..15).map(|i| (i as f32 * 0.37).sin()).collect())
            .unwrap();
        let acts = mlp_forward(&p, &x).unwrap();
        let zero = Tensor::zeros(vec![3, 6]).unwrap();
        let g0 = mlp_backward(&p, &acts, &zero).unwrap();
        assert!(g0.data.iter().all(|&v| v == 0.0));

        let g = Tensor::new(vec![3, 6], (0..18).map(|i| (i as f32 * 0.71).cos()).collect())
            .unwrap();
        let g1 = mlp_backward(&p, &acts, &g).unwrap();
        let g2 = mlp_backward(&p, &acts, &g.map(|v| v * 2.0)).unwrap();
        for (a, b) in g1.data.iter().zip(&g2.data) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for output in [
            OutputActivation::Identity,
            OutputActivation::Sigmoid,
            OutputActivation::Tanh,
        ] {
            let arch = MlpArch::new(5, &[12, 10], HeadShape::curried(3, 2)).with_output(output);
            let p = NetParams::<f64>::init(&arch, &mut rng).unwrap();
            let x = Tensor::new(vec![4, 5], (0..20).map(|i| (i as f64 * 0.53).sin()).collect())
                .unwrap();
            let target: Vec<f64> = (0..24).map(|i| (i as f64 * 0.29).cos() * 0.5).collect();
            let loss_and_grad = |q: &NetParams<f64>| {
                let acts = mlp_forward(q, &x).unwrap();
                let out = acts.output().data();
                let loss: f64 = out.iter().zip(&target).map(|(o, t)| 0.5 * (o - t) * (o - t)).sum();
                let g: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
                let g = Tensor::new(vec![4, 6], g).unwrap();
                (loss, mlp_backward(q, &acts, &g).unwrap())
            };
            let err = finite_diff_check(&p, loss_and_grad, 1e-4, 200, 9);
            assert!(err < 1e-3, "{output:?}: {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let arch = MlpArch::new(4, &[8], HeadShape::single(1)).with_output(OutputActivation::Sigmoid);
        let p = NetParams::<f64>::init(&arch, &mut rng).unwrap();
        let x = vec![0.2, -0.4, 0.9, 0.1];
        let f = |x: &[f64]| {
            let t = Tensor::new(vec![1, 4], x.to_vec()).unwrap();
            mlp_forward(&p, &t).unwrap().output().data()[0]
        };
        let t = Tensor::new(vec![1, 4], x.clone()).unwrap();
        let acts = mlp_forward(&p, &t).unwrap();
        let ones = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let (_, gx) = mlp_backward_with_input(&p, &acts, &ones, true).unwrap();
        let gx = gx.unwrap();
        for i in 0..4 {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += 1e-5;
            b[i] -= 1e-5;
            let num = (f(&a) - f(&b)) / 2e-5;
            assert!((num - gx.data()[i]).abs() < 1e-7, "{num} vs {}", gx.data()[i]);
        }
    }
}
