//! Executes a [`NetworkSpec`] with flat parameter storage and reverse-mode
//! gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Activation, ConvGeom, ConvOp, LayerKind, LayerShape, NetworkSpec, INIT_STD, LEAKY_SLOPE, PRELU_INIT};
use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

/// Offsets of one layer's parameters inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Slot {
    op: ConvOp,
    weight: usize,
    bias: usize,
    /// PReLU slopes, one per output channel.
    alpha: Option<usize>,
}

/// Activations recorded by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
    outputs: Vec<Tensor<T>>,
    batch: usize,
    zero_skips: bool,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().expect("network has layers")
    }

    pub fn layer_output(&self, index: usize) -> &Tensor<T> {
        &self.outputs[index]
    }

    /// Pre-activation of the last layer.
    pub fn logits(&self) -> &Tensor<T> {
        self.pre.last().expect("network has layers")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Feed zeros in place of every skip branch (ablation probe).
    pub zero_skips: bool,
}

/// A network description bound to its parameters.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    shapes: Vec<LayerShape>,
    slots: Vec<Slot>,
    params: Vec<T>,
}

impl<T: Real> Network<T> {
    /// Allocates parameters: truncated-normal kernels, zero biases, PReLU
    /// slopes at their initial value.
    pub fn new<R: Rng>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        for slot in net.slots.clone() {
            for v in &mut net.params[slot.weight..slot.weight + slot.op.weight_len()] {
                *v = T::from_f64c(truncated_normal(rng) * INIT_STD);
            }
            if let Some(a) = slot.alpha {
                let oc = slot.op.out_channels();
                net.params[a..a + oc].fill(T::from_f64c(PRELU_INIT));
            }
        }
        Ok(net)
    }

    /// Parameter layout with every value zero.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut slots = Vec::with_capacity(shapes.len());
        let mut len = 0;
        for (layer, s) in spec.layers.iter().zip(&shapes) {
            let op = match layer.kind {
                LayerKind::Conv => ConvOp {
                    geom: ConvGeom::conv(s.in_h, s.in_w, s.in_c, layer.kernel, layer.stride),
                    small_c: s.out_c,
                    transposed: false,
                },
                LayerKind::TransposedConv => ConvOp {
                    geom: ConvGeom::transposed(s.in_h, s.in_w, s.out_c, layer.kernel, layer.stride),
                    small_c: s.in_c,
                    transposed: true,
                },
            };
            let weight = len;
            len += op.weight_len();
            let bias = len;
            len += s.out_c;
            let alpha = (layer.activation == Activation::Prelu).then(|| {
                let a = len;
                len += s.out_c;
                a
            });
            slots.push(Slot { op, weight, bias, alpha });
        }
        Ok(Network { spec, shapes, slots, params: vec![T::zero(); len] })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape_err!(
                "{}: expected {} parameters, got {}",
                self.spec.name,
                self.params.len(),
                params.len()
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Zeroes every bias (linearity probes).
    pub fn zero_biases(&mut self) {
        for slot in &self.slots {
            let oc = slot.op.out_channels();
            self.params[slot.bias..slot.bias + oc].fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            slots: self.slots.clone(),
            params: self.params.iter().map(|v| U::from_f64c(v.as_f64())).collect(),
        }
    }

    pub fn output_shape(&self, batch: usize) -> [usize; 4] {
        match self.shapes.last() {
            Some(s) => [batch, s.out_h, s.out_w, s.out_c],
            None => {
                let (h, w, c) = self.spec.input_shape;
                [batch, h, w, c]
            }
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let [_, h, w, c] = input.shape();
        if (h, w, c) != self.spec.input_shape {
            let first = self.spec.layers.first().map(|l| l.name.as_str()).unwrap_or("input");
            return Err(shape_err!(
                "{}/{first}: expected input {:?}, got {h}x{w}x{c}",
                self.spec.name,
                self.spec.input_shape
            ));
        }
        Ok(())
    }

    /// Forward pass keeping only what later layers need.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.run(input, ForwardOptions::default())?.outputs.pop().expect("layers"))
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tape<T>> {
        self.run(input, ForwardOptions::default())
    }

    pub fn forward_with(&self, input: &Tensor<T>, opts: ForwardOptions) -> Result<Tape<T>> {
        self.run(input, opts)
    }

    fn run(&self, input: &Tensor<T>, opts: ForwardOptions) -> Result<Tape<T>> {
        self.check_input(input)?;
        let batch = input.batch();
        let x0 = match self.spec.pre_scale {
            Some(s) => input.scale(T::from_f64c(s)),
            None => input.clone(),
        };
        let n = self.spec.layers.len();
        let mut tape = Tape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            batch,
            zero_skips: opts.zero_skips,
        };
        for (l, (layer, shape)) in self.spec.layers.iter().zip(&self.shapes).enumerate() {
            let prev = if l == 0 { &x0 } else { &tape.outputs[l - 1] };
            let inp = match shape.skip_index {
                Some(j) if opts.zero_skips => {
                    let zeros = Tensor::zeros(tape.outputs[j].shape());
                    Tensor::concat_channels(prev, &zeros)?
                }
                Some(j) => Tensor::concat_channels(prev, &tape.outputs[j])?,
                None => prev.clone(),
            };
            let slot = self.slots[l];
            let mut z = Tensor::zeros([batch, shape.out_h, shape.out_w, shape.out_c]);
            let w = &self.params[slot.weight..slot.weight + slot.op.weight_len()];
            let b = &self.params[slot.bias..slot.bias + shape.out_c];
            for i in 0..batch {
                slot.op.forward(inp.item(i), w, b, z.item_mut(i));
            }
            let a = self.activate(layer.activation, slot, &z);
            tape.inputs.push(inp);
            tape.pre.push(z);
            tape.outputs.push(a);
        }
        Ok(tape)
    }

    fn activate(&self, act: Activation, slot: Slot, z: &Tensor<T>) -> Tensor<T> {
        let leak = T::from_f64c(LEAKY_SLOPE);
        match act {
            Activation::None => z.clone(),
            Activation::Relu => z.map(|v| v.max(T::zero())),
            Activation::LeakyRelu => z.map(|v| if v > T::zero() { v } else { v * leak }),
            Activation::Sigmoid => z.map(|v| T::one() / (T::one() + (-v).exp())),
            Activation::Prelu => {
                let oc = slot.op.out_channels();
                let alpha = &self.params[slot.alpha.expect("prelu slot")..][..oc];
                let mut out = z.clone();
                for px in out.data_mut().chunks_exact_mut(oc) {
                    for (v, &a) in px.iter_mut().zip(alpha) {
                        if *v <= T::zero() {
                            *v *= a;
                        }
                    }
                }
                out
            }
        }
    }

    /// Gradients of a scalar loss given `d loss / d output`.
    ///
    /// Returns the parameter gradient (same layout as [`Network::params`]) and
    /// the gradient with respect to the network input.
    pub fn backward(&self, tape: &Tape<T>, grad_out: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>)> {
        let n = self.spec.layers.len();
        if grad_out.shape() != tape.outputs[n - 1].shape() {
            return Err(shape_err!(
                "{}: output gradient {:?} does not match output {:?}",
                self.spec.name,
                grad_out.shape(),
                tape.outputs[n - 1].shape()
            ));
        }
        let batch = tape.batch;
        let mut grads = vec![T::zero(); self.params.len()];
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; n];
        pending[n - 1] = Some(grad_out.clone());
        let mut grad_input = None;
        for l in (0..n).rev() {
            let slot = self.slots[l];
            let shape = self.shapes[l];
            let g = pending[l].take().unwrap_or_else(|| Tensor::zeros(tape.outputs[l].shape()));
            let gz = self.activation_backward(l, slot, tape, &g, &mut grads);
            let mut gin = Tensor::zeros(tape.inputs[l].shape());
            {
                let (gw_all, gb_all) = grads.split_at_mut(slot.bias);
                let gw = &mut gw_all[slot.weight..slot.weight + slot.op.weight_len()];
                let gb = &mut gb_all[..shape.out_c];
                let w = &self.params[slot.weight..slot.weight + slot.op.weight_len()];
                for i in 0..batch {
                    slot.op.backward(tape.inputs[l].item(i), w, gz.item(i), gw, gb, gin.item_mut(i));
                }
            }
            let g_prev = match shape.skip_index {
                Some(j) => {
                    let (g_prev, g_skip) = gin.split_channels(shape.in_c - shape.skip_c);
                    if !tape.zero_skips {
                        accumulate(&mut pending[j], g_skip);
                    }
                    g_prev
                }
                None => gin,
            };
            if l == 0 {
                grad_input = Some(g_prev);
            } else {
                accumulate(&mut pending[l - 1], g_prev);
            }
        }
        let mut grad_input = grad_input.expect("network has layers");
        if let Some(s) = self.spec.pre_scale {
            grad_input = grad_input.scale(T::from_f64c(s));
        }
        Ok((grads, grad_input))
    }

    fn activation_backward(&self, l: usize, slot: Slot, tape: &Tape<T>, g: &Tensor<T>, grads: &mut [T]) -> Tensor<T> {
        let z = &tape.pre[l];
        let a = &tape.outputs[l];
        let leak = T::from_f64c(LEAKY_SLOPE);
        let mut out = g.clone();
        match self.spec.layers[l].activation {
            Activation::None => {}
            Activation::Relu => {
                for (o, &zv) in out.data_mut().iter_mut().zip(z.data()) {
                    if zv <= T::zero() {
                        *o = T::zero();
                    }
                }
            }
            Activation::LeakyRelu => {
                for (o, &zv) in out.data_mut().iter_mut().zip(z.data()) {
                    if zv <= T::zero() {
                        *o *= leak;
                    }
                }
            }
            Activation::Sigmoid => {
                for (o, &av) in out.data_mut().iter_mut().zip(a.data()) {
                    *o = *o * av * (T::one() - av);
                }
            }
            Activation::Prelu => {
                let oc = slot.op.out_channels();
                let ai = slot.alpha.expect("prelu slot");
                let alpha = &self.params[ai..ai + oc];
                let mut galpha = vec![T::zero(); oc];
                for (gpx, zpx) in out.data_mut().chunks_exact_mut(oc).zip(z.data().chunks_exact(oc)) {
                    for c in 0..oc {
                        if zpx[c] <= T::zero() {
                            galpha[c] += gpx[c] * zpx[c];
                            gpx[c] *= alpha[c];
                        }
                    }
                }
                for (gv, v) in grads[ai..ai + oc].iter_mut().zip(galpha) {
                    *gv += v;
                }
            }
        }
        out
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.sample(StandardNormal);
        if v.abs() <= 2.0 {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{discriminator_spec, encoder_spec, generator_spec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    /// Randomises every parameter so that biases and slopes are exercised.
    fn scramble(net: &mut Network<f64>, rng: &mut ChaCha8Rng, scale: f64) {
        for p in net.params_mut() {
            *p = rng.random_range(-scale..scale);
        }
    }

    fn fd_check(net: &mut Network<f64>, x: &Tensor<f64>, seed: u64, samples: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out_shape = net.output_shape(x.batch());
        let r = rand_tensor(&mut rng, out_shape, -1.0, 1.0);
        let loss = |net: &Network<f64>, x: &Tensor<f64>| -> f64 {
            let y = net.predict(x).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let tape = net.forward(x).unwrap();
        let (gp, gx) = net.backward(&tape, &r).unwrap();
        let h = 1e-6;
        for _ in 0..samples {
            let i = rng.random_range(0..net.num_params());
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let lp = loss(net, x);
            net.params_mut()[i] = orig - h;
            let lm = loss(net, x);
            net.params_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let tol = 1e-6 + 1e-4 * fd.abs().max(gp[i].abs());
            assert!((fd - gp[i]).abs() < tol, "param {i}: fd {fd} vs {}", gp[i]);
        }
        for _ in 0..samples {
            let i = rng.random_range(0..x.data().len());
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(net, &xp) - loss(net, &xm)) / (2.0 * h);
            let tol = 1e-6 + 1e-4 * fd.abs().max(gx.data()[i].abs());
            assert!((fd - gx.data()[i]).abs() < tol, "input {i}: fd {fd} vs {}", gx.data()[i]);
        }
    }

    #[test]
    fn generator_gradients_with_skips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = generator_spec(4, 4, 2, 3);
        let mut net = Network::<f64>::new(spec, &mut rng).unwrap();
        scramble(&mut net, &mut rng, 0.3);
        let x = rand_tensor(&mut rng, [2, 4, 4, 2], -1.0, 1.0);
        fd_check(&mut net, &x, 12, 25);
    }

    #[test]
    fn encoder_gradients_with_prelu() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut net = Network::<f64>::new(encoder_spec(8, 8, 3, 2), &mut rng).unwrap();
        scramble(&mut net, &mut rng, 0.3);
        let x = rand_tensor(&mut rng, [1, 8, 8, 3], 0.0, 255.0);
        fd_check(&mut net, &x, 14, 25);
    }

    #[test]
    fn discriminator_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut spec = discriminator_spec(8, 8, 3);
        // Narrow hidden layers keep the finite-difference probe cheap.
        for l in &mut spec.layers[..4] {
            l.filters = 4;
        }
        let mut net = Network::<f64>::new(spec, &mut rng).unwrap();
        scramble(&mut net, &mut rng, 0.3);
        let x = rand_tensor(&mut rng, [1, 8, 8, 3], 0.0, 255.0);
        fd_check(&mut net, &x, 16, 20);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f32>::new(encoder_spec(32, 32, 3, 2), &mut rng).unwrap();
        let err = net.predict(&Tensor::zeros([1, 16, 16, 3])).unwrap_err();
        assert!(err.to_string().contains("encoder/conv1"), "{err}");
    }

    #[test]
    fn zero_input_gives_constant_sigmoid_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::<f32>::new(generator_spec(16, 16, 2, 3), &mut rng).unwrap();
        let y = net.predict(&Tensor::zeros([1, 16, 16, 2])).unwrap();
        assert_eq!(y.shape(), [1, 32, 32, 3]);
        // Zero biases at init: every pre-activation is 0, sigmoid(0) = 0.5.
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn bias_free_encoder_is_positively_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Network::<f64>::new(encoder_spec(32, 32, 3, 2), &mut rng).unwrap();
        net.zero_biases();
        let x = rand_tensor(&mut rng, [1, 32, 32, 3], 0.0, 100.0);
        let y1 = net.predict(&x).unwrap();
        let y2 = net.predict(&x.scale(2.0)).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-30));
        }
    }

    #[test]
    fn zeroing_skips_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Network::<f64>::new(generator_spec(8, 8, 2, 3), &mut rng).unwrap();
        scramble(&mut net, &mut rng, 0.2);
        let x = rand_tensor(&mut rng, [1, 8, 8, 2], -1.0, 1.0);
        let a = net.forward(&x).unwrap();
        let b = net.forward_with(&x, ForwardOptions { zero_skips: true }).unwrap();
        assert!(a.output().max_abs_diff(b.output()) > 0.0);
    }
}
