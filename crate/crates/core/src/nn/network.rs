use rand::Rng;

use super::spec::{LayerPlan, LayerSpec, NetworkSpec};
use super::tensor::Tensor;
use super::Real;
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Probabilities are floored here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// A network specification with its flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    plan: Vec<LayerPlan>,
    pub params: Vec<T>,
}

impl<T: Real> Network<T> {
    pub fn from_params(spec: NetworkSpec, params: Vec<T>) -> Result<Self> {
        let plan = spec.plan()?;
        let need: usize = plan.iter().map(LayerPlan::param_len).sum();
        if params.len() != need {
            return Err(Error::Shape(format!(
                "network needs {need} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { spec, plan, params })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let n = spec.param_count()?;
        Self::from_params(spec, vec![T::zero(); n])
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn plan(&self) -> &[LayerPlan] {
        &self.plan
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer_params(&self, l: usize) -> (&[T], &[T]) {
        let p = &self.plan[l];
        let w = &self.params[p.offset..p.offset + p.weights];
        let b = &self.params[p.offset + p.weights..p.offset + p.param_len()];
        (w, b)
    }

    /// Zeroes the classifier layer, making every prediction uniform.
    pub fn zero_output_layer(&mut self) {
        if let Some(p) = self.plan.last() {
            let (start, end) = (p.offset, p.offset + p.param_len());
            self.params[start..end].iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            plan: self.plan.clone(),
            params: self.params.iter().map(|v| U::of(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        if batch.shape.len() < 2 || batch.shape[1..] != self.spec.input_shape[..] {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match input shape {:?}",
                batch.shape, self.spec.input_shape
            )));
        }
        Ok(())
    }

    /// Outputs of every layer for one sample; entry 0 is the input itself.
    fn trace(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.plan.len() + 1);
        acts.push(x.to_vec());
        for (l, p) in self.plan.iter().enumerate() {
            let (w, b) = self.layer_params(l);
            let input = &acts[l];
            let out = match p.spec {
                LayerSpec::Scale => input.iter().zip(w).zip(b).map(|((&x, &w), &b)| x * w + b).collect(),
                LayerSpec::Dense { .. } => dense_forward(w, b, input, true),
                LayerSpec::SoftmaxOutput { .. } => softmax(dense_forward(w, b, input, false)),
                LayerSpec::Conv { kernel_h, kernel_w, .. } => conv_forward(p, kernel_h, kernel_w, w, b, input),
                LayerSpec::MaxPool { pool_h, pool_w } => pool_forward(p, pool_h, pool_w, input),
                LayerSpec::Flatten => input.clone(),
            };
            acts.push(out);
        }
        acts
    }

    /// Class probabilities for one sample.
    pub fn predict_sample(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.spec.input_len() {
            return Err(Error::Shape(format!(
                "input of length {} does not match {:?}",
                x.len(),
                self.spec.input_shape
            )));
        }
        Ok(self.trace(x).pop().unwrap_or_default())
    }

    pub fn forward(&self, batch: &Tensor<T>, exec: Exec) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let rows = exec.map(batch.batch_size(), |b| self.trace(batch.sample(b)).pop().unwrap_or_default());
        Tensor::stack(&[self.classes()], &rows)
    }

    /// Cross-entropy loss and gradient for one sample.
    fn sample_grad(&self, x: &[T], label: usize) -> (f64, Vec<T>) {
        let acts = self.trace(x);
        let mut grad = vec![T::zero(); self.params.len()];
        let probs = &acts[self.plan.len()];
        let loss = -probs[label].to_f64().unwrap_or(0.0).max(PROB_FLOOR).ln();

        // gradient of the loss with respect to the current layer's output
        // (for the softmax layer: with respect to its logits)
        let mut delta: Vec<T> = probs.clone();
        delta[label] -= T::one();

        for l in (0..self.plan.len()).rev() {
            let p = &self.plan[l];
            let input = &acts[l];
            let output = &acts[l + 1];
            let need_input_grad = l > 0;
            let (w, _) = self.layer_params(l);
            let g = &mut grad[p.offset..p.offset + p.param_len()];
            delta = match p.spec {
                LayerSpec::Scale => {
                    let n = input.len();
                    for i in 0..n {
                        g[i] = delta[i] * input[i];
                        g[n + i] = delta[i];
                    }
                    delta.iter().zip(w).map(|(&d, &w)| d * w).collect()
                }
                LayerSpec::SoftmaxOutput { .. } => dense_backward(w, input, &delta, g, need_input_grad),
                LayerSpec::Dense { .. } => {
                    relu_mask(&mut delta, output);
                    dense_backward(w, input, &delta, g, need_input_grad)
                }
                LayerSpec::Conv { kernel_h, kernel_w, .. } => {
                    relu_mask(&mut delta, output);
                    conv_backward(p, kernel_h, kernel_w, w, input, &delta, g, need_input_grad)
                }
                LayerSpec::MaxPool { pool_h, pool_w } => pool_backward(p, pool_h, pool_w, input, &delta),
                LayerSpec::Flatten => delta,
            };
        }
        (loss, grad)
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every parameter. Per-sample gradients are summed in batch order.
    pub fn loss_and_grad(&self, batch: &Tensor<T>, labels: &[usize], exec: Exec) -> Result<(f64, Vec<T>)> {
        self.check_batch(batch)?;
        let n = batch.batch_size();
        if labels.len() != n || n == 0 {
            return Err(Error::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes()) {
            return Err(Error::Shape(format!("label {bad} >= {} classes", self.classes())));
        }
        let parts = exec.map(n, |b| self.sample_grad(batch.sample(b), labels[b]));
        let mut total = vec![T::zero(); self.params.len()];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (t, v) in total.iter_mut().zip(&g) {
                *t += *v;
            }
        }
        let inv = T::of(1.0 / n as f64);
        total.iter_mut().for_each(|v| *v *= inv);
        Ok((loss / n as f64, total))
    }

    /// Sets a leading [`LayerSpec::Scale`] layer so that `samples` map to
    /// zero mean and unit variance per input. Inputs with no spread keep
    /// unit gain. Returns false when the network has no such layer.
    pub fn calibrate_input_scale(&mut self, samples: &Tensor<T>) -> Result<bool> {
        if self.plan.first().map(|p| p.spec) != Some(LayerSpec::Scale) {
            return Ok(false);
        }
        self.check_batch(samples)?;
        let n = samples.batch_size();
        if n == 0 {
            return Err(Error::Shape("empty calibration batch".into()));
        }
        let d = self.spec.input_len();
        let mut mean = vec![0.0f64; d];
        for b in 0..n {
            for (m, x) in mean.iter_mut().zip(samples.sample(b)) {
                *m += x.to_f64().unwrap_or(0.0);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0f64; d];
        for b in 0..n {
            for ((v, x), m) in var.iter_mut().zip(samples.sample(b)).zip(&mean) {
                *v += (x.to_f64().unwrap_or(0.0) - m).powi(2);
            }
        }
        for i in 0..d {
            let sd = (var[i] / n as f64).sqrt();
            let gain = if sd > 1e-9 * (1.0 + mean[i].abs()) { 1.0 / sd } else { 1.0 };
            self.params[i] = T::of(gain);
            self.params[d + i] = T::of(-mean[i] * gain);
        }
        Ok(true)
    }

    /// Alias for [`Network::loss_and_grad`] returning only the gradient.
    pub fn backward(&self, batch: &Tensor<T>, labels: &[usize], exec: Exec) -> Result<Vec<T>> {
        self.loss_and_grad(batch, labels, exec).map(|(_, g)| g)
    }
}

fn dense_forward<T: Real>(w: &[T], b: &[T], x: &[T], relu: bool) -> Vec<T> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut acc = bias;
            for (wi, xi) in row.iter().zip(x) {
                acc += *wi * *xi;
            }
            if relu && acc < T::zero() {
                T::zero()
            } else {
                acc
            }
        })
        .collect()
}

fn softmax<T: Real>(mut logits: Vec<T>) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    logits.iter_mut().for_each(|v| *v = *v / sum);
    logits
}

fn relu_mask<T: Real>(delta: &mut [T], output: &[T]) {
    for (d, o) in delta.iter_mut().zip(output) {
        if *o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Accumulates weight/bias gradients into `g` and returns the input gradient
/// (empty when not needed).
fn dense_backward<T: Real>(w: &[T], x: &[T], dz: &[T], g: &mut [T], need_input: bool) -> Vec<T> {
    let n_in = x.len();
    let (gw, gb) = g.split_at_mut(w.len());
    let mut dx = if need_input { vec![T::zero(); n_in] } else { Vec::new() };
    for (o, &d) in dz.iter().enumerate() {
        gb[o] += d;
        if d == T::zero() {
            continue;
        }
        let row = &w[o * n_in..(o + 1) * n_in];
        for (gi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
            *gi += d * *xi;
        }
        if need_input {
            for (dxi, wi) in dx.iter_mut().zip(row) {
                *dxi += d * *wi;
            }
        }
    }
    dx
}

fn conv_forward<T: Real>(p: &LayerPlan, kh: usize, kw: usize, k: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let (w_in, c_in) = (p.in_shape[1], p.in_shape[2]);
    let (h_out, w_out, f) = (p.out_shape[0], p.out_shape[1], p.out_shape[2]);
    let mut out = vec![T::zero(); h_out * w_out * f];
    for ho in 0..h_out {
        for wo in 0..w_out {
            let o = &mut out[(ho * w_out + wo) * f..(ho * w_out + wo + 1) * f];
            o.copy_from_slice(b);
            for i in 0..kh {
                for j in 0..kw {
                    for c in 0..c_in {
                        let xv = x[((ho + i) * w_in + wo + j) * c_in + c];
                        let krow = &k[((i * kw + j) * c_in + c) * f..][..f];
                        for (ov, kv) in o.iter_mut().zip(krow) {
                            *ov += xv * *kv;
                        }
                    }
                }
            }
            for v in o.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    p: &LayerPlan,
    kh: usize,
    kw: usize,
    k: &[T],
    x: &[T],
    dz: &[T],
    g: &mut [T],
    need_input: bool,
) -> Vec<T> {
    let (w_in, c_in) = (p.in_shape[1], p.in_shape[2]);
    let (h_out, w_out, f) = (p.out_shape[0], p.out_shape[1], p.out_shape[2]);
    let (gk, gb) = g.split_at_mut(k.len());
    let mut dx = if need_input { vec![T::zero(); x.len()] } else { Vec::new() };
    for ho in 0..h_out {
        for wo in 0..w_out {
            let d = &dz[(ho * w_out + wo) * f..(ho * w_out + wo + 1) * f];
            if d.iter().all(|v| *v == T::zero()) {
                continue;
            }
            for (gbv, dv) in gb.iter_mut().zip(d) {
                *gbv += *dv;
            }
            for i in 0..kh {
                for j in 0..kw {
                    for c in 0..c_in {
                        let xi = ((ho + i) * w_in + wo + j) * c_in + c;
                        let base = ((i * kw + j) * c_in + c) * f;
                        let xv = x[xi];
                        for (gv, dv) in gk[base..base + f].iter_mut().zip(d) {
                            *gv += xv * *dv;
                        }
                        if need_input {
                            let mut acc = T::zero();
                            for (kv, dv) in k[base..base + f].iter().zip(d) {
                                acc += *kv * *dv;
                            }
                            dx[xi] += acc;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Index of the winning input for each pooled output (first maximum).
fn pool_argmax<T: Real>(p: &LayerPlan, ph: usize, pw: usize, x: &[T]) -> Vec<usize> {
    let (w_in, c) = (p.in_shape[1], p.in_shape[2]);
    let (h_out, w_out) = (p.out_shape[0], p.out_shape[1]);
    let mut idx = Vec::with_capacity(h_out * w_out * c);
    for ho in 0..h_out {
        for wo in 0..w_out {
            for ch in 0..c {
                let mut best = ((ho * ph) * w_in + wo * pw) * c + ch;
                for i in 0..ph {
                    for j in 0..pw {
                        let at = ((ho * ph + i) * w_in + wo * pw + j) * c + ch;
                        if x[at] > x[best] {
                            best = at;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

fn pool_forward<T: Real>(p: &LayerPlan, ph: usize, pw: usize, x: &[T]) -> Vec<T> {
    pool_argmax(p, ph, pw, x).into_iter().map(|i| x[i]).collect()
}

fn pool_backward<T: Real>(p: &LayerPlan, ph: usize, pw: usize, x: &[T], dout: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); x.len()];
    for (o, i) in pool_argmax(p, ph, pw, x).into_iter().enumerate() {
        dx[i] += dout[o];
    }
    dx
}

/// He-uniform weights (`sqrt(6 / fan_in)`) for ReLU layers, Glorot-uniform
/// for the classifier, zero biases.
pub fn init_params<T: Real, R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Network<T>> {
    let mut net = Network::<T>::zeros(spec.clone())?;
    for p in net.plan.clone() {
        if p.spec == LayerSpec::Scale {
            net.params[p.offset..p.offset + p.weights].fill(T::one());
            continue;
        }
        if p.weights == 0 {
            continue;
        }
        let fan_in = p.fan_in() as f64;
        let bound = match p.spec {
            LayerSpec::SoftmaxOutput { classes } => (6.0 / (fan_in + classes as f64)).sqrt(),
            _ => (6.0 / fan_in).sqrt(),
        };
        for v in &mut net.params[p.offset..p.offset + p.weights] {
            *v = T::of(rng.random_range(-bound..bound));
        }
    }
    Ok(net)
}

/// Mean of `-ln(max(p[label], 1e-12))` over the batch.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    if probs.shape.len() != 2 || labels.len() != probs.batch_size() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} labels for probabilities of shape {:?}",
            labels.len(),
            probs.shape
        )));
    }
    let classes = probs.shape[1];
    let mut total = 0.0;
    for (row, &label) in probs.rows().zip(labels) {
        if label >= classes {
            return Err(Error::Shape(format!("label {label} >= {classes} classes")));
        }
        total -= row[label].to_f64().unwrap_or(0.0).max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::spec::{build_conv_net, build_fc_net, ConvNetConfig, FcNetConfig};
    use super::*;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn random_batch(rng: &mut SimRng, shape: &[usize], n: usize) -> Tensor<f64> {
        let per: usize = shape.iter().product();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..per).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        Tensor::stack(shape, &rows).unwrap()
    }

    #[test]
    fn rows_are_distributions() {
        let spec = build_conv_net(256, 1, 20, ConvNetConfig::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let net: Network<f64> = init_params(&spec, &mut rng).unwrap();
        let batch = random_batch(&mut rng, &spec.input_shape, 4);
        let out = net.forward(&batch, Exec::Parallel).unwrap();
        assert_eq!(out.shape, vec![4, 20]);
        for row in out.rows() {
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let spec = build_fc_net(16, 4, &FcNetConfig { hidden: vec![8], wide_extra: 0 }).unwrap();
        let mut rng = SimRng::seed_from_u64(2);
        let mut net: Network<f32> = init_params(&spec, &mut rng).unwrap();
        net.zero_output_layer();
        let x: Vec<f32> = (0..16).map(|i| i as f32).collect();
        assert_eq!(net.predict_sample(&x).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn batching_matches_single_passes() {
        let spec = build_conv_net(32, 2, 3, ConvNetConfig::default()).unwrap();
        let mut rng = SimRng::seed_from_u64(3);
        let net: Network<f64> = init_params(&spec, &mut rng).unwrap();
        let batch = random_batch(&mut rng, &spec.input_shape, 5);
        let out = net.forward(&batch, Exec::Parallel).unwrap();
        for b in 0..5 {
            let single = net.predict_sample(batch.sample(b)).unwrap();
            for (p, q) in single.iter().zip(out.sample(b)) {
                assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let spec = build_fc_net(16, 3, &FcNetConfig { hidden: vec![4], wide_extra: 0 }).unwrap();
        let net = Network::<f64>::zeros(spec).unwrap();
        let wrong = Tensor::new(vec![2, 15], vec![0.0; 30]).unwrap();
        assert!(net.forward(&wrong, Exec::Sequential).is_err());
        let ok = Tensor::new(vec![2, 16], vec![0.0; 32]).unwrap();
        assert!(net.loss_and_grad(&ok, &[0], Exec::Sequential).is_err());
        assert!(net.loss_and_grad(&ok, &[0, 3], Exec::Sequential).is_err());
        assert!(Network::<f64>::from_params(net.spec().clone(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let one_hot = Tensor::new(vec![1, 2], vec![1.0f64, 0.0]).unwrap();
        assert_eq!(cross_entropy(&one_hot, &[0]).unwrap(), 0.0);
        let uniform = Tensor::new(vec![2, 5], vec![0.2f64; 10]).unwrap();
        assert!((cross_entropy(&uniform, &[1, 4]).unwrap() - 5f64.ln()).abs() < 1e-12);
        let p = Tensor::new(vec![1, 2], vec![0.7f64, 0.3]).unwrap();
        assert!((cross_entropy(&p, &[0]).unwrap() - 0.356_674_943_938_732_4).abs() < 1e-12);
        // floored, not infinite
        assert!((cross_entropy(&one_hot, &[1]).unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!(cross_entropy(&p, &[2]).is_err());
    }

    #[test]
    fn duplicated_sample_gradient() {
        let spec = build_fc_net(16, 3, &FcNetConfig { hidden: vec![8], wide_extra: 0 }).unwrap();
        let mut rng = SimRng::seed_from_u64(4);
        let net: Network<f64> = init_params(&spec, &mut rng).unwrap();
        let one = random_batch(&mut rng, &[16], 1);
        let two = Tensor::stack(&[16], &[one.sample(0).to_vec(), one.sample(0).to_vec()]).unwrap();
        let g1 = net.backward(&one, &[2], Exec::Sequential).unwrap();
        let g2 = net.backward(&two, &[2, 2], Exec::Sequential).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_gives_zero_conv_weight_grad() {
        let spec = build_conv_net(16, 1, 3, ConvNetConfig { filters1: 4, filters2: 4 }).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let net: Network<f64> = init_params(&spec, &mut rng).unwrap();
        let batch = Tensor::new(vec![2, 16, 1, 1], vec![0.0; 32]).unwrap();
        let g = net.backward(&batch, &[0, 1], Exec::Sequential).unwrap();
        let first = &net.plan()[0];
        assert!(g[first.offset..first.offset + first.weights].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded_and_centered() {
        let spec = build_fc_net(256, 5, &FcNetConfig::default()).unwrap();
        let a: Network<f32> = init_params(&spec, &mut SimRng::seed_from_u64(6)).unwrap();
        let b: Network<f32> = init_params(&spec, &mut SimRng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        let (w, _) = a.layer_params(0);
        assert_eq!(w.len(), 200 * 256);
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.005, "{mean}");
        let bound = (6.0f64 / 256.0).sqrt() as f32;
        assert!(w.iter().all(|v| v.abs() <= bound));
        for l in 0..a.plan().len() {
            assert!(a.layer_params(l).1.iter().all(|&v| v == 0.0));
        }
    }
}
