use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CekdError, Result};
use crate::numerics::{RngStream, Tensor};
use crate::parallel::{map_indexed, map_indexed_seq};

const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_channels: usize,
    pub input_hw: usize,
    pub conv_channels: Vec<usize>,
    pub pool_after: Vec<bool>,
    pub num_classes: usize,
}

impl Default for NetConfig {
    fn default() -> NetConfig {
        NetConfig {
            input_channels: 1,
            input_hw: 32,
            conv_channels: vec![16, 32, 32],
            pool_after: vec![true, true, true],
            num_classes: 8,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() || self.conv_channels.len() != self.pool_after.len() {
            return Err(CekdError::Config(
                "conv_channels and pool_after must be non-empty and equal length".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(CekdError::Config("need at least 2 classes".into()));
        }
        if self.feature_hw()? < 2 {
            return Err(CekdError::Config(
                "final feature map must be at least 2x2 for CAM".into(),
            ));
        }
        Ok(())
    }

    /// Spatial size of the final feature map.
    pub fn feature_hw(&self) -> Result<usize> {
        let mut hw = self.input_hw;
        for &pool in &self.pool_after {
            if pool {
                if hw % 2 != 0 {
                    return Err(CekdError::Config(format!(
                        "cannot 2x2-pool odd spatial size {hw}"
                    )));
                }
                hw /= 2;
            }
        }
        Ok(hw)
    }

    pub fn feature_channels(&self) -> usize {
        *self.conv_channels.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[out, in, 3, 3]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub convs: Vec<ConvLayer>,
    /// `[num_classes, feature_channels]`
    pub fc_weight: Tensor,
    /// `[num_classes]`
    pub fc_bias: Tensor,
}

impl Params {
    pub fn zeros_like(config: &NetConfig) -> Params {
        let mut convs = Vec::new();
        let mut in_ch = config.input_channels;
        for &out_ch in &config.conv_channels {
            convs.push(ConvLayer {
                weight: Tensor::zeros(&[out_ch, in_ch, KERNEL, KERNEL]),
                bias: Tensor::zeros(&[out_ch]),
            });
            in_ch = out_ch;
        }
        Params {
            convs,
            fc_weight: Tensor::zeros(&[config.num_classes, config.feature_channels()]),
            fc_bias: Tensor::zeros(&[config.num_classes]),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.convs {
            out.push(&c.weight);
            out.push(&c.bias);
        }
        out.push(&self.fc_weight);
        out.push(&self.fc_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out.push(&mut self.fc_weight);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Concatenate all parameters into one flat vector (finite-diff probing).
    pub fn to_flat(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.num_scalars());
        for t in self.tensors() {
            data.extend_from_slice(t.data());
        }
        Tensor::from_vec(&[data.len()], data).expect("non-empty params")
    }

    pub fn from_flat(config: &NetConfig, flat: &Tensor) -> Result<Params> {
        let mut params = Params::zeros_like(config);
        let mut offset = 0;
        for t in params.tensors_mut() {
            let n = t.len();
            if offset + n > flat.len() {
                return Err(CekdError::invalid("flat vector too short for params"));
            }
            t.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        if offset != flat.len() {
            return Err(CekdError::invalid("flat vector length mismatch"));
        }
        Ok(params)
    }

    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.weight.add_scaled(&b.weight, scale);
            a.bias.add_scaled(&b.bias, scale);
        }
        self.fc_weight.add_scaled(&other.fc_weight, scale);
        self.fc_bias.add_scaled(&other.fc_bias, scale);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

/// Fan-in-scaled zero-mean init; biases zero.
pub fn init_params(config: &NetConfig, rng: &mut RngStream) -> Result<Params> {
    config.validate()?;
    let mut params = Params::zeros_like(config);
    for conv in &mut params.convs {
        let fan_in = conv.weight.shape()[1] * KERNEL * KERNEL;
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        for v in conv.weight.data_mut() {
            *v = dist.sample(rng);
        }
    }
    let fan_in = params.fc_weight.shape()[1];
    let std = (1.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    for v in params.fc_weight.data_mut() {
        *v = dist.sample(rng);
    }
    Ok(params)
}

/// Cached activations of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// input to each conv block
    layer_inputs: Vec<Tensor>,
    /// conv output before ReLU, per block
    pre_activations: Vec<Tensor>,
    /// final feature maps `[K, h, w]`
    pub features: Tensor,
    /// global average pooled features `[K]`
    pub pooled: Tensor,
    /// `[num_classes]`
    pub logits: Tensor,
}

fn conv3x3(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (in_ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let out_ch = weight.shape()[0];
    debug_assert_eq!(weight.shape()[1], in_ch);
    let mut out = Tensor::zeros(&[out_ch, h, w]);
    for o in 0..out_ch {
        let b = bias.data()[o];
        for y in 0..h {
            for x in 0..w {
                let mut acc = b;
                for i in 0..in_ch {
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let widx = ((o * in_ch + i) * KERNEL + ky) * KERNEL + kx;
                            acc += weight.data()[widx] * input.at3(i, sy as usize, sx as usize);
                        }
                    }
                }
                let idx = out.idx3(o, y, x);
                out.data_mut()[idx] = acc;
            }
        }
    }
    out
}

fn mean_pool2(input: &Tensor) -> Tensor {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let v = (input.at3(ch, 2 * y, 2 * x)
                    + input.at3(ch, 2 * y, 2 * x + 1)
                    + input.at3(ch, 2 * y + 1, 2 * x)
                    + input.at3(ch, 2 * y + 1, 2 * x + 1))
                    / 4.0;
                let idx = out.idx3(ch, y, x);
                out.data_mut()[idx] = v;
            }
        }
    }
    out
}

/// Forward one `[C,H,W]` image, caching everything backward and CAM need.
pub fn forward(params: &Params, config: &NetConfig, image: &Tensor) -> Result<ForwardTrace> {
    if image.shape() != [config.input_channels, config.input_hw, config.input_hw] {
        return Err(CekdError::invalid(format!(
            "image shape {:?} does not match config",
            image.shape()
        )));
    }
    let mut layer_inputs = Vec::with_capacity(params.convs.len());
    let mut pre_activations = Vec::with_capacity(params.convs.len());
    let mut x = image.clone();
    for (conv, &pool) in params.convs.iter().zip(&config.pool_after) {
        layer_inputs.push(x.clone());
        let pre = conv3x3(&x, &conv.weight, &conv.bias);
        let act = pre.map(|v| v.max(0.0));
        pre_activations.push(pre);
        x = if pool { mean_pool2(&act) } else { act };
    }
    let features = x;
    let (k, fh, fw) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let mut pooled = Tensor::zeros(&[k]);
    for ch in 0..k {
        let mut acc = 0.0;
        for y in 0..fh {
            for x in 0..fw {
                acc += features.at3(ch, y, x);
            }
        }
        pooled.data_mut()[ch] = acc / (fh * fw) as f64;
    }
    let classes = config.num_classes;
    let mut logits = Tensor::zeros(&[classes]);
    for c in 0..classes {
        let mut acc = params.fc_bias.data()[c];
        for ch in 0..k {
            acc += params.fc_weight.at2(c, ch) * pooled.data()[ch];
        }
        logits.data_mut()[c] = acc;
    }
    Ok(ForwardTrace {
        layer_inputs,
        pre_activations,
        features,
        pooled,
        logits,
    })
}

/// Forward a `[N,C,H,W]` batch; parallel over samples when enabled.
pub fn forward_batch(
    params: &Params,
    config: &NetConfig,
    images: &Tensor,
) -> Result<(Tensor, Vec<ForwardTrace>)> {
    batch_forward_impl(params, config, images, true)
}

/// Sequential batch forward, kept for the benchmark comparison.
pub fn forward_batch_seq(
    params: &Params,
    config: &NetConfig,
    images: &Tensor,
) -> Result<(Tensor, Vec<ForwardTrace>)> {
    batch_forward_impl(params, config, images, false)
}

fn batch_forward_impl(
    params: &Params,
    config: &NetConfig,
    images: &Tensor,
    parallel: bool,
) -> Result<(Tensor, Vec<ForwardTrace>)> {
    if images.shape().len() != 4 {
        return Err(CekdError::invalid("expected [N,C,H,W] batch"));
    }
    let n = images.shape()[0];
    let run = |i: usize| forward(params, config, &images.slice_leading(i));
    let traces: Result<Vec<ForwardTrace>> = if parallel {
        map_indexed(n, run).into_iter().collect()
    } else {
        map_indexed_seq(n, run).into_iter().collect()
    };
    let traces = traces?;
    let logit_rows: Vec<Tensor> = traces.iter().map(|t| t.logits.clone()).collect();
    Ok((Tensor::stack(&logit_rows)?, traces))
}

fn conv3x3_backward(
    input: &Tensor,
    weight: &Tensor,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (in_ch, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let out_ch = weight.shape()[0];
    let mut dweight = Tensor::zeros(weight.shape());
    let mut dbias = Tensor::zeros(&[out_ch]);
    let mut dinput = Tensor::zeros(input.shape());
    for o in 0..out_ch {
        let mut db = 0.0;
        for y in 0..h {
            for x in 0..w {
                let g = dout.at3(o, y, x);
                if g == 0.0 {
                    continue;
                }
                db += g;
                for i in 0..in_ch {
                    for ky in 0..KERNEL {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let (sy, sx) = (sy as usize, sx as usize);
                            let widx = ((o * in_ch + i) * KERNEL + ky) * KERNEL + kx;
                            dweight.data_mut()[widx] += g * input.at3(i, sy, sx);
                            let iidx = dinput.idx3(i, sy, sx);
                            dinput.data_mut()[iidx] += g * weight.data()[widx];
                        }
                    }
                }
            }
        }
        dbias.data_mut()[o] = db;
    }
    (dweight, dbias, dinput)
}

fn mean_pool2_backward(dout: &Tensor, in_shape: &[usize]) -> Tensor {
    let mut dinput = Tensor::zeros(in_shape);
    let (c, oh, ow) = (dout.shape()[0], dout.shape()[1], dout.shape()[2]);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let g = dout.at3(ch, y, x) / 4.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = dinput.idx3(ch, 2 * y + dy, 2 * x + dx);
                    dinput.data_mut()[idx] += g;
                }
            }
        }
    }
    dinput
}

/// Gradients of `sum(logits * dlogits)` for one sample.
pub fn backward(
    params: &Params,
    config: &NetConfig,
    trace: &ForwardTrace,
    dlogits: &Tensor,
) -> Result<Params> {
    if dlogits.shape() != [config.num_classes] {
        return Err(CekdError::invalid("dlogits shape mismatch"));
    }
    if trace.layer_inputs.len() != params.convs.len() {
        return Err(CekdError::invalid("trace does not match params"));
    }
    let mut grads = Params::zeros_like(config);
    let k = trace.pooled.len();

    // linear head
    for c in 0..config.num_classes {
        let g = dlogits.data()[c];
        grads.fc_bias.data_mut()[c] = g;
        for ch in 0..k {
            let idx = grads.fc_weight.idx2(c, ch);
            grads.fc_weight.data_mut()[idx] = g * trace.pooled.data()[ch];
        }
    }

    // through GAP into the final feature map
    let (fh, fw) = (trace.features.shape()[1], trace.features.shape()[2]);
    let mut dfeat = Tensor::zeros(trace.features.shape());
    for ch in 0..k {
        let mut dg = 0.0;
        for c in 0..config.num_classes {
            dg += dlogits.data()[c] * params.fc_weight.at2(c, ch);
        }
        let per_cell = dg / (fh * fw) as f64;
        for y in 0..fh {
            for x in 0..fw {
                let idx = dfeat.idx3(ch, y, x);
                dfeat.data_mut()[idx] = per_cell;
            }
        }
    }

    // through the conv blocks in reverse
    let mut dcur = dfeat;
    for l in (0..params.convs.len()).rev() {
        let pre = &trace.pre_activations[l];
        let dact = if config.pool_after[l] {
            mean_pool2_backward(&dcur, pre.shape())
        } else {
            dcur
        };
        // ReLU mask
        let mut dpre = dact;
        for (dv, &p) in dpre.data_mut().iter_mut().zip(pre.data()) {
            if p <= 0.0 {
                *dv = 0.0;
            }
        }
        let (dw, db, dinput) =
            conv3x3_backward(&trace.layer_inputs[l], &params.convs[l].weight, &dpre);
        grads.convs[l].weight = dw;
        grads.convs[l].bias = db;
        dcur = dinput;
    }
    Ok(grads)
}

/// Batch backward: per-sample gradients summed; parallel when enabled.
pub fn backward_batch(
    params: &Params,
    config: &NetConfig,
    traces: &[ForwardTrace],
    dlogits: &Tensor,
) -> Result<Params> {
    if dlogits.shape().len() != 2 || dlogits.shape()[0] != traces.len() {
        return Err(CekdError::invalid("dlogits batch shape mismatch"));
    }
    let per_sample = map_indexed(traces.len(), |i| {
        backward(params, config, &traces[i], &dlogits.slice_leading(i))
    });
    let mut total = Params::zeros_like(config);
    for g in per_sample {
        total.add_scaled(&g?, 1.0);
    }
    Ok(total)
}

/// Class activation map at feature resolution: `sum_k W[c,k] * F[k,:,:]`.
pub fn cam(params: &Params, trace: &ForwardTrace, class_idx: usize) -> Result<Tensor> {
    let classes = params.fc_weight.shape()[0];
    if class_idx >= classes {
        return Err(CekdError::invalid(format!(
            "class index {class_idx} out of range (num_classes {classes})"
        )));
    }
    let (k, fh, fw) = (
        trace.features.shape()[0],
        trace.features.shape()[1],
        trace.features.shape()[2],
    );
    let mut map = Tensor::zeros(&[fh, fw]);
    for ch in 0..k {
        let wgt = params.fc_weight.at2(class_idx, ch);
        if wgt == 0.0 {
            continue;
        }
        for y in 0..fh {
            for x in 0..fw {
                let idx = map.idx2(y, x);
                map.data_mut()[idx] += wgt * trace.features.at3(ch, y, x);
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_gradient;

    fn tiny_config() -> NetConfig {
        NetConfig {
            input_channels: 1,
            input_hw: 8,
            conv_channels: vec![3, 4],
            pool_after: vec![true, false],
            num_classes: 3,
        }
    }

    fn random_image(config: &NetConfig, rng: &mut RngStream) -> Tensor {
        let shape = [config.input_channels, config.input_hw, config.input_hw];
        let data: Vec<f64> = (0..shape.iter().product()).map(|_| rng.next_f64()).collect();
        Tensor::from_vec(&shape, data).unwrap()
    }

    /// Independent straightforward convolution used only as an oracle.
    fn naive_forward_logits(params: &Params, config: &NetConfig, image: &Tensor) -> Vec<f64> {
        let mut x = image.clone();
        for (conv, &pool) in params.convs.iter().zip(&config.pool_after) {
            let (in_ch, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let out_ch = conv.weight.shape()[0];
            let mut next = Tensor::zeros(&[out_ch, h, w]);
            for o in 0..out_ch {
                for y in 0..h as isize {
                    for xx in 0..w as isize {
                        let mut acc = conv.bias.data()[o];
                        for i in 0..in_ch {
                            for ky in -1isize..=1 {
                                for kx in -1isize..=1 {
                                    let (sy, sx) = (y + ky, xx + kx);
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let widx = ((o * in_ch + i) * 3 + (ky + 1) as usize) * 3
                                        + (kx + 1) as usize;
                                    acc += conv.weight.data()[widx]
                                        * x.at3(i, sy as usize, sx as usize);
                                }
                            }
                        }
                        let idx = next.idx3(o, y as usize, xx as usize);
                        next.data_mut()[idx] = acc;
                    }
                }
            }
            // ReLU
            let act = next.map(|v| v.max(0.0));
            x = if pool { super::mean_pool2(&act) } else { act };
        }
        let (k, fh, fw) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut logits = vec![0.0; config.num_classes];
        for c in 0..config.num_classes {
            let mut acc = params.fc_bias.data()[c];
            for ch in 0..k {
                let mut gap = 0.0;
                for y in 0..fh {
                    for xx in 0..fw {
                        gap += x.at3(ch, y, xx);
                    }
                }
                acc += params.fc_weight.at2(c, ch) * gap / (fh * fw) as f64;
            }
            logits[c] = acc;
        }
        logits
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let config = tiny_config();
        let a = init_params(&config, &mut RngStream::new(9)).unwrap();
        let b = init_params(&config, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        for conv in &a.convs {
            assert!(conv.bias.data().iter().all(|&v| v == 0.0));
        }
        assert!(a.fc_bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_std_matches_fan_in_target() {
        let config = NetConfig {
            input_channels: 8,
            input_hw: 8,
            conv_channels: vec![32],
            pool_after: vec![true],
            num_classes: 2,
        };
        let params = init_params(&config, &mut RngStream::new(2)).unwrap();
        let w = &params.convs[0].weight;
        assert!(w.len() >= 1000);
        let mean = w.data().iter().sum::<f64>() / w.len() as f64;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let target = (2.0_f64 / (8.0 * 9.0)).sqrt();
        let std = var.sqrt();
        assert!((std - target).abs() / target < 0.2, "std {std} target {target}");
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let config = tiny_config();
        let params = Params::zeros_like(&config);
        let image = random_image(&config, &mut RngStream::new(4));
        let trace = forward(&params, &config, &image).unwrap();
        assert!(trace.logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_images_duplicate_logits() {
        let config = tiny_config();
        let params = init_params(&config, &mut RngStream::new(8)).unwrap();
        let image = random_image(&config, &mut RngStream::new(5));
        let batch = Tensor::stack(&[image.clone(), image]).unwrap();
        let (logits, _) = forward_batch(&params, &config, &batch).unwrap();
        assert_eq!(logits.row(0), logits.row(1));
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let config = tiny_config();
        let params = init_params(&config, &mut RngStream::new(31)).unwrap();
        let image = random_image(&config, &mut RngStream::new(32));
        let trace = forward(&params, &config, &image).unwrap();
        let oracle = naive_forward_logits(&params, &config, &image);
        for (a, b) in trace.logits.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_input_gives_constant_feature_maps() {
        // no pooling, so zero-pad border effects reach at most 2 cells in
        // after two 3x3 convs; cells at distance >= 2 must be constant
        let config = NetConfig {
            input_channels: 1,
            input_hw: 8,
            conv_channels: vec![3, 4],
            pool_after: vec![false, false],
            num_classes: 3,
        };
        let params = init_params(&config, &mut RngStream::new(3)).unwrap();
        let image = Tensor::full(&[1, 8, 8], 0.5);
        let trace = forward(&params, &config, &image).unwrap();
        let f = &trace.features;
        let k = f.shape()[0];
        for ch in 0..k {
            let center = f.at3(ch, 4, 4);
            for y in 2..6 {
                for x in 2..6 {
                    assert!((f.at3(ch, y, x) - center).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn backward_zero_dlogits_zero_grads() {
        let config = tiny_config();
        let params = init_params(&config, &mut RngStream::new(12)).unwrap();
        let image = random_image(&config, &mut RngStream::new(13));
        let trace = forward(&params, &config, &image).unwrap();
        let grads = backward(&params, &config, &trace, &Tensor::zeros(&[3])).unwrap();
        for t in grads.tensors() {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_is_linear_in_dlogits() {
        let config = tiny_config();
        let params = init_params(&config, &mut RngStream::new(21)).unwrap();
        let image = random_image(&config, &mut RngStream::new(22));
        let trace = forward(&params, &config, &image).unwrap();
        let d = Tensor::from_vec(&[3], vec![0.3, -1.1, 0.4]).unwrap();
        let g1 = backward(&params, &config, &trace, &d).unwrap();
        let d2 = d.map(|v| 2.5 * v);
        let g2 = backward(&params, &config, &trace, &d2).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((2.5 * x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let config = tiny_config();
        let params = init_params(&config, &mut RngStream::new(41)).unwrap();
        let image = random_image(&config, &mut RngStream::new(42));
        let dlogits = Tensor::from_vec(&[3], vec![0.7, -0.2, 1.3]).unwrap();

        let trace = forward(&params, &config, &image).unwrap();
        let analytic = backward(&params, &config, &trace, &dlogits).unwrap();
        let analytic_flat = analytic.to_flat();

        let loss = |flat: &Tensor| -> f64 {
            let p = Params::from_flat(&config, flat).unwrap();
            let t = forward(&p, &config, &image).unwrap();
            t.logits
                .data()
                .iter()
                .zip(dlogits.data())
                .map(|(l, d)| l * d)
                .sum()
        };
        let numeric = finite_diff_gradient(loss, &params.to_flat(), 1e-5).unwrap();

        let mut rng = RngStream::new(43);
        let mut checked = 0;
        while checked < 120 {
            let i = rng.next_below(numeric.len());
            let (a, n) = (analytic_flat.data()[i], numeric.data()[i]);
            if a.abs() < 1e-8 {
                assert!((a - n).abs() < 1e-8, "coord {i}: {a} vs {n}");
            } else {
                assert!(((a - n) / a).abs() < 1e-4, "coord {i}: {a} vs {n}");
            }
            checked += 1;
        }
    }

    #[test]
    fn cam_edge_cases() {
        let config = tiny_config();
        let mut params = init_params(&config, &mut RngStream::new(51)).unwrap();
        let image = random_image(&config, &mut RngStream::new(52));
        // zero row of the classifier: zero map
        for ch in 0..params.fc_weight.shape()[1] {
            let idx = params.fc_weight.idx2(0, ch);
            params.fc_weight.data_mut()[idx] = 0.0;
        }
        let trace = forward(&params, &config, &image).unwrap();
        let map = cam(&params, &trace, 0).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
        assert!(cam(&params, &trace, 99).is_err());
    }

    #[test]
    fn cam_gap_identity() {
        let config = tiny_config();
        let params = init_params(&config, &mut RngStream::new(61)).unwrap();
        let image = random_image(&config, &mut RngStream::new(62));
        let trace = forward(&params, &config, &image).unwrap();
        for c in 0..config.num_classes {
            let map = cam(&params, &trace, c).unwrap();
            let mean = map.data().iter().sum::<f64>() / map.len() as f64;
            let expect = trace.logits.data()[c] - params.fc_bias.data()[c];
            assert!((mean - expect).abs() < 1e-9, "class {c}: {mean} vs {expect}");
        }
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let config = tiny_config();
        let params = Params::zeros_like(&config);
        let bad = Tensor::zeros(&[1, 4, 4]);
        assert!(forward(&params, &config, &bad).is_err());
    }

    #[test]
    fn parallel_and_sequential_forward_agree() {
        let config = tiny_config();
        let params = init_params(&config, &mut RngStream::new(71)).unwrap();
        let imgs: Vec<Tensor> = (0..5)
            .map(|i| random_image(&config, &mut RngStream::new(100 + i)))
            .collect();
        let batch = Tensor::stack(&imgs).unwrap();
        let (a, _) = forward_batch(&params, &config, &batch).unwrap();
        let (b, _) = forward_batch_seq(&params, &config, &batch).unwrap();
        assert_eq!(a, b);
    }
}
