use super::{Layer, NetworkParams, ParamSet, Shape};
use crate::data::ClassId;
use crate::error::{Error, Result};

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `[sample][k]`: k = 0 is the input, k = i + 1 the output of layer i.
    activations: Vec<Vec<Vec<f64>>>,
    /// `[sample][layer]`: winning input index per pooled output.
    argmax: Vec<Vec<Vec<u32>>>,
    pub probs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Input to the final dense layer for sample `i`.
    pub fn features(&self, i: usize) -> &[f64] {
        let a = &self.activations[i];
        &a[a.len() - 2]
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    out
}

/// Batch-averaged (optionally class-weighted) negative log-likelihood.
pub fn cross_entropy(probs: &[Vec<f64>], targets: &[ClassId], class_weights: Option<&[f64]>) -> f64 {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .zip(targets)
        .map(|(p, &t)| {
            let w = class_weights.map_or(1.0, |cw| cw[t as usize]);
            -w * p[t as usize].max(f64::MIN_POSITIVE).ln()
        })
        .sum::<f64>()
        / n
}

fn param_slots(params: &NetworkParams) -> Vec<Option<usize>> {
    let mut k = 0;
    params
        .spec
        .layers
        .iter()
        .map(|l| {
            l.has_params().then(|| {
                k += 1;
                k - 1
            })
        })
        .collect()
}

/// Runs layers `0..upto` on one channel-major input. Returns every
/// activation and the pooling switches.
pub(crate) fn run_layers(
    params: &NetworkParams,
    shapes: &[Shape],
    input: &[f64],
    upto: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<u32>>) {
    let mut acts = Vec::with_capacity(upto + 1);
    let mut switches = Vec::with_capacity(upto);
    acts.push(input.to_vec());
    let mut slot = 0;
    for (i, layer) in params.spec.layers[..upto].iter().enumerate() {
        let x = &acts[i];
        let (c, h, w) = shapes[i];
        let (oc, oh, ow) = shapes[i + 1];
        let mut sw = Vec::new();
        let y = match *layer {
            Layer::Conv { kernel, stride, .. } => {
                let wt = &params.values.weights[slot];
                let b = &params.values.biases[slot];
                slot += 1;
                let mut y = vec![0.0; oc * oh * ow];
                for f in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut s = b[f];
                            for ci in 0..c {
                                let wbase = (f * c + ci) * kernel * kernel;
                                let xbase = ci * h * w;
                                for ky in 0..kernel {
                                    let xrow = xbase + (oy * stride + ky) * w + ox * stride;
                                    let wrow = wbase + ky * kernel;
                                    for kx in 0..kernel {
                                        s += wt[wrow + kx] * x[xrow + kx];
                                    }
                                }
                            }
                            y[(f * oh + oy) * ow + ox] = s;
                        }
                    }
                }
                y
            }
            Layer::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Layer::MaxPool { window, stride } => {
                let mut y = vec![0.0; oc * oh * ow];
                sw = vec![0u32; oc * oh * ow];
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut at = 0;
                            for ky in 0..window {
                                for kx in 0..window {
                                    let idx = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                                    if x[idx] > best {
                                        best = x[idx];
                                        at = idx;
                                    }
                                }
                            }
                            let o = (ch * oh + oy) * ow + ox;
                            y[o] = best;
                            sw[o] = at as u32;
                        }
                    }
                }
                y
            }
            Layer::Dense { width } => {
                let wt = &params.values.weights[slot];
                let b = &params.values.biases[slot];
                slot += 1;
                let n = x.len();
                (0..width)
                    .map(|o| b[o] + wt[o * n..(o + 1) * n].iter().zip(x).map(|(a, v)| a * v).sum::<f64>())
                    .collect()
            }
        };
        acts.push(y);
        switches.push(sw);
    }
    (acts, switches)
}

/// Class distributions for a batch of channel-major patches.
pub fn forward<P: AsRef<[f64]>>(params: &NetworkParams, patches: &[P]) -> Result<(Vec<Vec<f64>>, ForwardCache)> {
    let shapes = params.spec.shapes()?;
    let want = params.spec.input_len();
    let depth = params.spec.layers.len();
    let mut cache = ForwardCache {
        activations: Vec::with_capacity(patches.len()),
        argmax: Vec::with_capacity(patches.len()),
        probs: Vec::with_capacity(patches.len()),
    };
    for (i, p) in patches.iter().enumerate() {
        let x = p.as_ref();
        if x.len() != want {
            return Err(Error::Shape(format!(
                "patch {i} has {} values, network expects {want}",
                x.len()
            )));
        }
        let (acts, sw) = run_layers(params, &shapes, x, depth);
        cache.probs.push(softmax(&acts[depth]));
        cache.activations.push(acts);
        cache.argmax.push(sw);
    }
    Ok((cache.probs.clone(), cache))
}

/// Gradients of the batch-averaged cross-entropy. `class_weights`, when
/// given, scales each sample's loss by the weight of its target class.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    targets: &[ClassId],
    class_weights: Option<&[f64]>,
) -> Result<ParamSet> {
    if targets.len() != cache.len() {
        return Err(Error::Shape(format!(
            "{} targets for a cached batch of {}",
            targets.len(),
            cache.len()
        )));
    }
    let classes = params.spec.classes();
    if let Some(t) = targets.iter().find(|&&t| t as usize >= classes) {
        return Err(Error::Shape(format!(
            "target class {t} is outside the {classes} outputs"
        )));
    }
    let shapes = params.spec.shapes()?;
    let slots = param_slots(params);
    let depth = params.spec.layers.len();
    let n = cache.len() as f64;
    let mut grads = ParamSet::zeros(&params.spec);
    for (i, &t) in targets.iter().enumerate() {
        let w = class_weights.map_or(1.0, |cw| cw[t as usize]);
        let mut d: Vec<f64> = cache.probs[i].iter().map(|p| w * p / n).collect();
        d[t as usize] -= w / n;
        backprop(
            params,
            &shapes,
            &slots,
            &cache.activations[i],
            &cache.argmax[i],
            depth,
            d,
            &mut grads,
        );
    }
    Ok(grads)
}

/// Gradients given the derivative of some loss with respect to each
/// sample's feature vector (the input to the final dense layer).
pub fn backward_from_features(
    params: &NetworkParams,
    cache: &ForwardCache,
    dfeatures: &[Vec<f64>],
) -> Result<ParamSet> {
    if dfeatures.len() != cache.len() {
        return Err(Error::Shape(format!(
            "{} feature gradients for a cached batch of {}",
            dfeatures.len(),
            cache.len()
        )));
    }
    let shapes = params.spec.shapes()?;
    let slots = param_slots(params);
    let top = params.spec.layers.len() - 1;
    let mut grads = ParamSet::zeros(&params.spec);
    for (i, d) in dfeatures.iter().enumerate() {
        if d.len() != cache.features(i).len() {
            return Err(Error::Shape(format!("feature gradient {i} has the wrong width")));
        }
        backprop(
            params,
            &shapes,
            &slots,
            &cache.activations[i],
            &cache.argmax[i],
            top,
            d.clone(),
            &mut grads,
        );
    }
    Ok(grads)
}

/// Propagates `dout` (the gradient at the output of layer `from - 1`) down
/// to the input, accumulating parameter gradients.
#[allow(clippy::too_many_arguments)]
fn backprop(
    params: &NetworkParams,
    shapes: &[Shape],
    slots: &[Option<usize>],
    acts: &[Vec<f64>],
    switches: &[Vec<u32>],
    from: usize,
    mut dout: Vec<f64>,
    grads: &mut ParamSet,
) {
    for i in (0..from).rev() {
        let x = &acts[i];
        let (c, h, w) = shapes[i];
        let (oc, oh, ow) = shapes[i + 1];
        let need_input_grad = i > 0;
        let din = match params.spec.layers[i] {
            Layer::Conv { kernel, stride, .. } => {
                let s = slots[i].expect("conv has params");
                let wt = &params.values.weights[s];
                let gw = &mut grads.weights[s];
                let gb = &mut grads.biases[s];
                let mut din = vec![0.0; if need_input_grad { x.len() } else { 0 }];
                for f in 0..oc {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = dout[(f * oh + oy) * ow + ox];
                            if g == 0.0 {
                                continue;
                            }
                            gb[f] += g;
                            for ci in 0..c {
                                let wbase = (f * c + ci) * kernel * kernel;
                                let xbase = ci * h * w;
                                for ky in 0..kernel {
                                    let xrow = xbase + (oy * stride + ky) * w + ox * stride;
                                    let wrow = wbase + ky * kernel;
                                    for kx in 0..kernel {
                                        gw[wrow + kx] += g * x[xrow + kx];
                                        if need_input_grad {
                                            din[xrow + kx] += g * wt[wrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                din
            }
            Layer::Relu => x
                .iter()
                .zip(&dout)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::MaxPool { .. } => {
                let mut din = vec![0.0; x.len()];
                for (o, &at) in switches[i].iter().enumerate() {
                    din[at as usize] += dout[o];
                }
                din
            }
            Layer::Dense { width } => {
                let s = slots[i].expect("dense has params");
                let wt = &params.values.weights[s];
                let n = x.len();
                let mut din = vec![0.0; if need_input_grad { n } else { 0 }];
                for o in 0..width {
                    let g = dout[o];
                    grads.biases[s][o] += g;
                    let gw = &mut grads.weights[s][o * n..(o + 1) * n];
                    for k in 0..n {
                        gw[k] += g * x[k];
                    }
                    if need_input_grad {
                        for k in 0..n {
                            din[k] += g * wt[o * n + k];
                        }
                    }
                }
                din
            }
        };
        dout = din;
    }
}
