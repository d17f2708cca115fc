//! Network structure and forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NnError, Result};
use crate::autodiff::{Graph, Tensor};
use crate::real::Real;

/// One stage of the network.  Every layer carries a tag so any activation can
/// be named as the tap point.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Valid, stride-1 convolution with per-channel bias.
    Conv2d {
        tag: String,
        cin: usize,
        cout: usize,
        k: usize,
    },
    Linear {
        tag: String,
        cin: usize,
        cout: usize,
    },
    Relu {
        tag: String,
    },
    MaxPool2 {
        tag: String,
    },
    Flatten {
        tag: String,
    },
    Dropout {
        tag: String,
        p: f64,
    },
}

impl Layer {
    pub fn tag(&self) -> &str {
        match self {
            Layer::Conv2d { tag, .. }
            | Layer::Linear { tag, .. }
            | Layer::Relu { tag }
            | Layer::MaxPool2 { tag }
            | Layer::Flatten { tag }
            | Layer::Dropout { tag, .. } => tag,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Param<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Trainable parameters watched on a graph, in store order.
pub struct BoundParams<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> BoundParams<T> {
    /// No parameters on the graph: forward becomes a pure function of the
    /// input (and records nothing unless the input is watched).
    pub fn none() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }
}

/// Result of a forward pass; `tap` is the requested activation flattened to
/// (batch, features).
pub struct ForwardPass<T: Real> {
    pub logits: Tensor<T>,
    pub tap: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Network<T: Real> {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<Param<T>>,
}

impl<T: Real> Network<T> {
    /// Builds a network, inferring intermediate shapes and initialising
    /// parameters (He-uniform weights, zero biases) from `seed`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut shape = input_shape.clone();
        let mut params: Vec<Param<T>> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = std::collections::BTreeSet::new();
        for layer in &layers {
            if !seen.insert(layer.tag().to_string()) {
                return Err(NnError::Structure(format!(
                    "duplicate layer tag {}",
                    layer.tag()
                )));
            }
            match layer {
                Layer::Conv2d { tag, cin, cout, k } => {
                    let [c, h, w] = shape[..] else {
                        return Err(NnError::Structure(format!(
                            "{tag}: conv needs [c,h,w] input, got {shape:?}"
                        )));
                    };
                    if c != *cin || *k > h || *k > w {
                        return Err(NnError::Structure(format!(
                            "{tag}: conv {cin}->{cout} k={k} does not fit input {shape:?}"
                        )));
                    }
                    let fan_in = cin * k * k;
                    params.push(he_uniform(
                        format!("{tag}.weight"),
                        vec![*cout, *cin, *k, *k],
                        fan_in,
                        &mut rng,
                    ));
                    params.push(Param {
                        name: format!("{tag}.bias"),
                        value: Tensor::zeros(vec![*cout]),
                        trainable: true,
                    });
                    shape = vec![*cout, h - k + 1, w - k + 1];
                }
                Layer::Linear { tag, cin, cout } => {
                    let [d] = shape[..] else {
                        return Err(NnError::Structure(format!(
                            "{tag}: linear needs flat input, got {shape:?}"
                        )));
                    };
                    if d != *cin {
                        return Err(NnError::Structure(format!(
                            "{tag}: linear expects {cin} features, input has {d}"
                        )));
                    }
                    params.push(he_uniform(
                        format!("{tag}.weight"),
                        vec![*cin, *cout],
                        *cin,
                        &mut rng,
                    ));
                    params.push(Param {
                        name: format!("{tag}.bias"),
                        value: Tensor::zeros(vec![*cout]),
                        trainable: true,
                    });
                    shape = vec![*cout];
                }
                Layer::Relu { .. } | Layer::Dropout { .. } => {}
                Layer::MaxPool2 { tag } => {
                    let [c, h, w] = shape[..] else {
                        return Err(NnError::Structure(format!(
                            "{tag}: maxpool needs [c,h,w] input, got {shape:?}"
                        )));
                    };
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(NnError::Structure(format!(
                            "{tag}: maxpool needs even spatial dims, got {shape:?}"
                        )));
                    }
                    shape = vec![c, h / 2, w / 2];
                }
                Layer::Flatten { .. } => {
                    shape = vec![shape.iter().product()];
                }
            }
        }
        if shape.len() != 1 {
            return Err(NnError::Structure(format!(
                "network must end with flat logits, got {shape:?}"
            )));
        }
        Ok(Self {
            input_shape,
            layers,
            params,
        })
    }

    /// The fixed small CNN used throughout: two 3x3 conv+relu stages, one
    /// 2x2 pool, dropout 0.25, a 128-wide hidden linear layer with relu and
    /// dropout 0.5, and a linear head.
    pub fn poc_cnn(in_channels: usize, side: usize, classes: usize, seed: u64) -> Result<Self> {
        let after = side - 4; // two valid 3x3 convs
        let flat = 64 * (after / 2) * (after / 2);
        Self::new(
            vec![in_channels, side, side],
            vec![
                Layer::Conv2d {
                    tag: "conv1".into(),
                    cin: in_channels,
                    cout: 32,
                    k: 3,
                },
                Layer::Relu { tag: "relu1".into() },
                Layer::Conv2d {
                    tag: "conv2".into(),
                    cin: 32,
                    cout: 64,
                    k: 3,
                },
                Layer::Relu { tag: "relu2".into() },
                Layer::MaxPool2 { tag: "pool".into() },
                Layer::Flatten { tag: "flatten".into() },
                Layer::Dropout {
                    tag: "drop1".into(),
                    p: 0.25,
                },
                Layer::Linear {
                    tag: "fc1".into(),
                    cin: flat,
                    cout: 128,
                },
                Layer::Relu { tag: "relu3".into() },
                Layer::Dropout {
                    tag: "drop2".into(),
                    p: 0.5,
                },
                Layer::Linear {
                    tag: "fc2".into(),
                    cin: 128,
                    cout: classes,
                },
            ],
            seed,
        )
    }

    /// Fully-connected relu network: flatten, hidden layers, linear head.
    pub fn mlp(input_shape: Vec<usize>, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut layers = vec![Layer::Flatten {
            tag: "flatten".into(),
        }];
        let mut d: usize = input_shape.iter().product();
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Layer::Linear {
                tag: format!("fc{}", i + 1),
                cin: d,
                cout: h,
            });
            layers.push(Layer::Relu {
                tag: format!("relu{}", i + 1),
            });
            d = h;
        }
        layers.push(Layer::Linear {
            tag: "head".into(),
            cin: d,
            cout: classes,
        });
        Self::new(input_shape, layers, seed)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.value)
            .ok_or_else(|| NnError::UnknownParam(name.into()))
    }

    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| NnError::UnknownParam(name.into()))?;
        if p.value.shape() != value.shape() {
            return Err(NnError::ParamShape {
                name: name.into(),
                expected: p.value.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        p.value = value.detach();
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| NnError::UnknownParam(name.into()))?;
        p.trainable = trainable;
        Ok(())
    }

    /// Freezes everything except the parameters of the listed layer tags.
    pub fn freeze_except(&mut self, tags: &[&str]) -> Result<()> {
        for tag in tags {
            if !self.layers.iter().any(|l| l.tag() == *tag) {
                return Err(NnError::UnknownTag((*tag).into()));
            }
        }
        for p in &mut self.params {
            let layer = p.name.split('.').next().unwrap_or("");
            p.trainable = tags.contains(&layer);
        }
        Ok(())
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.clone())
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Watches trainable parameters on `g`; frozen ones stay constants.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams<T> {
        let entries = self
            .params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| (p.name.clone(), g.var(&p.value)))
            .collect();
        BoundParams { entries }
    }

    fn param_for_forward(&self, bound: &BoundParams<T>, name: &str) -> Result<Tensor<T>> {
        if let Some(t) = bound.get(name) {
            return Ok(t.clone());
        }
        Ok(self.param(name)?.clone())
    }

    /// Runs the network on a batch.  `x` has shape [batch, ..input_shape].
    /// In train mode, dropout draws its masks from `rng` in layer order.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        x: &Tensor<T>,
        bound: &BoundParams<T>,
        train: bool,
        mut rng: Option<&mut ChaCha8Rng>,
        tap: Option<&str>,
    ) -> Result<ForwardPass<T>> {
        if x.rank() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(NnError::InputShape {
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        if let Some(t) = tap {
            if !self.layers.iter().any(|l| l.tag() == t) {
                return Err(NnError::UnknownTag(t.into()));
            }
        }
        let batch = x.shape()[0];
        let mut cur = x.clone();
        let mut tapped: Option<Tensor<T>> = None;
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv2d { tag, .. } => {
                    let w = self.param_for_forward(bound, &format!("{tag}.weight"))?;
                    let b = self.param_for_forward(bound, &format!("{tag}.bias"))?;
                    let y = g.conv2d(&cur, &w)?;
                    let [_, _, oh, ow] = y.shape() else { unreachable!() };
                    let bb = g.broadcast_channel(&b, batch, *oh, *ow)?;
                    g.add(&y, &bb)?
                }
                Layer::Linear { tag, cout, .. } => {
                    let w = self.param_for_forward(bound, &format!("{tag}.weight"))?;
                    let b = self.param_for_forward(bound, &format!("{tag}.bias"))?;
                    let y = g.matmul(&cur, &w)?;
                    let brow = g.reshape(&b, vec![1, *cout])?;
                    let bb = g.matmul(&Tensor::ones(vec![batch, 1]), &brow)?;
                    g.add(&y, &bb)?
                }
                Layer::Relu { .. } => g.relu(&cur)?,
                Layer::MaxPool2 { .. } => g.maxpool2d(&cur)?,
                Layer::Flatten { .. } => {
                    let d: usize = cur.shape()[1..].iter().product();
                    g.reshape(&cur, vec![batch, d])?
                }
                Layer::Dropout { p, .. } => {
                    if train {
                        let r = rng.as_deref_mut().ok_or(NnError::DropoutNeedsRng)?;
                        g.dropout(&cur, *p, true, r)?
                    } else {
                        cur
                    }
                }
            };
            if tap == Some(layer.tag()) {
                // The tap must sit on the main path so downstream gradients
                // reach it; spatial activations are rethreaded through their
                // flat view.
                let d: usize = cur.shape()[1..].iter().product();
                let orig = cur.shape().to_vec();
                let flat = g.reshape(&cur, vec![batch, d])?;
                cur = if orig.len() == 2 {
                    flat.clone()
                } else {
                    g.reshape(&flat, orig)?
                };
                tapped = Some(flat);
            }
        }
        if cur.rank() != 2 {
            return Err(NnError::Structure(format!(
                "logits have shape {:?}",
                cur.shape()
            )));
        }
        Ok(ForwardPass {
            logits: cur,
            tap: tapped,
        })
    }

    /// Eval-mode class predictions, processed in chunks.
    pub fn predict(&self, x: &Tensor<T>, chunk: usize) -> Result<Vec<usize>> {
        let n = x.shape()[0];
        let sample: usize = self.input_shape.iter().product();
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let take = chunk.min(n - start);
            let mut shape = vec![take];
            shape.extend_from_slice(&self.input_shape);
            let slice = Tensor::from_vec(
                shape,
                x.data()[start * sample..(start + take) * sample].to_vec(),
            )
            .map_err(NnError::Tensor)?;
            let mut g = Graph::new();
            let pass = self.forward(&mut g, &slice, &BoundParams::none(), false, None, None)?;
            out.extend(pass.logits.argmax_rows());
            start += take;
        }
        Ok(out)
    }
}

fn he_uniform<T: Real>(
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Param<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Param {
        name,
        value: Tensor::from_parts(shape, data),
        trainable: true,
    }
}
