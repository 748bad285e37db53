//! Parameter storage and sequential layer stacks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Ordered parameter list; index order is the binding order on a tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn push(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    /// Records every parameter as a grad-enabled leaf (or constant).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }
}

/// Uniform in `±sqrt(6 / fan_in)`.
fn init_weights(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape by construction")
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Layer {
    Dense { w: usize, b: usize },
    Conv { k: usize, b: usize },
    Relu,
    Pool,
    Flatten,
}

/// Activation shape between layers, batch axis excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Feat {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Feat {
    pub fn flat_len(self) -> usize {
        match self {
            Feat::Map { c, h, w } => c * h * w,
            Feat::Flat(n) => n,
        }
    }
}

/// Builds a [`Stack`] while registering its parameters.
pub(crate) struct StackBuilder<'a> {
    params: &'a mut ParamSet,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
    layers: Vec<Layer>,
    feat: Feat,
}

impl<'a> StackBuilder<'a> {
    pub fn new(params: &'a mut ParamSet, rng: &'a mut ChaCha8Rng, prefix: impl Into<String>, input: Feat) -> Self {
        Self {
            params,
            rng,
            prefix: prefix.into(),
            layers: Vec::new(),
            feat: input,
        }
    }

    fn name(&self, what: &str) -> String {
        format!("{}.{}.{}", self.prefix, self.layers.len(), what)
    }

    pub fn flatten(mut self) -> Self {
        if let Feat::Map { .. } = self.feat {
            self.layers.push(Layer::Flatten);
            self.feat = Feat::Flat(self.feat.flat_len());
        }
        self
    }

    pub fn dense(mut self, out: usize) -> Self {
        self = self.flatten();
        let fan_in = self.feat.flat_len();
        let w = init_weights(self.rng, &[fan_in, out], fan_in);
        let wi = self.params.push(self.name("w"), w);
        let bi = self.params.push(self.name("b"), Tensor::zeros(&[out]));
        self.layers.push(Layer::Dense { w: wi, b: bi });
        self.feat = Feat::Flat(out);
        self
    }

    pub fn conv(mut self, out: usize, k: usize) -> Result<Self> {
        let Feat::Map { c, h, w } = self.feat else {
            return Err(Error::Config("convolution needs a spatial input".into()));
        };
        let kernel = init_weights(self.rng, &[out, c, k, k], c * k * k);
        let ki = self.params.push(self.name("k"), kernel);
        let bi = self.params.push(self.name("b"), Tensor::zeros(&[out]));
        self.layers.push(Layer::Conv { k: ki, b: bi });
        self.feat = Feat::Map { c: out, h, w };
        Ok(self)
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn pool(mut self) -> Result<Self> {
        match self.feat {
            Feat::Map { c, h, w } if h % 2 == 0 && w % 2 == 0 => {
                self.layers.push(Layer::Pool);
                self.feat = Feat::Map { c, h: h / 2, w: w / 2 };
                Ok(self)
            }
            other => Err(Error::Config(format!("cannot 2×2-pool features {other:?}"))),
        }
    }

    /// Pools only when both spatial sizes are even and at least 2.
    pub fn pool_if_even(self) -> Self {
        match self.feat {
            Feat::Map { h, w, .. } if h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2 => self.pool().expect("checked"),
            _ => self,
        }
    }

    pub fn finish(self) -> (Stack, Feat) {
        (Stack { layers: self.layers }, self.feat)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Stack {
    pub layers: Vec<Layer>,
}

impl Stack {
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = match *layer {
                Layer::Dense { w, b } => {
                    let y = tape.matmul(x, vars[w])?;
                    tape.add_bias(y, vars[b])?
                }
                Layer::Conv { k, b } => tape.conv2d(x, vars[k], vars[b])?,
                Layer::Relu => tape.relu(x),
                Layer::Pool => tape.maxpool2(x)?,
                Layer::Flatten => tape.flatten(x)?,
            };
        }
        Ok(x)
    }

    pub fn param_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| match *l {
                Layer::Dense { w, b } => vec![w, b],
                Layer::Conv { k, b } => vec![k, b],
                _ => vec![],
            })
            .collect()
    }
}
