//! Trainable parameters of the full model and their fixed layout.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Size hyper-parameters shared by every layer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelDims {
    /// Input embedding width `z`.
    pub z: usize,
    /// Hidden width `z'`.
    pub hidden: usize,
    /// Spatial attention heads.
    pub heads: usize,
    /// LeakyReLU negative slope.
    pub leaky_slope: f64,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            z: 16,
            hidden: 32,
            heads: 4,
            leaky_slope: 0.2,
        }
    }
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.z == 0 || self.hidden == 0 || self.heads == 0 {
            return Err(Error::InvalidConfig(format!("model dims must be positive: {self:?}")));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "leaky slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

/// Neighbour types of the spatial layer, in block order.
pub const NEIGHBOR_TYPES: [&str; 3] = ["fwd", "bwd", "geo"];

/// Temporal channel names, in fusion order.
pub const CHANNEL_NAMES: [&str; 4] = ["linear", "stpp", "stpm", "nonlinear"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadIds {
    pub w_c: usize,
    pub w_s: usize,
    /// Attention vector per neighbour type, each `2z' × 1`.
    pub a: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelIds {
    pub w_q: usize,
    pub w_k: usize,
    pub w_v: usize,
}

/// Index of every tensor inside [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub heads: Vec<HeadIds>,
    /// `K × 4z'` gate weights and `1 × K` gate bias.
    pub gate_w: usize,
    pub gate_b: usize,
    /// `z' × 4z'` projection of the gated head mixture.
    pub proj: usize,
    pub channels: [ChannelIds; 4],
    pub fuse_q: usize,
    pub fuse_k: usize,
    pub head_w1: usize,
    pub head_b1: usize,
    pub head_w2: usize,
    pub head_b2: usize,
    pub transfer_w: usize,
    pub transfer_a: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub layout: Layout,
    names: Vec<String>,
    pub tensors: Vec<Tensor2>,
}

/// One gradient tensor per parameter tensor.
pub type GradientSet = Vec<Tensor2>;

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize, bool)>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, bias: bool) -> usize {
        self.names.push(name);
        self.shapes.push((rows, cols, bias));
        self.names.len() - 1
    }
}

fn plan(dims: &ModelDims) -> (Layout, Builder) {
    let (z, h, k) = (dims.z, dims.hidden, dims.heads);
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
    };
    let heads = (0..k)
        .map(|hd| HeadIds {
            w_c: b.add(format!("spatial.h{hd}.w_c"), h, z, false),
            w_s: b.add(format!("spatial.h{hd}.w_s"), h, z, false),
            a: NEIGHBOR_TYPES.map(|t| b.add(format!("spatial.h{hd}.a_{t}"), 2 * h, 1, false)),
        })
        .collect();
    let gate_w = b.add("spatial.gate.w".into(), k, 4 * h, false);
    let gate_b = b.add("spatial.gate.b".into(), 1, k, true);
    let proj = b.add("spatial.proj".into(), h, 4 * h, false);
    let channels = CHANNEL_NAMES.map(|c| ChannelIds {
        w_q: b.add(format!("temporal.{c}.w_q"), h, h, false),
        w_k: b.add(format!("temporal.{c}.w_k"), h, h, false),
        w_v: b.add(format!("temporal.{c}.w_v"), h, h, false),
    });
    let fuse_q = b.add("fusion.w_q".into(), h, h, false);
    let fuse_k = b.add("fusion.w_k".into(), h, h, false);
    let head_w1 = b.add("demand.w1".into(), h, h, false);
    let head_b1 = b.add("demand.b1".into(), 1, h, true);
    let head_w2 = b.add("demand.w2".into(), 1, h, false);
    let head_b2 = b.add("demand.b2".into(), 1, 1, true);
    let transfer_w = b.add("transfer.w".into(), h, h, false);
    let transfer_a = b.add("transfer.a".into(), 2 * h, 1, false);
    let layout = Layout {
        heads,
        gate_w,
        gate_b,
        proj,
        channels,
        fuse_q,
        fuse_k,
        head_w1,
        head_b1,
        head_w2,
        head_b2,
        transfer_w,
        transfer_a,
    };
    (layout, b)
}

impl ModelParams {
    /// Glorot-uniform weights in `[-r, r]`, `r = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let (layout, b) = plan(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = b
            .shapes
            .iter()
            .map(|&(rows, cols, bias)| {
                if bias {
                    return Tensor2::zeros(rows, cols);
                }
                let r = libm::sqrt(6.0 / (rows + cols) as f64);
                let data = (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect();
                Tensor2::from_vec(rows, cols, data).expect("planned shape")
            })
            .collect();
        Ok(Self {
            dims,
            layout,
            names: b.names,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_named(dims: ModelDims, named: Vec<(String, Tensor2)>) -> Result<Self> {
        dims.validate()?;
        let (layout, b) = plan(&dims);
        if named.len() != b.names.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} parameter tensors, found {}",
                b.names.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want, &(rows, cols, _))) in named.into_iter().zip(b.names.iter().zip(&b.shapes)) {
            if &name != want {
                return Err(Error::UnknownParameter(name));
            }
            if t.shape() != (rows, cols) {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    detail: format!("{name}: expected {rows}x{cols}, found {:?}", t.shape()),
                });
            }
            tensors.push(t);
        }
        Ok(Self {
            dims,
            layout,
            names: b.names,
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor2> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor2> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn zeros_like(&self) -> GradientSet {
        self.tensors.iter().map(|t| Tensor2::zeros(t.rows(), t.cols())).collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }

    /// Parameter group of a tensor: its name without the last component.
    pub fn group_of(&self, index: usize) -> &str {
        let name = &self.names[index];
        name.rsplit_once('.').map_or(name.as_str(), |(g, _)| g)
    }
}

impl AsRef<[Tensor2]> for ModelParams {
    fn as_ref(&self) -> &[Tensor2] {
        &self.tensors
    }
}

impl AsMut<[Tensor2]> for ModelParams {
    fn as_mut(&mut self) -> &mut [Tensor2] {
        &mut self.tensors
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_dims() {
        let dims = ModelDims::default();
        let p = ModelParams::init(dims, 7).unwrap();
        let l = &p.layout;
        assert_eq!(l.heads.len(), 4);
        assert_eq!(p.tensors[l.heads[0].w_c].shape(), (32, 16));
        assert_eq!(p.tensors[l.heads[3].a[2]].shape(), (64, 1));
        assert_eq!(p.tensors[l.gate_w].shape(), (4, 128));
        assert_eq!(p.tensors[l.proj].shape(), (32, 128));
        assert_eq!(p.tensors[l.transfer_a].shape(), (64, 1));
        assert_eq!(p.get("demand.b2").unwrap().shape(), (1, 1));
        assert_eq!(p.names().len(), p.tensors.len());
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let p = ModelParams::init(ModelDims::default(), 3).unwrap();
        for (i, t) in p.tensors.iter().enumerate() {
            let name = &p.names()[i];
            if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
                assert!(t.as_slice().iter().all(|&v| v == 0.0), "{name}");
            } else {
                let r = libm::sqrt(6.0 / (t.rows() + t.cols()) as f64);
                assert!(t.as_slice().iter().all(|v| v.abs() <= r), "{name}");
            }
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = ModelParams::init(ModelDims::default(), 11).unwrap();
        let b = ModelParams::init(ModelDims::default(), 11).unwrap();
        let c = ModelParams::init(ModelDims::default(), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn from_named_checks_shapes() {
        let p = ModelParams::init(ModelDims::default(), 1).unwrap();
        let named: Vec<_> = p.names().iter().cloned().zip(p.tensors.iter().cloned()).collect();
        assert_eq!(ModelParams::from_named(p.dims, named.clone()).unwrap(), p);
        let mut bad = named;
        bad[0].1 = Tensor2::zeros(1, 1);
        assert!(ModelParams::from_named(p.dims, bad).is_err());
    }
}
