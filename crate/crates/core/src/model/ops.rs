use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamId, ParamStore, Real, Tensor};

/// Candidate operation on a cell edge.
#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "sep_conv_3x3")]
    SepConv3,
    #[serde(rename = "dil_2_conv_3x3")]
    DilConv3r2,
    #[serde(rename = "dil_3_conv_3x3")]
    DilConv3r3,
    #[serde(rename = "conv_9x1_1x9")]
    Conv9x1_1x9,
    #[serde(rename = "skip")]
    Skip,
    #[serde(rename = "none")]
    NoneOp,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::SepConv3,
        OpKind::DilConv3r2,
        OpKind::DilConv3r3,
        OpKind::Conv9x1_1x9,
        OpKind::Skip,
        OpKind::NoneOp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::SepConv3 => "sep_conv_3x3",
            OpKind::DilConv3r2 => "dil_2_conv_3x3",
            OpKind::DilConv3r3 => "dil_3_conv_3x3",
            OpKind::Conv9x1_1x9 => "conv_9x1_1x9",
            OpKind::Skip => "skip",
            OpKind::NoneOp => "none",
        }
    }

    /// Depthwise stages as `(kernel_h, kernel_w, dilation)`; each is followed
    /// by a 1x1 pointwise conv.
    pub fn stages(self) -> &'static [(usize, usize, usize)] {
        match self {
            OpKind::SepConv3 => &[(3, 3, 1)],
            OpKind::DilConv3r2 => &[(3, 3, 2)],
            OpKind::DilConv3r3 => &[(3, 3, 3)],
            OpKind::Conv9x1_1x9 => &[(9, 1, 1), (1, 9, 1)],
            OpKind::Skip | OpKind::NoneOp => &[],
        }
    }

    pub fn has_weights(self) -> bool {
        !self.stages().is_empty()
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown operation kind {s:?}")))
    }
}

/// Ordered list of candidate operations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SpaceRepr", into = "SpaceRepr")]
pub enum SearchSpace {
    A,
    B,
    Extended,
    Custom(Vec<OpKind>),
}

const SPACE_A: [OpKind; 5] = [
    OpKind::SepConv3,
    OpKind::DilConv3r2,
    OpKind::DilConv3r3,
    OpKind::Skip,
    OpKind::NoneOp,
];
const SPACE_B: [OpKind; 5] = [
    OpKind::SepConv3,
    OpKind::DilConv3r2,
    OpKind::Conv9x1_1x9,
    OpKind::Skip,
    OpKind::NoneOp,
];

impl SearchSpace {
    /// A custom space; order is kept and decides tie-breaks.
    pub fn custom(ops: Vec<OpKind>) -> Result<Self> {
        if !ops.iter().any(|k| *k != OpKind::NoneOp) {
            return Err(Error::invalid(
                "search space needs at least one operation other than none",
            ));
        }
        for (i, k) in ops.iter().enumerate() {
            if ops[..i].contains(k) {
                return Err(Error::invalid(format!("operation {k} listed twice")));
            }
        }
        Ok(SearchSpace::Custom(ops))
    }

    pub fn ops(&self) -> &[OpKind] {
        match self {
            SearchSpace::A => &SPACE_A,
            SearchSpace::B => &SPACE_B,
            SearchSpace::Extended => &OpKind::ALL,
            SearchSpace::Custom(ops) => ops,
        }
    }

    pub fn len(&self) -> usize {
        self.ops().len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops().is_empty()
    }

    pub fn contains(&self, k: OpKind) -> bool {
        self.ops().contains(&k)
    }

    pub fn index_of(&self, k: OpKind) -> Option<usize> {
        self.ops().iter().position(|&o| o == k)
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace::A
    }
}

impl fmt::Display for SearchSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchSpace::A => f.write_str("A"),
            SearchSpace::B => f.write_str("B"),
            SearchSpace::Extended => f.write_str("extended"),
            SearchSpace::Custom(ops) => {
                let names: Vec<&str> = ops.iter().map(|k| k.name()).collect();
                write!(f, "[{}]", names.join(","))
            }
        }
    }
}

impl FromStr for SearchSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(SearchSpace::A),
            "B" | "b" => Ok(SearchSpace::B),
            "extended" => Ok(SearchSpace::Extended),
            other => {
                let inner = other.trim_start_matches('[').trim_end_matches(']');
                let ops = inner
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<Result<Vec<OpKind>>>()
                    .map_err(|_| Error::invalid(format!("unknown search space {s:?}")))?;
                SearchSpace::custom(ops)
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SpaceRepr {
    Name(String),
    Ops(Vec<OpKind>),
}

impl TryFrom<SpaceRepr> for SearchSpace {
    type Error = String;

    fn try_from(r: SpaceRepr) -> std::result::Result<Self, String> {
        match r {
            SpaceRepr::Name(n) => n.parse().map_err(|e: Error| e.to_string()),
            SpaceRepr::Ops(ops) => SearchSpace::custom(ops).map_err(|e| e.to_string()),
        }
    }
}

impl From<SearchSpace> for SpaceRepr {
    fn from(s: SearchSpace) -> Self {
        match s {
            SearchSpace::Custom(ops) => SpaceRepr::Ops(ops),
            named => SpaceRepr::Name(named.to_string()),
        }
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, drawn in f64 so that
/// networks of either precision start from the same values.
pub(crate) fn init_uniform<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    shape: [usize; 4],
    fan_in: usize,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// One convolution with bias, stored in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dilation: usize,
    pub groups: usize,
}

/// Shape of a convolution layer, independent of any stored weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvShape {
    pub fn square(ci: usize, co: usize, k: usize) -> Self {
        ConvShape {
            in_channels: ci,
            out_channels: co,
            kernel_h: k,
            kernel_w: k,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn dilated(self, dilation: usize) -> Self {
        ConvShape { dilation, ..self }
    }

    pub fn depthwise(c: usize, kh: usize, kw: usize, dilation: usize) -> Self {
        ConvShape {
            in_channels: c,
            out_channels: c,
            kernel_h: kh,
            kernel_w: kw,
            dilation,
            groups: c,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels / self.groups
    }

    pub fn params(&self) -> u64 {
        (self.fan_in() * self.out_channels + self.out_channels) as u64
    }

    /// Fused multiply-adds plus bias adds over an `h x w` output.
    pub fn flops(&self, h: usize, w: usize) -> u64 {
        (h * w * self.out_channels) as u64 * (self.fan_in() as u64 + 1)
    }
}

impl Conv {
    pub(crate) fn create<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        shape: ConvShape,
    ) -> Conv {
        let fan_in = shape.fan_in();
        let kshape = [
            shape.out_channels,
            shape.in_channels / shape.groups,
            shape.kernel_h,
            shape.kernel_w,
        ];
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, kshape, fan_in));
        let bias = store.add(
            format!("{name}.bias"),
            init_uniform(rng, [1, 1, 1, shape.out_channels], fan_in),
        );
        Conv {
            weight,
            bias,
            dilation: shape.dilation,
            groups: shape.groups,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.dilation, self.groups)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Weights of one candidate operation on one edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateOp {
    pub kind: OpKind,
    /// Depthwise/pointwise pairs, in application order.
    pub convs: Vec<Conv>,
}

impl CandidateOp {
    pub fn create<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        kind: OpKind,
        channels: usize,
    ) -> Self {
        let mut convs = Vec::new();
        for (s, shape) in op_conv_shapes(kind, channels).into_iter().enumerate() {
            let role = if s % 2 == 0 { "dw" } else { "pw" };
            convs.push(Conv::create(store, rng, &format!("{name}.{role}{}", s / 2), shape));
        }
        CandidateOp { kind, convs }
    }

    /// Applies the op; `activate` puts a ReLU after every conv.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: NodeId, activate: bool) -> Result<NodeId> {
        match self.kind {
            OpKind::Skip => Ok(x),
            OpKind::NoneOp => {
                let shape = g.value(x).shape();
                Ok(g.input(Tensor::zeros(shape)))
            }
            _ => {
                let mut h = x;
                for conv in &self.convs {
                    h = conv.forward(g, h)?;
                    if activate {
                        h = g.relu(h);
                    }
                }
                Ok(h)
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(|c| c.param_ids()).collect()
    }
}

/// Conv layers making up `kind` at `channels` channels.
pub fn op_conv_shapes(kind: OpKind, channels: usize) -> Vec<ConvShape> {
    kind.stages()
        .iter()
        .flat_map(|&(kh, kw, d)| {
            [
                ConvShape::depthwise(channels, kh, kw, d),
                ConvShape::square(channels, channels, 1),
            ]
        })
        .collect()
}
