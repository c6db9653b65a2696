use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId, ParamId, ParamStore, Real, Tensor};
use crate::kspace::{from_channels, to_channels, ComplexImage, DataConsistencyLayer};

use super::genotype::{AlphaParams, Genotype};
use super::ops::{CandidateOp, Conv, ConvShape, OpKind, SearchSpace};
use super::{ModelKind, NetworkConfig};

/// Edges of the cell's internal nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CellBody {
    /// `ops[node][input][k]` for every op `k` of the search space.
    Mixed(Vec<Vec<Vec<CandidateOp>>>),
    /// Two `(input, op)` edges per node.
    Discrete(Vec<[(usize, CandidateOp); 2]>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellWeights {
    /// 1x1 preprocessing of `c_{l-2}` and `c_{l-1}`.
    pub pre0: Conv,
    pub pre1: Conv,
    pub body: CellBody,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModuleWeights {
    Nas {
        stem: Conv,
        cells: Vec<CellWeights>,
        tail: Conv,
    },
    Dccnn {
        stem: Conv,
        blocks: Vec<[Conv; 2]>,
        tail: Conv,
    },
    Rdn {
        stem: Conv,
        /// Dilation rates 1, 2, 3; applied `recursions` times.
        block: [Conv; 3],
        recursions: usize,
        tail: Conv,
    },
}

/// `sum_k p_k * op_k(x)` over the non-none ops of one edge.
pub fn mixed_op<T: Real>(
    g: &mut Graph<T>,
    x: NodeId,
    ops: &[CandidateOp],
    probs: NodeId,
) -> Result<NodeId> {
    let mut outs = Vec::with_capacity(ops.len());
    let mut idx = Vec::with_capacity(ops.len());
    for (k, op) in ops.iter().enumerate() {
        if op.kind == OpKind::NoneOp {
            continue;
        }
        outs.push(op.forward(g, x, true)?);
        idx.push(k);
    }
    if outs.is_empty() {
        let shape = g.value(x).shape();
        return Ok(g.input(Tensor::zeros(shape)));
    }
    g.weighted_sum(&outs, probs, &idx)
}

impl CellWeights {
    /// Cell output: channel concatenation of all internal nodes.
    ///
    /// `probs[i][j]` holds the softmaxed logits of edge `j -> i`; it is only
    /// read for mixed cells.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        prev2: NodeId,
        prev1: NodeId,
        probs: Option<&[Vec<NodeId>]>,
    ) -> Result<NodeId> {
        let p0 = self.pre0.forward(g, prev2)?;
        let p0 = g.relu(p0);
        let p1 = self.pre1.forward(g, prev1)?;
        let p1 = g.relu(p1);
        let mut states = vec![p0, p1];
        match &self.body {
            CellBody::Mixed(nodes) => {
                let probs = probs.ok_or_else(|| {
                    Error::invalid("mixed cell evaluated without architecture weights")
                })?;
                if probs.len() != nodes.len() {
                    return Err(Error::invalid(format!(
                        "architecture weights cover {} nodes, cell has {}",
                        probs.len(),
                        nodes.len()
                    )));
                }
                for (i, edges) in nodes.iter().enumerate() {
                    if probs[i].len() != edges.len() {
                        return Err(Error::invalid(format!(
                            "node {i} has {} edges but {} weight vectors",
                            edges.len(),
                            probs[i].len()
                        )));
                    }
                    let mut terms = Vec::with_capacity(edges.len());
                    for (j, ops) in edges.iter().enumerate() {
                        terms.push(mixed_op(g, states[j], ops, probs[i][j])?);
                    }
                    let node = g.add(&terms)?;
                    states.push(node);
                }
            }
            CellBody::Discrete(nodes) => {
                for [(i1, op1), (i2, op2)] in nodes {
                    let a = op1.forward(g, states[*i1], true)?;
                    let b = op2.forward(g, states[*i2], true)?;
                    let node = g.add(&[a, b])?;
                    states.push(node);
                }
            }
        }
        g.concat(&states[2..])
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        ids.extend(self.pre0.param_ids());
        ids.extend(self.pre1.param_ids());
        match &self.body {
            CellBody::Mixed(nodes) => {
                for op in nodes.iter().flatten().flatten() {
                    ids.extend(op.param_ids());
                }
            }
            CellBody::Discrete(nodes) => {
                for (_, op) in nodes.iter().flatten() {
                    ids.extend(op.param_ids());
                }
            }
        }
        ids
    }
}

impl ModuleWeights {
    /// Maps a `[N, 2, h, w]` estimate to a refined one of the same shape.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        probs: Option<&[Vec<NodeId>]>,
    ) -> Result<NodeId> {
        let correction = match self {
            ModuleWeights::Nas { stem, cells, tail } => {
                let s = stem.forward(g, x)?;
                let s = g.relu(s);
                let (mut prev2, mut prev1) = (s, s);
                for cell in cells {
                    let out = cell.forward(g, prev2, prev1, probs)?;
                    prev2 = prev1;
                    prev1 = out;
                }
                tail.forward(g, prev1)?
            }
            ModuleWeights::Dccnn { stem, blocks, tail } => {
                let h = stem.forward(g, x)?;
                let mut h = g.relu(h);
                for [c1, c2] in blocks {
                    let r = c1.forward(g, h)?;
                    let r = g.relu(r);
                    let r = c2.forward(g, r)?;
                    h = g.add(&[h, r])?;
                }
                tail.forward(g, h)?
            }
            ModuleWeights::Rdn {
                stem,
                block,
                recursions,
                tail,
            } => {
                let h = stem.forward(g, x)?;
                let mut h = g.relu(h);
                for _ in 0..*recursions {
                    let mut r = h;
                    for (i, c) in block.iter().enumerate() {
                        r = c.forward(g, r)?;
                        if i + 1 < block.len() {
                            r = g.relu(r);
                        }
                    }
                    h = g.add(&[h, r])?;
                }
                tail.forward(g, h)?
            }
        };
        g.add(&[x, correction])
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        match self {
            ModuleWeights::Nas { stem, cells, tail } => {
                ids.extend(stem.param_ids());
                for c in cells {
                    ids.extend(c.param_ids());
                }
                ids.extend(tail.param_ids());
            }
            ModuleWeights::Dccnn { stem, blocks, tail } => {
                ids.extend(stem.param_ids());
                for c in blocks.iter().flatten() {
                    ids.extend(c.param_ids());
                }
                ids.extend(tail.param_ids());
            }
            ModuleWeights::Rdn {
                stem, block, tail, ..
            } => {
                ids.extend(stem.param_ids());
                for c in block {
                    ids.extend(c.param_ids());
                }
                ids.extend(tail.param_ids());
            }
        }
        ids
    }
}

/// Cascade of reconstruction modules, each followed by data consistency.
#[derive(Clone, Debug)]
pub struct Network<T: Real> {
    config: NetworkConfig,
    genotype: Option<Genotype>,
    store: ParamStore<T>,
    sets: Vec<ModuleWeights>,
    /// `alpha[node][input]`, empty unless this is a supernet.
    alpha: Vec<Vec<ParamId>>,
}

fn build_cell<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    config: &NetworkConfig,
    genotype: Option<&Genotype>,
    cell: usize,
) -> CellWeights {
    let c = config.channels;
    let n = genotype.map_or(config.nodes_per_cell, |g| g.len());
    let wide = n * c;
    let in0 = if cell <= 1 { c } else { wide };
    let in1 = if cell == 0 { c } else { wide };
    let pre0 = Conv::create(store, rng, &format!("{name}.pre0"), ConvShape::square(in0, c, 1));
    let pre1 = Conv::create(store, rng, &format!("{name}.pre1"), ConvShape::square(in1, c, 1));
    let body = match genotype {
        None => CellBody::Mixed(
            (0..n)
                .map(|i| {
                    (0..i + 2)
                        .map(|j| {
                            config
                                .search_space
                                .ops()
                                .iter()
                                .map(|&k| {
                                    let op_name = format!("{name}.n{i}.e{j}.{}", k.name());
                                    CandidateOp::create(store, rng, &op_name, k, c)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        ),
        Some(gt) => CellBody::Discrete(
            gt.nodes()
                .iter()
                .enumerate()
                .map(|(i, node)| {
                    node.edges().map(|(j, k)| {
                        let op_name = format!("{name}.n{i}.e{j}.{}", k.name());
                        (j, CandidateOp::create(store, rng, &op_name, k, c))
                    })
                })
                .collect(),
        ),
    };
    CellWeights { pre0, pre1, body }
}

fn build_module<T: Real, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    rng: &mut R,
    name: &str,
    config: &NetworkConfig,
    genotype: Option<&Genotype>,
) -> ModuleWeights {
    let c = config.channels;
    let stem = Conv::create(store, rng, &format!("{name}.stem"), ConvShape::square(2, c, 3));
    match config.kind {
        ModelKind::Nas => {
            let cells = (0..config.cells_per_module)
                .map(|l| build_cell(store, rng, &format!("{name}.cell{l}"), config, genotype, l))
                .collect();
            let n = genotype.map_or(config.nodes_per_cell, |g| g.len());
            let tail =
                Conv::create(store, rng, &format!("{name}.tail"), ConvShape::square(n * c, 2, 3));
            ModuleWeights::Nas { stem, cells, tail }
        }
        ModelKind::Dccnn => {
            let blocks = (0..config.blocks)
                .map(|b| {
                    [0, 1].map(|k| {
                        Conv::create(
                            store,
                            rng,
                            &format!("{name}.block{b}.conv{k}"),
                            ConvShape::square(c, c, 3),
                        )
                    })
                })
                .collect();
            let tail = Conv::create(store, rng, &format!("{name}.tail"), ConvShape::square(c, 2, 3));
            ModuleWeights::Dccnn { stem, blocks, tail }
        }
        ModelKind::Rdn => {
            let block = [1, 2, 3].map(|d| {
                Conv::create(
                    store,
                    rng,
                    &format!("{name}.dilated{d}"),
                    ConvShape::square(c, c, 3).dilated(d),
                )
            });
            let tail = Conv::create(store, rng, &format!("{name}.tail"), ConvShape::square(c, 2, 3));
            ModuleWeights::Rdn {
                stem,
                block,
                recursions: config.blocks,
                tail,
            }
        }
    }
}

fn stack_channels<T: Real>(images: impl Iterator<Item = ComplexImage>) -> Result<Tensor<T>> {
    let items: Vec<Tensor<T>> = images.map(|img| to_channels(&img)).collect();
    Tensor::stack(&items)
}

impl<T: Real> Network<T> {
    /// Freshly initialized network. A `Nas` config without a genotype
    /// yields the supernet with all architecture logits at zero.
    pub fn new<R: Rng + ?Sized>(
        config: NetworkConfig,
        genotype: Option<Genotype>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(gt) = &genotype {
            if config.kind != ModelKind::Nas {
                return Err(Error::invalid(format!(
                    "a genotype only applies to nas networks, not {:?}",
                    config.kind
                )));
            }
            if gt.len() != config.nodes_per_cell {
                return Err(Error::invalid(format!(
                    "genotype has {} nodes, config asks for {}",
                    gt.len(),
                    config.nodes_per_cell
                )));
            }
        }
        let mut store = ParamStore::new();
        let sets = (0..config.weight_sets())
            .map(|m| build_module(&mut store, rng, &format!("module{m}"), &config, genotype.as_ref()))
            .collect();
        let mut alpha = Vec::new();
        if config.kind == ModelKind::Nas && genotype.is_none() {
            let len = config.search_space.len();
            for i in 0..config.nodes_per_cell {
                let edges = (0..i + 2)
                    .map(|j| store.add(format!("alpha.n{i}.e{j}"), Tensor::zeros([1, 1, 1, len])))
                    .collect();
                alpha.push(edges);
            }
        }
        Ok(Network {
            config,
            genotype,
            store,
            sets,
            alpha,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn genotype(&self) -> Option<&Genotype> {
        self.genotype.as_ref()
    }

    pub fn is_supernet(&self) -> bool {
        !self.alpha.is_empty()
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn weight_sets(&self) -> &[ModuleWeights] {
        &self.sets
    }

    /// Weights used by module `m` of the cascade.
    pub fn module(&self, m: usize) -> &ModuleWeights {
        &self.sets[m % self.sets.len()]
    }

    pub fn alpha_ids(&self) -> Vec<ParamId> {
        self.alpha.iter().flatten().copied().collect()
    }

    /// Every convolution weight and bias, each once.
    pub fn weight_ids(&self) -> Vec<ParamId> {
        self.sets.iter().flat_map(|s| s.param_ids()).collect()
    }

    /// Mask for [`Graph::with_trainable`] marking `ids` trainable.
    pub fn mask_for(&self, ids: &[ParamId]) -> Vec<bool> {
        let mut mask = vec![false; self.store.len()];
        for &id in ids {
            mask[id] = true;
        }
        mask
    }

    pub fn alpha(&self) -> Option<AlphaParams> {
        if !self.is_supernet() {
            return None;
        }
        let logits = self
            .alpha
            .iter()
            .map(|edges| {
                edges
                    .iter()
                    .map(|&id| self.store.get(id).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
                    .collect()
            })
            .collect();
        Some(AlphaParams::new(self.config.search_space.clone(), logits).expect("arity by construction"))
    }

    pub fn set_alpha(&mut self, alpha: &AlphaParams) -> Result<()> {
        if !self.is_supernet() {
            return Err(Error::invalid("network has no architecture logits"));
        }
        if alpha.space() != &self.config.search_space || alpha.nodes() != self.alpha.len() {
            return Err(Error::invalid("architecture logits do not match this supernet"));
        }
        for (i, edges) in self.alpha.iter().enumerate() {
            for (j, &id) in edges.iter().enumerate() {
                for (dst, &src) in self.store.get_mut(id).data_mut().iter_mut().zip(alpha.edge(i, j)) {
                    *dst = T::from_f64_lossy(src);
                }
            }
        }
        Ok(())
    }

    /// Softmax nodes for every edge, or `None` for non-supernets.
    pub fn alpha_probs(&self, g: &mut Graph<T>) -> Option<Vec<Vec<NodeId>>> {
        if !self.is_supernet() {
            return None;
        }
        Some(
            self.alpha
                .iter()
                .map(|edges| {
                    edges
                        .iter()
                        .map(|&id| {
                            let p = g.param(id);
                            g.softmax(p)
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Cascaded reconstruction of a batch; returns the `[N, 2, h, w]`
    /// output node.
    pub fn forward(&self, g: &mut Graph<T>, batch: &[&Sample]) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let input = stack_channels::<T>(batch.iter().map(|s| s.zero_filled.clone()))?;
        let dc: Arc<DataConsistencyLayer> = Arc::new(DataConsistencyLayer::new(
            batch.iter().map(|s| (s.s.clone(), s.mask.clone())).collect(),
            self.config.lambda.value(),
        )?);
        let probs = self.alpha_probs(g);
        let mut x = g.input(input);
        for m in 0..self.config.modules {
            x = self.module(m).forward(g, x, probs.as_deref())?;
            x = g.affine(x, dc.clone())?;
        }
        Ok(x)
    }

    /// Mean absolute error of the cascade output against the targets.
    pub fn loss(&self, g: &mut Graph<T>, batch: &[&Sample]) -> Result<NodeId> {
        let out = self.forward(g, batch)?;
        let target = stack_channels::<T>(batch.iter().map(|s| s.target.clone()))?;
        g.l1_loss(out, target)
    }

    /// Reconstruction of one sample.
    pub fn reconstruct(&self, sample: &Sample) -> Result<ComplexImage> {
        let mut g = Graph::with_trainable(&self.store, vec![false; self.store.len()]);
        let out = self.forward(&mut g, &[sample])?;
        from_channels(g.value(out))
    }

    /// Number of distinct convolution weights and biases in the store.
    pub fn param_count(&self) -> u64 {
        self.store.numel(&self.weight_ids()) as u64
    }

    /// FLOPs of one forward pass at `h x w`, measured by running it.
    pub fn measured_flops(&self, h: usize, w: usize) -> Result<u64> {
        let mut g = Graph::with_trainable(&self.store, vec![false; self.store.len()]);
        let probs = self.alpha_probs(&mut g);
        let mut x = g.input(Tensor::zeros([1, 2, h, w]));
        for m in 0..self.config.modules {
            x = self.module(m).forward(&mut g, x, probs.as_deref())?;
        }
        Ok(g.conv_geometries().iter().map(|geo| geo.flops()).sum())
    }

    /// Same network with every parameter converted to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut store = ParamStore::new();
        for (_, p) in self.store.iter() {
            store.add(p.name.clone(), p.value.cast());
        }
        Network {
            config: self.config.clone(),
            genotype: self.genotype.clone(),
            store,
            sets: self.sets.clone(),
            alpha: self.alpha.clone(),
        }
    }

    /// Discrete network for `genotype` whose weights are copied from the
    /// matching edges of this supernet.
    pub fn discretized(&self, genotype: &Genotype) -> Result<Network<T>> {
        if !self.is_supernet() {
            return Err(Error::invalid("only a supernet can be discretized"));
        }
        if genotype.search_space() != &self.config.search_space {
            return Err(Error::invalid("genotype search space differs from the supernet"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut out = Network::new(self.config.clone(), Some(genotype.clone()), &mut rng)?;
        let space: SearchSpace = self.config.search_space.clone();
        let mut pairs: Vec<(ParamId, ParamId)> = Vec::new();
        for (src, dst) in self.sets.iter().zip(&out.sets) {
            let (
                ModuleWeights::Nas { stem: s_stem, cells: s_cells, tail: s_tail },
                ModuleWeights::Nas { stem: d_stem, cells: d_cells, tail: d_tail },
            ) = (src, dst)
            else {
                unreachable!("both networks are nas");
            };
            let mut convs = vec![(*s_stem, *d_stem), (*s_tail, *d_tail)];
            for (sc, dc) in s_cells.iter().zip(d_cells) {
                convs.push((sc.pre0, dc.pre0));
                convs.push((sc.pre1, dc.pre1));
                let (CellBody::Mixed(mixed), CellBody::Discrete(disc)) = (&sc.body, &dc.body) else {
                    unreachable!("supernet cells are mixed, discrete cells are not");
                };
                for (i, edges) in disc.iter().enumerate() {
                    for (j, op) in edges {
                        let k = space.index_of(op.kind).expect("validated genotype");
                        let src_op = &mixed[i][*j][k];
                        convs.extend(src_op.convs.iter().copied().zip(op.convs.iter().copied()));
                    }
                }
            }
            for (s, d) in convs {
                pairs.push((s.weight, d.weight));
                pairs.push((s.bias, d.bias));
            }
        }
        for (s, d) in pairs {
            *out.store.get_mut(d) = self.store.get(s).clone();
        }
        Ok(out)
    }
}
