//! Closed-form parameter and FLOPs counts.

use crate::error::{Error, Result};

use super::genotype::Genotype;
use super::ops::{op_conv_shapes, ConvShape, OpKind};
use super::{ModelKind, NetworkConfig};

fn ops_on_edges(config: &NetworkConfig, genotype: Option<&Genotype>) -> Vec<OpKind> {
    match genotype {
        Some(g) => g.nodes().iter().flat_map(|n| [n.op1, n.op2]).collect(),
        None => (0..config.nodes_per_cell)
            .flat_map(|i| (0..i + 2).flat_map(|_| config.search_space.ops().iter().copied()))
            .collect(),
    }
}

/// Conv layers of one module with how many times each runs per forward pass.
pub fn module_layers(
    config: &NetworkConfig,
    genotype: Option<&Genotype>,
) -> Result<Vec<(ConvShape, usize)>> {
    config.validate()?;
    let c = config.channels;
    let mut layers = vec![(ConvShape::square(2, c, 3), 1)];
    match config.kind {
        ModelKind::Nas => {
            let n = genotype.map_or(config.nodes_per_cell, |g| g.len());
            for l in 0..config.cells_per_module {
                let in0 = if l <= 1 { c } else { n * c };
                let in1 = if l == 0 { c } else { n * c };
                layers.push((ConvShape::square(in0, c, 1), 1));
                layers.push((ConvShape::square(in1, c, 1), 1));
                for op in ops_on_edges(config, genotype) {
                    layers.extend(op_conv_shapes(op, c).into_iter().map(|s| (s, 1)));
                }
            }
            layers.push((ConvShape::square(n * c, 2, 3), 1));
        }
        ModelKind::Dccnn => {
            if genotype.is_some() {
                return Err(Error::invalid("a genotype only applies to nas networks"));
            }
            layers.extend((0..2 * config.blocks).map(|_| (ConvShape::square(c, c, 3), 1)));
            layers.push((ConvShape::square(c, 2, 3), 1));
        }
        ModelKind::Rdn => {
            if genotype.is_some() {
                return Err(Error::invalid("a genotype only applies to nas networks"));
            }
            for d in 1..=3 {
                layers.push((ConvShape::square(c, c, 3).dilated(d), config.blocks));
            }
            layers.push((ConvShape::square(c, 2, 3), 1));
        }
    }
    Ok(layers)
}

/// Learnable convolution weights and biases; shared modules count once.
/// Without a genotype a nas config is counted as its supernet.
pub fn count_params(config: &NetworkConfig, genotype: Option<&Genotype>) -> Result<u64> {
    let per_module: u64 = module_layers(config, genotype)?
        .iter()
        .map(|(s, _)| s.params())
        .sum();
    Ok(per_module * config.weight_sets() as u64)
}

/// Operations of one forward pass over an `h x w` input: one per fused
/// multiply-add and one per bias add, summed over all convolutions.
pub fn count_flops(
    config: &NetworkConfig,
    genotype: Option<&Genotype>,
    h: usize,
    w: usize,
) -> Result<u64> {
    let per_module: u64 = module_layers(config, genotype)?
        .iter()
        .map(|(s, uses)| s.flops(h, w) * *uses as u64)
        .sum();
    Ok(per_module * config.modules as u64)
}
