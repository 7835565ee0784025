use super::graph::ModelGraph;
use crate::autodiff::{Mode, Tape};
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Side length of the reference patch used for FLOP counting.
pub const REFERENCE_EXTENT: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityReport {
    pub parameter_count: u64,
    /// Two per multiply-accumulate, one per element for pointwise work, for a
    /// single forward pass on one sample.
    pub flops: u64,
}

/// Parameter count plus forward FLOPs on one `ref_spatial` sample. The FLOPs
/// come from actually recording an inference pass, so they always agree
/// with what the network executes.
pub fn count_complexity<T: Float>(model: &ModelGraph<T>, ref_spatial: &[usize]) -> Result<ComplexityReport> {
    let mut shape = vec![1, 1];
    shape.extend_from_slice(ref_spatial);
    let graph = model.cast::<f32>();
    let mut tape = Tape::new();
    let params = graph.params.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(&shape)?);
    let mut stats = graph.params.buffers().to_vec();
    graph.forward(&mut tape, &params, x, &mut stats, Mode::Eval)?;
    Ok(ComplexityReport {
        parameter_count: model.parameter_count() as u64,
        flops: tape.flops(),
    })
}

/// Complexity at the reference size, 48 per spatial axis.
pub fn reference_complexity<T: Float>(model: &ModelGraph<T>) -> Result<ComplexityReport> {
    count_complexity(model, &vec![REFERENCE_EXTENT; model.spatial_rank()])
}
