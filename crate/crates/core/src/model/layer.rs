//! Gated relational graph convolution.
//!
//! ```text
//! u_v  = h_v W_0 + Σ_ρ mean_{u ∈ N_ρ(v)} h_u W_ρ
//! z_v  = σ(u_v W_z + h_v U_z + b_z)
//! h'_v = z_v ⊙ tanh(u_v) + (1 − z_v) ⊙ s(h_v)
//! ```
//!
//! where `s` is the identity when input and output widths agree and a learned
//! linear map otherwise. Relations with no edges in the graph are skipped.

use crate::error::{Error, Result};
use crate::tensor::{xavier, ParamId, ParamStore, Tape, Tensor};

use super::input::{GraphStructure, INTERNAL_RELATIONS};

#[derive(Debug, Clone, PartialEq)]
pub struct GatedLayer {
    pub relations: Vec<ParamId>,
    pub self_weight: ParamId,
    pub gate_candidate: ParamId,
    pub gate_state: ParamId,
    pub gate_bias: ParamId,
    pub skip: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl GatedLayer {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let relations = (0..INTERNAL_RELATIONS)
            .map(|r| store.add(format!("{prefix}.rel{r}"), xavier(d_in, d_out, rng)))
            .collect();
        let self_weight = store.add(format!("{prefix}.self"), xavier(d_in, d_out, rng));
        let gate_candidate = store.add(format!("{prefix}.gate_u"), xavier(d_out, d_out, rng));
        let gate_state = store.add(format!("{prefix}.gate_h"), xavier(d_in, d_out, rng));
        let gate_bias = store.add(
            format!("{prefix}.gate_b"),
            ndarray::Array2::zeros((1, d_out)),
        );
        let skip =
            (d_in != d_out).then(|| store.add(format!("{prefix}.skip"), xavier(d_in, d_out, rng)));
        GatedLayer {
            relations,
            self_weight,
            gate_candidate,
            gate_state,
            gate_bias,
            skip,
            d_in,
            d_out,
        }
    }

    pub fn find(store: &ParamStore, prefix: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let get = |name: String, shape: (usize, usize)| -> Result<ParamId> {
            let id = store
                .find(&name)
                .ok_or_else(|| Error::unknown("parameter", &name))?;
            if store.get(id).dim() != shape {
                return Err(Error::Invalid(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    store.get(id).dim()
                )));
            }
            Ok(id)
        };
        let relations = (0..INTERNAL_RELATIONS)
            .map(|r| get(format!("{prefix}.rel{r}"), (d_in, d_out)))
            .collect::<Result<_>>()?;
        Ok(GatedLayer {
            relations,
            self_weight: get(format!("{prefix}.self"), (d_in, d_out))?,
            gate_candidate: get(format!("{prefix}.gate_u"), (d_out, d_out))?,
            gate_state: get(format!("{prefix}.gate_h"), (d_in, d_out))?,
            gate_bias: get(format!("{prefix}.gate_b"), (1, d_out))?,
            skip: if d_in != d_out {
                Some(get(format!("{prefix}.skip"), (d_in, d_out))?)
            } else {
                None
            },
            d_in,
            d_out,
        })
    }

    /// Candidate `u` for every node.
    pub fn candidate(
        &self,
        tape: &mut Tape<'_>,
        graph: &GraphStructure,
        h: Tensor,
    ) -> Result<Tensor> {
        let (n, d) = tape.shape(h);
        if n != graph.nodes || d != self.d_in {
            return Err(Error::Invalid(format!(
                "layer expects {} nodes of width {}, got {n} x {d}",
                graph.nodes, self.d_in
            )));
        }
        let w0 = tape.param(self.self_weight);
        let mut u = tape.matmul(h, w0)?;
        for (block, &w) in graph.relations.iter().zip(&self.relations) {
            let Some(block) = block else { continue };
            let mean = tape.sparse_matmul(&block.gather, h)?;
            let w = tape.param(w);
            let msg = tape.matmul(mean, w)?;
            let placed = tape.sparse_matmul(&block.scatter, msg)?;
            u = tape.add(u, placed)?;
        }
        Ok(u)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        graph: &GraphStructure,
        h: Tensor,
    ) -> Result<Tensor> {
        let u = self.candidate(tape, graph, h)?;
        let (wz, uz, bz) = (
            tape.param(self.gate_candidate),
            tape.param(self.gate_state),
            tape.param(self.gate_bias),
        );
        let a = tape.matmul(u, wz)?;
        let b = tape.matmul(h, uz)?;
        let z = tape.add(a, b)?;
        let z = tape.add_row(z, bz)?;
        let z = tape.sigmoid(z)?;
        let prev = match self.skip {
            Some(s) => {
                let s = tape.param(s);
                tape.matmul(h, s)?
            }
            None => h,
        };
        let cand = tape.tanh(u)?;
        let neg_prev = tape.affine(prev, -1.0, 0.0)?;
        let delta = tape.add(cand, neg_prev)?;
        let step = tape.mul(z, delta)?;
        Ok(tape.add(prev, step)?)
    }
}
