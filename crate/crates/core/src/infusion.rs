//! Knowledge infusion.
//!
//! Each paragraph's walks are collapsed into one knowledge vector `v_p` by
//! paragraph-guided attention, then paragraph and knowledge vectors of a
//! document are interleaved as `[v_1s, v_1p, v_2s, v_2p, ...]` and passed
//! through multi-head self-attention. Vectors are rows throughout, so the
//! guide is `α = φ(v_s W_a + b_a)`.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{xavier, ParamId, ParamStore, Tape, Tensor};

/// How a paragraph's walk embeddings become its knowledge vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkAggregation {
    /// Paragraph-guided attention over walks.
    #[default]
    Attention,
    Max,
    Avg,
}

impl WalkAggregation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "attention" | "attn" => Ok(WalkAggregation::Attention),
            "max" | "mp" => Ok(WalkAggregation::Max),
            "avg" | "ap" => Ok(WalkAggregation::Avg),
            other => Err(Error::Config(format!(
                "unknown walk aggregation `{other}` (expected attention, max or avg)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WalkAggregation::Attention => "attention",
            WalkAggregation::Max => "max",
            WalkAggregation::Avg => "avg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Max,
    Avg,
}

/// Handles of the infusion parameters inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfusionParams {
    pub w_a: ParamId,
    pub b_a: ParamId,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub dim: usize,
    pub heads: usize,
    /// Negative slope of the leaky ReLU in the walk guide.
    pub slope: f64,
}

impl InfusionParams {
    /// Registers freshly initialised parameters: Xavier weights, zero biases.
    pub fn init(
        store: &mut ParamStore,
        dim: usize,
        heads: usize,
        slope: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        check_heads(dim, heads)?;
        let mut weight = |store: &mut ParamStore, name: &str| {
            store.add(format!("infusion.{name}"), xavier(dim, dim, rng))
        };
        let bias = |store: &mut ParamStore, name: &str| {
            store.add(format!("infusion.{name}"), Array2::zeros((1, dim)))
        };
        Ok(InfusionParams {
            w_a: weight(store, "w_a"),
            b_a: bias(store, "b_a"),
            w_q: weight(store, "w_q"),
            b_q: bias(store, "b_q"),
            w_k: weight(store, "w_k"),
            b_k: bias(store, "b_k"),
            w_v: weight(store, "w_v"),
            b_v: bias(store, "b_v"),
            w_o: weight(store, "w_o"),
            b_o: bias(store, "b_o"),
            dim,
            heads,
            slope,
        })
    }

    /// Looks the parameters up by name in a loaded store.
    pub fn find(store: &ParamStore, dim: usize, heads: usize, slope: f64) -> Result<Self> {
        check_heads(dim, heads)?;
        let get = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let key = format!("infusion.{name}");
            let id = store
                .find(&key)
                .ok_or_else(|| Error::unknown("parameter", &key))?;
            if store.get(id).dim() != shape {
                return Err(Error::Invalid(format!(
                    "parameter `{key}` has shape {:?}, expected {shape:?}",
                    store.get(id).dim()
                )));
            }
            Ok(id)
        };
        let (w, b) = ((dim, dim), (1, dim));
        Ok(InfusionParams {
            w_a: get("w_a", w)?,
            b_a: get("b_a", b)?,
            w_q: get("w_q", w)?,
            b_q: get("b_q", b)?,
            w_k: get("w_k", w)?,
            b_k: get("b_k", b)?,
            w_v: get("w_v", w)?,
            b_v: get("b_v", b)?,
            w_o: get("w_o", w)?,
            b_o: get("b_o", b)?,
            dim,
            heads,
            slope,
        })
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim == 0 || !dim.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "embedding dimension {dim} is not divisible into {heads} attention heads"
        )));
    }
    Ok(())
}

fn check_width(tape: &Tape<'_>, t: Tensor, dim: usize, what: &str) -> Result<()> {
    let (_, c) = tape.shape(t);
    if c != dim {
        return Err(Error::Invalid(format!(
            "{what} have dimension {c}, expected {dim}"
        )));
    }
    Ok(())
}

/// Walk guide `α` for each row of `v_s` (`P x d`).
pub fn walk_guide(tape: &mut Tape<'_>, params: &InfusionParams, v_s: Tensor) -> Result<Tensor> {
    check_width(tape, v_s, params.dim, "paragraph embeddings")?;
    let w_a = tape.param(params.w_a);
    let b_a = tape.param(params.b_a);
    let z = tape.matmul(v_s, w_a)?;
    let z = tape.add_row(z, b_a)?;
    Ok(tape.leaky_relu(z, params.slope)?)
}

/// Attention weights (`1 x m`) of one paragraph's walks under guide row `alpha`.
pub fn walk_weights(tape: &mut Tape<'_>, alpha: Tensor, walks: Tensor) -> Result<Tensor> {
    let wt = tape.transpose(walks)?;
    let logits = tape.matmul(alpha, wt)?;
    Ok(tape.softmax_rows(logits)?)
}

/// Knowledge vectors of a batch of paragraphs.
///
/// `v_s` is `P x d`, `walks` stacks all walk embeddings and `groups[i]` is
/// the row range of paragraph `i`'s walks. Paragraphs without walks get a
/// zero row and are flagged `false` in the returned mask.
pub fn aggregate_walks(
    tape: &mut Tape<'_>,
    params: &InfusionParams,
    v_s: Tensor,
    walks: Tensor,
    groups: &[Range<usize>],
) -> Result<(Tensor, Vec<bool>)> {
    let (p, _) = tape.shape(v_s);
    if groups.len() != p {
        return Err(Error::Invalid(format!(
            "{} walk groups for {p} paragraphs",
            groups.len()
        )));
    }
    check_width(tape, walks, params.dim, "walk embeddings")?;
    let alpha = walk_guide(tape, params, v_s)?;
    let mut rows = Vec::with_capacity(p);
    let mut present = Vec::with_capacity(p);
    let mut zero = None;
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            let z = match zero {
                Some(z) => z,
                None => *zero.insert(tape.constant(Array2::zeros((1, params.dim)))?),
            };
            rows.push(z);
            present.push(false);
            continue;
        }
        let a = tape.slice_rows(alpha, i, 1)?;
        let w = tape.slice_rows(walks, g.start, g.len())?;
        let weights = walk_weights(tape, a, w)?;
        rows.push(tape.matmul(weights, w)?);
        present.push(true);
    }
    Ok((tape.concat_rows(&rows)?, present))
}

/// Elementwise max or mean over walk rows; zero vector and `false` when
/// there are none.
pub fn pool_walks(walks: ArrayView2<'_, f64>, mode: Pooling) -> (Array1<f64>, bool) {
    if walks.nrows() == 0 {
        return (Array1::zeros(walks.ncols()), false);
    }
    let v = match mode {
        Pooling::Avg => walks.mean_axis(Axis(0)).expect("non-empty"),
        Pooling::Max => walks.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b)),
    };
    (v, true)
}

/// Multi-head self-attention applied independently within each row range of
/// `t`. Projections are shared and computed once for the whole stack.
pub fn multi_head(
    tape: &mut Tape<'_>,
    params: &InfusionParams,
    t: Tensor,
    segments: &[Range<usize>],
) -> Result<Tensor> {
    check_heads(params.dim, params.heads)?;
    check_width(tape, t, params.dim, "attention inputs")?;
    let project = |tape: &mut Tape<'_>, w: ParamId, b: ParamId| -> Result<Tensor> {
        let (w, b) = (tape.param(w), tape.param(b));
        let x = tape.matmul(t, w)?;
        Ok(tape.add_row(x, b)?)
    };
    let q = project(tape, params.w_q, params.b_q)?;
    let k = project(tape, params.w_k, params.b_k)?;
    let v = project(tape, params.w_v, params.b_v)?;
    let dk = params.dim / params.heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outputs = Vec::with_capacity(segments.len());
    for seg in segments {
        let (qs, ks, vs) = (
            tape.slice_rows(q, seg.start, seg.len())?,
            tape.slice_rows(k, seg.start, seg.len())?,
            tape.slice_rows(v, seg.start, seg.len())?,
        );
        let mut heads = Vec::with_capacity(params.heads);
        for h in 0..params.heads {
            let qh = tape.slice_cols(qs, h * dk, dk)?;
            let kh = tape.slice_cols(ks, h * dk, dk)?;
            let vh = tape.slice_cols(vs, h * dk, dk)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.affine(scores, scale, 0.0)?;
            let attn = tape.softmax_rows(scores)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        outputs.push(if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        });
    }
    let joined = tape.concat_rows(&outputs)?;
    let (w_o, b_o) = (tape.param(params.w_o), tape.param(params.b_o));
    let out = tape.matmul(joined, w_o)?;
    Ok(tape.add_row(out, b_o)?)
}

/// Infused paragraph (`s`) and knowledge (`p`) vectors, one row per paragraph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfusedDocument {
    pub s: Tensor,
    pub p: Tensor,
}

/// Infuses a batch of documents whose paragraphs occupy the row ranges
/// `docs` of `v_s` and `v_p`; attention never crosses documents.
pub fn infuse_batch(
    tape: &mut Tape<'_>,
    params: &InfusionParams,
    v_s: Tensor,
    v_p: Tensor,
    docs: &[Range<usize>],
) -> Result<InfusedDocument> {
    let (n, _) = tape.shape(v_s);
    if tape.shape(v_p) != tape.shape(v_s) {
        return Err(Error::Invalid(format!(
            "paragraph vectors {:?} and knowledge vectors {:?} differ in shape",
            tape.shape(v_s),
            tape.shape(v_p)
        )));
    }
    if n == 0
        || docs.iter().any(|d| d.is_empty())
        || docs.iter().map(|d| d.len()).sum::<usize>() != n
    {
        return Err(Error::Invalid(
            "documents must be non-empty and cover every paragraph".into(),
        ));
    }
    let both = tape.concat_rows(&[v_s, v_p])?;
    let interleave: Vec<usize> = (0..n).flat_map(|i| [i, n + i]).collect();
    let t = tape.gather_rows(both, &interleave)?;
    let segments: Vec<Range<usize>> = docs.iter().map(|d| 2 * d.start..2 * d.end).collect();
    let out = multi_head(tape, params, t, &segments)?;
    let even: Vec<usize> = (0..n).map(|i| 2 * i).collect();
    let odd: Vec<usize> = (0..n).map(|i| 2 * i + 1).collect();
    Ok(InfusedDocument {
        s: tape.gather_rows(out, &even)?,
        p: tape.gather_rows(out, &odd)?,
    })
}

/// Infuses a single document.
pub fn infuse(
    tape: &mut Tape<'_>,
    params: &InfusionParams,
    v_s: Tensor,
    v_p: Tensor,
) -> Result<InfusedDocument> {
    let (n, _) = tape.shape(v_s);
    infuse_batch(tape, params, v_s, v_p, &[0..n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check::finite_difference;
    use ndarray::{array, s};
    use rand::Rng as _;

    fn setup(dim: usize, heads: usize, seed: u64) -> (ParamStore, InfusionParams) {
        let mut store = ParamStore::new();
        let mut rng = crate::seed::rng(seed, "infusion-test");
        let params = InfusionParams::init(&mut store, dim, heads, 0.01, &mut rng).unwrap();
        // non-zero biases so their gradients are exercised
        for id in [params.b_a, params.b_q, params.b_k, params.b_v, params.b_o] {
            store
                .get_mut(id)
                .mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
        (store, params)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::seed::rng(seed, "infusion-data");
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn hand_computed_guided_selection() {
        let (mut store, params) = setup(2, 1, 0);
        *store.get_mut(params.w_a) = Array2::eye(2);
        *store.get_mut(params.b_a) = Array2::zeros((1, 2));
        let mut tape = Tape::with_params(&store);
        let vs = tape.constant(array![[1.0, 0.0]]).unwrap();
        let walks = tape.constant(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let alpha = walk_guide(&mut tape, &params, vs).unwrap();
        assert_eq!(tape.value(alpha), &array![[1.0, 0.0]]);
        let w = walk_weights(&mut tape, alpha, walks).unwrap();
        assert!((tape.value(w)[[0, 0]] - 0.731_058_6).abs() < 1e-5);
        assert!((tape.value(w)[[0, 1]] - 0.268_941_4).abs() < 1e-5);
        let (vp, present) = aggregate_walks(&mut tape, &params, vs, walks, &[0..2]).unwrap();
        assert_eq!(present, vec![true]);
        assert!((tape.value(vp)[[0, 0]] - 0.731_058_6).abs() < 1e-5);
        assert!((tape.value(vp)[[0, 1]] - 0.268_941_4).abs() < 1e-5);
    }

    #[test]
    fn single_walk_passes_through() {
        let (store, params) = setup(4, 2, 1);
        let mut tape = Tape::with_params(&store);
        let vs = tape.constant(random(1, 4, 2)).unwrap();
        let w = random(1, 4, 3);
        let walks = tape.constant(w.clone()).unwrap();
        let (vp, _) = aggregate_walks(&mut tape, &params, vs, walks, &[0..1]).unwrap();
        assert_eq!(tape.value(vp), &w);
    }

    #[test]
    fn identical_walks_give_that_walk() {
        let (store, params) = setup(4, 2, 1);
        let mut tape = Tape::with_params(&store);
        let vs = tape.constant(random(1, 4, 2)).unwrap();
        let row = random(1, 4, 5);
        let stacked = ndarray::concatenate![Axis(0), row, row, row];
        let walks = tape.constant(stacked).unwrap();
        let (vp, _) = aggregate_walks(&mut tape, &params, vs, walks, &[0..3]).unwrap();
        for (a, b) in tape.value(vp).iter().zip(row.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_are_a_distribution_and_output_is_in_the_hull() {
        let (store, params) = setup(6, 3, 7);
        for seed in 0..20 {
            let mut tape = Tape::with_params(&store);
            let vs = tape.constant(random(1, 6, 100 + seed)).unwrap();
            let walks_v = random(5, 6, 200 + seed);
            let walks = tape.constant(walks_v.clone()).unwrap();
            let alpha = walk_guide(&mut tape, &params, vs).unwrap();
            let w = walk_weights(&mut tape, alpha, walks).unwrap();
            let wv = tape.value(w).clone();
            assert!(wv.iter().all(|&x| x >= 0.0));
            assert!((wv.sum() - 1.0).abs() < 1e-12);
            let (vp, _) = aggregate_walks(&mut tape, &params, vs, walks, &[0..5]).unwrap();
            let lo = walks_v.fold_axis(Axis(0), f64::INFINITY, |&a, &b| a.min(b));
            let hi = walks_v.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b));
            for (c, &x) in tape.value(vp).row(0).iter().enumerate() {
                assert!(x >= lo[c] - 1e-12 && x <= hi[c] + 1e-12);
            }
        }
    }

    #[test]
    fn paragraphs_without_walks_get_zero_and_flag() {
        let (store, params) = setup(4, 2, 1);
        let mut tape = Tape::with_params(&store);
        let vs = tape.constant(random(3, 4, 2)).unwrap();
        let walks = tape.constant(random(2, 4, 3)).unwrap();
        let (vp, present) =
            aggregate_walks(&mut tape, &params, vs, walks, &[0..0, 0..2, 2..2]).unwrap();
        assert_eq!(present, vec![false, true, false]);
        let v = tape.value(vp);
        assert!(v.row(0).iter().all(|&x| x == 0.0));
        assert!(v.row(2).iter().all(|&x| x == 0.0));
        assert!(v.row(1).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn pooling_examples() {
        let w = array![[0.0, 2.0], [2.0, 0.0]];
        assert_eq!(pool_walks(w.view(), Pooling::Avg), (array![1.0, 1.0], true));
        assert_eq!(pool_walks(w.view(), Pooling::Max), (array![2.0, 2.0], true));
        let one = array![[0.5, -3.0]];
        for mode in [Pooling::Avg, Pooling::Max] {
            assert_eq!(pool_walks(one.view(), mode).0, array![0.5, -3.0]);
        }
        let none = Array2::<f64>::zeros((0, 3));
        assert_eq!(
            pool_walks(none.view(), Pooling::Max),
            (Array1::zeros(3), false)
        );
    }

    #[test]
    fn indivisible_heads_are_a_config_error() {
        let mut store = ParamStore::new();
        let mut rng = crate::seed::rng(0, "x");
        let err = InfusionParams::init(&mut store, 6, 4, 0.01, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let (mut store, params) = setup(4, 2, 3);
        for id in [params.w_q, params.w_k, params.w_v, params.w_o] {
            *store.get_mut(id) = Array2::eye(4);
        }
        let mut tape = Tape::with_params(&store);
        let x = random(1, 4, 9);
        let vs = tape.constant(x.clone()).unwrap();
        let vp = tape.constant(x).unwrap();
        let out = infuse(&mut tape, &params, vs, vp).unwrap();
        assert_eq!(tape.value(out.s), tape.value(out.p));
    }

    /// Step-by-step attention with explicit loops.
    fn brute_force(store: &ParamStore, params: &InfusionParams, t: &Array2<f64>) -> Array2<f64> {
        let proj = |w: ParamId, b: ParamId| {
            let (w, b) = (store.get(w), store.get(b));
            let mut out = Array2::zeros((t.nrows(), params.dim));
            for i in 0..t.nrows() {
                for c in 0..params.dim {
                    out[[i, c]] =
                        b[[0, c]] + (0..params.dim).map(|k| t[[i, k]] * w[[k, c]]).sum::<f64>();
                }
            }
            out
        };
        let (q, k, v) = (
            proj(params.w_q, params.b_q),
            proj(params.w_k, params.b_k),
            proj(params.w_v, params.b_v),
        );
        let dk = params.dim / params.heads;
        let len = t.nrows();
        let mut concat = Array2::<f64>::zeros((len, params.dim));
        for h in 0..params.heads {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..len {
                let scores: Vec<f64> = (0..len)
                    .map(|j| {
                        cols.clone().map(|c| q[[i, c]] * k[[j, c]]).sum::<f64>()
                            / (dk as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for c in cols.clone() {
                    concat[[i, c]] = (0..len).map(|j| exps[j] / z * v[[j, c]]).sum();
                }
            }
        }
        let (wo, bo) = (store.get(params.w_o), store.get(params.b_o));
        let mut out = Array2::zeros((len, params.dim));
        for i in 0..len {
            for c in 0..params.dim {
                out[[i, c]] = bo[[0, c]]
                    + (0..params.dim)
                        .map(|k| concat[[i, k]] * wo[[k, c]])
                        .sum::<f64>();
            }
        }
        out
    }

    #[test]
    fn attention_matches_brute_force() {
        let (store, params) = setup(4, 2, 11);
        let vs_v = random(1, 4, 12);
        let vp_v = random(1, 4, 13);
        let mut tape = Tape::with_params(&store);
        let vs = tape.constant(vs_v.clone()).unwrap();
        let vp = tape.constant(vp_v.clone()).unwrap();
        let out = infuse(&mut tape, &params, vs, vp).unwrap();
        let t = ndarray::concatenate![Axis(0), vs_v, vp_v];
        let expect = brute_force(&store, &params, &t);
        for (a, b) in tape.value(out.s).iter().zip(expect.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in tape.value(out.p).iter().zip(expect.row(1)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_paragraphs_permutes_outputs() {
        let (store, params) = setup(8, 2, 21);
        let vs_v = random(4, 8, 22);
        let vp_v = random(4, 8, 23);
        let perm = [2, 0, 3, 1];
        let run = |vs_v: Array2<f64>, vp_v: Array2<f64>| {
            let mut tape = Tape::with_params(&store);
            let vs = tape.constant(vs_v).unwrap();
            let vp = tape.constant(vp_v).unwrap();
            let out = infuse(&mut tape, &params, vs, vp).unwrap();
            (tape.value(out.s).clone(), tape.value(out.p).clone())
        };
        let (s0, p0) = run(vs_v.clone(), vp_v.clone());
        let (s1, p1) = run(vs_v.select(Axis(0), &perm), vp_v.select(Axis(0), &perm));
        for (i, &src) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((s1[[i, c]] - s0[[src, c]]).abs() < 1e-12);
                assert!((p1[[i, c]] - p0[[src, c]]).abs() < 1e-12);
            }
        }
        assert_eq!(run(vs_v.clone(), vp_v.clone()), (s0, p0));
    }

    #[test]
    fn documents_in_a_batch_do_not_interact() {
        let (store, params) = setup(4, 2, 31);
        let vs_v = random(5, 4, 32);
        let vp_v = random(5, 4, 33);
        let mut tape = Tape::with_params(&store);
        let vs = tape.constant(vs_v.clone()).unwrap();
        let vp = tape.constant(vp_v.clone()).unwrap();
        let batched = infuse_batch(&mut tape, &params, vs, vp, &[0..2, 2..5]).unwrap();
        let vs2 = tape.constant(vs_v.slice(s![2..5, ..]).to_owned()).unwrap();
        let vp2 = tape.constant(vp_v.slice(s![2..5, ..]).to_owned()).unwrap();
        let alone = infuse(&mut tape, &params, vs2, vp2).unwrap();
        let b = tape.value(batched.s).slice(s![2..5, ..]).to_owned();
        for (x, y) in b.iter().zip(tape.value(alone.s).iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut store, params) = setup(8, 2, 41);
        let walks = store.add("walks", random(5, 8, 42));
        let vs_v = random(3, 8, 43);
        let checks = finite_difference(&store, 1e-5, |tape| -> Result<Tensor> {
            let vs = tape.constant(vs_v.clone())?;
            let w = tape.param(walks);
            let (vp, _) = aggregate_walks(tape, &params, vs, w, &[0..2, 2..2, 2..5])?;
            let out = infuse(tape, &params, vs, vp)?;
            let both = tape.concat_cols(&[out.s, out.p])?;
            let t = tape.tanh(both)?;
            Ok(tape.sum_squares(t)?)
        })
        .unwrap();
        assert_eq!(checks.len(), 11);
        for c in &checks {
            assert!(c.within(1e-4), "{c:?}");
            // a key bias shifts every score in a row equally
            if c.name != "infusion.b_k" {
                assert!(c.analytic_norm > 1e-6, "{c:?}");
            }
        }
    }
}
