//! Attention rollout over a recorded stack of question self-attention, image
//! self-attention, and fusion (question self + question-to-image cross)
//! layers.
//!
//! The accumulators start as `Rqq = I`, `Rii = I`, `Rqi = 0`. Self-attention
//! layers add `A * R` to `R` and row-normalize; fusion layers additionally
//! propagate the previous cross map through the question attention and then
//! add the question/image contextualized cross-attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Tolerance for row-stochastic checks on recorded attention.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    QuestionSelf,
    ImageSelf,
    Fusion,
}

/// Per-head attention tensor, `heads x rows x cols`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor<T> {
    heads: usize,
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> HeadTensor<T> {
    pub fn from_vec(heads: usize, rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != heads * rows * cols {
            return Err(Error::invalid(format!(
                "head tensor {heads}x{rows}x{cols} needs {} values, got {}",
                heads * rows * cols,
                data.len()
            )));
        }
        Ok(Self {
            heads,
            rows,
            cols,
            data,
        })
    }

    pub fn from_heads(heads: &[Matrix<T>]) -> Result<Self> {
        let (rows, cols) = heads.first().map_or((0, 0), Matrix::shape);
        if heads.iter().any(|h| h.shape() != (rows, cols)) {
            return Err(Error::invalid("heads disagree on shape"));
        }
        let data = heads
            .iter()
            .flat_map(|h| h.as_slice().iter().copied())
            .collect();
        Self::from_vec(heads.len(), rows, cols, data)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn head(&self, h: usize) -> Matrix<T> {
        let n = self.rows * self.cols;
        Matrix::from_vec(self.rows, self.cols, self.data[h * n..(h + 1) * n].to_vec())
            .expect("slice has matrix size")
    }

    fn check_row_stochastic(&self, what: &str) -> Result<()> {
        let tol = T::of(ROW_SUM_TOLERANCE);
        for (r, row) in self.data.chunks(self.cols.max(1)).enumerate() {
            if self.cols == 0 {
                break;
            }
            if let Some(v) = row.iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{what}: negative or non-finite weight {v}"
                )));
            }
            let sum = row.iter().fold(T::zero(), |a, &v| a + v);
            if (sum - T::one()).abs() > tol {
                return Err(Error::invalid(format!(
                    "{what}: row {} of head {} sums to {sum}",
                    r % self.rows,
                    r / self.rows
                )));
            }
        }
        Ok(())
    }
}

/// Max over the head axis.
pub fn head_reduce<T: Scalar>(a: &HeadTensor<T>) -> Result<Matrix<T>> {
    if a.heads == 0 {
        return Err(Error::invalid("head_reduce on empty head axis"));
    }
    let n = a.rows * a.cols;
    let mut out = a.data[..n].to_vec();
    for head in a.data.chunks(n.max(1)).skip(1) {
        for (o, &v) in out.iter_mut().zip(head) {
            *o = o.max(v);
        }
    }
    Matrix::from_vec(a.rows, a.cols, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttention<T> {
    pub kind: LayerKind,
    pub qq: Option<HeadTensor<T>>,
    pub ii: Option<HeadTensor<T>>,
    pub qi: Option<HeadTensor<T>>,
}

impl<T: Scalar> LayerAttention<T> {
    pub fn question_self(qq: HeadTensor<T>) -> Self {
        Self {
            kind: LayerKind::QuestionSelf,
            qq: Some(qq),
            ii: None,
            qi: None,
        }
    }

    pub fn image_self(ii: HeadTensor<T>) -> Self {
        Self {
            kind: LayerKind::ImageSelf,
            qq: None,
            ii: Some(ii),
            qi: None,
        }
    }

    pub fn fusion(qq: HeadTensor<T>, qi: HeadTensor<T>) -> Self {
        Self {
            kind: LayerKind::Fusion,
            qq: Some(qq),
            ii: None,
            qi: Some(qi),
        }
    }

    /// Head count of the first present tensor.
    pub fn heads(&self) -> usize {
        [&self.qq, &self.ii, &self.qi]
            .into_iter()
            .flatten()
            .map(HeadTensor::heads)
            .next()
            .unwrap_or(0)
    }

    fn validate(&self, index: usize, q_len: usize, i_len: usize) -> Result<()> {
        let ctx = |s: &str| format!("layer {index} ({:?}): {s}", self.kind);
        let expected = match self.kind {
            LayerKind::QuestionSelf => (true, false, false),
            LayerKind::ImageSelf => (false, true, false),
            LayerKind::Fusion => (true, false, true),
        };
        let present = (self.qq.is_some(), self.ii.is_some(), self.qi.is_some());
        if present != expected {
            return Err(Error::invalid(ctx(
                "tensors present do not match layer kind",
            )));
        }
        let heads = self.heads();
        if heads == 0 {
            return Err(Error::invalid(ctx("zero heads")));
        }
        for (t, shape, name) in [
            (&self.qq, (q_len, q_len), "qq"),
            (&self.ii, (i_len, i_len), "ii"),
            (&self.qi, (q_len, i_len), "qi"),
        ] {
            let Some(t) = t else { continue };
            if t.shape() != shape || t.heads() != heads {
                return Err(Error::invalid(ctx(&format!(
                    "{name} is {}x{}x{}, expected {heads}x{}x{}",
                    t.heads(),
                    t.rows,
                    t.cols,
                    shape.0,
                    shape.1
                ))));
            }
            t.check_row_stochastic(&ctx(name))?;
        }
        Ok(())
    }
}

/// Recorded attention of one VQA forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack<T> {
    pub layers: Vec<LayerAttention<T>>,
    pub q_len: usize,
    pub i_len: usize,
    /// 1 when the first image token is a non-spatial classification token.
    pub cls_offset: usize,
    /// Patch grid as (rows, cols); rows * cols == i_len - cls_offset.
    pub patch_grid: (usize, usize),
}

impl<T: Scalar> AttentionStack<T> {
    /// Builds and validates a stack.
    pub fn new(
        layers: Vec<LayerAttention<T>>,
        q_len: usize,
        i_len: usize,
        cls_offset: usize,
        patch_grid: (usize, usize),
    ) -> Result<Self> {
        let stack = Self {
            layers,
            q_len,
            i_len,
            cls_offset,
            patch_grid,
        };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q_len == 0 || self.i_len == 0 {
            return Err(Error::invalid("q_len and i_len must be positive"));
        }
        if self.cls_offset > 1 {
            return Err(Error::invalid("cls_offset must be 0 or 1"));
        }
        let (rows, cols) = self.patch_grid;
        if rows == 0 || cols == 0 || rows * cols + self.cls_offset != self.i_len {
            return Err(Error::invalid(format!(
                "patch grid {rows}x{cols} with cls_offset {} does not cover i_len {}",
                self.cls_offset, self.i_len
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i, self.q_len, self.i_len)?;
        }
        Ok(())
    }
}

/// Rollout accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState<T> {
    pub rqq: Matrix<T>,
    pub rii: Matrix<T>,
    pub rqi: Matrix<T>,
}

impl<T: Scalar> RolloutState<T> {
    /// Self accumulators start as identity, the cross accumulator at zero.
    pub fn init(q_len: usize, i_len: usize) -> Self {
        Self {
            rqq: Matrix::identity(q_len),
            rii: Matrix::identity(i_len),
            rqi: Matrix::zeros(q_len, i_len),
        }
    }
}

fn self_update<T: Scalar>(r: &Matrix<T>, a: &Matrix<T>, side: &str) -> Result<Matrix<T>> {
    if a.shape() != r.shape() {
        return Err(Error::invalid(format!(
            "{side} attention {:?} does not match accumulator {:?}",
            a.shape(),
            r.shape()
        )));
    }
    let mut out = r.add(&a.matmul(r)?)?;
    out.normalize_rows();
    Ok(out)
}

/// `R <- rownorm(R + A R)` for each side that is given.
pub fn step_self<T: Scalar>(
    state: &RolloutState<T>,
    a_qq: Option<&Matrix<T>>,
    a_ii: Option<&Matrix<T>>,
) -> Result<RolloutState<T>> {
    let mut next = state.clone();
    if let Some(a) = a_qq {
        next.rqq = self_update(&state.rqq, a, "question")?;
    }
    if let Some(a) = a_ii {
        next.rii = self_update(&state.rii, a, "image")?;
    }
    Ok(next)
}

/// `Rqi <- Rqi + Aqq Rqi`: carries cross-modal information mixed in at the
/// previous layer through this layer's question self-attention.
pub fn step_mixed<T: Scalar>(state: &RolloutState<T>, a_qq: &Matrix<T>) -> Result<RolloutState<T>> {
    let q = state.rqi.rows();
    if a_qq.shape() != (q, q) {
        return Err(Error::invalid(format!(
            "question attention {:?} does not match q_len {q}",
            a_qq.shape()
        )));
    }
    let mut next = state.clone();
    next.rqi = state.rqi.add(&a_qq.matmul(&state.rqi)?)?;
    Ok(next)
}

/// `Rqi <- Rqi + Rqq^T Aqi Rii`.
pub fn step_cross<T: Scalar>(state: &RolloutState<T>, a_qi: &Matrix<T>) -> Result<RolloutState<T>> {
    if a_qi.shape() != state.rqi.shape() {
        return Err(Error::invalid(format!(
            "cross attention {:?} does not match accumulator {:?}",
            a_qi.shape(),
            state.rqi.shape()
        )));
    }
    let ctx = state.rqq.transpose().matmul(a_qi)?.matmul(&state.rii)?;
    let mut next = state.clone();
    next.rqi = state.rqi.add(&ctx)?;
    Ok(next)
}

/// Rolls out a validated stack in recorded order. Within a fusion layer the
/// order is: question self update, mixing of the previous cross map, cross
/// update.
pub fn rollout<T: Scalar>(stack: &AttentionStack<T>) -> Result<RolloutState<T>> {
    let mut state = RolloutState::init(stack.q_len, stack.i_len);
    for layer in &stack.layers {
        let reduce = |t: &Option<HeadTensor<T>>| t.as_ref().map(head_reduce).transpose();
        let qq = reduce(&layer.qq)?;
        let ii = reduce(&layer.ii)?;
        let qi = reduce(&layer.qi)?;
        match layer.kind {
            LayerKind::QuestionSelf | LayerKind::ImageSelf => {
                state = step_self(&state, qq.as_ref(), ii.as_ref())?;
            }
            LayerKind::Fusion => {
                let qq = qq.ok_or_else(|| Error::invalid("fusion layer without qq"))?;
                let qi = qi.ok_or_else(|| Error::invalid("fusion layer without qi"))?;
                state = step_self(&state, Some(&qq), None)?;
                state = step_mixed(&state, &qq)?;
                state = step_cross(&state, &qi)?;
            }
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn assert_mat(a: &Matrix<f64>, b: &Matrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        assert!(a.max_abs_diff(b) <= tol, "{a:?} != {b:?}");
    }

    #[test]
    fn head_reduce_takes_elementwise_max() {
        let t = HeadTensor::from_heads(&[
            m(&[&[0.1, 0.9], &[0.6, 0.4]]),
            m(&[&[0.3, 0.7], &[0.2, 0.8]]),
        ])
        .unwrap();
        assert_eq!(head_reduce(&t).unwrap(), m(&[&[0.3, 0.9], &[0.6, 0.8]]));
    }

    #[test]
    fn head_reduce_single_head_is_identity() {
        let h = m(&[&[0.25, 0.75], &[1.0, 0.0]]);
        let t = HeadTensor::from_heads(std::slice::from_ref(&h)).unwrap();
        assert_eq!(head_reduce(&t).unwrap(), h);
    }

    #[test]
    fn head_reduce_rejects_empty_head_axis() {
        let t = HeadTensor::<f64>::from_vec(0, 2, 2, vec![]).unwrap();
        assert!(matches!(head_reduce(&t), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn step_self_identity_keeps_identity() {
        let s = RolloutState::<f64>::init(2, 1);
        let out = step_self(&s, Some(&Matrix::identity(2)), None).unwrap();
        assert_eq!(out.rqq, Matrix::identity(2));
    }

    #[test]
    fn step_self_uniform_attention() {
        let s = RolloutState::<f64>::init(2, 3);
        let a = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let out = step_self(&s, Some(&a), None).unwrap();
        assert_mat(&out.rqq, &m(&[&[0.75, 0.25], &[0.25, 0.75]]), 1e-15);
        assert_eq!(out.rii, s.rii);
        assert_eq!(out.rqi, s.rqi);
    }

    #[test]
    fn step_self_dimension_mismatch() {
        let s = RolloutState::<f64>::init(2, 3);
        assert!(step_self(&s, None, Some(&Matrix::identity(2))).is_err());
    }

    #[test]
    fn step_mixed_cases() {
        let s = RolloutState::<f64>::init(2, 3);
        assert_eq!(step_mixed(&s, &Matrix::identity(2)).unwrap().rqi, s.rqi);

        let x = m(&[&[0.1, 0.2, 0.3], &[0.4, 0.5, 0.6]]);
        let s = RolloutState {
            rqi: x.clone(),
            ..s
        };
        assert_mat(
            &step_mixed(&s, &Matrix::identity(2)).unwrap().rqi,
            &x.scale(2.0),
            0.0,
        );
        assert!(step_mixed(&s, &Matrix::identity(3)).is_err());
    }

    #[test]
    fn step_mixed_matches_direct_formula() {
        // q=3, i=4; entries computed by hand-expanding the sum
        let a = m(&[&[0.2, 0.5, 0.3], &[0.0, 1.0, 0.0], &[0.6, 0.1, 0.3]]);
        let rqi = m(&[
            &[0.1, 0.0, 0.2, 0.3],
            &[0.0, 0.4, 0.1, 0.0],
            &[0.5, 0.1, 0.0, 0.2],
        ]);
        let s = RolloutState {
            rqi: rqi.clone(),
            ..RolloutState::init(3, 4)
        };
        let got = step_mixed(&s, &a).unwrap().rqi;
        for r in 0..3 {
            for c in 0..4 {
                let mut v = rqi[(r, c)];
                for k in 0..3 {
                    v += a[(r, k)] * rqi[(k, c)];
                }
                assert_abs_diff_eq!(got[(r, c)], v, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn step_cross_cases() {
        let x = m(&[&[0.2, 0.3, 0.5], &[0.1, 0.1, 0.8]]);
        let s = RolloutState::<f64>::init(2, 3);
        assert_mat(&step_cross(&s, &x).unwrap().rqi, &x, 0.0);

        let y = m(&[&[1.0, 0.0, 0.0], &[0.0, 0.5, 0.5]]);
        let s = RolloutState {
            rqi: y.clone(),
            ..s
        };
        assert_mat(&step_cross(&s, &x).unwrap().rqi, &y.add(&x).unwrap(), 1e-15);
        assert!(step_cross(&s, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn step_cross_matches_direct_formula() {
        let rqq = m(&[&[0.7, 0.3], &[0.4, 0.6]]);
        let rii = m(&[&[0.5, 0.25, 0.25], &[0.0, 1.0, 0.0], &[0.2, 0.2, 0.6]]);
        let rqi = m(&[&[0.1, 0.0, 0.0], &[0.0, 0.0, 0.3]]);
        let a = m(&[&[0.2, 0.3, 0.5], &[0.9, 0.05, 0.05]]);
        let s = RolloutState {
            rqq: rqq.clone(),
            rii: rii.clone(),
            rqi: rqi.clone(),
        };
        let got = step_cross(&s, &a).unwrap().rqi;
        for r in 0..2 {
            for c in 0..3 {
                let mut v = rqi[(r, c)];
                for k in 0..2 {
                    for j in 0..3 {
                        v += rqq[(k, r)] * a[(k, j)] * rii[(j, c)];
                    }
                }
                assert_abs_diff_eq!(got[(r, c)], v, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn empty_stack_returns_initial_state() {
        let stack = AttentionStack::<f64>::new(vec![], 2, 5, 1, (2, 2)).unwrap();
        assert_eq!(rollout(&stack).unwrap(), RolloutState::init(2, 5));
    }

    #[test]
    fn identity_stack_never_mixes() {
        let eye = |n| HeadTensor::from_heads(&[Matrix::<f64>::identity(n)]).unwrap();
        let stack = AttentionStack::new(
            vec![
                LayerAttention::question_self(eye(2)),
                LayerAttention::image_self(eye(4)),
                LayerAttention::question_self(eye(2)),
            ],
            2,
            4,
            0,
            (2, 2),
        )
        .unwrap();
        let out = rollout(&stack).unwrap();
        assert_eq!(out.rqq, Matrix::identity(2));
        assert_eq!(out.rii, Matrix::identity(4));
        assert_eq!(out.rqi, Matrix::zeros(2, 4));
    }

    #[test]
    fn single_fusion_layer_copies_cross_attention() {
        let x = m(&[&[0.1, 0.2, 0.3, 0.4], &[0.7, 0.1, 0.1, 0.1]]);
        let stack = AttentionStack::new(
            vec![LayerAttention::fusion(
                HeadTensor::from_heads(&[Matrix::identity(2)]).unwrap(),
                HeadTensor::from_heads(std::slice::from_ref(&x)).unwrap(),
            )],
            2,
            4,
            0,
            (1, 4),
        )
        .unwrap();
        assert_mat(&rollout(&stack).unwrap().rqi, &x, 1e-15);
    }

    #[test]
    fn validation_rejects_bad_stacks() {
        let eye = |n| HeadTensor::from_heads(&[Matrix::<f64>::identity(n)]).unwrap();
        // kind/tensor mismatch
        let bad = LayerAttention {
            kind: LayerKind::Fusion,
            qq: Some(eye(2)),
            ii: None,
            qi: None,
        };
        assert!(AttentionStack::new(vec![bad], 2, 4, 0, (2, 2)).is_err());
        // grid does not cover i_len
        assert!(AttentionStack::<f64>::new(vec![], 2, 4, 1, (2, 2)).is_err());
        // non-stochastic row
        let t = HeadTensor::from_vec(1, 2, 2, vec![0.5, 0.4, 0.0, 1.0]).unwrap();
        assert!(
            AttentionStack::new(vec![LayerAttention::question_self(t)], 2, 4, 0, (2, 2)).is_err()
        );
        // q_len disagreement
        assert!(
            AttentionStack::new(vec![LayerAttention::question_self(eye(3))], 2, 4, 0, (2, 2))
                .is_err()
        );
    }

    #[test]
    fn works_in_f32() {
        let s = RolloutState::<f32>::init(2, 3);
        let a = Matrix::from_rows(&[vec![0.5f32, 0.5], vec![0.5, 0.5]]);
        let out = step_self(&s, Some(&a), None).unwrap();
        assert!((out.rqq[(0, 0)] - 0.75).abs() < 1e-6);
    }

    fn stochastic(rows: usize, cols: usize) -> impl Strategy<Value = Matrix<f64>> {
        prop::collection::vec(0.0f64..1.0, rows * cols).prop_map(move |mut v| {
            for row in v.chunks_mut(cols) {
                row[0] += 1e-3;
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|x| *x /= s);
            }
            Matrix::from_vec(rows, cols, v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn head_order_does_not_matter(a in stochastic(3, 3), b in stochastic(3, 3), c in stochastic(3, 3)) {
            let fwd = HeadTensor::from_heads(&[a.clone(), b.clone(), c.clone()]).unwrap();
            let rev = HeadTensor::from_heads(&[c, a, b]).unwrap();
            prop_assert_eq!(head_reduce(&fwd).unwrap(), head_reduce(&rev).unwrap());
        }

        #[test]
        fn self_step_keeps_rows_stochastic_and_nonnegative(r in stochastic(4, 4), a in stochastic(4, 4)) {
            let s = RolloutState { rqq: r, ..RolloutState::init(4, 2) };
            let out = step_self(&s, Some(&a), None).unwrap();
            for row in out.rqq.to_rows() {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
