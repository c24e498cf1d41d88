//! Downstream classifiers: MLP, 1-D CNN, and GRU, each mapping a
//! (normalized) L×d window to class logits through the same two-layer
//! fully connected head.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamId, ParamStore, WeightInit};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Mlp,
    Cnn,
    Gru,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
            ModelKind::Gru => "gru",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "cnn" => Ok(ModelKind::Cnn),
            "gru" | "rnn" => Ok(ModelKind::Gru),
            other => Err(Error::Config(format!(
                "unknown model kind '{}' (expected mlp|cnn|gru)",
                other
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Head hidden width (shared by all three models).
    pub hidden: usize,
    pub filters: usize,
    pub kernel: usize,
    pub gru_hidden: usize,
    pub dropout: f64,
    pub init: WeightInit,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            hidden: 512,
            filters: 256,
            kernel: 3,
            gru_hidden: 256,
            dropout: 0.5,
            init: WeightInit::FanInUniform,
        }
    }

    pub fn build(
        &self,
        store: &mut ParamStore,
        l: usize,
        d: usize,
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Model> {
        if self.dropout < 0.0 || self.dropout >= 1.0 {
            return Err(Error::Config(format!(
                "dropout must be in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(match self.kind {
            ModelKind::Mlp => Model::Mlp(Mlp::new(store, l, d, self, n_classes, rng)),
            ModelKind::Cnn => Model::Cnn(Cnn::new(store, l, d, self, n_classes, rng)?),
            ModelKind::Gru => Model::Gru(Gru::new(store, d, self, n_classes, rng)),
        })
    }
}

/// Hidden layer (rectifier + dropout in training) followed by a linear
/// output layer. Dropout is the inverted form, so inference applies no
/// extra scaling.
pub struct ClassifierHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    dropout: f64,
    in_dim: usize,
}

impl ClassifierHead {
    fn new(
        store: &mut ParamStore,
        in_dim: usize,
        hidden: usize,
        out: usize,
        dropout: f64,
        init: WeightInit,
        rng: &mut impl Rng,
    ) -> Self {
        let w1 = store.add(
            "head.w1",
            ParamGroup::Network,
            init.sample(vec![hidden, in_dim], in_dim, rng),
        );
        let b1 = store.add("head.b1", ParamGroup::Network, Tensor::zeros(vec![hidden]));
        let w2 = store.add(
            "head.w2",
            ParamGroup::Network,
            init.sample(vec![out, hidden], hidden, rng),
        );
        let b2 = store.add("head.b2", ParamGroup::Network, Tensor::zeros(vec![out]));
        ClassifierHead { w1, b1, w2, b2, dropout, in_dim }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: ValueId,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<ValueId> {
        let got = tape.value(features).numel();
        if got != self.in_dim {
            return Err(Error::shape(
                "head",
                format!("expected {} features, got {}", self.in_dim, got),
            ));
        }
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let pre = tape.matvec(w1, features)?;
        let pre = tape.add(pre, b1)?;
        let mut h = tape.relu(pre)?;
        if let Some(rng) = dropout_rng {
            if self.dropout > 0.0 {
                let n = tape.value(h).numel();
                let keep = 1.0 - self.dropout;
                let mask: Vec<f64> = (0..n)
                    .map(|_| if rng.random::<f64>() < self.dropout { 0.0 } else { 1.0 / keep })
                    .collect();
                let mask = tape.input(Tensor::vector(mask)?);
                h = tape.mul(h, mask)?;
            }
        }
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let out = tape.matvec(w2, h)?;
        tape.add(out, b2)
    }
}

/// Flattens the window time-major (t0's features, then t1's, ...) into the
/// head.
pub struct Mlp {
    pub head: ClassifierHead,
    l: usize,
    d: usize,
}

impl Mlp {
    fn new(
        store: &mut ParamStore,
        l: usize,
        d: usize,
        cfg: &ModelConfig,
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let head = ClassifierHead::new(store, l * d, cfg.hidden, n_classes, cfg.dropout, cfg.init, rng);
        Mlp { head, l, d }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: ValueId,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<ValueId> {
        let t = tape.value(x);
        if t.shape() != [self.l, self.d] {
            return Err(Error::shape(
                "mlp",
                format!("expected [{},{}], got {:?}", self.l, self.d, t.shape()),
            ));
        }
        let flat = tape.reshape(x, vec![self.l * self.d])?;
        self.head.forward(tape, store, flat, dropout_rng)
    }
}

/// Valid (no-padding) convolution over time with the features as input
/// channels, rectifier, flatten, head.
pub struct Cnn {
    pub w: ParamId,
    pub b: ParamId,
    pub head: ClassifierHead,
    l: usize,
    d: usize,
    kernel: usize,
    filters: usize,
}

impl Cnn {
    fn new(
        store: &mut ParamStore,
        l: usize,
        d: usize,
        cfg: &ModelConfig,
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if l < cfg.kernel {
            return Err(Error::Config(format!(
                "window length {} shorter than kernel {}",
                l, cfg.kernel
            )));
        }
        let fan_in = d * cfg.kernel;
        let w = store.add(
            "conv.w",
            ParamGroup::Network,
            cfg.init.sample(vec![cfg.filters, d, cfg.kernel], fan_in, rng),
        );
        let b = store.add("conv.b", ParamGroup::Network, Tensor::zeros(vec![cfg.filters]));
        let t_out = l - cfg.kernel + 1;
        let head = ClassifierHead::new(
            store,
            t_out * cfg.filters,
            cfg.hidden,
            n_classes,
            cfg.dropout,
            cfg.init,
            rng,
        );
        Ok(Cnn { w, b, head, l, d, kernel: cfg.kernel, filters: cfg.filters })
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: ValueId,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<ValueId> {
        let t = tape.value(x);
        if t.shape() != [self.l, self.d] {
            return Err(Error::shape(
                "cnn",
                format!("expected [{},{}], got {:?}", self.l, self.d, t.shape()),
            ));
        }
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let conv = tape.conv1d(x, w, b)?;
        let act = tape.relu(conv)?;
        let t_out = self.l - self.kernel + 1;
        let flat = tape.reshape(act, vec![t_out * self.filters])?;
        self.head.forward(tape, store, flat, dropout_rng)
    }
}

/// Single recurrent layer; the final hidden state feeds the head.
///
/// Cell: z = sigm(W_z x + U_z h + b_z), r = sigm(W_r x + U_r h + b_r),
/// h~ = tanh(W_h x + U_h (r*h) + b_h), h' = (1-z)*h + z*h~.
pub struct Gru {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub head: ClassifierHead,
    d: usize,
    hidden: usize,
}

impl Gru {
    fn new(
        store: &mut ParamStore,
        d: usize,
        cfg: &ModelConfig,
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let h = cfg.gru_hidden;
        let w_z = store.add("gru.w_z", ParamGroup::Network, cfg.init.sample(vec![h, d], d, rng));
        let u_z = store.add("gru.u_z", ParamGroup::Network, cfg.init.sample(vec![h, h], h, rng));
        let w_r = store.add("gru.w_r", ParamGroup::Network, cfg.init.sample(vec![h, d], d, rng));
        let u_r = store.add("gru.u_r", ParamGroup::Network, cfg.init.sample(vec![h, h], h, rng));
        let w_h = store.add("gru.w_h", ParamGroup::Network, cfg.init.sample(vec![h, d], d, rng));
        let u_h = store.add("gru.u_h", ParamGroup::Network, cfg.init.sample(vec![h, h], h, rng));
        let b_z = store.add("gru.b_z", ParamGroup::Network, Tensor::zeros(vec![h]));
        let b_r = store.add("gru.b_r", ParamGroup::Network, Tensor::zeros(vec![h]));
        let b_h = store.add("gru.b_h", ParamGroup::Network, Tensor::zeros(vec![h]));
        let head = ClassifierHead::new(store, h, cfg.hidden, n_classes, cfg.dropout, cfg.init, rng);
        Gru { w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h, head, d, hidden: h }
    }

    /// Runs the recurrence from h0 = 0 and returns h_L.
    pub fn final_hidden(&self, tape: &mut Tape, store: &ParamStore, x: ValueId) -> Result<ValueId> {
        let t = tape.value(x);
        if t.rank() != 2 || t.cols() != self.d {
            return Err(Error::shape(
                "gru",
                format!("expected [L,{}], got {:?}", self.d, t.shape()),
            ));
        }
        let steps = t.rows();
        let w_z = tape.param(store, self.w_z);
        let u_z = tape.param(store, self.u_z);
        let b_z = tape.param(store, self.b_z);
        let w_r = tape.param(store, self.w_r);
        let u_r = tape.param(store, self.u_r);
        let b_r = tape.param(store, self.b_r);
        let w_h = tape.param(store, self.w_h);
        let u_h = tape.param(store, self.u_h);
        let b_h = tape.param(store, self.b_h);

        let mut h = tape.input(Tensor::zeros(vec![self.hidden]));
        for step in 0..steps {
            let xt = tape.pick_row(x, step)?;

            let zx = tape.matvec(w_z, xt)?;
            let zh = tape.matvec(u_z, h)?;
            let z = tape.add(zx, zh)?;
            let z = tape.add(z, b_z)?;
            let z = tape.sigmoid(z)?;

            let rx = tape.matvec(w_r, xt)?;
            let rh = tape.matvec(u_r, h)?;
            let r = tape.add(rx, rh)?;
            let r = tape.add(r, b_r)?;
            let r = tape.sigmoid(r)?;

            let gated_h = tape.mul(r, h)?;
            let cx = tape.matvec(w_h, xt)?;
            let ch = tape.matvec(u_h, gated_h)?;
            let cand = tape.add(cx, ch)?;
            let cand = tape.add(cand, b_h)?;
            let cand = tape.tanh(cand)?;

            let one_minus_z = tape.rsub_scalar(z, 1.0)?;
            let keep = tape.mul(one_minus_z, h)?;
            let take = tape.mul(z, cand)?;
            h = tape.add(keep, take)?;
        }
        Ok(h)
    }

    fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: ValueId,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<ValueId> {
        let h = self.final_hidden(tape, store, x)?;
        self.head.forward(tape, store, h, dropout_rng)
    }
}

pub enum Model {
    Mlp(Mlp),
    Cnn(Cnn),
    Gru(Gru),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Mlp(_) => ModelKind::Mlp,
            Model::Cnn(_) => ModelKind::Cnn,
            Model::Gru(_) => ModelKind::Gru,
        }
    }

    /// Training-time forward pass; dropout masks are drawn from `rng`.
    pub fn forward_train(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: ValueId,
        rng: &mut impl RngCore,
    ) -> Result<ValueId> {
        self.forward_impl(tape, store, x, Some(rng))
    }

    /// Inference forward pass; deterministic (no dropout).
    pub fn forward_eval(&self, tape: &mut Tape, store: &ParamStore, x: ValueId) -> Result<ValueId> {
        self.forward_impl(tape, store, x, None)
    }

    fn forward_impl(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: ValueId,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<ValueId> {
        match self {
            Model::Mlp(m) => m.forward(tape, store, x, dropout_rng.take()),
            Model::Cnn(m) => m.forward(tape, store, x, dropout_rng.take()),
            Model::Gru(m) => m.forward(tape, store, x, dropout_rng.take()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    fn small_cfg(kind: ModelKind) -> ModelConfig {
        let mut cfg = ModelConfig::new(kind);
        cfg.hidden = 8;
        cfg.filters = 4;
        cfg.gru_hidden = 6;
        cfg.dropout = 0.0;
        cfg
    }

    #[test]
    fn mlp_toy_hand_case() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let mut cfg = small_cfg(ModelKind::Mlp);
        cfg.hidden = 1;
        let model = cfg.build(&mut store, 2, 1, 1, &mut r).unwrap();
        let (w1, b1, w2, b2) = match &model {
            Model::Mlp(m) => (m.head.w1, m.head.b1, m.head.w2, m.head.b2),
            _ => unreachable!(),
        };
        store.set_value(w1, Tensor::matrix(&[vec![1.0, 1.0]]).unwrap()).unwrap();
        store.set_value(b1, Tensor::vector(vec![0.0]).unwrap()).unwrap();
        store.set_value(w2, Tensor::matrix(&[vec![2.0]]).unwrap()).unwrap();
        store.set_value(b2, Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&[vec![1.0], vec![2.0]]).unwrap());
        let logits = model.forward_eval(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(logits).values(), &[7.0]);
    }

    #[test]
    fn mlp_zero_weights_zero_logits() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let model = small_cfg(ModelKind::Mlp).build(&mut store, 3, 2, 3, &mut r).unwrap();
        for i in 0..store.len() {
            let pid = crate::params::ParamId(i);
            let z = Tensor::zeros(store.value(pid).shape().to_vec());
            store.set_value(pid, z).unwrap();
        }
        let mut tape = Tape::new();
        let x = tape.input(Tensor::full(vec![3, 2], 1.5).unwrap());
        let logits = model.forward_eval(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(logits).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mlp_flatten_length() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let model = small_cfg(ModelKind::Mlp).build(&mut store, 15, 144, 3, &mut r).unwrap();
        match &model {
            Model::Mlp(m) => assert_eq!(m.head.in_dim, 2160),
            _ => unreachable!(),
        }
    }

    #[test]
    fn cnn_output_length_and_zero_filters() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let model = small_cfg(ModelKind::Cnn).build(&mut store, 15, 2, 3, &mut r).unwrap();
        match &model {
            Model::Cnn(m) => assert_eq!(m.head.in_dim, 13 * 4),
            _ => unreachable!(),
        }

        // zero conv weights: logits become the head's bias path only
        let (w, b, head_b1, head_b2) = match &model {
            Model::Cnn(m) => (m.w, m.b, m.head.b1, m.head.b2),
            _ => unreachable!(),
        };
        store.set_value(w, Tensor::zeros(vec![4, 2, 3])).unwrap();
        store.set_value(b, Tensor::zeros(vec![4])).unwrap();
        store.set_value(head_b1, Tensor::zeros(vec![8])).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::full(vec![15, 2], 3.0).unwrap());
        let logits = model.forward_eval(&mut tape, &store, x).unwrap();
        // hidden = relu(0) = 0, so logits = b2
        assert_eq!(tape.value(logits).values(), store.value(head_b2).values());
    }

    #[test]
    fn cnn_rejects_short_window() {
        let mut store = ParamStore::new();
        let mut r = rng();
        assert!(small_cfg(ModelKind::Cnn).build(&mut store, 2, 2, 3, &mut r).is_err());
    }

    #[test]
    fn gru_zero_input_gives_bias_logits() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let model = small_cfg(ModelKind::Gru).build(&mut store, 5, 2, 2, &mut r).unwrap();
        let gru = match &model {
            Model::Gru(m) => m,
            _ => unreachable!(),
        };
        // zero input, zero biases: every candidate is tanh(0)=0, so h stays 0
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(vec![5, 2]));
        let h = gru.final_hidden(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(h).values(), vec![0.0; 6].as_slice());
    }

    #[test]
    fn gru_single_step_hand_case() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let mut cfg = small_cfg(ModelKind::Gru);
        cfg.gru_hidden = 1;
        let model = cfg.build(&mut store, 1, 1, 1, &mut r).unwrap();
        let gru = match &model {
            Model::Gru(m) => m,
            _ => unreachable!(),
        };
        for pid in [gru.w_z, gru.u_z, gru.w_r, gru.u_r, gru.w_h, gru.u_h] {
            store.set_value(pid, Tensor::zeros(vec![1, 1])).unwrap();
        }
        // z = sigm(0) = 0.5, candidate = tanh(0) = 0, h0 = 0 -> h1 = 0
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(&[vec![4.2]]).unwrap());
        let h = gru.final_hidden(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(h).values(), &[0.0]);
    }

    #[test]
    fn gru_hidden_state_bounded() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let model = small_cfg(ModelKind::Gru).build(&mut store, 7, 3, 2, &mut r).unwrap();
        let gru = match &model {
            Model::Gru(m) => m,
            _ => unreachable!(),
        };
        let mut tape = Tape::new();
        let values: Vec<f64> = (0..21).map(|_| r.random_range(-5.0..5.0)).collect();
        let x = tape.input(Tensor::new(vec![7, 3], values).unwrap());
        let h = gru.final_hidden(&mut tape, &store, x).unwrap();
        for &v in tape.value(h).values() {
            assert!(v > -1.0 && v < 1.0);
        }
    }

    #[test]
    fn gru_length_one_is_single_cell() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let model = small_cfg(ModelKind::Gru).build(&mut store, 1, 2, 2, &mut r).unwrap();
        let gru = match &model {
            Model::Gru(m) => m,
            _ => unreachable!(),
        };
        let xrow = vec![0.3, -0.8];
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(std::slice::from_ref(&xrow)).unwrap());
        let h = gru.final_hidden(&mut tape, &store, x).unwrap();

        // hand-roll one cell application from h0 = 0
        let mv = |m: &Tensor, v: &[f64]| -> Vec<f64> {
            (0..m.rows())
                .map(|i| (0..m.cols()).map(|j| m.at2(i, j) * v[j]).sum())
                .collect()
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z: Vec<f64> = mv(store.value(gru.w_z), &xrow).iter().map(|&v| sig(v)).collect();
        let cand: Vec<f64> = mv(store.value(gru.w_h), &xrow).iter().map(|&v| v.tanh()).collect();
        let expect: Vec<f64> = z.iter().zip(&cand).map(|(z, c)| z * c).collect();
        for (a, b) in tape.value(h).values().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_zeroes_and_rescales_in_training_only() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let mut cfg = small_cfg(ModelKind::Mlp);
        cfg.dropout = 0.5;
        cfg.hidden = 64;
        let model = cfg.build(&mut store, 4, 2, 2, &mut r).unwrap();
        let x = Tensor::full(vec![4, 2], 0.7).unwrap();

        let mut tape = Tape::new();
        let xid = tape.input(x.clone());
        let eval1 = model.forward_eval(&mut tape, &store, xid).unwrap();
        let xid2 = tape.input(x.clone());
        let eval2 = model.forward_eval(&mut tape, &store, xid2).unwrap();
        assert_eq!(tape.value(eval1).values(), tape.value(eval2).values());

        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(6);
        let mut tape_t = Tape::new();
        let xt = tape_t.input(x.clone());
        let t1 = model.forward_train(&mut tape_t, &store, xt, &mut r1).unwrap();
        let xt2 = tape_t.input(x);
        let t2 = model.forward_train(&mut tape_t, &store, xt2, &mut r2).unwrap();
        assert_ne!(tape_t.value(t1).values(), tape_t.value(t2).values());
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        let mut r = rng();
        for kind in [ModelKind::Mlp, ModelKind::Cnn, ModelKind::Gru] {
            let mut store = ParamStore::new();
            let model = small_cfg(kind).build(&mut store, 5, 4, 3, &mut r).unwrap();
            let x = Tensor::new(
                vec![5, 4],
                (0..20).map(|_| r.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let dir = Tensor::new(vec![3], (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();

            let eval = |store: &ParamStore, x: &Tensor| -> f64 {
                let mut tape = Tape::new();
                let xid = tape.input(x.clone());
                let logits = model.forward_eval(&mut tape, store, xid).unwrap();
                let d = tape.input(dir.clone());
                let p = tape.mul(logits, d).unwrap();
                let loss = tape.sum_all(p).unwrap();
                tape.value(loss).values()[0]
            };

            let mut tape = Tape::new();
            let xid = tape.input(x.clone());
            let logits = model.forward_eval(&mut tape, &store, xid).unwrap();
            let d = tape.input(dir.clone());
            let p = tape.mul(logits, d).unwrap();
            let loss = tape.sum_all(p).unwrap();
            tape.backward(loss).unwrap();
            store.zero_grads();
            tape.accumulate_grads(&mut store).unwrap();

            let h = 1e-5;
            for i in 0..store.len() {
                let pid = crate::params::ParamId(i);
                let analytic = store.grad(pid).values().to_vec();
                // spot-check a few elements per parameter to keep runtime down
                let n = analytic.len();
                let picks: Vec<usize> = if n <= 4 { (0..n).collect() } else { vec![0, n / 3, n / 2, n - 1] };
                for e in picks {
                    let orig = store.value(pid).clone();
                    let mut plus = orig.clone();
                    plus.values_mut()[e] += h;
                    let mut minus = orig.clone();
                    minus.values_mut()[e] -= h;
                    store.set_value(pid, plus).unwrap();
                    let fp = eval(&store, &x);
                    store.set_value(pid, minus).unwrap();
                    let fm = eval(&store, &x);
                    store.set_value(pid, orig).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    let rel = (analytic[e] - fd).abs() / fd.abs().max(1.0);
                    assert!(
                        rel < 1e-6,
                        "{:?} param {} elem {}: rel err {}",
                        kind,
                        store.get(pid).name,
                        e,
                        rel
                    );
                }
            }
        }
    }
}
