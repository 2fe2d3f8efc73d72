use rand::Rng;

use super::params::{ParamId, ParamSet};
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Affine map `x W + b` with `W: in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::uniform(fan_in, fan_out, scale, rng),
        );
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(1, fan_out)));
        Linear { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// One direction of an LSTM layer. Gate layout is `[input | forget | cell | output]`.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let w_input = params.add(
            format!("{name}.w_input"),
            Tensor::uniform(input, 4 * hidden, scale, rng),
        );
        let w_hidden = params.add(
            format!("{name}.w_hidden"),
            Tensor::uniform(hidden, 4 * hidden, scale, rng),
        );
        let mut b = Tensor::zeros(1, 4 * hidden);
        b.data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|x| *x = 1.0);
        let bias = params.add(format!("{name}.bias"), b);
        Lstm {
            w_input,
            w_hidden,
            bias,
            hidden,
        }
    }

    /// Input projection for a whole `T x in` sequence (bias included).
    pub fn project(&self, tape: &mut Tape, xs: Var) -> Var {
        let w = tape.param(self.w_input);
        let b = tape.param(self.bias);
        let p = tape.matmul(xs, w);
        tape.add_row(p, b)
    }

    /// One recurrent step on a projected input row. Returns `(h, c)`.
    pub fn step(&self, tape: &mut Tape, projected: Var, state: Option<(Var, Var)>) -> (Var, Var) {
        let gates = match state {
            Some((h, _)) => {
                let u = tape.param(self.w_hidden);
                let r = tape.matmul(h, u);
                tape.add(projected, r)
            }
            None => projected,
        };
        let hc = tape.lstm_cell(gates, state.map(|(_, c)| c));
        let h = tape.slice_cols(hc, 0, self.hidden);
        let c = tape.slice_cols(hc, self.hidden, 2 * self.hidden);
        (h, c)
    }

    /// Runs over `xs: T x in`; returns `T x hidden` states in input order.
    pub fn run(&self, tape: &mut Tape, xs: Var, reverse: bool) -> Var {
        let steps = tape.shape(xs).0;
        let projected = self.project(tape, xs);
        let mut state = None;
        let mut hs = vec![None; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let row = tape.slice_rows(projected, t, t + 1);
            let (h, c) = self.step(tape, row, state);
            hs[t] = Some(h);
            state = Some((h, c));
        }
        let hs: Vec<Var> = hs.into_iter().map(Option::unwrap).collect();
        tape.concat_rows(&hs)
    }
}

/// Stacked bidirectional LSTM; each layer outputs `[forward | backward]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<(Lstm, Lstm)>,
}

impl BiLstm {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { input } else { 2 * hidden };
                let fwd = Lstm::new(params, &format!("{name}.l{l}.fwd"), fan_in, hidden, rng);
                let bwd = Lstm::new(params, &format!("{name}.l{l}.bwd"), fan_in, hidden, rng);
                (fwd, bwd)
            })
            .collect();
        BiLstm { layers }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.layers[0].0.hidden
    }

    pub fn forward(&self, tape: &mut Tape, xs: Var) -> Var {
        let mut x = xs;
        for (fwd, bwd) in &self.layers {
            let f = fwd.run(tape, x, false);
            let b = bwd.run(tape, x, true);
            x = tape.concat_cols(&[f, b]);
        }
        x
    }
}
