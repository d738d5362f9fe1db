//! Feedforward and gated-recurrent layers built on the tape.

use super::store::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape<'_>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Affine layer `x W + b` with `W` of shape `in x out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights uniform in `+-gain/sqrt(fan_in)`, bias zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = gain / (fan_in as f64).sqrt();
        let weight = store.add_uniform(format!("{name}.weight"), fan_in, fan_out, bound, rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out))?;
        Ok(Self { weight, bias, fan_in, fan_out })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (_, cols) = tape.value(x).shape();
        if cols != self.fan_in {
            return Err(Error::Shape(format!("linear expects {} inputs, got {cols}", self.fan_in)));
        }
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// Chain of affine layers with a shared hidden activation and an affine
/// (or chosen) output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("an MLP needs input and output widths".into()));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], 1.0, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, hidden, output })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(tape, h)?;
            h = if i == last { self.output.apply(tape, z) } else { self.hidden.apply(tape, z) };
        }
        Ok(h)
    }
}

/// Single GRU layer:
///
/// ```text
/// z  = sigmoid(x Wz + h Uz + bz)
/// r  = sigmoid(x Wr + h Ur + br)
/// n  = tanh(x Wn + (r * h) Un + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input_width: usize,
    pub hidden_width: usize,
    wz: ParamId,
    wr: ParamId,
    wn: ParamId,
    uz: ParamId,
    ur: ParamId,
    un: ParamId,
    bz: ParamId,
    br: ParamId,
    bn: ParamId,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_width: usize,
        hidden_width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bx = 1.0 / (input_width as f64).sqrt();
        let bh = 1.0 / (hidden_width as f64).sqrt();
        let mut w = |gate: &str, rows: usize, bound: f64, store: &mut ParamStore| {
            store.add_uniform(format!("{name}.{gate}"), rows, hidden_width, bound, rng)
        };
        let wz = w("wz", input_width, bx, store)?;
        let wr = w("wr", input_width, bx, store)?;
        let wn = w("wn", input_width, bx, store)?;
        let uz = w("uz", hidden_width, bh, store)?;
        let ur = w("ur", hidden_width, bh, store)?;
        let un = w("un", hidden_width, bh, store)?;
        let bz = store.add(format!("{name}.bz"), Tensor::zeros(1, hidden_width))?;
        let br = store.add(format!("{name}.br"), Tensor::zeros(1, hidden_width))?;
        let bn = store.add(format!("{name}.bn"), Tensor::zeros(1, hidden_width))?;
        Ok(Self { input_width, hidden_width, wz, wr, wn, uz, ur, un, bz, br, bn })
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Result<Var> {
        let (rows, cols) = tape.value(x).shape();
        if cols != self.input_width || tape.value(h).shape() != (rows, self.hidden_width) {
            return Err(Error::Shape(format!(
                "gru step: input {:?}, hidden {:?}, expected width {} / {}",
                (rows, cols),
                tape.value(h).shape(),
                self.input_width,
                self.hidden_width
            )));
        }
        let gate = |tape: &mut Tape<'_>, w: ParamId, u: ParamId, b: ParamId, hh: Var| -> Result<Var> {
            let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
            let xw = tape.matmul(x, w)?;
            let hu = tape.matmul(hh, u)?;
            let s = tape.add(xw, hu)?;
            tape.add_row(s, b)
        };
        let z_pre = gate(tape, self.wz, self.uz, self.bz, h)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.wr, self.ur, self.br, h)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h)?;
        let n_pre = gate(tape, self.wn, self.un, self.bn, rh)?;
        let n = tape.tanh(n_pre);
        // (1 - z) * n + z * h = n + z * (h - n)
        let h_minus_n = tape.sub(h, n)?;
        let zd = tape.mul(z, h_minus_n)?;
        tape.add(n, zd)
    }
}

/// Stacked GRU layers of a common hidden width.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStack {
    pub layers: Vec<GruCell>,
}

impl GruStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_width: usize,
        hidden_width: usize,
        num_layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::InvalidArgument("GRU stack needs at least one layer".into()));
        }
        let layers = (0..num_layers)
            .map(|i| {
                let w = if i == 0 { input_width } else { hidden_width };
                GruCell::new(store, &format!("{name}.{i}"), w, hidden_width, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn hidden_width(&self) -> usize {
        self.layers[0].hidden_width
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Zero hidden states for `rows` parallel sequences.
    pub fn zero_state(&self, tape: &mut Tape<'_>, rows: usize) -> Vec<Var> {
        self.layers
            .iter()
            .map(|l| tape.input(Tensor::zeros(rows, l.hidden_width)))
            .collect()
    }

    /// One time step through every layer. Returns the new per-layer states;
    /// the last entry is the stack output.
    pub fn step(&self, tape: &mut Tape<'_>, x: Var, state: &[Var]) -> Result<Vec<Var>> {
        if state.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} hidden states for {} layers",
                state.len(),
                self.layers.len()
            )));
        }
        let mut input = x;
        let mut next = Vec::with_capacity(state.len());
        for (layer, &h) in self.layers.iter().zip(state) {
            let h_new = layer.step(tape, input, h)?;
            next.push(h_new);
            input = h_new;
        }
        Ok(next)
    }

    /// Unrolls the stack over a sequence. `h0` defaults to zeros.
    /// Returns the top-layer output per step and the final per-layer states.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        xs: &[Var],
        h0: Option<Vec<Var>>,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let Some(first) = xs.first() else {
            return Err(Error::InvalidArgument("empty input sequence".into()));
        };
        let rows = tape.value(*first).rows();
        let mut state = match h0 {
            Some(h) => h,
            None => self.zero_state(tape, rows),
        };
        let mut outputs = Vec::with_capacity(xs.len());
        for &x in xs {
            state = self.step(tape, x, &state)?;
            outputs.push(*state.last().expect("non-empty stack"));
        }
        Ok((outputs, state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zero_mlp_outputs_activation_of_zero() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 4, 2], Activation::Tanh, Activation::Sigmoid, &mut stream(0, 0, 0, 0))
            .unwrap();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::row(vec![1.0, -2.0, 3.0]));
        let y = mlp.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_linear_layer() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 3], Activation::Tanh, Activation::Identity, &mut stream(0, 0, 0, 0))
            .unwrap();
        let w = mlp.layers[0].weight;
        let eye = Tensor::from_vec(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        *store.get_mut(w) = eye;
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::row(vec![0.25, -7.0, 3.5]));
        let y = mlp.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.25, -7.0, 3.5]);
    }

    #[test]
    fn mlp_shape_mismatch_rejected() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 2], Activation::Tanh, Activation::Identity, &mut stream(0, 0, 0, 0))
            .unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::row(vec![1.0, 2.0]));
        assert!(mlp.forward(&mut tape, x).is_err());
    }

    #[test]
    fn zero_gru_halves_hidden_state() {
        let mut store = ParamStore::new();
        let gru = GruStack::new(&mut store, "g", 2, 4, 1, &mut stream(0, 0, 0, 0)).unwrap();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::row(vec![0.3, -0.1]));
        let h0 = tape.input(Tensor::filled(1, 4, 1.0));
        let (out, last) = gru.forward(&mut tape, &[x], Some(vec![h0])).unwrap();
        assert_eq!(tape.value(out[0]).data(), &[0.5; 4]);
        assert_eq!(tape.value(last[0]).data(), &[0.5; 4]);
    }

    #[test]
    fn gru_default_state_is_zero() {
        let mut store = ParamStore::new();
        let gru = GruStack::new(&mut store, "g", 2, 3, 2, &mut stream(1, 0, 0, 0)).unwrap();
        let mut tape = Tape::new(&store);
        let x = tape.input(Tensor::row(vec![0.3, -0.1]));
        let (a, _) = gru.forward(&mut tape, &[x], None).unwrap();
        let zeros = gru.zero_state(&mut tape, 1);
        let (b, _) = gru.forward(&mut tape, &[x], Some(zeros)).unwrap();
        assert_eq!(tape.value(a[0]), tape.value(b[0]));
        assert!(gru.forward(&mut tape, &[], None).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut store = ParamStore::new();
        let gru = GruStack::new(&mut store, "g", 2, 8, 2, &mut stream(2, 0, 0, 0)).unwrap();
        let run = || {
            let mut tape = Tape::new(&store);
            let xs: Vec<_> = (0..4).map(|t| tape.input(Tensor::row(vec![t as f64, 0.5]))).collect();
            let (out, _) = gru.forward(&mut tape, &xs, None).unwrap();
            tape.value(out[3]).clone()
        };
        assert_eq!(run(), run());
    }
}
