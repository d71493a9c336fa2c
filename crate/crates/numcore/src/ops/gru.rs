use crate::error::{shape_err, Result};
use crate::tape::{Tape, Var};

/// Parameters of a convolutional GRU cell. Kernels are
/// `[k, k, 2C, C]` over the concatenation `[state, input]`.
#[derive(Clone, Copy, Debug)]
pub struct ConvGruParams {
    pub update_w: Var,
    pub update_b: Var,
    pub reset_w: Var,
    pub reset_b: Var,
    pub cand_w: Var,
    pub cand_b: Var,
}

impl Tape {
    /// One ConvGRU step:
    /// `z = σ(W_z*[h,x])`, `r = σ(W_r*[h,x])`, `n = tanh(W_n*[r⊙h, x])`,
    /// `h' = (1 - z)⊙h + z⊙n`.
    pub fn conv_gru_step(&self, state: Var, input: Var, p: &ConvGruParams) -> Result<Var> {
        let (hs, xs) = (self.shape(state), self.shape(input));
        if hs != xs || hs.len() != 3 {
            return Err(shape_err(
                "conv_gru_step",
                format!("state {hs:?} and input {xs:?} must be equal [H,W,C]"),
            ));
        }
        let k = self.shape(p.update_w)[0];
        let pad = k / 2;
        let hx = self.concat_channels(&[state, input])?;
        let gate = |w: Var, b: Var, x: Var| -> Result<Var> {
            let c = self.conv2d(x, w, 1, pad)?;
            self.add_bias(c, b)
        };
        let z = self.sigmoid(gate(p.update_w, p.update_b, hx)?);
        let r = self.sigmoid(gate(p.reset_w, p.reset_b, hx)?);
        let rh = self.mul(r, state)?;
        let rhx = self.concat_channels(&[rh, input])?;
        let n = self.tanh(gate(p.cand_w, p.cand_b, rhx)?);
        // (1 - z)⊙h + z⊙n  ==  h + z⊙(n - h)
        let diff = self.sub(n, state)?;
        let zd = self.mul(z, diff)?;
        self.add(state, zd)
    }
}
