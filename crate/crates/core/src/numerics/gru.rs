use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::scalar::Scalar;

/// Gate parameters of a gated recurrent unit, already bound to a tape.
///
/// Input weights are `[I,S]`, recurrent weights `[S,S]`, biases `[S]`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

/// One GRU update `h' = (1-z)⊙h + z⊙ĥ` for `x[N,I]`, `h[N,S]`.
pub fn gru_cell<T: Scalar>(tape: &mut Tape<T>, x: Var, h: Var, p: &GruVars) -> Result<Var> {
    let (xs, hs) = (tape.shape(x).to_vec(), tape.shape(h).to_vec());
    if xs.len() != 2 || hs.len() != 2 || xs[0] != hs[0] {
        return Err(Error::Dimension {
            op: "gru_cell",
            lhs: xs,
            rhs: hs,
        });
    }
    let gate = |tape: &mut Tape<T>, w: Var, u: Var, b: Var, hin: Var| -> Result<Var> {
        let xw = tape.matmul(x, w)?;
        let hu = tape.matmul(hin, u)?;
        let s = tape.add(xw, hu)?;
        tape.add_row_bias(s, b)
    };
    let z_pre = gate(tape, p.w_z, p.u_z, p.b_z, h)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, p.w_r, p.u_r, p.b_r, h)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let cand_pre = gate(tape, p.w_h, p.u_h, p.b_h, rh)?;
    let cand = tape.tanh(cand_pre);
    // h + z⊙(ĥ - h)
    let delta = tape.sub(cand, h)?;
    let step = tape.mul(z, delta)?;
    tape.add(h, step)
}
