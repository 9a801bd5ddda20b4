use crate::datagen::Point;
use crate::diffusion::Latent;
use crate::disco::DiscoModel;
use crate::error::{Error, Result};
use crate::tensorgrad::{Tape, Tensor, Var};

/// Per-row Jacobians `d f(x_i) / d x_i` of a row-wise map on a `[batch, 2]`
/// input, one reverse sweep per output component. `out[i][j]` is the
/// gradient of output `j` of row `i`.
pub fn jacobian_rows<F>(build: F, xs: &[Point]) -> Result<Vec<Vec<Point>>>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let b = xs.len();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(b, 2, xs.iter().flatten().copied().collect())?);
    let out = build(&mut tape, x)?;
    let shape = tape.value(out).shape().to_vec();
    if shape.len() != 2 || shape[0] != b {
        return Err(Error::Shape {
            op: "jacobian",
            lhs: shape,
            rhs: vec![b, 0],
        });
    }
    let d_out = shape[1];
    let mut jac = vec![Vec::with_capacity(d_out); b];
    for j in 0..d_out {
        let col = tape.slice_cols(out, j, 1)?;
        let total = tape.sum(col)?;
        let g = tape.backward(total)?.wrt(x);
        for (i, row) in jac.iter_mut().enumerate() {
            row.push([g.data()[2 * i], g.data()[2 * i + 1]]);
        }
    }
    Ok(jac)
}

/// Squared Frobenius norm of the Jacobian of a single point.
pub fn jacobian_frob_sq<F>(build: F, x: Point) -> Result<f64>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    Ok(frob_sq(&jacobian_rows(build, &[x])?[0]))
}

pub fn frob_sq(jac: &[Point]) -> f64 {
    jac.iter().map(|r| r[0] * r[0] + r[1] * r[1]).sum()
}

/// `||dD/dx||_F^2` and `||dG/dx||_F^2` of the trained denoiser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianProbe {
    pub jac_d: f64,
    pub jac_g: f64,
}

pub fn model_jacobians(model: &DiscoModel, xs: &[Point], ts: &[f64], latents: &[Latent]) -> Result<Vec<JacobianProbe>> {
    if xs.len() != ts.len() || xs.len() != latents.len() {
        return Err(Error::invalid("one noise level and latent per probe"));
    }
    let den = &model.denoiser;
    let params = &model.params;
    let jd = jacobian_rows(
        |tape, x| {
            let bound = params.bind(tape);
            let cond = den.hard_cond(tape, latents)?;
            den.denoise_var(tape, &bound, x, ts, &cond)
        },
        xs,
    )?;
    let jg = jacobian_rows(
        |tape, x| {
            let bound = params.bind(tape);
            let cond = den.hard_cond(tape, latents)?;
            den.score_head_var(tape, &bound, x, ts, &cond)
        },
        xs,
    )?;
    Ok(jd
        .iter()
        .zip(&jg)
        .map(|(d, g)| JacobianProbe {
            jac_d: frob_sq(d),
            jac_g: frob_sq(g),
        })
        .collect())
}
