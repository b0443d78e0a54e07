//! Central finite-difference checks. The error reported is
//! `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` over the checked
//! coordinates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, ParamStore, Tape, Tensor, Var};

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Checks the gradient of `f` with respect to every coordinate of `inputs`.
pub fn check_inputs<F>(inputs: &[Tensor], h: f64, f: F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |xs: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let vars = xs.iter().map(|x| tape.constant(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    };
    let mut tape = Tape::new();
    let vars = inputs.iter().map(|x| tape.leaf(x.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let plus = eval(&xs)?;
            xs[k].data_mut()[i] = orig - h;
            let minus = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            analytic.push(g[i]);
            numeric.push((plus - minus) / (2.0 * h));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Checks parameter gradients of `f` on up to `per_param` randomly chosen
/// coordinates of every tensor in `store`.
pub fn check_params<F>(store: &ParamStore, per_param: usize, seed: u64, h: f64, f: F) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape) -> Result<Var, AutodiffError>,
{
    let eval = |s: &ParamStore| -> Result<f64, AutodiffError> {
        let mut tape = Tape::with_params(s);
        let out = f(&mut tape)?;
        Ok(tape.scalar(out))
    };
    let grads = {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        tape.backward(out)?.into_param_grads()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        for i in sample(&mut rng, n, per_param.min(n)) {
            let orig = store.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            analytic.push(grads[id.index()].as_ref().map_or(0.0, |g| g[i]));
            numeric.push((plus - minus) / (2.0 * h));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}
