//! Gradient verification against central finite differences.

use super::store::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Relative error with an absolute floor of 1e-8 on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare the reverse-mode gradient of a scalar function against central
/// finite differences, elementwise over every learnable array.
///
/// `build` must be deterministic given the store contents (fix any base
/// noise before calling); it is evaluated twice to verify this. Returns the
/// worst relative error across all learnable elements.
pub fn finite_diff_check<F>(build: F, store: &mut ParameterStore, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let eval = |store: &ParameterStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let out = build(&mut tape)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Shape("finite_diff_check needs a scalar".into()));
        }
        Ok(tape.value(out).item())
    };

    let (base, grads) = {
        let mut tape = Tape::new(store);
        let out = build(&mut tape)?;
        let grads = tape.gradient(out)?;
        (tape.value(out).item(), grads)
    };
    let again = eval(store)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Numeric(format!(
            "function is not deterministic under fixed inputs: {base} vs {again}"
        )));
    }

    let mut worst = 0.0f64;
    for idx in store.learnable_indices() {
        let name = store.name_at(idx).to_string();
        let n = store.value_at(idx).len();
        for e in 0..n {
            let orig = store.value_at(idx).data()[e];
            store.value_mut(&name)?.data_mut()[e] = orig + step;
            let plus = eval(store)?;
            store.value_mut(&name)?.data_mut()[e] = orig - step;
            let minus = eval(store)?;
            store.value_mut(&name)?.data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let ad = grads.entry(idx).data()[e];
            worst = worst.max(rel_err(fd, ad));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn linear_function_is_exact() {
        let mut store = ParameterStore::new();
        store
            .insert_learnable("w", Tensor::vector(vec![0.3, -1.2, 2.0]))
            .unwrap();
        let err = finite_diff_check(
            |tape| {
                let w = tape.param("w")?;
                let c = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
                let prod = tape.mul(w, c)?;
                Ok(tape.sum(prod))
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn softplus_composition_is_close() {
        let mut store = ParameterStore::new();
        store
            .insert_learnable("w", Tensor::vector(vec![0.5, -0.7, 1.3, 0.2]))
            .unwrap();
        let err = finite_diff_check(
            |tape| {
                let w = tape.param("w")?;
                let s = tape.activation(w, crate::diffcore::Activation::Softplus);
                let sq = tape.square(s);
                Ok(tape.sum(sq))
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        // Re-implements the comparison loop with the reverse-mode gradient
        // scaled by 1.01; the reported error must be large.
        let mut store = ParameterStore::new();
        store
            .insert_learnable("w", Tensor::vector(vec![0.9, -0.4]))
            .unwrap();
        let build = |tape: &mut Tape| -> Result<Var> {
            let w = tape.param("w")?;
            let sq = tape.square(w);
            Ok(tape.sum(sq))
        };
        let grads = {
            let mut tape = Tape::new(&store);
            let out = build(&mut tape).unwrap();
            tape.gradient(out).unwrap()
        };
        let step = 1e-5;
        let mut worst = 0.0f64;
        for e in 0..2 {
            let orig = store.value("w").unwrap().data()[e];
            store.value_mut("w").unwrap().data_mut()[e] = orig + step;
            let plus = {
                let mut tape = Tape::new(&store);
                let out = build(&mut tape).unwrap();
                tape.value(out).item()
            };
            store.value_mut("w").unwrap().data_mut()[e] = orig - step;
            let minus = {
                let mut tape = Tape::new(&store);
                let out = build(&mut tape).unwrap();
                tape.value(out).item()
            };
            store.value_mut("w").unwrap().data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let idx = store.index_of("w").unwrap();
            let ad = grads.entry(idx).data()[e] * 1.01;
            worst = worst.max(rel_err(fd, ad));
        }
        assert!(worst >= 1e-3, "worst {worst}");
    }
}
