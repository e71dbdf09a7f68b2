//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`Tape`] records primitive applications in evaluation order; values are
//! computed as nodes are pushed. [`Tape::backward`] walks the tape in reverse
//! and returns [`Gradients`] for every parameter leaf. Scalars are `1 x 1`
//! matrices.
//!
//! Conventions: `relu'(0) = 0`, `d|x|/dx = 0` at `x = 0`, softmax uses
//! max-subtraction.

mod check;
mod tape;

pub use check::{grad_check, grad_check_with, GradCheckReport};
pub use tape::{Gradients, NodeId, Op, Tape};

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::numeric::{Matrix, SeededRng};

    type Build = dyn Fn(&mut Tape<&'static str>, &[NodeId]) -> crate::Result<NodeId>;

    /// loss = sum(G .* op(inputs)) for a random constant G; checks the op's
    /// vector-Jacobian product against central differences.
    fn check_primitive(shapes: &[(usize, usize)], op: &Build, seed: u64) -> f64 {
        const NAMES: [&str; 4] = ["a", "b", "c", "d"];
        let mut rng = SeededRng::new(seed);
        let point: BTreeMap<&'static str, Matrix> = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| (NAMES[i], rng.normal_matrix(r, c, 1.0)))
            .collect();
        let probe = {
            let mut t = Tape::new();
            let ids: Vec<NodeId> = point.iter().map(|(k, v)| t.param(*k, v.clone())).collect();
            let out = op(&mut t, &ids).unwrap();
            t.shape(out)
        };
        let upstream = rng.normal_matrix(probe.0, probe.1, 1.0);
        let build = |t: &mut Tape<&'static str>, p: &BTreeMap<&'static str, Matrix>| {
            let ids: Vec<NodeId> = p.iter().map(|(k, v)| t.param(*k, v.clone())).collect();
            let out = op(t, &ids)?;
            let g = t.constant(upstream.clone());
            let weighted = t.mul(out, g)?;
            t.sum(weighted)
        };
        grad_check(build, &point, 1e-6).unwrap().max_rel_error
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let cases: Vec<(&str, Vec<(usize, usize)>, Box<Build>)> = vec![
            ("matmul", vec![(3, 4), (4, 2)], Box::new(|t, x| t.matmul(x[0], x[1]))),
            ("add_bias", vec![(3, 5), (3, 1)], Box::new(|t, x| t.add_bias(x[0], x[1]))),
            ("add", vec![(3, 4), (3, 4)], Box::new(|t, x| t.add(x[0], x[1]))),
            ("sub", vec![(3, 4), (3, 4)], Box::new(|t, x| t.sub(x[0], x[1]))),
            ("mul", vec![(3, 4), (3, 4)], Box::new(|t, x| t.mul(x[0], x[1]))),
            ("scale", vec![(3, 4)], Box::new(|t, x| t.scale(x[0], -1.7))),
            ("relu", vec![(4, 4)], Box::new(|t, x| t.relu(x[0]))),
            ("softmax", vec![(3, 5)], Box::new(|t, x| t.softmax_cols(x[0]))),
            (
                "stack_rows",
                vec![(1, 4), (2, 4), (1, 4)],
                Box::new(|t, x| t.stack_rows(vec![x[0], x[1], x[2], x[0]])),
            ),
            ("select_rows", vec![(5, 3)], Box::new(|t, x| t.select_rows(x[0], 1, 3))),
            (
                "concat_cols",
                vec![(3, 1), (3, 2)],
                Box::new(|t, x| t.concat_cols(vec![x[1], x[0]])),
            ),
            ("select_cols", vec![(3, 6)], Box::new(|t, x| t.select_cols(x[0], 2, 3))),
            ("frobenius_sq", vec![(3, 4)], Box::new(|t, x| t.frobenius_sq(x[0]))),
            ("abs_sum", vec![(3, 4)], Box::new(|t, x| t.abs_sum(x[0]))),
            ("zero_diag", vec![(4, 4)], Box::new(|t, x| t.zero_diag(x[0]))),
        ];
        for (name, shapes, op) in &cases {
            for seed in 0..20 {
                let err = check_primitive(shapes, op.as_ref(), seed);
                assert!(err < 1e-5, "{name} seed {seed}: rel error {err}");
            }
        }
    }

    #[test]
    fn frobenius_gradient_is_two_x() {
        let mut rng = SeededRng::new(4);
        let x = rng.normal_matrix(3, 4, 1.0);
        let mut t = Tape::new();
        let p = t.param("x", x.clone());
        let loss = t.frobenius_sq(p).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(&"x").unwrap(), &x.scale(2.0));
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let x = Matrix::from_rows(&[[-1.0, 0.0, 2.0]]);
        let mut t = Tape::new();
        let p = t.param("x", x);
        let r = t.relu(p).unwrap();
        let loss = t.sum(r).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(&"x").unwrap(), &Matrix::from_rows(&[[0.0, 0.0, 1.0]]));
    }

    #[test]
    fn matmul_vjp_is_g_bt() {
        let mut rng = SeededRng::new(8);
        let a = rng.normal_matrix(3, 4, 1.0);
        let b = rng.normal_matrix(4, 2, 1.0);
        let g = rng.normal_matrix(3, 2, 1.0);
        let mut t = Tape::new();
        let pa = t.param("a", a);
        let cb = t.constant(b.clone());
        let prod = t.matmul(pa, cb).unwrap();
        let cg = t.constant(g.clone());
        let w = t.mul(prod, cg).unwrap();
        let loss = t.sum(w).unwrap();
        let grads = t.backward(loss).unwrap();
        let expected = g.matmul(&b.transpose()).unwrap();
        assert!(grads.get(&"a").unwrap().max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut t = Tape::new();
        let _p = t.param("w", Matrix::filled(2, 2, 3.0));
        let c = t.constant(Matrix::filled(1, 1, 5.0));
        let g = t.backward(c).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.get(&"w").unwrap(), &Matrix::zeros(2, 2));
    }

    #[test]
    fn fan_out_sums_contributions() {
        // y = ||x||^2 + 3 * sum(x)  =>  dy/dx = 2x + 3
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]);
        let mut t = Tape::new();
        let p = t.param("x", x.clone());
        let f = t.frobenius_sq(p).unwrap();
        let s = t.sum(p).unwrap();
        let s3 = t.scale(s, 3.0).unwrap();
        let y = t.add(f, s3).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(&"x").unwrap(), &x.map(|v| 2.0 * v + 3.0));
    }

    #[test]
    fn quadratic_loss_grad_check_is_tight() {
        let mut rng = SeededRng::new(1);
        let mut point = BTreeMap::new();
        point.insert("w", rng.normal_matrix(3, 4, 1.0));
        let x = rng.normal_matrix(4, 2, 1.0);
        let report = grad_check(
            |t, p| {
                let w = t.param("w", p["w"].clone());
                let xc = t.constant(x.clone());
                let wx = t.matmul(w, xc)?;
                t.frobenius_sq(wx)
            },
            &point,
            1e-6,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        assert_eq!(report.entries_checked, 12);
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut rng = SeededRng::new(12);
        let mut t = Tape::new();
        let a = t.param("a", rng.normal_matrix(3, 3, 1.0));
        let b = t.param("b", rng.normal_matrix(3, 3, 1.0));
        let ab = t.matmul(a, b).unwrap();
        let r = t.relu(ab).unwrap();
        let s = t.softmax_cols(r).unwrap();
        let z = t.zero_diag(s).unwrap();
        let f = t.frobenius_sq(z).unwrap();
        let l1 = t.abs_sum(b).unwrap();
        let loss = t.add(f, l1).unwrap();
        let g1 = t.backward_seeded(loss, 1.0).unwrap();
        let g2 = t.backward_seeded(loss, 2.0).unwrap();
        for (k, m) in g1.iter() {
            assert_eq!(&m.scale(2.0), g2.get(k).unwrap());
        }
    }

    #[test]
    fn recompute_is_referentially_transparent() {
        let mut rng = SeededRng::new(3);
        let w = rng.normal_matrix(2, 3, 1.0);
        let mut t = Tape::new();
        let p = t.param("w", w.clone());
        let half = t.constant(Matrix::filled(3, 3, 0.5));
        let wc = t.matmul(p, half).unwrap();
        let q = t.mul(wc, p).unwrap();
        let loss = t.frobenius_sq(q).unwrap();
        let before = t.scalar(loss);
        t.recompute().unwrap();
        assert_eq!(before.to_bits(), t.scalar(loss).to_bits());
        t.set_param(&"w", w.scale(2.0)).unwrap();
        t.recompute().unwrap();
        // The loss is quartic in w.
        assert!((t.scalar(loss) - 16.0 * before).abs() < 1e-9 * before.abs().max(1.0));
    }

    #[test]
    fn shape_errors_surface_at_build_time() {
        let mut t: Tape<&str> = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(t.matmul(a, b).is_err());
        assert!(t.add_bias(a, b).is_err());
        assert!(t.zero_diag(a).is_err());
        assert!(t.select_cols(a, 2, 2).is_err());
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn zero_diag_gradient_vanishes_on_diagonal() {
        let mut rng = SeededRng::new(5);
        let mut t = Tape::new();
        let c = t.param("c", rng.normal_matrix(4, 4, 1.0));
        let h = t.constant(rng.normal_matrix(3, 4, 1.0));
        let cz = t.zero_diag(c).unwrap();
        let hc = t.matmul(h, cz).unwrap();
        let loss = t.frobenius_sq(hc).unwrap();
        let g = t.backward(loss).unwrap();
        let gc = g.get(&"c").unwrap();
        assert!(gc.diagonal().iter().all(|&d| d == 0.0));
        assert!(gc.max_abs() > 0.0);
    }

    #[test]
    fn grad_check_reports_non_finite_loss() {
        let mut point = BTreeMap::new();
        point.insert("w", Matrix::filled(1, 1, 700.0));
        let err = grad_check(
            |t, p| {
                let w = t.param("w", p["w"].clone());
                let big = t.scale(w, 1e306)?;
                t.frobenius_sq(big)
            },
            &point,
            1e-6,
        )
        .unwrap_err();
        assert!(err.to_string().contains("\"w\""), "{err}");
    }
}
