use ppk_autodiff::suite::{check_case, primitive_cases};
use ppk_autodiff::{grad_check, Fault, GradCheckOptions, Graph, Tensor, Var};

#[test]
fn every_primitive_matches_finite_differences() {
    for case in primitive_cases() {
        for seed in 0..10 {
            let r = check_case(&case, seed, None).unwrap();
            assert!(r.max_rel_error < 1e-5, "{} seed {seed}: {:?}", case.name, r);
        }
    }
}

#[test]
fn linear_function_is_exact() {
    let x = Tensor::from_fn(&[3, 3], |i| i as f64 - 4.0);
    let f = |g: &mut Graph, v: &[Var]| {
        let s = g.scale(v[0], 2.5)?;
        let t = g.add_scalar(s, 1.0)?;
        g.sum(t)
    };
    let r = grad_check(f, &[x], &GradCheckOptions::default()).unwrap();
    assert!(r.max_rel_error < 1e-10, "{r:?}");
}

#[test]
fn corrupted_backward_rules_are_caught() {
    let cases = primitive_cases();
    let find = |n: &str| cases.iter().find(|c| c.name == n).unwrap();
    for (name, fault) in [
        ("sigmoid", Fault::Sigmoid),
        ("softmax", Fault::Softmax),
        ("matmul", Fault::MatMul),
        ("layer_norm", Fault::LayerNorm),
    ] {
        let r = check_case(find(name), 3, Some(fault)).unwrap();
        assert!(r.max_rel_error > 1e-2, "{name}: fault went unnoticed, {r:?}");
        let clean = check_case(find(name), 3, None).unwrap();
        assert!(clean.max_rel_error < 1e-5);
    }
}

#[test]
fn composite_two_layer_network() {
    // relu(x W1 + b1) W2, cross-entropy against fixed targets
    let inputs = vec![
        Tensor::from_fn(&[4, 5], |i| ((i * 7 % 13) as f64 - 6.0) / 7.0),
        Tensor::from_fn(&[5, 6], |i| ((i * 5 % 11) as f64 - 5.0) / 9.0),
        Tensor::from_fn(&[1, 6], |i| 0.05 * i as f64 - 0.1),
        Tensor::from_fn(&[6, 3], |i| ((i * 3 % 7) as f64 - 3.0) / 5.0),
    ];
    let f = |g: &mut Graph, v: &[Var]| {
        let h = g.matmul(v[0], v[1])?;
        let h = g.add_row(h, v[2])?;
        let h = g.relu(h)?;
        let o = g.matmul(h, v[3])?;
        let ls = g.log_softmax(o)?;
        let picked = g.gather(ls, vec![0, 4, 8, 9], &[4])?;
        let s = g.mean(picked)?;
        g.neg(s)
    };
    let r = grad_check(f, &inputs, &GradCheckOptions::default()).unwrap();
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}
