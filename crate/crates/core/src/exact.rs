//! Error-free floating-point transforms.

/// `a + b = s + e` exactly, with `s = fl(a + b)`.
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Whether the exact real sum of finite `xs` is zero, decided without
/// rounding by growing a nonoverlapping expansion with zero elimination.
pub fn exact_sum_is_zero(xs: &[f64]) -> bool {
    let mut expansion: Vec<f64> = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut q = x;
        let mut next = Vec::with_capacity(expansion.len() + 1);
        for &e in &expansion {
            let (s, err) = two_sum(q, e);
            if err != 0.0 {
                next.push(err);
            }
            q = s;
        }
        if q != 0.0 {
            next.push(q);
        }
        expansion = next;
    }
    expansion.is_empty()
}
