use rii_core::model::*;
use rii_core::rng;
fn main() {
    let mut conds: Vec<f64> = (0..2000u64).map(|k| {
        let a = random_mixing_matrix(5, rng::mix(99, &[k])).unwrap();
        let f = rii_core::linalg::svd(&a);
        f.sigma[0] / f.sigma[4]
    }).collect();
    conds.sort_by(f64::total_cmp);
    for q in [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9] {
        println!("q{:.0}% cond = {:.2}", q*100.0, conds[(q * 1999.0) as usize]);
    }
}
