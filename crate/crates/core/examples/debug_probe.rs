use ndarray::Array2;
use rii_core::ica::*;
use rii_core::metrics::mcc;
use rii_core::model::*;
use rii_core::whiten::*;

fn run_case(d: usize, a: Array2<f64>, eta: f64, n: usize, seed: u64) {
    let spec = SourceSpec::iid(d, SourceFamily::Laplace, seed);
    let cubic = make_cubic_perturbation(&spec).unwrap();
    let model = MixingModel::new(a.clone(), eta, Perturbation::Cubic(cubic)).unwrap();
    let s = sample_sources(&spec, n);
    let x = mix(&model, &s).unwrap();
    let wh = fit_whitener(&x).unwrap();
    let z = apply_whitener(&wh, &x).unwrap();
    let wbar = reference_wbar(&a).unwrap();
    let est = run_ica(ContrastFunction::Quartic, &z, &wbar, SolverKind::FastIca, &SolveOptions::default()).unwrap();
    let shat = est.unmix(&z);
    let m = mcc(&s, &shat).unwrap();
    let f = rii_core::linalg::svd(&a);
    let cond = f.sigma[0] / f.sigma[d-1];
    print!("d={d} eta={eta:.4} cond(A)={cond:.1} mcc={:.5} perm={:?} dists:", m.mcc, m.permutation);
    for i in 0..d {
        let di = sign_aligned_distance(&est.w_rows.row(i).to_owned(), &wbar.row(i).to_owned());
        print!(" {di:.4}({}it)", est.iterations[i]);
    }
    println!();
}

fn main() {
    // identity mixing, d=2
    for &eta in &[0.01, 0.05, 0.1, 0.3] {
        run_case(2, Array2::eye(2), eta, 200_000, 1);
    }
    // random mixings, d=5
    for seed in 0..6u64 {
        let a = random_mixing_matrix(5, 1000 + seed).unwrap();
        for &eta in &[0.01, 0.0316, 0.1] {
            run_case(5, a.clone(), eta, 200_000, 50 + seed);
        }
    }
}
