use ndarray::Array2;
use rii_core::ica::*;
use rii_core::metrics::mcc;
use rii_core::model::*;
use rii_core::whiten::*;

fn run_case(d: usize, a: &Array2<f64>, eta: f64, n: usize, seed: u64, solver: SolverKind) {
    let spec = SourceSpec::iid(d, SourceFamily::Laplace, seed);
    let cubic = make_cubic_perturbation(&spec).unwrap();
    let model = MixingModel::new(a.clone(), eta, Perturbation::Cubic(cubic)).unwrap();
    let s = sample_sources(&spec, n);
    let x = mix(&model, &s).unwrap();
    let wh = fit_whitener(&x).unwrap();
    let z = apply_whitener(&wh, &x).unwrap();
    let wbar = reference_wbar(&a).unwrap();
    let opts = SolveOptions {
        tol: if solver == SolverKind::Gradient { 1e-9 } else { 1e-10 },
        max_iter: if solver == SolverKind::Gradient { 20000 } else { 500 },
        step: 0.05,
        ascent_signs: Some(vec![1.0; d]),
    };
    let est = run_ica(ContrastFunction::Quartic, &z, &wbar, solver, &opts).unwrap();
    let shat = est.unmix(&z);
    let m = mcc(&s, &shat).unwrap();
    let f = rii_core::linalg::svd(a);
    let cond = f.sigma[0] / f.sigma[d-1];
    let conv: usize = est.converged.iter().filter(|c| **c).count();
    print!("{:?} cond={cond:.1} eta={eta:.4} mcc={:.5} conv={conv} dists:", solver, m.mcc);
    for i in 0..d {
        let di = sign_aligned_distance(&est.w_rows.row(i).to_owned(), &wbar.row(i).to_owned());
        print!(" {di:.4}");
    }
    println!();
}

fn main() {
    for seed in [1000u64, 1002, 1005] { // cond 6.7, 8.4, 36.9
        let a = random_mixing_matrix(5, seed).unwrap();
        for &eta in &[0.0316, 0.1] {
            run_case(5, &a, eta, 200_000, 50 + seed, SolverKind::FastIca);
            run_case(5, &a, eta, 200_000, 50 + seed, SolverKind::Gradient);
        }
    }
}
