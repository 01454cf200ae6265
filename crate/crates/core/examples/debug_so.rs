use ndarray::Array2;
use rii_core::ica::*;
use rii_core::metrics::mcc;
use rii_core::model::*;
use rii_core::rng;
use rii_core::whiten::*;

fn case(label: &str, a: &Array2<f64>, eta: f64, n: usize, seed: u64) {
    let d = a.nrows();
    let spec = SourceSpec::iid(d, SourceFamily::Laplace, seed);
    let cubic = make_cubic_perturbation(&spec).unwrap();
    let model = MixingModel::new(a.clone(), eta, Perturbation::Cubic(cubic)).unwrap();
    let s = sample_sources(&spec, n);
    let x = mix(&model, &s).unwrap();
    let wh = fit_whitener(&x).unwrap();
    let z = apply_whitener(&wh, &x).unwrap();
    let wbar = reference_wbar(&a).unwrap();
    let (wtil, _, _) = reference_wtilde(&a, ContrastFunction::Quartic, &model, &spec, 1_000_000).unwrap();
    let est = run_ica(ContrastFunction::Quartic, &z, &wbar, SolverKind::FastIca, &SolveOptions::default()).unwrap();
    let shat = est.unmix(&z);
    let m = mcc(&s, &shat).unwrap();
    let mut db = Vec::new();
    let mut dt = Vec::new();
    for i in 0..d {
        let w = est.w_rows.row(i).to_owned();
        db.push(sign_aligned_distance(&w, &wbar.row(i).to_owned()));
        dt.push(sign_aligned_distance(&w, &wtil.row(i).to_owned()));
    }
    let lost = db.iter().filter(|&&x| x > 0.7).count();
    db.sort_by(f64::total_cmp);
    dt.sort_by(f64::total_cmp);
    println!("{label} eta={eta:.4} n={n} 1-mcc={:.6} lost={lost}/{d} wbar_med={:.4} wtilde_med={:.4}",
        1.0 - m.mcc, db[d/2], dt[d/2]);
}

fn main() {
    // orthogonal mixing
    for run in 0..3u64 {
        let q = random_rotation(5, rng::mix(42, &[run])).unwrap();
        for &eta in &[0.0562f64, 0.1, 0.178, 0.316] {
            case("SO(5)", &q, eta, 200_000, 1234 + run);
        }
    }
    // conditioned Gaussian mixing at n = 1e6 (paper scale)
    for run in 0..2u64 {
        let mut a = None;
        for k in 0..20000u64 {
            let cand = random_mixing_matrix(5, rng::mix(7 + run, &[k])).unwrap();
            let f = rii_core::linalg::svd(&cand);
            if f.sigma[0] / f.sigma[4] <= 5.0 { a = Some(cand); break; }
        }
        let a = a.unwrap();
        for &eta in &[0.1f64] {
            case("cond<=5 n=1e6", &a, eta, 1_000_000, 99 + run);
            case("cond<=5 n=2e5", &a, eta, 200_000, 99 + run);
        }
    }
}
