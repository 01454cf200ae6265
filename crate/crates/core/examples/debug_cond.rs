use ndarray::Array2;
use rii_core::ica::*;
use rii_core::metrics::mcc;
use rii_core::model::*;
use rii_core::rng;
use rii_core::whiten::*;

fn draw_capped(d: usize, seed: u64, max_cond: f64) -> (Array2<f64>, f64, usize) {
    for k in 0..20000u64 {
        let a = random_mixing_matrix(d, rng::mix(seed, &[k])).unwrap();
        let f = rii_core::linalg::svd(&a);
        let cond = f.sigma[0] / f.sigma[d - 1];
        if cond <= max_cond {
            return (a, cond, k as usize);
        }
    }
    panic!("no acceptable draw");
}

fn main() {
    let d = 5;
    let n = 200_000;
    for &cap in &[3.0f64, 4.0, 5.0] {
        let mut attempts_total = 0;
        for &eta in &[0.01f64, 0.0178, 0.0316, 0.0562, 0.1] {
            let mut wbar_d = Vec::new();
            let mut wtil_d = Vec::new();
            let mut mccs = Vec::new();
            for run in 0..3u64 {
                let seed = 7 + 100 * run;
                let (a, _cond, att) = draw_capped(d, seed, cap);
                attempts_total += att;
                let spec = SourceSpec::iid(d, SourceFamily::Laplace, seed * 31 + (eta*1e4) as u64);
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
                mccs.push(1.0 - mcc(&s, &shat).unwrap().mcc);
                for i in 0..d {
                    let w = est.w_rows.row(i).to_owned();
                    wbar_d.push(sign_aligned_distance(&w, &wbar.row(i).to_owned()));
                    wtil_d.push(sign_aligned_distance(&w, &wtil.row(i).to_owned()));
                }
            }
            wbar_d.sort_by(f64::total_cmp);
            wtil_d.sort_by(f64::total_cmp);
            mccs.sort_by(f64::total_cmp);
            let med = |v: &Vec<f64>| v[v.len()/2];
            let lost = wbar_d.iter().filter(|&&x| x > 0.7).count();
            println!("cap={cap} eta={eta:.4} wbar_med={:.4} wtilde_med={:.4} 1mcc_med={:.6} lost={lost}/15", med(&wbar_d), med(&wtil_d), med(&mccs));
        }
        println!("  (cap {cap}: total resample attempts {attempts_total})");
    }
}
