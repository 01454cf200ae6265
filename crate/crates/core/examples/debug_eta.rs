use rii_core::experiments::*;

fn main() {
    let cfg = EtaScalingConfig::default();
    let rep = run_eta_scaling(&cfg).unwrap();
    println!("floor levels: {:?}", rep.floor_levels);
    println!("floored: {:?}", rep.floored);
    for &eta in &rep.grid {
        let wb = rep.summary_for(METRIC_W_BAR, eta).unwrap().median;
        let wt = rep.summary_for(METRIC_W_TILDE, eta).unwrap().median;
        let mc = rep.summary_for(METRIC_ONE_MINUS_MCC, eta).unwrap().median;
        println!("eta={eta:.5}  wbar={wb:.6}  wtilde={wt:.6}  1-mcc={mc:.8}");
    }
    for s in &rep.slopes {
        println!("slope {} = {:.4} (r2 {:.4})", s.metric, s.slope, s.r2);
    }
}
