use polychron::estimation::{estimate, EstimationSettings};
use polychron::synth::{generate_replication, rail_scenario};
use std::time::Instant;

fn main() {
    let config = rail_scenario(20_287, 7, 1).unwrap();
    let t0 = Instant::now();
    let ds = generate_replication(&config, 0).unwrap();
    println!("generate: {:?}", t0.elapsed());
    let t1 = Instant::now();
    let result = estimate(&config.model, &ds, &EstimationSettings::default()).unwrap();
    println!(
        "estimate: {:?}  status {:?}  iters {}  LL {:.3}  L0 {:.3}",
        t1.elapsed(),
        result.status,
        result.iterations,
        result.final_log_likelihood,
        result.null_log_likelihood
    );
    let names = ["mu_P", "mu_L", "mu_I", "mu_W", "mu_O"];
    for n in names {
        let p = result.parameter(n).unwrap();
        println!("{n} = {:.4} (se {:?})", p.estimate, p.std_error.map(|s| format!("{s:.4}")));
    }
    // z-score summary vs truth
    let truth = config.theta_true.values();
    let mut within = 0; let mut total = 0;
    for (k, p) in result.parameters.iter().enumerate() {
        if let Some(se) = p.std_error {
            total += 1;
            if ((p.estimate - truth[k]) / se).abs() <= 3.0 { within += 1; }
        }
    }
    println!("within 3se: {within}/{total}");
}
