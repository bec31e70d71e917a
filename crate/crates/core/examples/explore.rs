use lobsim::market::{Mode, SimConfig};
use lobsim::run_simulation;
use std::time::Instant;

fn summarize(label: &str, cfg: &SimConfig) {
    let t0 = Instant::now();
    let series = run_simulation(cfg).unwrap();
    let term = series.terminal_closes().unwrap().to_vec();
    let mean = term.iter().sum::<f64>() / term.len() as f64;
    let var = term.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / term.len() as f64;
    // post burn-in per-asset means
    let burn = (series.len() / 10).max(1);
    let mut means = vec![];
    for j in 0..cfg.n_assets {
        let col = series.asset_closes(j);
        let m = col[burn..].iter().sum::<f64>() / (col.len() - burn) as f64;
        means.push(m);
    }
    println!(
        "{label}: terminal={term:.3?} mean={mean:.3} std={:.3} post-burn means={means:.3?} [{:.1}s]",
        var.sqrt(),
        t0.elapsed().as_secs_f64()
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scale = args.get(1).map(|s| s.as_str()).unwrap_or("desk");
    match scale {
        "desk" => {
            for mode in [Mode::Sequential, Mode::ParallelDeterministic] {
                let cfg = SimConfig {
                    n_traders: 2_000, n_assets: 5, horizon: 2_000,
                    initial_cash: 50.0, initial_shares: 10, initial_price: 10.0,
                    sigma: 0.15, mode, seed: 1,
                };
                summarize(&format!("desk/{mode}"), &cfg);
            }
        }
        "paper" => {
            for mode in [Mode::Sequential, Mode::ParallelDeterministic, Mode::Parallel] {
                let cfg = SimConfig { mode, seed: 1, ..SimConfig::default() };
                summarize(&format!("paper/{mode}"), &cfg);
            }
        }
        _ => eprintln!("unknown scale"),
    }
}
