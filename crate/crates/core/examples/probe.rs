// Temporary development probe: throughput + leak statistics.
use std::time::Instant;

use photonmc::accel::Precision;
use photonmc::benchmarks::{generate_benchmark, leak_study};
use photonmc::pipeline::Simulation;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    match args.get(1).map(|s| s.as_str()).unwrap_or("b1") {
        "run" => {
            let name = args[2].as_str();
            let n: u64 = args[3].parse().unwrap();
            let spec = generate_benchmark(name).unwrap();
            let mut rs = spec.run_settings();
            rs.nphoton = n;
            rs.workers = 2;
            rs.seed = 7;
            let sim = Simulation::prepare(&spec.scene, &rs).unwrap();
            let t0 = Instant::now();
            let (_, summary) = sim.run().unwrap();
            let dt = t0.elapsed().as_secs_f64();
            println!(
                "{name} {} photons in {:.2} s -> {:.0} photons/s; residual {:.2e}",
                summary.nphoton, dt, summary.nphoton as f64 / dt, summary.conservation_residual(),
            );
        }
        "leak" => {
            let name = args[2].as_str();
            let n: u64 = args[3].parse().unwrap();
            let delta: f64 = args[4].parse().unwrap();
            let prec = if args.get(5).map(|s| s.as_str()) == Some("double") {
                Precision::Double
            } else {
                Precision::Single
            };
            let spec = generate_benchmark(name).unwrap();
            let t0 = Instant::now();
            let r = leak_study(&spec, n, delta, prec, 9, 2).unwrap();
            println!(
                "{name} n={n} delta={delta:.0e} {prec:?}: leaks {} (frac {:.3e}) after_scatter {} caps {} [{:.1} s]",
                r.leaked_count, r.fraction, r.after_scatter, r.cap_aborted_count,
                t0.elapsed().as_secs_f64()
            );
            for l in &r.leaks {
                println!("  leak worker {} photon {} at ({:.6},{:.6},{:.6})", l.worker, l.photon, l.position.x, l.position.y, l.position.z);
                for e in &l.tail {
                    println!("    {:?} ({:.7},{:.7},{:.7})", e.kind, e.p.x, e.p.y, e.p.z);
                }
            }
        }
        other => eprintln!("unknown probe {other}"),
    }
}
