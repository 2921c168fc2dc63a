//! Scratch measurement: how certificate cost proxies scale with the horizon,
//! and what one exact draw costs on each model.

use fkps::apps::gaussian::{gaussian_model, simulate_observations};
use fkps::apps::polymer::{polymer_model, PolymerEnvironment};
use fkps::apps::smc::smc_prerun;
use fkps::bounds::{continuous_bound, lattice_bound, ContractionCertificate, ScanParams};
use fkps::kernel::{cftp_sample, KernelParams};
use fkps::model::OffspringLaw;
use fkps::rng::KeyedStream;

fn gaussian_probe() {
    let (a, b, c, p) = (0.9, 0.5, 0.5, 5);
    let obs = simulate_observations(a, b, c, p, 11).unwrap();
    let model = gaussian_model(a, b, c, obs).unwrap();
    let pilot = smc_prerun(&model, 1024, 7).unwrap();
    let law = OffspringLaw::from_pilot_means(&model, &pilot.mean_potentials).unwrap();
    println!("gaussian q = {:?}", law.steps().iter().map(|s| s.q).collect::<Vec<_>>());
    let cert = ContractionCertificate { rate: a };
    let scan = ScanParams { delta: 0.05, ..ScanParams::default() };
    let t0 = std::time::Instant::now();
    let mut bounds = Vec::new();
    for s in 0..50u64 {
        let stream = KeyedStream::new(3000 + s, 0);
        let bc = continuous_bound(&model, &law, &stream, 1, &cert, &scan).unwrap();
        bounds.push(bc.bound);
    }
    println!("gaussian certs: {:?}/cert  bounds {:?}", t0.elapsed() / 50, &bounds[..10]);
    let params = KernelParams { depth_cap: 1_000_000, ..KernelParams::default() };
    let t1 = std::time::Instant::now();
    let mut depths = Vec::new();
    for s in 0..50u64 {
        let r = cftp_sample(&model, &law, &params, 900 + s, |stream| {
            continuous_bound(&model, &law, stream, 1, &cert, &scan)
        })
        .unwrap();
        depths.push(r.coalescence_depth);
    }
    println!("gaussian cftp: {:?}/draw  depths {:?}", t1.elapsed() / 50, &depths[..20]);
}

fn main() {
    gaussian_probe();
    let env_seed = 42;
    for &p in &[8usize, 16, 32, 64] {
        let env = PolymerEnvironment::generate(env_seed, 0.5, 1.0, p).unwrap();
        let model = polymer_model(env);
        let pilot = smc_prerun(&model, 512, 7).unwrap();
        let law = OffspringLaw::from_pilot_means(&model, &pilot.mean_potentials).unwrap();
        let mut cells_total = 0u64;
        let mut work_total = 0u64;
        let mut bound_total = 0u64;
        let streams = 20u64;
        let t0 = std::time::Instant::now();
        for s in 0..streams {
            let stream = KeyedStream::new(1000 + s, 0);
            let cert = lattice_bound(&model, &law, &stream, 1, 1 << 32).unwrap();
            cells_total += cert.exploration.iter().map(|e| e.cells).sum::<u64>();
            work_total += cert.work;
            bound_total += cert.bound;
        }
        println!(
            "P={p:3}  q={:?}  cells/stream={}  work/stream={}  bound/stream={}  {:?}/stream",
            law.steps().iter().map(|s| s.q).max().unwrap(),
            cells_total / streams,
            work_total / streams,
            bound_total / streams,
            t0.elapsed() / streams as u32
        );

        let params = KernelParams { depth_cap: 100_000, ..KernelParams::default() };
        let draws = 10u64;
        let t1 = std::time::Instant::now();
        let mut depths = Vec::new();
        for s in 0..draws {
            let r = cftp_sample(&model, &law, &params, 500 + s, |stream| {
                lattice_bound(&model, &law, stream, 1, 1 << 32)
            })
            .unwrap();
            depths.push(r.coalescence_depth);
        }
        println!("      cftp depths {depths:?}  {:?}/draw", t1.elapsed() / draws as u32);
    }
}
