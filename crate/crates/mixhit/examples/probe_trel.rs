use mixhit::gallery::aldous;
use mixhit::spectral::decompose;

fn main() {
    for n in [10usize, 20, 40, 80, 120, 160, 200] {
        let a = aldous(n).unwrap();
        let t0 = std::time::Instant::now();
        let spec = decompose(&a.chain).unwrap();
        println!(
            "n={n:4} states={:4} t_rel={:10.3} pi_z={:.6} pi_min={:.3e} eig_ms={}",
            a.chain.len(),
            spec.relaxation_time(),
            a.chain.pi()[a.bottom()],
            a.chain.pi().min(),
            t0.elapsed().as_millis()
        );
    }
}
