use mixhit::chain::Distribution;
use mixhit::distance::t_mix_mu;
use mixhit::gallery::biased_path;
use mixhit::spectral::decompose;

fn main() {
    for n in [50usize, 100, 200, 400] {
        let chain = biased_path(n, 2.0 / 3.0).unwrap();
        let spec = decompose(&chain).unwrap();
        let mu = Distribution::delta(n + 1, n);
        let t0 = std::time::Instant::now();
        let hi = t_mix_mu(&chain, &spec, &mu, 0.05).unwrap();
        let lo = t_mix_mu(&chain, &spec, &mu, 0.95).unwrap();
        println!(
            "n={n:4} t(0.05)={hi:9.2} t(0.95)={lo:9.2} ratio={:.4} ms={}",
            hi / lo,
            t0.elapsed().as_millis()
        );
    }
}
