use mixhit::chain::Distribution;
use mixhit::gallery::{aldous, cb_probability_exact};
use mixhit::hitting::{expected_hitting, expected_steps_to};

fn main() {
    let n = 10;
    let a = aldous(n).unwrap();
    let chain = &a.chain;
    let z = a.bottom();
    let v = a.junction();
    let m = chain.len();

    println!("== unconditioned E_c(r+1)[T_c(r)] and conditioned (T_z < T_v) ==");
    let down = chain.doob_transform(&[z], &[v]).unwrap();
    for r in 1..n {
        let un = expected_hitting(chain, &Distribution::delta(m, a.c_state(r + 1)), &[a.c_state(r)]).unwrap();
        // conditioned chain: expected hitting of c_r under the z-before-v transform
        let tgt = down.local_index(a.c_state(r)).unwrap();
        let zl = down.local_index(z).unwrap();
        // paths conditioned on z-before-v hit c_r before z from above, and
        // other kept states are absorbed at z, keeping the system regular
        let h = expected_steps_to(&down.kernel, &[tgt, zl]).unwrap();
        let cond = h[down.local_index(a.c_state(r + 1)).unwrap()];
        println!("r={r:2}  unconditioned={un:10.4}   conditioned={cond:10.4}");
    }
    let to_z = expected_steps_to(chain.kernel(), &[z]).unwrap();
    println!("E_v[T_z] = {:.4}  (153(n+1) = {})", to_z[v], 153 * (n + 1));
    println!("E_a[T_z] = {:.4}  (159(n+1) = {})", to_z[a.a_top()], 159 * (n + 1));
    println!("E_a[T_z]/n = {:.4}", to_z[a.a_top()] / n as f64);
    // mixture identity residual at a few r
    let up = chain.doob_transform(&[v], &[z]).unwrap();
    let down_steps = expected_steps_to(&down.kernel, &down.target_local).unwrap();
    let up_steps = expected_steps_to(&up.kernel, &up.target_local).unwrap();
    for r in [1usize, 5, 9, 10] {
        let c_r = a.c_state(r);
        let lhs = to_z[c_r];
        let p_up = cb_probability_exact(n, r).unwrap();
        let cd = down_steps[down.local_index(c_r).unwrap()];
        let cu = up_steps[up.local_index(c_r).unwrap()];
        let rhs = (1.0 - p_up) * cd + p_up * (cu + to_z[v]);
        println!("r={r:2} EcTz={lhs:12.6} mixture={rhs:12.6} residual={:.3e}", (lhs - rhs).abs());
    }
    // worst start for T_z
    let (mut best_x, mut best) = (0usize, 0.0f64);
    for x in 0..m {
        if to_z[x] > best {
            best = to_z[x];
            best_x = x;
        }
    }
    println!("argmax_x E_x[T_z] = {} ({})  value {:.3}", chain.states()[best_x], best_x, best);
}
