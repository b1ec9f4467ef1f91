use mesoleads::lead_model::single_dot_flat_lead;
use mesoleads::unconditional::*;

fn main() {
    let (eps, gamma, t_res, mu, w_max) = (0.25, 0.125, 1.0, 0.0625, 1.0);
    for range in [1.0, 50.0] {
        let quad = {
            let n = 400_000;
            let h = 2.0 * range / n as f64;
            let integrand = |w: f64| {
                let f = mesoleads::lead_model::fermi_dirac(w, t_res, mu).unwrap();
                (gamma / (2.0 * std::f64::consts::PI)) * f / ((w - eps).powi(2) + gamma * gamma / 4.0)
            };
            let mut acc = integrand(-range) + integrand(range);
            for i in 1..n {
                let w = -range + i as f64 * h;
                acc += integrand(w) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        println!("range ±{range}: quad = {quad}");
        for l in [10, 20, 40] {
            let sys = single_dot_flat_lead(eps, gamma, w_max, l, t_res, mu).unwrap();
            let ss = steady_state(&sys, 0.0).unwrap();
            println!("  L={l}: err={:.5e}", (ss[(0,0)].re - quad).abs());
        }
    }
}
