//! Markov-modulated arrivals: Kronecker structure of the saturated chain and
//! the boundary along a D-MAP rate direction.

use aloha_stability::dmap::{self, DmapSpec};
use aloha_stability::model::{self, CouplingOptions, NetworkConfig};
use aloha_stability::region;

fn main() -> aloha_stability::Result<()> {
    let cfg = NetworkConfig::new(vec![0.8, 0.8], 2.0, 1, vec![0.0, 0.2])?;
    let spec = DmapSpec::two_state(0.8, 0.2)?.with_average_rate(0.2)?;
    let st = dmap::stationary_and_rate(&spec)?;
    println!("arrival chain stationary {:?}, average rate {:.4}", st.pi_a.as_slice(), st.lambda_avg);

    let sat = region::saturated_coupling(0, &cfg, &CouplingOptions::default())?;
    let a = model::assemble_chain(0, &cfg, &sat.coupling)?.a_matrix();
    let ad = dmap::assemble_dmap_chain(0, &cfg, &spec, &sat.coupling)?.a_matrix();
    let rep = dmap::verify_kronecker(&a, &ad, &spec.transition_matrix(), 1e-12);
    println!("A^D vs A (x) D: max discrepancy {:.1e}", rep.max_discrepancy);

    let net = NetworkConfig::symmetric(2, 0.8, 2.0, 1)?;
    let dir1 = DmapSpec::two_state(0.8, 0.2)?;
    let dir2 = DmapSpec::two_state(1.0 / 6.0, 1.0)?;
    println!("lambda_1,bernoulli,dmap");
    for l1 in [0.1, 0.2, 0.3, 0.4] {
        let specs = vec![dir1.with_average_rate(l1)?, dir2.with_average_rate(0.05)?];
        let bern = region::max_stable_rate(1, &[l1], &net, 1e-10)?;
        let d = region::dmap_max_stable_rate(1, &specs, &dir2, &net, 1e-10)?;
        println!("{l1},{bern:.8},{d:.8}");
    }
    Ok(())
}
