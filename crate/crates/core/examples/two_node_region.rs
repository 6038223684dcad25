//! Two nodes without backoff: the computed boundary against the closed form.

use aloha_stability::model::NetworkConfig;
use aloha_stability::region;

fn main() -> aloha_stability::Result<()> {
    let (p1, p2) = (0.5, 0.8);
    let cfg = NetworkConfig::new(vec![p1, p2], 2.0, 0, vec![0.0, 0.0])?;
    println!("lambda_2,lambda_1_sr,closed_form,feasible");
    for k in 0..=16 {
        let l2 = k as f64 * 0.05;
        let b = region::lambda_sr(0, &[l2], &cfg)?;
        println!("{l2},{},{},{}", b.value, region::two_node_boundary(p1, p2, l2), b.feasible);
    }
    let r = region::closed_form_two_node(p1, p2, 0.15, 0.3);
    println!("(0.15, 0.3) inside: {}", r.inside);
    Ok(())
}
