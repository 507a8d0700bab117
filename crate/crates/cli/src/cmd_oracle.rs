//! `oracle`: randomized exactness sweep for the MDP-to-CB constructions.

use banditforge_core::oracle::{lemma1_sweep, CbVariant};

use crate::EXIT_ORACLE;

pub fn run(n_mdps: usize, max_states: usize, variant: &str, seed: u64) -> anyhow::Result<u8> {
    let variants: Vec<CbVariant> = match variant {
        "all" => vec![CbVariant::QStar, CbVariant::NegDistance, CbVariant::Indicator],
        v => vec![v.parse().map_err(anyhow::Error::new)?],
    };

    let mut any_failure = false;
    for v in &variants {
        let report = lemma1_sweep(n_mdps, max_states, 5, &[*v], 1e-8, seed);
        println!(
            "{:?}: {} passes, {} failures (worst gap {:.3e})",
            v, report.passes, report.failures, report.worst_gap
        );
        for detail in &report.failure_details {
            println!("  FAIL {detail}");
        }
        any_failure |= report.failures > 0;
    }
    if any_failure {
        println!("oracle sweep FAILED");
        return Ok(EXIT_ORACLE);
    }
    println!("oracle sweep passed");
    Ok(0)
}
